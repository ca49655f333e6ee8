//! Input volume preparation: ROI cropping, Otsu foreground masking to strip
//! immobilisation mask and table, and left-right mirroring of label volumes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::components::{label_components, Connectivity};
use crate::morphology;
use crate::schema::{LevelSchema, SchemaError};
use crate::volume::{
    check_geometry_compatible, BinaryMask, CropBox, GeometryCheck, ImageVolume, LabelVolume,
    Volume,
};

/// Air, used for voxels outside the foreground mask.
pub const DEFAULT_FILL_HU: f32 = -1024.0;
pub const HISTOGRAM_BINS: usize = 256;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("crop box {bounds:?} does not fit volume dims {dims:?}")]
    OutOfBounds { bounds: CropBox, dims: [usize; 3] },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("geometry mismatch: {0}")]
    Geometry(GeometryCheck),
    #[error("axis codes {0} have no left-right axis")]
    NoLeftRightAxis(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// Foreground masking parameters, named after the ROI-auto tool they mimic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtsuMaskParams {
    /// Fraction clipped from each end of the intensity histogram.
    pub percentile_clip: f64,
    /// Scales the Otsu threshold toward the clipped minimum.
    pub threshold_correction: f64,
    /// Edge length (voxels, odd) of the cubic closing element.
    pub closing_size_voxels: usize,
    /// Final dilation radius in voxels.
    pub dilate_size_voxels: usize,
}

impl Default for OtsuMaskParams {
    fn default() -> Self {
        Self {
            percentile_clip: 0.01,
            threshold_correction: 0.3,
            closing_size_voxels: 9,
            dilate_size_voxels: 2,
        }
    }
}

impl OtsuMaskParams {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if !(0.0..0.5).contains(&self.percentile_clip) {
            return Err(PreprocessError::InvalidParams(format!(
                "percentile_clip {} not in [0, 0.5)",
                self.percentile_clip
            )));
        }
        if !(self.threshold_correction.is_finite() && self.threshold_correction > 0.0) {
            return Err(PreprocessError::InvalidParams(format!(
                "threshold_correction {} must be > 0",
                self.threshold_correction
            )));
        }
        if self.closing_size_voxels == 0 || self.closing_size_voxels % 2 == 0 {
            return Err(PreprocessError::InvalidParams(format!(
                "closing_size_voxels {} must be odd and >= 1",
                self.closing_size_voxels
            )));
        }
        Ok(())
    }
}

/// Volumes that can be cut down to a voxel box.
pub trait Croppable: Sized {
    fn dims_of(&self) -> [usize; 3];
    fn cropped(&self, bounds: &CropBox) -> Option<Self>;
}

impl<T: Clone> Croppable for Volume<T> {
    fn dims_of(&self) -> [usize; 3] {
        self.dims()
    }

    fn cropped(&self, bounds: &CropBox) -> Option<Self> {
        self.crop(bounds)
    }
}

impl Croppable for LabelVolume {
    fn dims_of(&self) -> [usize; 3] {
        self.grid().dims
    }

    fn cropped(&self, bounds: &CropBox) -> Option<Self> {
        self.volume().crop(bounds).map(|v| self.with_volume(v))
    }
}

/// Cut a volume to `bounds`; the origin moves by the min corner.
pub fn crop_to_box<V: Croppable>(volume: &V, bounds: &CropBox) -> Result<V, PreprocessError> {
    volume
        .cropped(bounds)
        .ok_or(PreprocessError::OutOfBounds {
            bounds: *bounds,
            dims: volume.dims_of(),
        })
}

/// Thresholds computed on the way to the foreground mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdInfo {
    pub clip_low: f64,
    pub clip_high: f64,
    /// Otsu threshold on the clipped histogram.
    pub otsu: f64,
    /// Threshold actually applied.
    pub corrected: f64,
}

/// Linear-interpolated quantile of unsorted data (reorders `values`).
fn quantile_in_place(values: &mut [f32], q: f64) -> f64 {
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let (_, &mut v_lo, right) = values.select_nth_unstable_by(lo, f32::total_cmp);
    if frac == 0.0 || right.is_empty() {
        return v_lo as f64;
    }
    let v_hi = right.iter().copied().fold(f32::INFINITY, f32::min);
    v_lo as f64 + frac * (v_hi as f64 - v_lo as f64)
}

/// Otsu split of a histogram: index `s` of the first bin of the upper class.
fn otsu_split(hist: &[u64]) -> usize {
    let total: u64 = hist.iter().sum();
    let total_sum: f64 = hist.iter().enumerate().map(|(b, &h)| b as f64 * h as f64).sum();
    let mut w0 = 0u64;
    let mut sum0 = 0.0;
    let mut best = (f64::MIN, 1usize);
    for s in 1..hist.len() {
        w0 += hist[s - 1];
        sum0 += (s - 1) as f64 * hist[s - 1] as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let mu0 = sum0 / w0 as f64;
        let mu1 = (total_sum - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (mu0 - mu1) * (mu0 - mu1);
        if between > best.0 {
            best = (between, s);
        }
    }
    best.1
}

/// Clip the histogram, run Otsu and apply the correction factor.
pub fn foreground_threshold(
    image: &ImageVolume,
    params: &OtsuMaskParams,
) -> Result<ThresholdInfo, PreprocessError> {
    params.validate()?;
    let data = image.data();
    let (min, max) = data
        .iter()
        .filter(|v| v.is_finite())
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(min < max) {
        return Err(PreprocessError::Degenerate(
            "image needs at least two distinct finite intensities".into(),
        ));
    }
    let mut scratch: Vec<f32> = data.iter().copied().filter(|v| v.is_finite()).collect();
    let mut low = quantile_in_place(&mut scratch, params.percentile_clip);
    let mut high = quantile_in_place(&mut scratch, 1.0 - params.percentile_clip);
    if !(low < high) {
        // clipping swallowed the whole range; fall back to the raw extent
        low = min as f64;
        high = max as f64;
    }
    let width = (high - low) / HISTOGRAM_BINS as f64;
    let mut hist = [0u64; HISTOGRAM_BINS];
    for &v in &scratch {
        let c = (v as f64).clamp(low, high);
        let b = (((c - low) / width) as usize).min(HISTOGRAM_BINS - 1);
        hist[b] += 1;
    }
    let split = otsu_split(&hist);
    let otsu = low + split as f64 * width;
    let corrected = low + params.threshold_correction * (otsu - low);
    Ok(ThresholdInfo {
        clip_low: low,
        clip_high: high,
        otsu,
        corrected,
    })
}

/// Voxels at or above `threshold`.
pub fn binarize(image: &ImageVolume, threshold: f64) -> BinaryMask {
    image.map(|&v| v as f64 >= threshold)
}

/// Keep the largest face-connected component of a mask.
pub fn largest_component(mask: &BinaryMask) -> BinaryMask {
    let values: Vec<u8> = mask.data().iter().map(|&b| b as u8).collect();
    let mut selected = [false; 256];
    selected[1] = true;
    let comps = label_components(mask.dims(), &values, &selected, Connectivity::Face6);
    let keep = comps.largest_per_value()[1];
    let data = comps.ids.iter().map(|&id| keep != 0 && id == keep).collect();
    Volume::new(mask.grid().clone(), data).expect("same grid")
}

/// Foreground mask: clip, Otsu, correct, binarize, keep the largest
/// component, close, dilate.
pub fn foreground_mask_otsu(
    image: &ImageVolume,
    params: &OtsuMaskParams,
) -> Result<BinaryMask, PreprocessError> {
    let info = foreground_threshold(image, params)?;
    let mask = largest_component(&binarize(image, info.corrected));
    let dims = mask.dims();
    let close_r = (params.closing_size_voxels - 1) / 2;
    let mut data = morphology::close(mask.data(), dims, [close_r; 3]);
    if params.dilate_size_voxels > 0 {
        data = morphology::dilate(&data, dims, [params.dilate_size_voxels; 3]);
    }
    Ok(Volume::new(mask.grid().clone(), data).expect("same grid"))
}

/// Replace voxels outside the mask with `fill_hu`.
pub fn apply_mask(
    image: &ImageVolume,
    mask: &BinaryMask,
    fill_hu: f32,
) -> Result<ImageVolume, PreprocessError> {
    let check = check_geometry_compatible(image, mask);
    if !check.is_compatible() {
        return Err(PreprocessError::Geometry(check));
    }
    let data = image
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&v, &m)| if m { v } else { fill_hu })
        .collect();
    Ok(Volume::new(image.grid().clone(), data).expect("same grid"))
}

/// Flip along the left-right axis and swap every level for its mirror
/// partner.
pub fn mirror_with_label_swap(
    labels: &LabelVolume,
    schema: &LevelSchema,
) -> Result<LabelVolume, PreprocessError> {
    schema.validate_labels(labels)?;
    let axis = labels
        .grid()
        .left_right_axis()
        .ok_or_else(|| PreprocessError::NoLeftRightAxis(labels.grid().axis_codes.to_string()))?;
    let lut = schema.partner_table();
    let mut flipped = labels.volume().flipped(axis);
    for l in flipped.data_mut() {
        *l = lut[*l as usize];
    }
    // keep the original placement so mirrored labels overlay the same image
    let (_, data) = flipped.into_parts();
    Ok(labels.with_volume(Volume::new(labels.grid().clone(), data).expect("same grid")))
}
