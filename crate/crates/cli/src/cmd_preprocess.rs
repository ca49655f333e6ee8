use std::path::PathBuf;
use std::str::FromStr;

use hnlevels_core::preprocess::{
    apply_mask, crop_to_box, foreground_mask_otsu, foreground_threshold, OtsuMaskParams, DEFAULT_FILL_HU,
};
use hnlevels_core::{read_image, write_nifti, CropBox};

use crate::failure::{CmdResult, ResultExt};
use crate::Globals;

/// Crop box as `x0:x1,y0:y1,z0:z1`, half-open voxel ranges.
#[derive(Clone, Debug)]
pub struct CropArg(pub CropBox);

impl FromStr for CropArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 3 {
            return Err("expected x0:x1,y0:y1,z0:z1".into());
        }
        let mut min = [0; 3];
        let mut max = [0; 3];
        for (a, p) in parts.iter().enumerate() {
            let (lo, hi) = p.split_once(':').ok_or("each range is lo:hi")?;
            min[a] = lo.trim().parse().map_err(|e| format!("{lo}: {e}"))?;
            max[a] = hi.trim().parse().map_err(|e| format!("{hi}: {e}"))?;
        }
        Ok(CropArg(CropBox { min, max }))
    }
}

#[derive(clap::Args)]
pub struct Args {
    /// Input CT volume (NIfTI).
    #[arg(long)]
    image: PathBuf,
    /// Output volume.
    #[arg(long)]
    out: PathBuf,
    /// Crop box x0:x1,y0:y1,z0:z1 applied before masking.
    #[arg(long)]
    crop: Option<CropArg>,
    /// Fraction clipped from each end of the intensity histogram.
    #[arg(long, default_value_t = 0.01)]
    percentile_clip: f64,
    /// Threshold correction factor toward the clipped minimum.
    #[arg(long, default_value_t = 0.3)]
    threshold_correction: f64,
    /// Edge length in voxels of the cubic closing element.
    #[arg(long, default_value_t = 9)]
    closing_size: usize,
    /// Dilation radius in voxels after closing.
    #[arg(long, default_value_t = 2)]
    dilate_size: usize,
    /// Value written outside the mask.
    #[arg(long, default_value_t = DEFAULT_FILL_HU, allow_hyphen_values = true)]
    fill: f32,
    /// Also write the body mask as a label volume.
    #[arg(long)]
    mask_out: Option<PathBuf>,
}

pub fn run(g: &Globals, a: Args) -> CmdResult {
    let params = OtsuMaskParams {
        percentile_clip: a.percentile_clip,
        threshold_correction: a.threshold_correction,
        closing_size_voxels: a.closing_size,
        dilate_size_voxels: a.dilate_size,
    };
    params.validate().input_err(|| "mask parameters")?;
    let image = read_image(&a.image).input_err(|| format!("reading {}", a.image.display()))?;
    let image = match &a.crop {
        Some(c) => crop_to_box(&image, &c.0).input_err(|| "crop")?,
        None => image,
    };
    let info = foreground_threshold(&image, &params).input_err(|| "threshold")?;
    let mask = foreground_mask_otsu(&image, &params).input_err(|| "foreground mask")?;
    let out = apply_mask(&image, &mask, a.fill).internal_err(|| "apply mask")?;
    write_nifti(&out, &a.out).internal_err(|| format!("writing {}", a.out.display()))?;
    if let Some(p) = &a.mask_out {
        let labels = hnlevels_core::LabelVolume::from_volume(mask.map(|&b| b as u8), g.schema.id());
        write_nifti(&labels, p).internal_err(|| format!("writing {}", p.display()))?;
    }
    let kept = mask.data().iter().filter(|&&b| b).count();
    let dims = out.dims();
    println!("dims: {}x{}x{}", dims[0], dims[1], dims[2]);
    println!(
        "threshold: {:.2} HU (otsu {:.2}, clipped range {:.2} .. {:.2})",
        info.corrected, info.otsu, info.clip_low, info.clip_high
    );
    println!("voxels kept: {kept}");
    println!("voxels masked: {}", mask.data().len() - kept);
    Ok(())
}
