//! Slice rasterization with contour overlays.

use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use hnlevels_core::{ImageVolume, LabelVolume, LevelSchema};

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("{plane} index {index} out of range (0..{len})")]
    IndexOutOfRange { plane: Plane, index: usize, len: usize },
    #[error("window width must be positive and finite, got {0}")]
    BadWindow(f64),
    #[error("image and labels have different dimensions")]
    DimsMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Axial,
    Coronal,
    Sagittal,
}

impl std::fmt::Display for Plane {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Plane::Axial => "axial",
            Plane::Coronal => "coronal",
            Plane::Sagittal => "sagittal",
        })
    }
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Axial, Plane::Coronal, Plane::Sagittal];

    /// Number of slices through a volume of `dims`.
    pub fn slice_count(self, dims: [usize; 3]) -> usize {
        match self {
            Plane::Axial => dims[2],
            Plane::Coronal => dims[1],
            Plane::Sagittal => dims[0],
        }
    }

    /// Raster width and height.
    pub fn raster_size(self, dims: [usize; 3]) -> (usize, usize) {
        match self {
            Plane::Axial => (dims[0], dims[1]),
            Plane::Coronal => (dims[0], dims[2]),
            Plane::Sagittal => (dims[1], dims[2]),
        }
    }

    /// Voxel shown at raster pixel (col, row). Anterior and superior are up.
    pub fn voxel(self, dims: [usize; 3], index: usize, col: usize, row: usize) -> [usize; 3] {
        match self {
            Plane::Axial => [col, dims[1] - 1 - row, index],
            Plane::Coronal => [col, index, dims[2] - 1 - row],
            Plane::Sagittal => [index, col, dims[2] - 1 - row],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub center: f64,
    pub width: f64,
}

impl Default for Window {
    fn default() -> Self {
        Self {
            center: 40.0,
            width: 400.0,
        }
    }
}

impl Window {
    pub fn gray(&self, hu: f64) -> u8 {
        let low = self.center - self.width / 2.0;
        let v = ((hu - low) / self.width * 255.0).round();
        v.clamp(0.0, 255.0) as u8
    }
}

/// Outline color for a level id. Fixed per id, independent of the data.
pub fn level_color(id: u8) -> [u8; 3] {
    let hue = (id as f64 * 0.618_033_988_75).fract() * 6.0;
    let (s, v) = (0.85, 1.0);
    let c = v * s;
    let x = c * (1.0 - ((hue % 2.0) - 1.0).abs());
    let (r, g, b) = match hue as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|u| ((u + m) * 255.0).round() as u8)
}

pub fn color_hex(rgb: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2])
}

/// Grayscale slice with a 1-pixel outline along the inner boundary of every
/// level region. A labeled pixel is on the boundary when a 4-neighbour in
/// the raster has a different label or lies outside it.
pub fn render_slice(
    image: &ImageVolume,
    labels: Option<&LabelVolume>,
    schema: &LevelSchema,
    plane: Plane,
    index: usize,
    window: Window,
) -> Result<RgbImage, RenderError> {
    if !(window.width.is_finite() && window.width > 0.0 && window.center.is_finite()) {
        return Err(RenderError::BadWindow(window.width));
    }
    let dims = image.dims();
    if let Some(l) = labels {
        if l.grid().dims != dims {
            return Err(RenderError::DimsMismatch);
        }
    }
    let len = plane.slice_count(dims);
    if index >= len {
        return Err(RenderError::IndexOutOfRange { plane, index, len });
    }
    let (w, h) = plane.raster_size(dims);
    let grid = image.grid();
    let mut lab = vec![0u8; w * h];
    let mut out = RgbImage::new(w as u32, h as u32);
    for row in 0..h {
        for col in 0..w {
            let [i, j, k] = plane.voxel(dims, index, col, row);
            let idx = grid.index(i, j, k);
            let g = window.gray(image.data()[idx] as f64);
            out.put_pixel(col as u32, row as u32, Rgb([g, g, g]));
            if let Some(l) = labels {
                lab[row * w + col] = l.labels()[idx];
            }
        }
    }
    if labels.is_none() {
        return Ok(out);
    }
    let bg = schema.background_id();
    for row in 0..h {
        for col in 0..w {
            let l = lab[row * w + col];
            if l == bg || !schema.is_level(l) {
                continue;
            }
            let edge = col == 0
                || row == 0
                || col + 1 == w
                || row + 1 == h
                || lab[row * w + col - 1] != l
                || lab[row * w + col + 1] != l
                || lab[(row - 1) * w + col] != l
                || lab[(row + 1) * w + col] != l;
            if edge {
                out.put_pixel(col as u32, row as u32, Rgb(level_color(l)));
            }
        }
    }
    Ok(out)
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .expect("in-memory png encoding");
    buf.into_inner()
}
