//! Canonical in-memory volumes.
//!
//! Every volume is a flat buffer in slice-major order: `i` varies fastest,
//! then `j`, then `k`. After loading, the `k` axis is always craniocaudal and
//! points from inferior to superior, so slice `k` is one axial CT slice.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Spacing components closer than this are considered equal.
pub const SPACING_TOLERANCE_MM: f64 = 1e-6;
/// Origin components closer than this are considered equal.
pub const ORIGIN_TOLERANCE_MM: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum VolumeError {
    #[error("invalid dimensions {0:?}: every axis needs at least one voxel")]
    InvalidDims([usize; 3]),
    #[error("invalid spacing {0:?}: every component must be finite and > 0")]
    InvalidSpacing([f64; 3]),
    #[error("axis codes {0} do not span the three anatomical axes")]
    InvalidAxisCodes(AxisCodes),
    #[error("voxel buffer holds {got} values but the grid needs {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("geometry mismatch: {0}")]
    Geometry(GeometryCheck),
}

/// Anatomical direction toward which an index axis increases (RAS+ world frame).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AxisCode {
    L,
    R,
    P,
    A,
    I,
    S,
}

impl AxisCode {
    /// World axis (0 = x, 1 = y, 2 = z) this code lies on.
    pub fn world_axis(self) -> usize {
        match self {
            AxisCode::L | AxisCode::R => 0,
            AxisCode::P | AxisCode::A => 1,
            AxisCode::I | AxisCode::S => 2,
        }
    }

    /// +1 when the code points along the positive RAS+ world axis.
    pub fn sign(self) -> f64 {
        match self {
            AxisCode::R | AxisCode::A | AxisCode::S => 1.0,
            AxisCode::L | AxisCode::P | AxisCode::I => -1.0,
        }
    }

    pub fn from_world(axis: usize, positive: bool) -> AxisCode {
        match (axis, positive) {
            (0, true) => AxisCode::R,
            (0, false) => AxisCode::L,
            (1, true) => AxisCode::A,
            (1, false) => AxisCode::P,
            (_, true) => AxisCode::S,
            (_, false) => AxisCode::I,
        }
    }

    pub fn flipped(self) -> AxisCode {
        AxisCode::from_world(self.world_axis(), self.sign() < 0.0)
    }

    pub fn as_char(self) -> char {
        match self {
            AxisCode::L => 'L',
            AxisCode::R => 'R',
            AxisCode::P => 'P',
            AxisCode::A => 'A',
            AxisCode::I => 'I',
            AxisCode::S => 'S',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AxisCodes(pub [AxisCode; 3]);

impl AxisCodes {
    pub const RAS: AxisCodes = AxisCodes([AxisCode::R, AxisCode::A, AxisCode::S]);

    pub fn is_valid(&self) -> bool {
        let mut seen = [false; 3];
        for code in self.0 {
            seen[code.world_axis()] = true;
        }
        seen.iter().all(|&s| s)
    }

    /// Index axis lying on the given world axis.
    pub fn index_axis_for_world(&self, world: usize) -> Option<usize> {
        self.0.iter().position(|c| c.world_axis() == world)
    }
}

impl fmt::Display for AxisCodes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for code in self.0 {
            write!(f, "{}", code.as_char())?;
        }
        Ok(())
    }
}

/// Geometry of a volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    /// World position (RAS+, mm) of the center of voxel (0, 0, 0).
    pub origin_mm: [f64; 3],
    pub axis_codes: AxisCodes,
}

impl VoxelGrid {
    /// Grid at the world origin with RAS orientation.
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3]) -> Result<Self, VolumeError> {
        Self::with_placement(dims, spacing_mm, [0.0; 3], AxisCodes::RAS)
    }

    pub fn with_placement(
        dims: [usize; 3],
        spacing_mm: [f64; 3],
        origin_mm: [f64; 3],
        axis_codes: AxisCodes,
    ) -> Result<Self, VolumeError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(VolumeError::InvalidDims(dims));
        }
        if spacing_mm.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(VolumeError::InvalidSpacing(spacing_mm));
        }
        if !axis_codes.is_valid() {
            return Err(VolumeError::InvalidAxisCodes(axis_codes));
        }
        Ok(Self {
            dims,
            spacing_mm,
            origin_mm,
            axis_codes,
        })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Voxels per axial slice.
    pub fn slice_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let i = index % self.dims[0];
        let rest = index / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    /// World position (mm) of a voxel center.
    pub fn world_position(&self, ijk: [f64; 3]) -> [f64; 3] {
        let mut p = self.origin_mm;
        for (axis, code) in self.axis_codes.0.iter().enumerate() {
            p[code.world_axis()] += code.sign() * ijk[axis] * self.spacing_mm[axis];
        }
        p
    }

    /// Index axis that runs left-right, if any.
    pub fn left_right_axis(&self) -> Option<usize> {
        self.axis_codes.index_axis_for_world(0)
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing_mm.iter().copied().fold(f64::MIN, f64::max)
    }
}

/// One field on which two grids disagree.
#[derive(Debug, Clone, PartialEq)]
pub enum GeometryMismatch {
    Dims { a: [usize; 3], b: [usize; 3] },
    Spacing { axis: usize, a: f64, b: f64 },
    Origin { axis: usize, a: f64, b: f64 },
    AxisCodes { a: AxisCodes, b: AxisCodes },
}

impl GeometryMismatch {
    pub fn field(&self) -> &'static str {
        match self {
            GeometryMismatch::Dims { .. } => "dims",
            GeometryMismatch::Spacing { .. } => "spacing",
            GeometryMismatch::Origin { .. } => "origin",
            GeometryMismatch::AxisCodes { .. } => "axis_codes",
        }
    }
}

impl fmt::Display for GeometryMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryMismatch::Dims { a, b } => write!(f, "dims {a:?} vs {b:?}"),
            GeometryMismatch::Spacing { axis, a, b } => {
                write!(f, "spacing[{axis}] {a} mm vs {b} mm")
            }
            GeometryMismatch::Origin { axis, a, b } => {
                write!(f, "origin[{axis}] {a} mm vs {b} mm")
            }
            GeometryMismatch::AxisCodes { a, b } => write!(f, "axis_codes {a} vs {b}"),
        }
    }
}

/// Result of comparing two grids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GeometryCheck {
    pub mismatches: Vec<GeometryMismatch>,
}

impl GeometryCheck {
    pub fn is_compatible(&self) -> bool {
        self.mismatches.is_empty()
    }

    pub fn into_result(self) -> Result<(), VolumeError> {
        if self.is_compatible() {
            Ok(())
        } else {
            Err(VolumeError::Geometry(self))
        }
    }
}

impl fmt::Display for GeometryCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.mismatches.is_empty() {
            return write!(f, "compatible");
        }
        let parts: Vec<String> = self.mismatches.iter().map(|m| m.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

pub fn check_grids(a: &VoxelGrid, b: &VoxelGrid) -> GeometryCheck {
    let mut mismatches = Vec::new();
    if a.dims != b.dims {
        mismatches.push(GeometryMismatch::Dims {
            a: a.dims,
            b: b.dims,
        });
    }
    for axis in 0..3 {
        let (sa, sb) = (a.spacing_mm[axis], b.spacing_mm[axis]);
        if (sa - sb).abs() > SPACING_TOLERANCE_MM {
            mismatches.push(GeometryMismatch::Spacing { axis, a: sa, b: sb });
        }
    }
    for axis in 0..3 {
        let (oa, ob) = (a.origin_mm[axis], b.origin_mm[axis]);
        if (oa - ob).abs() > ORIGIN_TOLERANCE_MM {
            mismatches.push(GeometryMismatch::Origin { axis, a: oa, b: ob });
        }
    }
    if a.axis_codes != b.axis_codes {
        mismatches.push(GeometryMismatch::AxisCodes {
            a: a.axis_codes,
            b: b.axis_codes,
        });
    }
    GeometryCheck { mismatches }
}

/// Anything that lives on a [`VoxelGrid`].
pub trait HasGrid {
    fn grid(&self) -> &VoxelGrid;
}

impl HasGrid for VoxelGrid {
    fn grid(&self) -> &VoxelGrid {
        self
    }
}

/// Compare the geometry of two volumes, listing every mismatching field.
pub fn check_geometry_compatible<A: HasGrid + ?Sized, B: HasGrid + ?Sized>(
    a: &A,
    b: &B,
) -> GeometryCheck {
    check_grids(a.grid(), b.grid())
}

/// Inclusive-exclusive voxel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl CropBox {
    pub fn full(dims: [usize; 3]) -> Self {
        Self {
            min: [0; 3],
            max: dims,
        }
    }

    pub fn extent(&self) -> [usize; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn fits(&self, dims: [usize; 3]) -> bool {
        (0..3).all(|a| self.min[a] < self.max[a] && self.max[a] <= dims[a])
    }
}

/// Dense voxel buffer on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    grid: VoxelGrid,
    data: Vec<T>,
}

pub type ImageVolume = Volume<f32>;
pub type BinaryMask = Volume<bool>;

impl<T> HasGrid for Volume<T> {
    fn grid(&self) -> &VoxelGrid {
        &self.grid
    }
}

impl<T> Volume<T> {
    pub fn new(grid: VoxelGrid, data: Vec<T>) -> Result<Self, VolumeError> {
        if data.len() != grid.len() {
            return Err(VolumeError::LengthMismatch {
                expected: grid.len(),
                got: data.len(),
            });
        }
        Ok(Self { grid, data })
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_parts(self) -> (VoxelGrid, Vec<T>) {
        (self.grid, self.data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> &T {
        &self.data[self.grid.index(i, j, k)]
    }

    /// One axial slice.
    pub fn slice(&self, k: usize) -> &[T] {
        let n = self.grid.slice_len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [T] {
        let n = self.grid.slice_len();
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn map<U, F: FnMut(&T) -> U>(&self, f: F) -> Volume<U> {
        Volume {
            grid: self.grid.clone(),
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Clone> Volume<T> {
    pub fn filled(grid: VoxelGrid, value: T) -> Self {
        let data = vec![value; grid.len()];
        Self { grid, data }
    }

    /// Sub-volume inside `bounds`; the origin moves to the box's min corner.
    pub fn crop(&self, bounds: &CropBox) -> Option<Self> {
        if !bounds.fits(self.grid.dims) {
            return None;
        }
        let ext = bounds.extent();
        let mut data = Vec::with_capacity(ext[0] * ext[1] * ext[2]);
        for k in bounds.min[2]..bounds.max[2] {
            for j in bounds.min[1]..bounds.max[1] {
                let row = self.grid.index(bounds.min[0], j, k);
                data.extend_from_slice(&self.data[row..row + ext[0]]);
            }
        }
        let min = bounds.min.map(|m| m as f64);
        let grid = VoxelGrid {
            dims: ext,
            spacing_mm: self.grid.spacing_mm,
            origin_mm: self.grid.world_position(min),
            axis_codes: self.grid.axis_codes,
        };
        Some(Self { grid, data })
    }

    /// Reverse the voxel order along one index axis, keeping world placement.
    pub fn flipped(&self, axis: usize) -> Self {
        self.reoriented([0, 1, 2], {
            let mut f = [false; 3];
            f[axis] = true;
            f
        })
    }

    /// Permute and flip index axes: new axis `n` is old axis `perm[n]`,
    /// reversed when `flip[n]`. The world position of every voxel is kept.
    pub fn reoriented(&self, perm: [usize; 3], flip: [bool; 3]) -> Self {
        let old = &self.grid;
        let dims = [old.dims[perm[0]], old.dims[perm[1]], old.dims[perm[2]]];
        let mut codes = [old.axis_codes.0[perm[0]]; 3];
        let mut spacing = [0.0; 3];
        for n in 0..3 {
            codes[n] = if flip[n] {
                old.axis_codes.0[perm[n]].flipped()
            } else {
                old.axis_codes.0[perm[n]]
            };
            spacing[n] = old.spacing_mm[perm[n]];
        }
        // new voxel (0,0,0) sits at the old index with flipped axes at their far end
        let mut corner = [0.0; 3];
        for n in 0..3 {
            if flip[n] {
                corner[perm[n]] = (old.dims[perm[n]] - 1) as f64;
            }
        }
        let grid = VoxelGrid {
            dims,
            spacing_mm: spacing,
            origin_mm: old.world_position(corner),
            axis_codes: AxisCodes(codes),
        };
        let mut data = Vec::with_capacity(self.data.len());
        let mut src = [0usize; 3];
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    for (n, idx) in [i, j, k].into_iter().enumerate() {
                        src[perm[n]] = if flip[n] { dims[n] - 1 - idx } else { idx };
                    }
                    data.push(self.data[old.index(src[0], src[1], src[2])].clone());
                }
            }
        }
        Self { grid, data }
    }
}

impl BinaryMask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

/// Schema id used when a label file does not name one.
pub const DEFAULT_SCHEMA_ID: &str = "default";

/// Per-voxel class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    volume: Volume<u8>,
    schema_id: String,
}

impl HasGrid for LabelVolume {
    fn grid(&self) -> &VoxelGrid {
        self.volume.grid()
    }
}

impl LabelVolume {
    pub fn new(
        grid: VoxelGrid,
        labels: Vec<u8>,
        schema_id: impl Into<String>,
    ) -> Result<Self, VolumeError> {
        Ok(Self {
            volume: Volume::new(grid, labels)?,
            schema_id: schema_id.into(),
        })
    }

    pub fn from_volume(volume: Volume<u8>, schema_id: impl Into<String>) -> Self {
        Self {
            volume,
            schema_id: schema_id.into(),
        }
    }

    /// All-background volume.
    pub fn empty(grid: VoxelGrid, schema_id: impl Into<String>) -> Self {
        Self::from_volume(Volume::filled(grid, 0), schema_id)
    }

    pub fn grid(&self) -> &VoxelGrid {
        self.volume.grid()
    }

    pub fn volume(&self) -> &Volume<u8> {
        &self.volume
    }

    pub fn into_volume(self) -> Volume<u8> {
        self.volume
    }

    pub fn labels(&self) -> &[u8] {
        self.volume.data()
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        self.volume.data_mut()
    }

    pub fn schema_id(&self) -> &str {
        &self.schema_id
    }

    pub fn set_schema_id(&mut self, id: impl Into<String>) {
        self.schema_id = id.into();
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> u8 {
        *self.volume.get(i, j, k)
    }

    pub fn slice(&self, k: usize) -> &[u8] {
        self.volume.slice(k)
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [u8] {
        self.volume.slice_mut(k)
    }

    /// Voxel count per class id.
    pub fn histogram(&self) -> [u64; 256] {
        let mut h = [0u64; 256];
        for &l in self.labels() {
            h[l as usize] += 1;
        }
        h
    }

    pub fn mask_of(&self, id: u8) -> BinaryMask {
        self.volume.map(|&l| l == id)
    }

    /// Every voxel whose id differs from `background`.
    pub fn foreground_mask(&self, background: u8) -> BinaryMask {
        self.volume.map(|&l| l != background)
    }

    pub fn with_volume(&self, volume: Volume<u8>) -> Self {
        Self {
            volume,
            schema_id: self.schema_id.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(dims: [usize; 3]) -> VoxelGrid {
        VoxelGrid::new(dims, [1.0, 2.0, 3.0]).unwrap()
    }

    #[test]
    fn rejects_zero_dims_and_bad_spacing() {
        assert!(VoxelGrid::new([0, 1, 1], [1.0; 3]).is_err());
        assert!(VoxelGrid::new([1, 1, 1], [1.0, 0.0, 1.0]).is_err());
        assert!(VoxelGrid::new([1, 1, 1], [1.0, f64::NAN, 1.0]).is_err());
        let codes = AxisCodes([AxisCode::R, AxisCode::L, AxisCode::S]);
        assert!(VoxelGrid::with_placement([1, 1, 1], [1.0; 3], [0.0; 3], codes).is_err());
    }

    #[test]
    fn index_and_coords_agree() {
        let g = grid([3, 4, 5]);
        for idx in 0..g.len() {
            let [i, j, k] = g.coords(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
    }

    #[test]
    fn self_compatible() {
        let g = grid([4, 4, 4]);
        assert!(check_geometry_compatible(&g, &g).is_compatible());
    }

    #[test]
    fn spacing_mismatch_is_reported() {
        let a = grid([4, 4, 4]);
        let mut b = a.clone();
        b.spacing_mm[2] += 0.5;
        let check = check_geometry_compatible(&a, &b);
        assert!(!check.is_compatible());
        assert_eq!(check.mismatches.len(), 1);
        assert_eq!(check.mismatches[0].field(), "spacing");
    }

    #[test]
    fn spacing_within_tolerance_is_compatible() {
        let a = grid([4, 4, 4]);
        let mut b = a.clone();
        b.spacing_mm[2] += 1e-9;
        b.origin_mm[0] += 5e-4;
        assert!(check_geometry_compatible(&a, &b).is_compatible());
    }

    #[test]
    fn every_field_reported() {
        let a = grid([4, 4, 4]);
        let b = VoxelGrid::with_placement(
            [4, 4, 5],
            [1.0, 2.0, 3.5],
            [0.0, 1.0, 0.0],
            AxisCodes([AxisCode::L, AxisCode::A, AxisCode::S]),
        )
        .unwrap();
        let fields: Vec<_> = check_grids(&a, &b)
            .mismatches
            .iter()
            .map(|m| m.field())
            .collect();
        assert_eq!(fields, vec!["dims", "spacing", "origin", "axis_codes"]);
    }

    #[test]
    fn crop_shifts_origin() {
        let g = grid([4, 5, 6]);
        let v = Volume::new(g.clone(), (0..g.len() as u32).collect()).unwrap();
        let b = CropBox {
            min: [1, 2, 3],
            max: [3, 5, 6],
        };
        let c = v.crop(&b).unwrap();
        assert_eq!(c.dims(), [2, 3, 3]);
        assert_eq!(c.grid().origin_mm, [1.0, 4.0, 9.0]);
        assert_eq!(*c.get(0, 0, 0), *v.get(1, 2, 3));
        assert_eq!(*c.get(1, 2, 2), *v.get(2, 4, 5));
    }

    #[test]
    fn flip_preserves_world_positions() {
        let g = grid([3, 2, 2]);
        let v = Volume::new(g.clone(), (0..g.len() as u32).collect()).unwrap();
        let f = v.flipped(0);
        assert_eq!(f.grid().axis_codes.0[0], AxisCode::L);
        for idx in 0..g.len() {
            let [i, j, k] = g.coords(idx);
            let p = g.world_position([i as f64, j as f64, k as f64]);
            let q = f
                .grid()
                .world_position([(2 - i) as f64, j as f64, k as f64]);
            assert_eq!(p, q);
            assert_eq!(*f.get(2 - i, j, k), *v.get(i, j, k));
        }
    }

    #[test]
    fn reorient_permutation_round_trip() {
        let g = grid([2, 3, 4]);
        let v = Volume::new(g.clone(), (0..g.len() as u32).collect()).unwrap();
        let r = v.reoriented([2, 0, 1], [true, false, false]);
        assert_eq!(r.dims(), [4, 2, 3]);
        assert_eq!(*r.get(0, 1, 2), *v.get(1, 2, 3));
        // inverse: old axis 0 is new axis 1, old 1 -> new 2, old 2 -> new 0 (flipped)
        let back = r.reoriented([1, 2, 0], [false, false, true]);
        assert_eq!(back.data(), v.data());
        assert_eq!(back.grid().axis_codes, g.axis_codes);
        for a in 0..3 {
            assert!((back.grid().origin_mm[a] - g.origin_mm[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn histogram_counts() {
        let g = grid([2, 2, 1]);
        let l = LabelVolume::new(g, vec![0, 3, 3, 7], DEFAULT_SCHEMA_ID).unwrap();
        let h = l.histogram();
        assert_eq!((h[0], h[3], h[7]), (1, 2, 1));
        assert_eq!(l.mask_of(3).count(), 2);
        assert_eq!(l.foreground_mask(0).count(), 3);
    }
}
