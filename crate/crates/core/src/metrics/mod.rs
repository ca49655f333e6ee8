//! Geometric accuracy: volumetric Dice, surface Dice at a tolerance and
//! maximum Hausdorff distance, per level and for the union of all levels.
//!
//! Surfaces are voxel faces separating foreground from background (voxels
//! outside the grid count as background), weighted by face area in mm².
//! Hausdorff distances are measured between boundary-voxel centers, where a
//! boundary voxel is a foreground voxel with a background face neighbour.

mod edt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{LevelSchema, SchemaError};
use crate::volume::{check_geometry_compatible, BinaryMask, GeometryCheck, LabelVolume, VoxelGrid};
use edt::{squared_distances, Lattice};

/// Slack added to every tolerance comparison so that distances equal to
/// the tolerance count as within it despite rounding.
pub const DISTANCE_SLACK_MM: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("geometry mismatch: {0}")]
    Geometry(GeometryCheck),
    #[error("metric undefined: {0} mask is empty")]
    EmptyMask(&'static str),
    #[error("tolerance must be finite and >= 0, got {0}")]
    InvalidTolerance(f64),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// The "one voxel" tolerance: the largest spacing component.
pub fn default_tolerance(grid: &VoxelGrid) -> f64 {
    grid.max_spacing()
}

fn check_pair(a: &BinaryMask, b: &BinaryMask) -> Result<(), MetricError> {
    let check = check_geometry_compatible(a, b);
    if check.is_compatible() {
        Ok(())
    } else {
        Err(MetricError::Geometry(check))
    }
}

fn check_tolerance(tol_mm: f64) -> Result<(), MetricError> {
    if tol_mm.is_finite() && tol_mm >= 0.0 {
        Ok(())
    } else {
        Err(MetricError::InvalidTolerance(tol_mm))
    }
}

fn dice_from_counts(a: usize, b: usize, both: usize) -> f64 {
    if a + b == 0 {
        1.0
    } else {
        2.0 * both as f64 / (a + b) as f64
    }
}

/// 2|A∩B| / (|A| + |B|); 1.0 when both are empty.
pub fn volumetric_dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MetricError> {
    check_pair(a, b)?;
    let (mut na, mut nb, mut both) = (0, 0, 0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    Ok(dice_from_counts(na, nb, both))
}

/// Two masks restricted to the bounding box of their union.
struct Cropped {
    dims: [usize; 3],
    spacing: [f64; 3],
    a: Vec<bool>,
    b: Vec<bool>,
}

impl Cropped {
    fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        min: [usize; 3],
        max: [usize; 3],
        a: impl Fn(usize) -> bool,
        b: impl Fn(usize) -> bool,
    ) -> Self {
        let cd = [max[0] - min[0], max[1] - min[1], max[2] - min[2]];
        let n = cd.iter().product();
        let mut ca = Vec::with_capacity(n);
        let mut cb = Vec::with_capacity(n);
        for k in min[2]..max[2] {
            for j in min[1]..max[1] {
                let row = dims[0] * (j + dims[1] * k);
                for i in min[0]..max[0] {
                    ca.push(a(row + i));
                    cb.push(b(row + i));
                }
            }
        }
        Cropped {
            dims: cd,
            spacing,
            a: ca,
            b: cb,
        }
    }

    fn from_masks(a: &BinaryMask, b: &BinaryMask) -> Option<Self> {
        let dims = a.dims();
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        for (n, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
            if x || y {
                let c = a.grid().coords(n);
                for d in 0..3 {
                    lo[d] = lo[d].min(c[d]);
                    hi[d] = hi[d].max(c[d] + 1);
                }
            }
        }
        if lo[0] == usize::MAX {
            return None;
        }
        let (da, db) = (a.data(), b.data());
        Some(Self::new(dims, a.grid().spacing_mm, lo, hi, |n| da[n], |n| db[n]))
    }

    fn counts(&self) -> (usize, usize, usize) {
        let (mut na, mut nb, mut both) = (0, 0, 0);
        for (&x, &y) in self.a.iter().zip(&self.b) {
            na += x as usize;
            nb += y as usize;
            both += (x && y) as usize;
        }
        (na, nb, both)
    }
}

/// Boundary faces normal to each axis, on the face lattices of `dims`.
fn surfels(mask: &[bool], dims: [usize; 3]) -> [Vec<bool>; 3] {
    std::array::from_fn(|axis| {
        let lat = Lattice::faces(dims, axis);
        let mut out = vec![false; lat.len()];
        let mut n = 0;
        for k in 0..lat.dims[2] {
            for j in 0..lat.dims[1] {
                for i in 0..lat.dims[0] {
                    let f = [i, j, k][axis];
                    // voxel after the face has index f along `axis`
                    let base = [i, j, k];
                    let after = if f < dims[axis] {
                        let mut c = base;
                        c[axis] = f;
                        mask[c[0] + dims[0] * (c[1] + dims[1] * c[2])]
                    } else {
                        false
                    };
                    let before = if f > 0 {
                        let mut c = base;
                        c[axis] = f - 1;
                        mask[c[0] + dims[0] * (c[1] + dims[1] * c[2])]
                    } else {
                        false
                    };
                    out[n] = after != before;
                    n += 1;
                }
            }
        }
        out
    })
}

fn face_area(spacing: [f64; 3], axis: usize) -> f64 {
    match axis {
        0 => spacing[1] * spacing[2],
        1 => spacing[0] * spacing[2],
        _ => spacing[0] * spacing[1],
    }
}

/// Face areas and distances to the other surface, for both directions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfaceDistances {
    /// (area mm², distance mm) of every surfel of A to the surface of B.
    pub a_to_b: Vec<(f64, f64)>,
    /// (area mm², distance mm) of every surfel of B to the surface of A.
    pub b_to_a: Vec<(f64, f64)>,
}

impl SurfaceDistances {
    /// Surface Dice at `tol_mm`; 1.0 when both surfaces are empty.
    pub fn dice_at(&self, tol_mm: f64) -> f64 {
        let limit = tol_mm + DISTANCE_SLACK_MM;
        let total: f64 = self.a_to_b.iter().chain(&self.b_to_a).map(|p| p.0).sum();
        if total == 0.0 {
            return 1.0;
        }
        let within: f64 = self
            .a_to_b
            .iter()
            .chain(&self.b_to_a)
            .filter(|p| p.1 <= limit)
            .map(|p| p.0)
            .sum();
        within / total
    }
}

fn directed_surface(
    from: &[Vec<bool>; 3],
    to: &[Vec<bool>; 3],
    dims: [usize; 3],
    spacing: [f64; 3],
    out: &mut Vec<(f64, f64)>,
) {
    for q in 0..3 {
        if !from[q].iter().any(|&f| f) {
            continue;
        }
        let qlat = Lattice::faces(dims, q);
        let mut best = vec![f64::INFINITY; qlat.len()];
        for (s, src) in to.iter().enumerate() {
            let d = squared_distances(src, Lattice::faces(dims, s), qlat, spacing);
            for (b, v) in best.iter_mut().zip(d) {
                *b = b.min(v);
            }
        }
        let area = face_area(spacing, q);
        for (n, &f) in from[q].iter().enumerate() {
            if f {
                out.push((area, best[n].sqrt()));
            }
        }
    }
}

fn surface_distances_cropped(c: &Cropped) -> SurfaceDistances {
    let sa = surfels(&c.a, c.dims);
    let sb = surfels(&c.b, c.dims);
    let mut out = SurfaceDistances::default();
    directed_surface(&sa, &sb, c.dims, c.spacing, &mut out.a_to_b);
    directed_surface(&sb, &sa, c.dims, c.spacing, &mut out.b_to_a);
    out
}

/// Per-surfel distances between the surfaces of two masks.
pub fn surface_distances(a: &BinaryMask, b: &BinaryMask) -> Result<SurfaceDistances, MetricError> {
    check_pair(a, b)?;
    Ok(Cropped::from_masks(a, b)
        .map(|c| surface_distances_cropped(&c))
        .unwrap_or_default())
}

/// Surface Dice at tolerance `tol_mm`.
pub fn surface_dice(a: &BinaryMask, b: &BinaryMask, tol_mm: f64) -> Result<f64, MetricError> {
    check_tolerance(tol_mm)?;
    Ok(surface_distances(a, b)?.dice_at(tol_mm))
}

fn boundary_voxels(mask: &[bool], dims: [usize; 3]) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    let mut n = 0;
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                if mask[n] {
                    let c = [i, j, k];
                    let strides = [1, dims[0], dims[0] * dims[1]];
                    out[n] = (0..3).any(|a| {
                        c[a] == 0
                            || c[a] + 1 == dims[a]
                            || !mask[n - strides[a]]
                            || !mask[n + strides[a]]
                    });
                }
                n += 1;
            }
        }
    }
    out
}

fn directed_hausdorff(from: &[bool], to: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> f64 {
    let lat = Lattice::centers(dims);
    let d = squared_distances(to, lat, lat, spacing);
    from.iter()
        .zip(&d)
        .filter(|(&f, _)| f)
        .map(|(_, &v)| v)
        .fold(0.0, f64::max)
        .sqrt()
}

fn hausdorff_cropped(c: &Cropped) -> f64 {
    let ba = boundary_voxels(&c.a, c.dims);
    let bb = boundary_voxels(&c.b, c.dims);
    directed_hausdorff(&ba, &bb, c.dims, c.spacing).max(directed_hausdorff(&bb, &ba, c.dims, c.spacing))
}

/// Symmetric maximum Hausdorff distance between boundary-voxel centers.
pub fn hausdorff_max(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MetricError> {
    check_pair(a, b)?;
    if !a.data().iter().any(|&v| v) {
        return Err(MetricError::EmptyMask("first"));
    }
    if !b.data().iter().any(|&v| v) {
        return Err(MetricError::EmptyMask("second"));
    }
    let c = Cropped::from_masks(a, b).expect("masks are non-empty");
    Ok(hausdorff_cropped(&c))
}

/// Metrics for one level (or the union of all levels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub vol_dice: f64,
    pub surf_dice: f64,
    /// Absent when either mask is empty.
    pub hausdorff_max_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelEntry {
    pub level: u8,
    pub name: String,
    #[serde(flatten)]
    pub metrics: LevelMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub case_id: String,
    pub tolerance_mm: f64,
    /// Levels present in either volume, in schema order.
    pub levels: Vec<LevelEntry>,
    pub union: LevelMetrics,
}

impl MetricReport {
    pub fn level(&self, id: u8) -> Option<&LevelMetrics> {
        self.levels.iter().find(|e| e.level == id).map(|e| &e.metrics)
    }
}

fn metrics_cropped(c: &Cropped, tol_mm: f64) -> LevelMetrics {
    let (na, nb, both) = c.counts();
    LevelMetrics {
        vol_dice: dice_from_counts(na, nb, both),
        surf_dice: surface_distances_cropped(c).dice_at(tol_mm),
        hausdorff_max_mm: (na > 0 && nb > 0).then(|| hausdorff_cropped(c)),
    }
}

/// All three metrics for every level present in either volume and for the
/// union of all non-background labels.
pub fn evaluate_case(
    case_id: &str,
    pred: &LabelVolume,
    reference: &LabelVolume,
    schema: &LevelSchema,
    tol_mm: f64,
) -> Result<MetricReport, MetricError> {
    check_tolerance(tol_mm)?;
    let check = check_geometry_compatible(pred, reference);
    if !check.is_compatible() {
        return Err(MetricError::Geometry(check));
    }
    schema.validate_labels(pred)?;
    schema.validate_labels(reference)?;

    let grid = pred.grid();
    let dims = grid.dims;
    let bg = schema.background_id();
    // bounding boxes per label value (pred and ref together), slot 256 = union
    let mut lo = vec![[usize::MAX; 3]; 257];
    let mut hi = vec![[0usize; 3]; 257];
    let mut n = 0;
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let (p, r) = (pred.labels()[n], reference.labels()[n]);
                for v in [p as usize, r as usize] {
                    if v != bg as usize {
                        for (d, c) in [i, j, k].into_iter().enumerate() {
                            lo[v][d] = lo[v][d].min(c);
                            hi[v][d] = hi[v][d].max(c + 1);
                            lo[256][d] = lo[256][d].min(c);
                            hi[256][d] = hi[256][d].max(c + 1);
                        }
                    }
                }
                n += 1;
            }
        }
    }
    let spacing = grid.spacing_mm;
    let (pl, rl) = (pred.labels(), reference.labels());
    let present: Vec<&crate::schema::LevelDef> = schema
        .levels()
        .iter()
        .filter(|l| lo[l.id as usize][0] != usize::MAX)
        .collect();
    let levels: Vec<LevelEntry> = present
        .par_iter()
        .map(|l| {
            let id = l.id;
            let c = Cropped::new(dims, spacing, lo[id as usize], hi[id as usize], |n| pl[n] == id, |n| {
                rl[n] == id
            });
            LevelEntry {
                level: id,
                name: l.name.clone(),
                metrics: metrics_cropped(&c, tol_mm),
            }
        })
        .collect();
    let union = if lo[256][0] == usize::MAX {
        LevelMetrics {
            vol_dice: 1.0,
            surf_dice: 1.0,
            hausdorff_max_mm: None,
        }
    } else {
        let c = Cropped::new(dims, spacing, lo[256], hi[256], |n| pl[n] != bg, |n| rl[n] != bg);
        metrics_cropped(&c, tol_mm)
    };
    Ok(MetricReport {
        case_id: case_id.to_string(),
        tolerance_mm: tol_mm,
        levels,
        union,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Volume;

    fn mask(dims: [usize; 3], spacing: [f64; 3], f: impl Fn(usize, usize, usize) -> bool) -> BinaryMask {
        let grid = VoxelGrid::new(dims, spacing).unwrap();
        let mut data = Vec::with_capacity(grid.len());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(f(i, j, k));
                }
            }
        }
        Volume::new(grid, data).unwrap()
    }

    fn cube(dims: [usize; 3], lo: [usize; 3], edge: usize) -> BinaryMask {
        mask(dims, [1.0; 3], |i, j, k| {
            (lo[0]..lo[0] + edge).contains(&i)
                && (lo[1]..lo[1] + edge).contains(&j)
                && (lo[2]..lo[2] + edge).contains(&k)
        })
    }

    #[test]
    fn dice_of_shifted_cube() {
        let a = cube([6, 6, 6], [1, 1, 1], 2);
        let b = cube([6, 6, 6], [2, 1, 1], 2);
        assert_eq!(volumetric_dice(&a, &b).unwrap(), 0.5);
        assert_eq!(volumetric_dice(&a, &a).unwrap(), 1.0);
        let far = cube([6, 6, 6], [4, 4, 4], 2);
        assert_eq!(volumetric_dice(&a, &far).unwrap(), 0.0);
        let empty = mask([6, 6, 6], [1.0; 3], |_, _, _| false);
        assert_eq!(volumetric_dice(&empty, &empty).unwrap(), 1.0);
        assert_eq!(surface_dice(&empty, &empty, 1.0).unwrap(), 1.0);
        assert_eq!(surface_dice(&a, &empty, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn single_voxels_far_apart() {
        let a = mask([60, 3, 3], [1.0; 3], |i, j, k| i == 1 && j == 1 && k == 1);
        let b = mask([60, 3, 3], [1.0; 3], |i, j, k| i == 51 && j == 1 && k == 1);
        assert_eq!(surface_dice(&a, &b, 3.0).unwrap(), 0.0);
        assert!((hausdorff_max(&a, &b).unwrap() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn hausdorff_across_thick_slices() {
        let a = mask([3, 3, 8], [0.8, 0.8, 3.0], |i, j, k| (i, j, k) == (1, 1, 2));
        let b = mask([3, 3, 8], [0.8, 0.8, 3.0], |i, j, k| (i, j, k) == (1, 1, 5));
        assert!((hausdorff_max(&a, &b).unwrap() - 9.0).abs() < 1e-12);
        assert_eq!(hausdorff_max(&a, &a).unwrap(), 0.0);
        let empty = mask([3, 3, 8], [0.8, 0.8, 3.0], |_, _, _| false);
        assert!(matches!(hausdorff_max(&a, &empty), Err(MetricError::EmptyMask(_))));
    }

    #[test]
    fn shifted_cubes_surface_dice_by_hand() {
        // 3x3x3 cubes offset by one voxel in x. Each has 54 unit faces.
        // A's -x face (9 faces) lies 1 mm from B's -x face, etc; every face
        // is within 1 mm of the other surface.
        let a = cube([8, 8, 8], [2, 2, 2], 3);
        let b = cube([8, 8, 8], [3, 2, 2], 3);
        assert_eq!(surface_dice(&a, &b, 1.0).unwrap(), 1.0);
        // at tolerance 0 only coincident faces count: the 4 side walls share
        // 2 of 3 columns each (24 faces per cube out of 54)
        let d0 = surface_dice(&a, &b, 0.0).unwrap();
        assert!((d0 - 48.0 / 108.0).abs() < 1e-12, "{d0}");
    }

    #[test]
    fn default_tolerance_is_max_spacing() {
        let g = VoxelGrid::new([2, 2, 2], [1.14, 1.14, 3.0]).unwrap();
        assert_eq!(default_tolerance(&g), 3.0);
        let g = VoxelGrid::new([2, 2, 2], [0.83, 0.83, 3.0]).unwrap();
        assert_eq!(default_tolerance(&g), 3.0);
        let g = VoxelGrid::new([2, 2, 2], [1.0; 3]).unwrap();
        assert_eq!(default_tolerance(&g), 1.0);
    }

    #[test]
    fn rejects_mismatched_geometry_and_bad_tolerance() {
        let a = cube([4, 4, 4], [0, 0, 0], 2);
        let b = cube([4, 4, 5], [0, 0, 0], 2);
        assert!(matches!(volumetric_dice(&a, &b), Err(MetricError::Geometry(_))));
        assert!(matches!(
            surface_dice(&a, &a, -1.0),
            Err(MetricError::InvalidTolerance(_))
        ));
    }
}
