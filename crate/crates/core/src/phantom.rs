//! Synthetic neck phantoms, controlled perturbations and brute-force
//! metric oracles.
//!
//! A phantom is a soft-tissue elliptic cylinder in air with level slabs
//! stacked along `k`. Levels sit in three antero-posterior bands, split
//! into left, midline and right columns. Low `i` is patient left.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{default_tolerance, LevelEntry, LevelMetrics, MetricReport, DISTANCE_SLACK_MM};
use crate::morphology;
use crate::schema::{LevelSchema, SchemaError};
use crate::volume::{check_geometry_compatible, ImageVolume, LabelVolume, Volume, VoxelGrid};

pub const AIR_HU: f32 = -1000.0;
pub const TISSUE_HU: f32 = 40.0;
pub const TABLE_HU: f32 = 150.0;
/// Largest voxel count `oracle_metrics` accepts.
pub const ORACLE_MAX_VOXELS: usize = 64 * 64 * 64;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("infeasible phantom config: {0}")]
    Infeasible(String),
    #[error("level {0:?} is not in the schema")]
    UnknownLevel(String),
    #[error("volume has {0} voxels; the oracle accepts at most {ORACLE_MAX_VOXELS}")]
    TooLarge(usize),
    #[error("geometry mismatch: {0}")]
    Geometry(crate::volume::GeometryCheck),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Posterior,
    Central,
    Anterior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Column {
    /// Instantiated as `<name>_left` and `<name>_right`.
    Lateral,
    Midline,
}

/// Levels stacked bottom to top in one band and column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stack {
    pub band: Band,
    pub column: Column,
    pub start_slice: usize,
    /// (level base name, slab height in slices), inferior first.
    pub slabs: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub seed: u64,
    /// Level names to instantiate; all when absent.
    pub levels: Option<Vec<String>>,
    pub stacks: Vec<Stack>,
    /// Internal slab boundaries move by up to this many slices per seed.
    pub height_variation: usize,
    /// Column index separating patient left from right.
    pub lateral_split: usize,
    pub midline_half_width: usize,
    pub lateral_width: usize,
    /// `j` edges: posterior from [0] to [1], central to [2], anterior to [3].
    pub band_edges: [usize; 4],
    /// Body semi-axes in voxels along `i` and `j`.
    pub body_semi_axes: [f64; 2],
    pub body_center: [f64; 2],
    pub table: bool,
}

fn stack(band: Band, column: Column, start: usize, slabs: &[(&str, usize)]) -> Stack {
    Stack {
        band,
        column,
        start_slice: start,
        slabs: slabs.iter().map(|(n, h)| (n.to_string(), *h)).collect(),
    }
}

impl Default for PhantomConfig {
    fn default() -> Self {
        use Band::*;
        use Column::*;
        Self {
            dims: [64, 64, 160],
            spacing_mm: [0.9, 0.9, 1.5],
            seed: 0,
            levels: None,
            stacks: vec![
                stack(Central, Lateral, 4, &[("IVb", 24), ("IVa", 48), ("III", 48), ("II", 32)]),
                stack(Central, Midline, 4, &[("VIb", 48), ("VIa", 48), ("Ia", 56)]),
                stack(Posterior, Lateral, 4, &[("V", 76), ("VIIb", 40), ("VIII", 32)]),
                stack(Posterior, Midline, 40, &[("VIIa", 80)]),
                stack(Anterior, Lateral, 100, &[("Ib", 50)]),
            ],
            height_variation: 2,
            lateral_split: 32,
            midline_half_width: 6,
            lateral_width: 14,
            band_edges: [18, 26, 40, 46],
            body_semi_axes: [28.0, 26.0],
            body_center: [32.0, 32.0],
            table: false,
        }
    }
}

impl PhantomConfig {
    /// The default layout scaled to other dimensions.
    pub fn scaled(dims: [usize; 3], spacing_mm: [f64; 3], seed: u64) -> Self {
        let base = Self::default();
        let f = [
            dims[0] as f64 / base.dims[0] as f64,
            dims[1] as f64 / base.dims[1] as f64,
            dims[2] as f64 / base.dims[2] as f64,
        ];
        let sc = |v: usize, a: usize| ((v as f64 * f[a]).floor() as usize).max(1);
        Self {
            dims,
            spacing_mm,
            seed,
            levels: None,
            stacks: base
                .stacks
                .iter()
                .map(|s| Stack {
                    band: s.band,
                    column: s.column,
                    start_slice: (s.start_slice as f64 * f[2]).floor() as usize,
                    slabs: s.slabs.iter().map(|(n, h)| (n.clone(), sc(*h, 2))).collect(),
                })
                .collect(),
            height_variation: (base.height_variation as f64 * f[2]).floor() as usize,
            lateral_split: dims[0] / 2,
            midline_half_width: sc(base.midline_half_width, 0),
            lateral_width: sc(base.lateral_width, 0),
            band_edges: base.band_edges.map(|e| (e as f64 * f[1]).round() as usize),
            body_semi_axes: [base.body_semi_axes[0] * f[0], base.body_semi_axes[1] * f[1]],
            body_center: [base.body_center[0] * f[0], base.body_center[1] * f[1]],
            table: base.table,
        }
    }

    fn grid(&self) -> Result<VoxelGrid, PhantomError> {
        VoxelGrid::new(self.dims, self.spacing_mm).map_err(|e| PhantomError::Infeasible(e.to_string()))
    }

    fn i_range(&self, column: Column, left: bool) -> Result<(usize, usize), PhantomError> {
        let (s, hw, w) = (self.lateral_split, self.midline_half_width, self.lateral_width);
        let r = match (column, left) {
            (Column::Midline, _) => (s.checked_sub(hw), Some(s + hw)),
            (Column::Lateral, true) => (s.checked_sub(hw + w), s.checked_sub(hw)),
            (Column::Lateral, false) => (Some(s + hw), Some(s + hw + w)),
        };
        match r {
            (Some(a), Some(b)) if a < b && b <= self.dims[0] => Ok((a, b)),
            _ => Err(PhantomError::Infeasible(format!(
                "lateral layout (split {s}, half width {hw}, width {w}) does not fit {} columns",
                self.dims[0]
            ))),
        }
    }

    fn j_range(&self, band: Band) -> Result<(usize, usize), PhantomError> {
        let e = self.band_edges;
        let r = match band {
            Band::Posterior => (e[0], e[1]),
            Band::Central => (e[1], e[2]),
            Band::Anterior => (e[2], e[3]),
        };
        if r.0 < r.1 && r.1 <= self.dims[1] {
            Ok(r)
        } else {
            Err(PhantomError::Infeasible(format!(
                "band {band:?} rows {r:?} do not fit {} rows",
                self.dims[1]
            )))
        }
    }
}

/// Where one level ended up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacedSlab {
    pub level: u8,
    pub name: String,
    /// Half-open voxel ranges along i, j, k.
    pub i: (usize, usize),
    pub j: (usize, usize),
    pub k: (usize, usize),
}

impl PlacedSlab {
    pub fn height(&self) -> usize {
        self.k.1 - self.k.0
    }

    pub fn voxels(&self) -> usize {
        (self.i.1 - self.i.0) * (self.j.1 - self.j.0) * self.height()
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub image: ImageVolume,
    pub labels: LabelVolume,
    pub slabs: Vec<PlacedSlab>,
}

/// Build a phantom image and its slice-consistent label volume.
pub fn generate_phantom(cfg: &PhantomConfig, schema: &LevelSchema) -> Result<Phantom, PhantomError> {
    let grid = cfg.grid()?;
    let [nx, ny, nz] = cfg.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let wanted = |name: &str| match &cfg.levels {
        None => true,
        Some(list) => list.iter().any(|l| l == name),
    };
    if let Some(list) = &cfg.levels {
        if let Some(bad) = list.iter().find(|n| schema.by_name(n).is_none()) {
            return Err(PhantomError::UnknownLevel(bad.clone()));
        }
    }

    let mut slabs = Vec::new();
    for st in &cfg.stacks {
        let j = cfg.j_range(st.band)?;
        let sides: &[(bool, &str)] = match st.column {
            Column::Lateral => &[(true, "_left"), (false, "_right")],
            Column::Midline => &[(true, "")],
        };
        for &(left, suffix) in sides {
            let i = cfg.i_range(st.column, left)?;
            // internal boundaries shift independently per side
            let mut edges = vec![st.start_slice];
            for (_, h) in &st.slabs {
                edges.push(edges.last().unwrap() + h);
            }
            let v = cfg.height_variation as i64;
            for e in edges.iter_mut().take(st.slabs.len()).skip(1) {
                let shift = if v > 0 { rng.random_range(-v..=v) } else { 0 };
                *e = (*e as i64 + shift) as usize;
            }
            if *edges.last().unwrap() > nz {
                return Err(PhantomError::Infeasible(format!(
                    "stack starting at slice {} needs {} slices, volume has {nz}",
                    st.start_slice,
                    edges.last().unwrap()
                )));
            }
            for (n, (base, _)) in st.slabs.iter().enumerate() {
                let (k0, k1) = (edges[n], edges[n + 1]);
                if k0 >= k1 {
                    return Err(PhantomError::Infeasible(format!(
                        "slab {base} collapses; reduce height_variation"
                    )));
                }
                let name = format!("{base}{suffix}");
                let level = schema
                    .by_name(&name)
                    .ok_or_else(|| PhantomError::UnknownLevel(name.clone()))?;
                if wanted(&name) {
                    slabs.push(PlacedSlab {
                        level: level.id,
                        name,
                        i,
                        j,
                        k: (k0, k1),
                    });
                }
            }
        }
    }

    let mut labels = LabelVolume::empty(grid.clone(), schema.id());
    labels.labels_mut().fill(schema.background_id());
    for s in &slabs {
        for k in s.k.0..s.k.1 {
            for jj in s.j.0..s.j.1 {
                let row = grid.index(0, jj, k);
                labels.labels_mut()[row + s.i.0..row + s.i.1].fill(s.level);
            }
        }
    }

    let [cx, cy] = cfg.body_center;
    let [rx, ry] = cfg.body_semi_axes;
    let mut plane = vec![AIR_HU; nx * ny];
    for jj in 0..ny {
        for ii in 0..nx {
            let (dx, dy) = ((ii as f64 + 0.5 - cx) / rx, (jj as f64 + 0.5 - cy) / ry);
            if dx * dx + dy * dy <= 1.0 {
                plane[ii + nx * jj] = TISSUE_HU;
            } else if cfg.table && (1..3).contains(&jj) {
                plane[ii + nx * jj] = TABLE_HU;
            }
        }
    }
    let mut image = Volume::filled(grid, AIR_HU);
    for k in 0..nz {
        image.slice_mut(k).copy_from_slice(&plane);
    }
    Ok(Phantom { image, labels, slabs })
}

/// Move every craniocaudal boundary between two levels, column by column,
/// by a uniform random shift in `-max_shift..=max_shift` slices. A shift
/// never consumes a whole run.
pub fn perturb_boundary_jitter(
    labels: &LabelVolume,
    schema: &LevelSchema,
    max_shift_slices: usize,
    seed: u64,
) -> LabelVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = labels.grid();
    let [nx, ny, nz] = grid.dims;
    let plane = nx * ny;
    let bg = schema.background_id();
    let src = labels.labels();
    let mut out = labels.clone();
    let m = max_shift_slices as i64;
    let mut runs: Vec<(usize, usize, u8)> = Vec::new();
    for col in 0..plane {
        runs.clear();
        let mut k = 0;
        while k < nz {
            let v = src[col + plane * k];
            let start = k;
            while k < nz && src[col + plane * k] == v {
                k += 1;
            }
            runs.push((start, k, v));
        }
        let dst = out.labels_mut();
        for w in runs.windows(2) {
            let ((a0, a1, a), (_, b1, b)) = (w[0], w[1]);
            if a == bg || b == bg || m == 0 {
                continue;
            }
            let s = rng.random_range(-m..=m);
            let t = a1;
            if s > 0 {
                let s = (s as usize).min(b1 - t - 1);
                for kk in t..t + s {
                    dst[col + plane * kk] = a;
                }
            } else if s < 0 {
                let s = ((-s) as usize).min(t - a0 - 1);
                for kk in t - s..t {
                    dst[col + plane * kk] = b;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphMode {
    Erode,
    Dilate,
}

#[derive(Debug, Clone)]
pub struct MorphPerturbation {
    pub labels: LabelVolume,
    /// Erosion removed every voxel of the level.
    pub annihilated: bool,
}

/// Erode or dilate one level with a cubic element. Dilation only claims
/// background voxels; eroded voxels become background.
pub fn perturb_morphological(
    labels: &LabelVolume,
    schema: &LevelSchema,
    level: u8,
    radius_voxels: usize,
    mode: MorphMode,
) -> Result<MorphPerturbation, PhantomError> {
    if !schema.is_level(level) {
        return Err(PhantomError::UnknownLevel(level.to_string()));
    }
    let bg = schema.background_id();
    let dims = labels.grid().dims;
    let mask: Vec<bool> = labels.labels().iter().map(|&l| l == level).collect();
    let r = [radius_voxels; 3];
    let mut out = labels.clone();
    match mode {
        MorphMode::Dilate => {
            let grown = morphology::dilate(&mask, dims, r);
            for (v, g) in out.labels_mut().iter_mut().zip(grown) {
                if g && *v == bg {
                    *v = level;
                }
            }
        }
        MorphMode::Erode => {
            let shrunk = morphology::erode(&mask, dims, r);
            for ((v, m), s) in out.labels_mut().iter_mut().zip(&mask).zip(shrunk) {
                if *m && !s {
                    *v = bg;
                }
            }
        }
    }
    let annihilated = mask.iter().any(|&m| m) && !out.labels().contains(&level);
    Ok(MorphPerturbation {
        labels: out,
        annihilated,
    })
}

/// A reference volume of random boxes and ellipsoids and a prediction made
/// by shifting, growing or dropping each of them.
pub fn random_label_pair(
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    schema: &LevelSchema,
    seed: u64,
) -> Result<(LabelVolume, LabelVolume), PhantomError> {
    let grid = VoxelGrid::new(dims, spacing_mm).map_err(|e| PhantomError::Infeasible(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<u8> = schema.levels().iter().map(|l| l.id).collect();
    let mut reference = LabelVolume::empty(grid.clone(), schema.id());
    let mut pred = LabelVolume::empty(grid.clone(), schema.id());
    reference.labels_mut().fill(schema.background_id());
    pred.labels_mut().fill(schema.background_id());
    let blobs = rng.random_range(1..=5);
    for _ in 0..blobs {
        let level = ids[rng.random_range(0..ids.len())];
        let center: [f64; 3] = std::array::from_fn(|a| rng.random_range(0.0..dims[a] as f64));
        let radii: [f64; 3] = std::array::from_fn(|a| rng.random_range(0.6..(dims[a] as f64 / 3.0).max(1.0)));
        let ellipsoid = rng.random_bool(0.5);
        let shift: [f64; 3] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        let grow = rng.random_range(-0.8..0.8);
        let dropped = rng.random_bool(0.1);
        let inside = |p: [f64; 3], c: [f64; 3], r: [f64; 3]| {
            let d: [f64; 3] = std::array::from_fn(|a| (p[a] - c[a]) / r[a]);
            if ellipsoid {
                d.iter().map(|v| v * v).sum::<f64>() <= 1.0
            } else {
                d.iter().all(|v| v.abs() <= 1.0)
            }
        };
        let pc: [f64; 3] = std::array::from_fn(|a| center[a] + shift[a]);
        let pr: [f64; 3] = std::array::from_fn(|a| (radii[a] + grow).max(0.5));
        for n in 0..grid.len() {
            let c = grid.coords(n);
            let p = [c[0] as f64, c[1] as f64, c[2] as f64];
            if inside(p, center, radii) {
                reference.labels_mut()[n] = level;
            }
            if !dropped && inside(p, pc, pr) {
                pred.labels_mut()[n] = level;
            }
        }
    }
    // salt a few stray voxels into the prediction
    for _ in 0..rng.random_range(0..4) {
        let n = rng.random_range(0..grid.len());
        pred.labels_mut()[n] = ids[rng.random_range(0..ids.len())];
    }
    Ok((pred, reference))
}

/// Surface element: center in mm and area in mm².
struct Surfel {
    center: [f64; 3],
    area: f64,
}

fn oracle_surfels(mask: &[bool], dims: [usize; 3], sp: [f64; 3]) -> Vec<Surfel> {
    let at = |i: i64, j: i64, k: i64| -> bool {
        if i < 0 || j < 0 || k < 0 || i >= dims[0] as i64 || j >= dims[1] as i64 || k >= dims[2] as i64 {
            return false;
        }
        mask[i as usize + dims[0] * (j as usize + dims[1] * k as usize)]
    };
    let mut out = Vec::new();
    for k in 0..dims[2] as i64 {
        for j in 0..dims[1] as i64 {
            for i in 0..dims[0] as i64 {
                if !at(i, j, k) {
                    continue;
                }
                let c = [i as f64 * sp[0], j as f64 * sp[1], k as f64 * sp[2]];
                let faces = [
                    (at(i - 1, j, k), 0, -1.0),
                    (at(i + 1, j, k), 0, 1.0),
                    (at(i, j - 1, k), 1, -1.0),
                    (at(i, j + 1, k), 1, 1.0),
                    (at(i, j, k - 1), 2, -1.0),
                    (at(i, j, k + 1), 2, 1.0),
                ];
                for (neighbour, axis, dir) in faces {
                    if neighbour {
                        continue;
                    }
                    let mut center = c;
                    center[axis] += dir * 0.5 * sp[axis];
                    let area = (0..3).filter(|&a| a != axis).map(|a| sp[a]).product();
                    out.push(Surfel { center, area });
                }
            }
        }
    }
    out
}

fn oracle_boundary(mask: &[bool], dims: [usize; 3], sp: [f64; 3]) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let here = i + dims[0] * (j + dims[1] * k);
                if !mask[here] {
                    continue;
                }
                let c = [i, j, k];
                let mut edge = false;
                for a in 0..3 {
                    for step in [-1i64, 1] {
                        let x = c[a] as i64 + step;
                        if x < 0 || x >= dims[a] as i64 {
                            edge = true;
                            continue;
                        }
                        let mut nb = c;
                        nb[a] = x as usize;
                        if !mask[nb[0] + dims[0] * (nb[1] + dims[1] * nb[2])] {
                            edge = true;
                        }
                    }
                }
                if edge {
                    out.push([i as f64 * sp[0], j as f64 * sp[1], k as f64 * sp[2]]);
                }
            }
        }
    }
    out
}

fn dist(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
}

fn nearest(p: &[f64; 3], set: &[[f64; 3]]) -> f64 {
    set.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min)
}

/// Brute-force metrics for one pair of masks.
pub fn oracle_pair(a: &[bool], b: &[bool], dims: [usize; 3], spacing: [f64; 3], tol_mm: f64) -> LevelMetrics {
    let na = a.iter().filter(|&&v| v).count();
    let nb = b.iter().filter(|&&v| v).count();
    let both = a.iter().zip(b).filter(|(&x, &y)| x && y).count();
    let vol_dice = if na + nb == 0 { 1.0 } else { 2.0 * both as f64 / (na + nb) as f64 };

    let sa = oracle_surfels(a, dims, spacing);
    let sb = oracle_surfels(b, dims, spacing);
    let ca: Vec<[f64; 3]> = sa.iter().map(|s| s.center).collect();
    let cb: Vec<[f64; 3]> = sb.iter().map(|s| s.center).collect();
    let limit = tol_mm + DISTANCE_SLACK_MM;
    let total: f64 = sa.iter().chain(&sb).map(|s| s.area).sum();
    let close_a: f64 = sa.iter().filter(|s| nearest(&s.center, &cb) <= limit).map(|s| s.area).sum();
    let close_b: f64 = sb.iter().filter(|s| nearest(&s.center, &ca) <= limit).map(|s| s.area).sum();
    let surf_dice = if total == 0.0 { 1.0 } else { (close_a + close_b) / total };

    let hausdorff_max_mm = (na > 0 && nb > 0).then(|| {
        let ba = oracle_boundary(a, dims, spacing);
        let bb = oracle_boundary(b, dims, spacing);
        let ab = ba.iter().map(|p| nearest(p, &bb)).fold(0.0, f64::max);
        let ba_ = bb.iter().map(|p| nearest(p, &ba)).fold(0.0, f64::max);
        ab.max(ba_)
    });
    LevelMetrics {
        vol_dice,
        surf_dice,
        hausdorff_max_mm,
    }
}

/// All-pairs reference implementation of `metrics::evaluate_case`.
pub fn oracle_metrics(
    case_id: &str,
    pred: &LabelVolume,
    reference: &LabelVolume,
    schema: &LevelSchema,
    tol_mm: Option<f64>,
) -> Result<MetricReport, PhantomError> {
    let check = check_geometry_compatible(pred, reference);
    if !check.is_compatible() {
        return Err(PhantomError::Geometry(check));
    }
    let grid = pred.grid();
    if grid.len() > ORACLE_MAX_VOXELS {
        return Err(PhantomError::TooLarge(grid.len()));
    }
    schema.validate_labels(pred)?;
    schema.validate_labels(reference)?;
    let tol = tol_mm.unwrap_or_else(|| default_tolerance(grid));
    let (dims, sp) = (grid.dims, grid.spacing_mm);
    let bg = schema.background_id();
    let mut levels = Vec::new();
    for l in schema.levels() {
        let a: Vec<bool> = pred.labels().iter().map(|&v| v == l.id).collect();
        let b: Vec<bool> = reference.labels().iter().map(|&v| v == l.id).collect();
        if !a.iter().any(|&v| v) && !b.iter().any(|&v| v) {
            continue;
        }
        levels.push(LevelEntry {
            level: l.id,
            name: l.name.clone(),
            metrics: oracle_pair(&a, &b, dims, sp, tol),
        });
    }
    let a: Vec<bool> = pred.labels().iter().map(|&v| v != bg).collect();
    let b: Vec<bool> = reference.labels().iter().map(|&v| v != bg).collect();
    Ok(MetricReport {
        case_id: case_id.to_string(),
        tolerance_mm: tol,
        levels,
        union: oracle_pair(&a, &b, dims, sp, tol),
    })
}

/// Largest relative difference between two reports, or `None` when they
/// list different levels or disagree on which Hausdorff values exist.
pub fn report_difference(a: &MetricReport, b: &MetricReport) -> Option<f64> {
    if a.levels.len() != b.levels.len() {
        return None;
    }
    let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(y.abs()).max(1.0);
    let pair = |x: &LevelMetrics, y: &LevelMetrics| -> Option<f64> {
        let hd = match (x.hausdorff_max_mm, y.hausdorff_max_mm) {
            (Some(p), Some(q)) => rel(p, q),
            (None, None) => 0.0,
            _ => return None,
        };
        Some(rel(x.vol_dice, y.vol_dice).max(rel(x.surf_dice, y.surf_dice)).max(hd))
    };
    let mut worst = pair(&a.union, &b.union)?;
    for (x, y) in a.levels.iter().zip(&b.levels) {
        if x.level != y.level {
            return None;
        }
        worst = worst.max(pair(&x.metrics, &y.metrics)?);
    }
    Some(worst)
}
