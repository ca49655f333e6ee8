//! CT slice-plane adjustment and largest-component retention.
//!
//! The adjustment runs in two phases. Phase A resolves exclusion groups on
//! each axial slice by majority vote. Phase B clears sparse boundary slices,
//! first scanning upward in `k`, then downward.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::components::{label_components, Connectivity};
use crate::schema::{LevelSchema, SchemaError};
use crate::volume::LabelVolume;

#[derive(Debug, Error)]
pub enum PostprocessError {
    #[error("invalid slice adjustment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceAdjustConfig {
    /// Slices with this many foreground voxels or fewer are cleared.
    pub min_foreground_voxels: u64,
    /// Relative drop from the previous slice that, next to an empty slice,
    /// clears the current one.
    pub drop_fraction: f64,
}

impl Default for SliceAdjustConfig {
    fn default() -> Self {
        Self {
            min_foreground_voxels: 10,
            drop_fraction: 0.80,
        }
    }
}

impl SliceAdjustConfig {
    pub fn validate(&self) -> Result<(), PostprocessError> {
        if !(self.drop_fraction > 0.0 && self.drop_fraction <= 1.0) {
            return Err(PostprocessError::InvalidConfig(format!(
                "drop_fraction {} not in (0, 1]",
                self.drop_fraction
            )));
        }
        Ok(())
    }
}

/// One exclusion-group resolution on one slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionRecord {
    pub slice: usize,
    /// Index into the schema's exclusion groups.
    pub group: usize,
    pub winner: u8,
    /// Voxels whose final Phase A label was set by this resolution.
    pub overwritten: u64,
    /// The slice was later cleared by Phase B.
    pub cleared_later: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackgroundRule {
    MinVoxels,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanDirection {
    Ascending,
    Descending,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackgroundRecord {
    pub slice: usize,
    pub rule: BackgroundRule,
    pub direction: ScanDirection,
    pub cleared: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjustmentReport {
    pub exclusion: Vec<ExclusionRecord>,
    pub background: Vec<BackgroundRecord>,
}

impl AdjustmentReport {
    pub fn is_empty(&self) -> bool {
        self.exclusion.is_empty() && self.background.is_empty()
    }

    /// Voxels whose label differs between input and output.
    pub fn changed_voxels(&self) -> u64 {
        let a: u64 = self
            .exclusion
            .iter()
            .filter(|r| !r.cleared_later)
            .map(|r| r.overwritten)
            .sum();
        let b: u64 = self.background.iter().map(|r| r.cleared).sum();
        a + b
    }
}

/// A slice holding two or more members of one exclusion group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceViolation {
    pub slice: usize,
    pub group: usize,
    /// Group members present on the slice, ascending.
    pub present: Vec<u8>,
}

fn slice_histogram(slice: &[u8]) -> [u64; 256] {
    // four partial tables keep consecutive equal labels from serializing
    let mut h = [[0u32; 256]; 4];
    let mut chunks = slice.chunks_exact(4);
    for c in &mut chunks {
        h[0][c[0] as usize] += 1;
        h[1][c[1] as usize] += 1;
        h[2][c[2] as usize] += 1;
        h[3][c[3] as usize] += 1;
    }
    for &v in chunks.remainder() {
        h[0][v as usize] += 1;
    }
    std::array::from_fn(|n| h[0][n] as u64 + h[1][n] as u64 + h[2][n] as u64 + h[3][n] as u64)
}

fn check_labels(
    labels: &LabelVolume,
    schema: &LevelSchema,
    histograms: &[[u64; 256]],
) -> Result<(), SchemaError> {
    let mut declared = [false; 256];
    declared[schema.background_id() as usize] = true;
    for l in schema.levels() {
        declared[l.id as usize] = true;
    }
    let undeclared = histograms
        .iter()
        .any(|h| (0..256).any(|v| h[v] > 0 && !declared[v]));
    if undeclared || labels.schema_id() != schema.id() {
        schema.validate_labels(labels)?;
    }
    Ok(())
}

/// Every (slice, exclusion group) pair with two or more members present.
pub fn slice_consistency_violations(labels: &LabelVolume, schema: &LevelSchema) -> Vec<SliceViolation> {
    let nz = labels.grid().dims[2];
    let mut out = Vec::new();
    for k in 0..nz {
        let h = slice_histogram(labels.slice(k));
        for (g, group) in schema.exclusion_groups().iter().enumerate() {
            let mut present: Vec<u8> = group.iter().copied().filter(|&m| h[m as usize] > 0).collect();
            if present.len() >= 2 {
                present.sort_unstable();
                out.push(SliceViolation {
                    slice: k,
                    group: g,
                    present,
                });
            }
        }
    }
    out
}

/// Majority-vote resolution of one slice. Returns the label mapping to apply
/// and appends the records for this slice.
fn resolve_slice(
    k: usize,
    counts: &[u64; 256],
    groups: &[Vec<u8>],
    records: &mut Vec<ExclusionRecord>,
) -> Option<[u8; 256]> {
    let mut current = *counts;
    let mut lut: [u8; 256] = std::array::from_fn(|n| n as u8);
    let mut last_record: [Option<usize>; 256] = [None; 256];
    let first = records.len();
    loop {
        let hit = groups
            .iter()
            .enumerate()
            .find(|(_, g)| g.iter().filter(|&&m| current[m as usize] > 0).count() >= 2);
        let Some((g, group)) = hit else { break };
        let mut winner = None::<u8>;
        for &m in group {
            let c = current[m as usize];
            if c == 0 {
                continue;
            }
            winner = match winner {
                None => Some(m),
                Some(w) => {
                    let cw = current[w as usize];
                    if c > cw || (c == cw && m < w) {
                        Some(m)
                    } else {
                        Some(w)
                    }
                }
            };
        }
        let winner = winner.expect("group has present members");
        let rec = records.len();
        records.push(ExclusionRecord {
            slice: k,
            group: g,
            winner,
            overwritten: 0,
            cleared_later: false,
        });
        for &m in group {
            if m == winner || current[m as usize] == 0 {
                continue;
            }
            current[winner as usize] += current[m as usize];
            current[m as usize] = 0;
            for orig in 0..256 {
                if lut[orig] == m {
                    lut[orig] = winner;
                    last_record[orig] = Some(rec);
                }
            }
        }
    }
    if records.len() == first {
        return None;
    }
    for orig in 0..256 {
        if let Some(r) = last_record[orig] {
            if lut[orig] != orig as u8 {
                records[r].overwritten += counts[orig];
            }
        }
    }
    Some(lut)
}

/// Phase B on per-slice foreground counts. Returns the cleared slices in
/// the order they were cleared.
fn background_rules(counts: &mut [u64], cfg: &SliceAdjustConfig) -> Vec<BackgroundRecord> {
    let nz = counts.len();
    let mut records = Vec::new();
    for direction in [ScanDirection::Ascending, ScanDirection::Descending] {
        // position p in scan order maps to slice index
        let at = |p: usize| match direction {
            ScanDirection::Ascending => p,
            ScanDirection::Descending => nz - 1 - p,
        };
        let mut p = 0usize;
        while p < nz {
            let k = at(p);
            let cur = counts[k];
            let mut rule = None;
            if cur > 0 && cur <= cfg.min_foreground_voxels {
                rule = Some(BackgroundRule::MinVoxels);
            } else if cur > 0 && p > 0 {
                let prev = counts[at(p - 1)];
                let next_empty = p + 1 >= nz || counts[at(p + 1)] == 0;
                let dropped = prev > cur && (prev - cur) as f64 >= cfg.drop_fraction * prev as f64;
                if prev > 0 && dropped && next_empty {
                    rule = Some(BackgroundRule::Drop);
                }
            }
            match rule {
                Some(rule) => {
                    records.push(BackgroundRecord {
                        slice: k,
                        rule,
                        direction,
                        cleared: cur,
                    });
                    counts[k] = 0;
                    // the previous slice now borders an empty slice
                    p = p.saturating_sub(1);
                }
                None => p += 1,
            }
        }
    }
    records
}

/// Make level boundaries coincide with axial slice boundaries.
///
/// Phase A: on each slice, while some exclusion group has two or more
/// members present, relabel all members of that group to the member with
/// the most voxels (ties to the lowest id). Phase B: scanning up, then down,
/// clear a slice when it holds `min_foreground_voxels` or fewer foreground
/// voxels, or when its count fell by `drop_fraction` or more from the
/// previous slice and the next slice is empty. A cleared slice sends the
/// scan back one slice, so one application reaches a fixed point.
pub fn slice_plane_adjust(
    labels: &LabelVolume,
    schema: &LevelSchema,
    cfg: &SliceAdjustConfig,
) -> Result<(LabelVolume, AdjustmentReport), PostprocessError> {
    cfg.validate()?;
    let nz = labels.grid().dims[2];
    let histograms: Vec<[u64; 256]> = (0..nz).map(|k| slice_histogram(labels.slice(k))).collect();
    check_labels(labels, schema, &histograms)?;
    let bg = schema.background_id() as usize;

    let mut out = labels.clone();
    let mut report = AdjustmentReport::default();
    for (k, h) in histograms.iter().enumerate() {
        if let Some(lut) = resolve_slice(k, h, schema.exclusion_groups(), &mut report.exclusion) {
            for v in out.slice_mut(k) {
                *v = lut[*v as usize];
            }
        }
    }

    let mut counts: Vec<u64> = histograms.iter().map(|h| h.iter().sum::<u64>() - h[bg]).collect();
    report.background = background_rules(&mut counts, cfg);
    for rec in &report.background {
        out.slice_mut(rec.slice).fill(bg as u8);
    }
    for rec in report.exclusion.iter_mut() {
        rec.cleared_later = counts[rec.slice] == 0;
    }
    Ok((out, report))
}

/// Which levels `largest_component_per_label` touches.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LevelSelection {
    #[default]
    All,
    Only(Vec<u8>),
}

/// For each selected level keep only its largest connected component; the
/// rest become background. Equal sizes keep the component met first in
/// scan order.
pub fn largest_component_per_label(
    labels: &LabelVolume,
    schema: &LevelSchema,
    which: &LevelSelection,
    connectivity: Connectivity,
) -> LabelVolume {
    let mut selected = [false; 256];
    match which {
        LevelSelection::All => {
            for l in schema.levels() {
                selected[l.id as usize] = true;
            }
        }
        LevelSelection::Only(ids) => {
            for &id in ids {
                selected[id as usize] = true;
            }
        }
    }
    selected[schema.background_id() as usize] = false;
    let comps = label_components(labels.grid().dims, labels.labels(), &selected, connectivity);
    let keep = comps.largest_per_value();
    let mut out = labels.clone();
    for (v, &id) in out.labels_mut().iter_mut().zip(&comps.ids) {
        if id != 0 && keep[*v as usize] != id {
            *v = schema.background_id();
        }
    }
    out
}
