use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;

use hnlevels_core::metrics::{default_tolerance, evaluate_case, LevelMetrics};
use hnlevels_core::stats::descriptive;
use hnlevels_core::{read_labels, LevelSchema};

use crate::failure::{CmdResult, Failure, ResultExt};
use crate::manifest::{CaseEntry, LoadedManifest};
use crate::Globals;

#[derive(clap::Args)]
pub struct Args {
    /// Case manifest (TOML).
    #[arg(long)]
    manifest: PathBuf,
    /// Contour set the others are compared with.
    #[arg(long, default_value = "reference")]
    reference: String,
    /// Surface Dice tolerance in mm (default: the largest voxel spacing of each case).
    #[arg(long)]
    tolerance: Option<f64>,
    /// Long-format CSV, one row per case, set and level.
    #[arg(long)]
    out: PathBuf,
    /// Also write the summary block to this file.
    #[arg(long)]
    summary: Option<PathBuf>,
}

pub const CSV_HEADER: [&str; 9] = [
    "case",
    "set",
    "level",
    "level_name",
    "vol_dice",
    "surf_dice",
    "hd_max_mm",
    "tolerance_mm",
    "error",
];

/// One CSV row; `metrics` is `None` when the level is absent from both
/// volumes or the case failed.
struct Row {
    case: String,
    set: String,
    level: String,
    level_name: String,
    metrics: Option<LevelMetrics>,
    tolerance: Option<f64>,
    error: String,
}

fn evaluate_one(
    m: &LoadedManifest,
    case: &CaseEntry,
    reference: &str,
    tolerance: Option<f64>,
    schema: &LevelSchema,
) -> Vec<Row> {
    let failed = |set: &str, msg: String| Row {
        case: case.id.clone(),
        set: set.to_string(),
        level: String::new(),
        level_name: String::new(),
        metrics: None,
        tolerance: None,
        error: msg,
    };
    let ref_path = m.resolve(&case.sets[reference]);
    let ref_labels = match read_labels(&ref_path) {
        Ok(v) => v,
        Err(e) => return vec![failed(reference, e.to_string())],
    };
    let tol = tolerance.unwrap_or_else(|| default_tolerance(ref_labels.grid()));
    let mut rows = Vec::new();
    for (set, path) in case.sets.iter().filter(|(s, _)| s.as_str() != reference) {
        let pred = match read_labels(m.resolve(path)) {
            Ok(v) => v,
            Err(e) => {
                rows.push(failed(set, e.to_string()));
                continue;
            }
        };
        let report = match evaluate_case(&case.id, &pred, &ref_labels, schema, tol) {
            Ok(r) => r,
            Err(e) => {
                rows.push(failed(set, e.to_string()));
                continue;
            }
        };
        let row = |level: String, name: &str, metrics: Option<LevelMetrics>| Row {
            case: case.id.clone(),
            set: set.clone(),
            level,
            level_name: name.to_string(),
            metrics,
            tolerance: Some(tol),
            error: String::new(),
        };
        for l in schema.levels() {
            rows.push(row(l.id.to_string(), &l.name, report.level(l.id).cloned()));
        }
        rows.push(row("union".into(), "union", Some(report.union.clone())));
    }
    rows
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn summary_cell(values: &[f64], precision: usize) -> String {
    match descriptive(values) {
        Ok(d) => format!(
            "{:.p$} ({:.p$}, IQR {:.p$} – {:.p$})",
            d.mean,
            d.median,
            d.q1,
            d.q3,
            p = precision
        ),
        Err(_) => "n/a".into(),
    }
}

fn summary(rows: &[Row], schema: &LevelSchema) -> String {
    let mut per: BTreeMap<(&str, &str), [Vec<f64>; 3]> = BTreeMap::new();
    for r in rows {
        if let Some(m) = &r.metrics {
            let e = per.entry((r.set.as_str(), r.level.as_str())).or_default();
            e[0].push(m.vol_dice);
            e[1].push(m.surf_dice);
            if let Some(h) = m.hausdorff_max_mm {
                e[2].push(h);
            }
        }
    }
    let mut sets: Vec<&str> = per.keys().map(|k| k.0).collect();
    sets.dedup();
    let mut out = String::new();
    for set in sets {
        let _ = writeln!(out, "set {set}: mean (median, IQR q1 – q3)");
        let _ = writeln!(out, "{:<14} {:<34} {:<34} {}", "level", "vol_dice", "surf_dice", "hd_max_mm");
        let ids = schema.levels().iter().map(|l| (l.id.to_string(), l.name.clone()));
        for (id, name) in ids.chain(std::iter::once(("union".to_string(), "union".to_string()))) {
            let Some(v) = per.get(&(set, id.as_str())) else {
                continue;
            };
            let _ = writeln!(
                out,
                "{:<14} {:<34} {:<34} {}",
                name,
                summary_cell(&v[0], 3),
                summary_cell(&v[1], 3),
                summary_cell(&v[2], 2)
            );
        }
    }
    out
}

pub fn run(g: &Globals, a: Args) -> CmdResult {
    let m = LoadedManifest::load(&a.manifest)?;
    m.check_paths(false)?;
    if let Some(t) = a.tolerance {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Failure::input(format!("tolerance {t} must be finite and non-negative")));
        }
    }
    let mut cases: Vec<&CaseEntry> = m.manifest.cases.iter().collect();
    cases.sort_by(|x, y| x.id.cmp(&y.id));
    for c in &cases {
        if !c.sets.contains_key(&a.reference) {
            return Err(Failure::input(format!("case {:?} has no {:?} set", c.id, a.reference)));
        }
    }
    let rows: Vec<Row> = cases
        .par_iter()
        .map(|c| evaluate_one(&m, c, &a.reference, a.tolerance, &g.schema))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();

    let mut w = csv::Writer::from_path(&a.out).internal_err(|| format!("writing {}", a.out.display()))?;
    w.write_record(CSV_HEADER).internal_err(|| "csv")?;
    for r in &rows {
        let (vd, sd, hd) = match &r.metrics {
            Some(m) => (Some(m.vol_dice), Some(m.surf_dice), m.hausdorff_max_mm),
            None => (None, None, None),
        };
        w.write_record([
            r.case.as_str(),
            &r.set,
            &r.level,
            &r.level_name,
            &fmt_opt(vd),
            &fmt_opt(sd),
            &fmt_opt(hd),
            &fmt_opt(r.tolerance),
            &r.error,
        ])
        .internal_err(|| "csv")?;
    }
    w.flush().internal_err(|| format!("writing {}", a.out.display()))?;

    let text = summary(&rows, &g.schema);
    print!("{text}");
    if let Some(p) = &a.summary {
        std::fs::write(p, &text).internal_err(|| format!("writing {}", p.display()))?;
    }
    let failures: Vec<&Row> = rows.iter().filter(|r| !r.error.is_empty()).collect();
    for f in &failures {
        eprintln!("case {} set {}: {}", f.case, f.set, f.error);
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::input(format!("{} case/set evaluations failed", failures.len())))
    }
}
