use std::path::PathBuf;
use std::time::Instant;

use clap::ValueEnum;
use serde::Serialize;

use hnlevels_core::components::Connectivity;
use hnlevels_core::postprocess::{
    largest_component_per_label, slice_consistency_violations, slice_plane_adjust, AdjustmentReport,
    LevelSelection, SliceAdjustConfig,
};
use hnlevels_core::{read_labels, write_nifti, LabelVolume};

use crate::failure::{CmdResult, ResultExt};
use crate::Globals;

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Order {
    /// Largest component per level, then slice adjustment.
    ComponentsFirst,
    /// Slice adjustment, then largest component per level.
    AdjustFirst,
    /// Slice adjustment only.
    AdjustOnly,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Conn {
    #[value(name = "6")]
    Face6,
    #[value(name = "26")]
    Full26,
}

#[derive(clap::Args)]
pub struct Args {
    /// Input label volume (NIfTI).
    #[arg(long)]
    labels: PathBuf,
    /// Output label volume.
    #[arg(long)]
    out: PathBuf,
    /// Adjustment report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Order::ComponentsFirst)]
    order: Order,
    /// Slices with this many foreground voxels or fewer are cleared.
    #[arg(long, default_value_t = 10)]
    min_voxels: u64,
    /// Relative drop next to an empty slice that clears a slice.
    #[arg(long, default_value_t = 0.80)]
    drop_fraction: f64,
    /// Neighbourhood for the component step.
    #[arg(long, value_enum, default_value_t = Conn::Full26)]
    connectivity: Conn,
}

#[derive(Serialize)]
struct Report<'a> {
    input: String,
    dims: [usize; 3],
    order: Order,
    config: SliceAdjustConfig,
    component_voxels_changed: u64,
    violations_before: usize,
    violations_after: usize,
    adjustment: &'a AdjustmentReport,
    adjust_seconds: f64,
    wall_clock_seconds: f64,
}

fn differing(a: &LabelVolume, b: &LabelVolume) -> u64 {
    a.labels().iter().zip(b.labels()).filter(|(x, y)| x != y).count() as u64
}

pub fn run(g: &Globals, a: Args) -> CmdResult {
    let start = Instant::now();
    let cfg = SliceAdjustConfig {
        min_foreground_voxels: a.min_voxels,
        drop_fraction: a.drop_fraction,
    };
    cfg.validate().input_err(|| "slice adjustment parameters")?;
    let input = read_labels(&a.labels).input_err(|| format!("reading {}", a.labels.display()))?;
    g.schema
        .validate_labels(&input)
        .input_err(|| format!("labels in {}", a.labels.display()))?;
    let conn = match a.connectivity {
        Conn::Face6 => Connectivity::Face6,
        Conn::Full26 => Connectivity::Full26,
    };
    let before = slice_consistency_violations(&input, &g.schema).len();

    let components = |v: &LabelVolume| largest_component_per_label(v, &g.schema, &LevelSelection::All, conn);
    let mut component_changed = 0;
    let mut adjust_seconds = 0.0;
    let mut adjust = |v: &LabelVolume| -> CmdResult<(LabelVolume, AdjustmentReport)> {
        let t = Instant::now();
        let r = slice_plane_adjust(v, &g.schema, &cfg).internal_err(|| "slice adjustment")?;
        adjust_seconds = t.elapsed().as_secs_f64();
        Ok(r)
    };
    let (output, report) = match a.order {
        Order::ComponentsFirst => {
            let c = components(&input);
            component_changed = differing(&input, &c);
            adjust(&c)?
        }
        Order::AdjustFirst => {
            let (adj, report) = adjust(&input)?;
            let c = components(&adj);
            component_changed = differing(&adj, &c);
            (c, report)
        }
        Order::AdjustOnly => adjust(&input)?,
    };
    let after = slice_consistency_violations(&output, &g.schema).len();
    write_nifti(&output, &a.out).internal_err(|| format!("writing {}", a.out.display()))?;
    let summary = Report {
        input: a.labels.display().to_string(),
        dims: input.grid().dims,
        order: a.order,
        config: cfg,
        component_voxels_changed: component_changed,
        violations_before: before,
        violations_after: after,
        adjustment: &report,
        adjust_seconds,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    if let Some(p) = &a.report {
        let text = serde_json::to_string_pretty(&summary).internal_err(|| "report")?;
        std::fs::write(p, text).internal_err(|| format!("writing {}", p.display()))?;
    }
    println!("violating slice groups: {before} -> {after}");
    println!("voxels changed by components: {component_changed}");
    println!("voxels changed by slice adjustment: {}", report.changed_voxels());
    println!("slice adjustment: {adjust_seconds:.3} s");
    Ok(())
}
