use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;

use hnlevels_core::phantom::{generate_phantom, perturb_boundary_jitter, PhantomConfig, PlacedSlab};
use hnlevels_core::write_nifti;

use crate::failure::{CmdResult, Failure, ResultExt};
use crate::manifest::{CaseEntry, Manifest};
use crate::Globals;

#[derive(clap::Args)]
pub struct Args {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of cases; case n uses seed + n.
    #[arg(long, default_value_t = 1)]
    cases: usize,
    /// Grid dimensions.
    #[arg(long, value_delimiter = ',', default_values_t = [64, 64, 160])]
    dims: Vec<usize>,
    /// Voxel spacing in mm.
    #[arg(long, value_delimiter = ',', default_values_t = [0.9, 0.9, 1.5])]
    spacing: Vec<f64>,
    /// Boundary jitter in slices for the "jittered" set (0 = no jittered set).
    #[arg(long, default_value_t = 1)]
    jitter: usize,
    /// Add a high-density table below the body.
    #[arg(long)]
    table: bool,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    case: &'a str,
    config: &'a PhantomConfig,
    jitter_slices: usize,
    jitter_seed: u64,
    slabs: &'a [PlacedSlab],
}

pub fn run(g: &Globals, a: Args) -> CmdResult {
    if a.dims.len() != 3 || a.spacing.len() != 3 {
        return Err(Failure::input("--dims and --spacing take three comma-separated values"));
    }
    let dims = [a.dims[0], a.dims[1], a.dims[2]];
    let spacing = [a.spacing[0], a.spacing[1], a.spacing[2]];
    if a.cases == 0 {
        return Err(Failure::input("--cases must be at least 1"));
    }
    std::fs::create_dir_all(&a.out).internal_err(|| format!("creating {}", a.out.display()))?;
    let mut entries = Vec::new();
    for n in 0..a.cases {
        let id = format!("case{:02}", n + 1);
        let seed = g.seed.wrapping_add(n as u64);
        let mut cfg = PhantomConfig::scaled(dims, spacing, seed);
        cfg.table = a.table;
        let p = generate_phantom(&cfg, &g.schema).input_err(|| format!("phantom {id}"))?;
        let write = |name: String, f: &dyn Fn(&PathBuf) -> Result<(), hnlevels_core::NiftiError>| -> CmdResult<PathBuf> {
            let rel = PathBuf::from(name);
            let full = a.out.join(&rel);
            f(&full).internal_err(|| format!("writing {}", full.display()))?;
            Ok(rel)
        };
        let image = write(format!("{id}_ct.nii.gz"), &|p2| write_nifti(&p.image, p2))?;
        let mut sets = BTreeMap::new();
        sets.insert(
            "reference".to_string(),
            write(format!("{id}_reference.nii.gz"), &|p2| write_nifti(&p.labels, p2))?,
        );
        let jitter_seed = seed ^ 0x5eed_0000_0000_0000;
        if a.jitter > 0 {
            let j = perturb_boundary_jitter(&p.labels, &g.schema, a.jitter, jitter_seed);
            sets.insert(
                "jittered".to_string(),
                write(format!("{id}_jittered.nii.gz"), &|p2| write_nifti(&j, p2))?,
            );
        }
        let sidecar = Sidecar {
            case: &id,
            config: &cfg,
            jitter_slices: a.jitter,
            jitter_seed,
            slabs: &p.slabs,
        };
        let text = serde_json::to_string_pretty(&sidecar).internal_err(|| "sidecar")?;
        let path = a.out.join(format!("{id}_phantom.json"));
        std::fs::write(&path, text).internal_err(|| format!("writing {}", path.display()))?;
        entries.push(CaseEntry {
            id,
            image: Some(image),
            sets,
        });
    }
    let manifest = Manifest {
        output_root: None,
        cases: entries,
    };
    let path = a.out.join("manifest.toml");
    let text = toml::to_string(&manifest).internal_err(|| "manifest")?;
    std::fs::write(&path, text).internal_err(|| format!("writing {}", path.display()))?;
    println!("wrote {} phantom case(s) and {}", a.cases, path.display());
    Ok(())
}
