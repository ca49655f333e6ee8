//! Case manifests.
//!
//! ```toml
//! [[case]]
//! id = "case01"
//! image = "case01_ct.nii.gz"
//! [case.sets]
//! reference = "case01_reference.nii.gz"
//! model = "case01_model.nii.gz"
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::failure::{CmdResult, Failure, ResultExt};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseEntry {
    pub id: String,
    #[serde(default)]
    pub image: Option<PathBuf>,
    pub sets: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub output_root: Option<PathBuf>,
    #[serde(rename = "case", default)]
    pub cases: Vec<CaseEntry>,
}

pub struct LoadedManifest {
    pub manifest: Manifest,
    pub dir: PathBuf,
}

impl LoadedManifest {
    pub fn load(path: &Path) -> CmdResult<Self> {
        let text = std::fs::read_to_string(path).input_err(|| format!("manifest {}", path.display()))?;
        let manifest: Manifest = toml::from_str(&text).input_err(|| format!("manifest {}", path.display()))?;
        if manifest.cases.is_empty() {
            return Err(Failure::input(format!("manifest {} lists no cases", path.display())));
        }
        let mut ids = BTreeSet::new();
        for c in &manifest.cases {
            if !ids.insert(c.id.as_str()) {
                return Err(Failure::input(format!("duplicate case id {:?}", c.id)));
            }
        }
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { manifest, dir })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_relative() {
            self.dir.join(p)
        } else {
            p.to_path_buf()
        }
    }

    /// Every referenced file must exist.
    pub fn check_paths(&self, need_image: bool) -> CmdResult {
        for c in &self.manifest.cases {
            if need_image && c.image.is_none() {
                return Err(Failure::input(format!("case {:?} has no image", c.id)));
            }
            let paths = c.image.iter().chain(c.sets.values());
            for p in paths {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Failure::input(format!("case {:?}: {} not found", c.id, full.display())));
                }
            }
        }
        Ok(())
    }
}
