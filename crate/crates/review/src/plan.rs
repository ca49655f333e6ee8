//! Blinded review plans.
//!
//! A plan gives each rater every (case, contour set) pair exactly once, in
//! an order and under opaque tokens derived from the plan seed and the
//! rater id. The token map stays on the server.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use hnlevels_core::LevelSchema;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("plan needs at least one {0}")]
    Empty(&'static str),
    #[error("duplicate {kind} id {id:?}")]
    Duplicate { kind: &'static str, id: String },
    #[error("case {case:?}: contour sets {found:?} differ from {expected:?}")]
    SetMismatch {
        case: String,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("case {case:?}: {what} file {path} not found")]
    MissingFile {
        case: String,
        what: String,
        path: PathBuf,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("plan file {path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// One case as given to `create_plan`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseInput {
    pub id: String,
    pub image: PathBuf,
    /// Contour-set id to label volume path.
    pub sets: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rater {
    pub id: String,
    /// Bearer key the rater presents on every request.
    pub key: String,
}

/// What a token stands for. Never leaves the server unblinded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub rater: String,
    pub case: String,
    pub set: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewPlan {
    pub seed: u64,
    pub schema_id: String,
    /// Level ids every assignment must be rated on.
    pub levels: Vec<u8>,
    pub admin_key: String,
    pub raters: Vec<Rater>,
    pub cases: Vec<CaseInput>,
    /// Presentation order per rater.
    pub sequences: BTreeMap<String, Vec<String>>,
    pub assignments: BTreeMap<String, Assignment>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Generator seeded from the plan seed and a purpose-specific label.
fn derived_rng(seed: u64, label: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

fn random_hex(rng: &mut ChaCha8Rng, bytes: usize) -> String {
    let buf: Vec<u8> = (0..bytes).map(|_| rng.random()).collect();
    hex(&buf)
}

/// Build a plan. Every case must offer the same contour-set ids and every
/// referenced file must exist, relative paths resolved against `root`.
pub fn create_plan(
    cases: Vec<CaseInput>,
    raters: &[String],
    schema: &LevelSchema,
    seed: u64,
    root: Option<&Path>,
) -> Result<ReviewPlan, PlanError> {
    if cases.is_empty() {
        return Err(PlanError::Empty("case"));
    }
    if raters.is_empty() {
        return Err(PlanError::Empty("rater"));
    }
    let set_ids: Vec<String> = cases[0].sets.keys().cloned().collect();
    if set_ids.is_empty() {
        return Err(PlanError::Empty("contour set"));
    }
    let mut seen = BTreeSet::new();
    for c in &cases {
        if !seen.insert(c.id.clone()) {
            return Err(PlanError::Duplicate {
                kind: "case",
                id: c.id.clone(),
            });
        }
        let found: Vec<String> = c.sets.keys().cloned().collect();
        if found != set_ids {
            return Err(PlanError::SetMismatch {
                case: c.id.clone(),
                expected: set_ids.clone(),
                found,
            });
        }
        let files = std::iter::once(("image".to_string(), &c.image))
            .chain(c.sets.iter().map(|(s, p)| (format!("contour set {s}"), p)));
        for (what, path) in files {
            let full = resolve(root, path);
            if !full.is_file() {
                return Err(PlanError::MissingFile {
                    case: c.id.clone(),
                    what,
                    path: full,
                });
            }
        }
    }
    let mut seen = BTreeSet::new();
    for r in raters {
        if !seen.insert(r.clone()) {
            return Err(PlanError::Duplicate {
                kind: "rater",
                id: r.clone(),
            });
        }
    }

    let mut plan = ReviewPlan {
        seed,
        schema_id: schema.id().to_string(),
        levels: schema.levels().iter().map(|l| l.id).collect(),
        admin_key: random_hex(&mut derived_rng(seed, "admin"), 16),
        raters: Vec::new(),
        cases,
        sequences: BTreeMap::new(),
        assignments: BTreeMap::new(),
    };
    for r in raters {
        let mut rng = derived_rng(seed, &format!("rater:{r}"));
        let key = random_hex(&mut rng, 16);
        let mut pairs: Vec<(String, String)> = plan
            .cases
            .iter()
            .flat_map(|c| set_ids.iter().map(move |s| (c.id.clone(), s.clone())))
            .collect();
        pairs.shuffle(&mut rng);
        let mut sequence = Vec::with_capacity(pairs.len());
        for (case, set) in pairs {
            let mut token = random_hex(&mut rng, 12);
            while plan.assignments.contains_key(&token) {
                token = random_hex(&mut rng, 12);
            }
            plan.assignments.insert(
                token.clone(),
                Assignment {
                    rater: r.clone(),
                    case,
                    set,
                },
            );
            sequence.push(token);
        }
        plan.sequences.insert(r.clone(), sequence);
        plan.raters.push(Rater { id: r.clone(), key });
    }
    Ok(plan)
}

/// Resolve a plan path against the data root.
pub fn resolve(root: Option<&Path>, path: &Path) -> PathBuf {
    match root {
        Some(r) if path.is_relative() => r.join(path),
        _ => path.to_path_buf(),
    }
}

impl ReviewPlan {
    pub fn rater(&self, id: &str) -> Option<&Rater> {
        self.raters.iter().find(|r| r.id == id)
    }

    pub fn rater_for_key(&self, key: &str) -> Option<&Rater> {
        self.raters.iter().find(|r| r.key == key)
    }

    pub fn case(&self, id: &str) -> Option<&CaseInput> {
        self.cases.iter().find(|c| c.id == id)
    }

    pub fn set_ids(&self) -> Vec<String> {
        self.cases[0].sets.keys().cloned().collect()
    }

    pub fn assignments_per_rater(&self) -> usize {
        self.cases.len() * self.set_ids().len()
    }

    pub fn expected_ratings(&self) -> usize {
        self.raters.len() * self.assignments_per_rater() * self.levels.len()
    }

    pub fn save(&self, path: &Path) -> Result<(), PlanError> {
        let text = serde_json::to_string_pretty(self).expect("plan serializes");
        fs::write(path, text).map_err(|source| PlanError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, PlanError> {
        let text = fs::read_to_string(path).map_err(|source| PlanError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| PlanError::Format {
            path: path.to_path_buf(),
            source,
        })
    }
}
