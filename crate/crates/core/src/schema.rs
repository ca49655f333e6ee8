//! Lymph node level taxonomy: ids, laterality, mirror partners and the
//! groups of levels that may not share an axial slice.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::LabelVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Laterality {
    Left,
    Right,
    Midline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelDef {
    pub id: u8,
    pub name: String,
    pub laterality: Laterality,
    pub mirror_partner: u8,
}

/// One problem found while validating a schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SchemaViolation {
    DuplicateId(u8),
    DuplicateName(String),
    BackgroundCollision(u8),
    DanglingMirrorPartner { level: u8, partner: u8 },
    NotAnInvolution { level: u8, partner: u8, partner_of_partner: u8 },
    LateralityMismatch { level: u8, partner: u8 },
    DanglingExclusionMember { group: usize, member: String },
    EmptyName(u8),
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaViolation::DuplicateId(id) => write!(f, "duplicate level id {id}"),
            SchemaViolation::DuplicateName(n) => write!(f, "duplicate level name {n:?}"),
            SchemaViolation::BackgroundCollision(id) => {
                write!(f, "level id {id} equals the background id")
            }
            SchemaViolation::DanglingMirrorPartner { level, partner } => {
                write!(f, "level {level} names unknown mirror partner {partner}")
            }
            SchemaViolation::NotAnInvolution {
                level,
                partner,
                partner_of_partner,
            } => write!(
                f,
                "mirror relation is not an involution: partner({level}) = {partner} but partner({partner}) = {partner_of_partner}"
            ),
            SchemaViolation::LateralityMismatch { level, partner } => write!(
                f,
                "level {level} and its partner {partner} have inconsistent laterality"
            ),
            SchemaViolation::DanglingExclusionMember { group, member } => {
                write!(f, "exclusion group {group} names unknown level {member:?}")
            }
            SchemaViolation::EmptyName(id) => write!(f, "level {id} has an empty name"),
        }
    }
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("invalid schema: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<SchemaViolation>),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema config: {0}")]
    Format(String),
    #[error("label volume uses schema {found:?}, expected {expected:?}")]
    SchemaMismatch { expected: String, found: String },
    #[error("label id {id} at voxel {index} is not declared in schema {schema:?}")]
    UndeclaredLabel { id: u8, index: usize, schema: String },
}

/// On-disk schema layout (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaConfig {
    #[serde(default = "default_schema_name")]
    pub id: String,
    #[serde(default)]
    pub background_id: u8,
    #[serde(rename = "level", default)]
    pub levels: Vec<LevelDef>,
    /// Groups of level names that may not share an axial slice.
    #[serde(default)]
    pub exclusion_groups: Vec<Vec<String>>,
}

fn default_schema_name() -> String {
    crate::volume::DEFAULT_SCHEMA_ID.to_string()
}

/// A validated level taxonomy. Only constructible through validation.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSchema {
    id: String,
    background_id: u8,
    levels: Vec<LevelDef>,
    exclusion_groups: Vec<Vec<u8>>,
    index_of: [Option<u8>; 256],
}

const MIDLINE_LEVELS: [&str; 4] = ["Ia", "VIa", "VIb", "VIIa"];
const BILATERAL_LEVELS: [&str; 8] = ["Ib", "II", "III", "IVa", "IVb", "V", "VIIb", "VIII"];

/// Default 20-level taxonomy (21 classes with background).
///
/// Ids: 1..=4 are the midline levels Ia, VIa, VIb, VIIa; then each bilateral
/// level as a left/right pair, in the order Ib, II, III, IVa, IVb, V, VIIb,
/// VIII (left odd, right even: Ib_left = 5 ... VIII_right = 20).
///
/// Exclusion groups pair craniocaudally adjacent levels: II/III, III/IVa and
/// IVa/IVb on each side, plus Ia/VIa and VIa/VIb on the midline.
pub fn default_schema() -> LevelSchema {
    LevelSchema::from_config(default_config()).expect("built-in schema is valid")
}

pub fn default_config() -> SchemaConfig {
    let mut levels = Vec::with_capacity(20);
    let mut next = 1u8;
    for name in MIDLINE_LEVELS {
        levels.push(LevelDef {
            id: next,
            name: name.to_string(),
            laterality: Laterality::Midline,
            mirror_partner: next,
        });
        next += 1;
    }
    for name in BILATERAL_LEVELS {
        levels.push(LevelDef {
            id: next,
            name: format!("{name}_left"),
            laterality: Laterality::Left,
            mirror_partner: next + 1,
        });
        levels.push(LevelDef {
            id: next + 1,
            name: format!("{name}_right"),
            laterality: Laterality::Right,
            mirror_partner: next,
        });
        next += 2;
    }
    let mut exclusion_groups = Vec::new();
    for side in ["left", "right"] {
        for (upper, lower) in [("II", "III"), ("III", "IVa"), ("IVa", "IVb")] {
            exclusion_groups.push(vec![format!("{upper}_{side}"), format!("{lower}_{side}")]);
        }
    }
    exclusion_groups.push(vec!["Ia".to_string(), "VIa".to_string()]);
    exclusion_groups.push(vec!["VIa".to_string(), "VIb".to_string()]);
    SchemaConfig {
        id: default_schema_name(),
        background_id: 0,
        levels,
        exclusion_groups,
    }
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<LevelSchema, SchemaError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
        path: path.display().to_string(),
        source,
    })?;
    LevelSchema::from_toml_str(&text)
}

impl LevelSchema {
    pub fn from_toml_str(text: &str) -> Result<Self, SchemaError> {
        let config: SchemaConfig =
            toml::from_str(text).map_err(|e| SchemaError::Format(e.to_string()))?;
        Self::from_config(config)
    }

    /// Validate a config, reporting every violation at once.
    pub fn from_config(config: SchemaConfig) -> Result<Self, SchemaError> {
        let mut violations = Vec::new();
        let mut index_of = [None; 256];
        let mut names = BTreeSet::new();
        for (n, level) in config.levels.iter().enumerate() {
            if level.id == config.background_id {
                violations.push(SchemaViolation::BackgroundCollision(level.id));
            }
            if index_of[level.id as usize].is_some() {
                violations.push(SchemaViolation::DuplicateId(level.id));
            } else {
                index_of[level.id as usize] = Some(n as u8);
            }
            if level.name.trim().is_empty() {
                violations.push(SchemaViolation::EmptyName(level.id));
            } else if !names.insert(level.name.clone()) {
                violations.push(SchemaViolation::DuplicateName(level.name.clone()));
            }
        }
        let find = |id: u8| index_of[id as usize].map(|n| &config.levels[n as usize]);
        for level in &config.levels {
            let Some(partner) = find(level.mirror_partner) else {
                violations.push(SchemaViolation::DanglingMirrorPartner {
                    level: level.id,
                    partner: level.mirror_partner,
                });
                continue;
            };
            if partner.mirror_partner != level.id {
                violations.push(SchemaViolation::NotAnInvolution {
                    level: level.id,
                    partner: partner.id,
                    partner_of_partner: partner.mirror_partner,
                });
            }
            let consistent = match level.laterality {
                Laterality::Midline => partner.id == level.id,
                Laterality::Left => partner.laterality == Laterality::Right,
                Laterality::Right => partner.laterality == Laterality::Left,
            };
            if !consistent {
                violations.push(SchemaViolation::LateralityMismatch {
                    level: level.id,
                    partner: partner.id,
                });
            }
        }
        let by_name: BTreeMap<&str, u8> = config
            .levels
            .iter()
            .map(|l| (l.name.as_str(), l.id))
            .collect();
        let mut groups = Vec::with_capacity(config.exclusion_groups.len());
        for (g, group) in config.exclusion_groups.iter().enumerate() {
            let mut ids = Vec::with_capacity(group.len());
            for member in group {
                match by_name.get(member.as_str()) {
                    Some(&id) => {
                        if !ids.contains(&id) {
                            ids.push(id);
                        }
                    }
                    None => violations.push(SchemaViolation::DanglingExclusionMember {
                        group: g,
                        member: member.clone(),
                    }),
                }
            }
            groups.push(ids);
        }
        if !violations.is_empty() {
            return Err(SchemaError::Invalid(violations));
        }
        Ok(Self {
            id: config.id,
            background_id: config.background_id,
            levels: config.levels,
            exclusion_groups: groups,
            index_of,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn background_id(&self) -> u8 {
        self.background_id
    }

    pub fn levels(&self) -> &[LevelDef] {
        &self.levels
    }

    /// Levels plus background.
    pub fn class_count(&self) -> usize {
        self.levels.len() + 1
    }

    pub fn exclusion_groups(&self) -> &[Vec<u8>] {
        &self.exclusion_groups
    }

    pub fn level(&self, id: u8) -> Option<&LevelDef> {
        self.index_of[id as usize].map(|n| &self.levels[n as usize])
    }

    pub fn by_name(&self, name: &str) -> Option<&LevelDef> {
        self.levels.iter().find(|l| l.name == name)
    }

    pub fn is_level(&self, id: u8) -> bool {
        self.index_of[id as usize].is_some()
    }

    pub fn name_of(&self, id: u8) -> Option<&str> {
        self.level(id).map(|l| l.name.as_str())
    }

    /// Mirror partner of a level; background maps to itself.
    pub fn partner(&self, id: u8) -> Option<u8> {
        if id == self.background_id {
            return Some(id);
        }
        self.level(id).map(|l| l.mirror_partner)
    }

    /// Lookup table applying the mirror relation to every declared id.
    pub fn partner_table(&self) -> [u8; 256] {
        let mut lut: [u8; 256] = std::array::from_fn(|i| i as u8);
        for level in &self.levels {
            lut[level.id as usize] = level.mirror_partner;
        }
        lut
    }

    pub fn to_config(&self) -> SchemaConfig {
        SchemaConfig {
            id: self.id.clone(),
            background_id: self.background_id,
            levels: self.levels.clone(),
            exclusion_groups: self
                .exclusion_groups
                .iter()
                .map(|g| {
                    g.iter()
                        .map(|&id| self.name_of(id).unwrap_or_default().to_string())
                        .collect()
                })
                .collect(),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(&self.to_config()).expect("schema config serializes")
    }

    /// Check that a label volume was drawn from this schema.
    pub fn validate_labels(&self, labels: &LabelVolume) -> Result<(), SchemaError> {
        if labels.schema_id() != self.id {
            return Err(SchemaError::SchemaMismatch {
                expected: self.id.clone(),
                found: labels.schema_id().to_string(),
            });
        }
        let mut allowed = [false; 256];
        allowed[self.background_id as usize] = true;
        for level in &self.levels {
            allowed[level.id as usize] = true;
        }
        if let Some(index) = labels.labels().iter().position(|&l| !allowed[l as usize]) {
            return Err(SchemaError::UndeclaredLabel {
                id: labels.labels()[index],
                index,
                schema: self.id.clone(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHIPPED: &str = include_str!("../schemas/default.toml");

    #[test]
    fn twenty_levels_twenty_one_classes() {
        let s = default_schema();
        assert_eq!(s.levels().len(), 20);
        assert_eq!(s.class_count(), 21);
        let midline = s
            .levels()
            .iter()
            .filter(|l| l.laterality == Laterality::Midline)
            .count();
        assert_eq!(midline, 4);
    }

    #[test]
    fn partners() {
        let s = default_schema();
        let ii_left = s.by_name("II_left").unwrap();
        assert_eq!(s.name_of(ii_left.mirror_partner), Some("II_right"));
        let ia = s.by_name("Ia").unwrap();
        assert_eq!(ia.mirror_partner, ia.id);
        for level in s.levels() {
            let p = s.partner(level.id).unwrap();
            assert_eq!(s.partner(p), Some(level.id));
        }
        assert_eq!(s.partner(0), Some(0));
    }

    #[test]
    fn default_groups_are_symmetric() {
        let s = default_schema();
        let lut = s.partner_table();
        let groups: BTreeSet<BTreeSet<u8>> = s
            .exclusion_groups()
            .iter()
            .map(|g| g.iter().copied().collect())
            .collect();
        let mirrored: BTreeSet<BTreeSet<u8>> = groups
            .iter()
            .map(|g| g.iter().map(|&id| lut[id as usize]).collect())
            .collect();
        assert_eq!(groups, mirrored);
        assert_eq!(groups.len(), 8);
    }

    #[test]
    fn shipped_file_equals_default() {
        let loaded = LevelSchema::from_toml_str(SHIPPED).unwrap();
        assert_eq!(loaded, default_schema());
    }

    #[test]
    fn toml_round_trip() {
        let s = default_schema();
        assert_eq!(LevelSchema::from_toml_str(&s.to_toml_string()).unwrap(), s);
    }

    #[test]
    fn involution_violation_reported() {
        let mut cfg = default_config();
        // partner(3) = 4 but partner(4) = 5
        cfg.levels[2].mirror_partner = 4;
        cfg.levels[3].mirror_partner = 5;
        let SchemaError::Invalid(v) = LevelSchema::from_config(cfg).unwrap_err() else {
            panic!("expected validation error")
        };
        assert!(v.iter().any(|x| matches!(
            x,
            SchemaViolation::NotAnInvolution { level: 3, partner: 4, partner_of_partner: 5 }
        )));
    }

    #[test]
    fn all_violations_listed() {
        let mut cfg = default_config();
        cfg.levels[1].id = 1; // duplicate of Ia
        cfg.levels[5].mirror_partner = 99;
        cfg.exclusion_groups.push(vec!["II_left".into(), "nope".into()]);
        let SchemaError::Invalid(v) = LevelSchema::from_config(cfg).unwrap_err() else {
            panic!()
        };
        assert!(v.iter().any(|x| matches!(x, SchemaViolation::DuplicateId(1))));
        assert!(v
            .iter()
            .any(|x| matches!(x, SchemaViolation::DanglingMirrorPartner { partner: 99, .. })));
        assert!(v
            .iter()
            .any(|x| matches!(x, SchemaViolation::DanglingExclusionMember { member, .. } if member == "nope")));
    }

    #[test]
    fn background_collision_rejected() {
        let mut cfg = default_config();
        cfg.background_id = 7;
        assert!(LevelSchema::from_config(cfg).is_err());
    }

    #[test]
    fn three_way_group_accepted() {
        let mut cfg = default_config();
        cfg.exclusion_groups = vec![vec!["II_left".into(), "III_left".into(), "IVa_left".into()]];
        let s = LevelSchema::from_config(cfg).unwrap();
        assert_eq!(s.exclusion_groups()[0].len(), 3);
    }

    #[test]
    fn label_validation() {
        use crate::volume::VoxelGrid;
        let s = default_schema();
        let g = VoxelGrid::new([2, 1, 1], [1.0; 3]).unwrap();
        let ok = LabelVolume::new(g.clone(), vec![0, 20], "default").unwrap();
        assert!(s.validate_labels(&ok).is_ok());
        let bad = LabelVolume::new(g.clone(), vec![0, 21], "default").unwrap();
        assert!(matches!(
            s.validate_labels(&bad),
            Err(SchemaError::UndeclaredLabel { id: 21, .. })
        ));
        let other = LabelVolume::new(g, vec![0, 1], "other").unwrap();
        assert!(matches!(
            s.validate_labels(&other),
            Err(SchemaError::SchemaMismatch { .. })
        ));
    }
}
