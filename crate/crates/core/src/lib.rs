//! Postprocessing, evaluation and statistics for multi-class head-and-neck
//! lymph node level label volumes.
//!
//! The crate is organised around immutable volumes ([`volume`]) loaded from
//! NIfTI-1 files ([`nifti`]) and a validated level taxonomy ([`schema`]).
//! On top of those sit input preparation ([`preprocess`]), slice-plane
//! adjustment and connected-component cleanup ([`postprocess`]), geometric
//! accuracy metrics ([`metrics`]), paired and independent-sample tests
//! ([`stats`]) and synthetic phantoms with brute-force metric oracles
//! ([`phantom`]).

pub mod components;
pub mod metrics;
pub mod morphology;
pub mod nifti;
pub mod phantom;
pub mod postprocess;
pub mod preprocess;
pub mod schema;
pub mod stats;
pub mod volume;

pub use nifti::{read_image, read_labels, read_nifti, write_nifti, NiftiError, VolumeKind};
pub use schema::{default_schema, load_schema, LevelSchema};
pub use volume::{
    check_geometry_compatible, BinaryMask, CropBox, ImageVolume, LabelVolume, Volume, VoxelGrid,
};
