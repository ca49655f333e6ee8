//! Blinded expert review of contour sets: plans, slice rendering, the rating
//! log and the HTTP service tying them together.

pub mod export;
pub mod plan;
pub mod render;
pub mod server;
pub mod store;

pub use export::{category, export_csv};
pub use plan::{create_plan, Assignment, CaseInput, PlanError, Rater, ReviewPlan};
pub use render::{render_slice, Plane, Window};
pub use server::{router, serve, ReviewService, ServiceError};
pub use store::{RatingRecord, RatingStore};

/// Environment variable naming the directory that relative plan paths
/// resolve against.
pub const DATA_ROOT_ENV: &str = "HNLEVELS_DATA_ROOT";
