//! Streaming relative-diversity monitoring over user navigation paths.
//!
//! Each consulted item is compared with the last `k` items of the same
//! user; when the mean dissimilarity rises above a threshold the step is
//! reported as the start of a new implicit context. The [`evaluation`]
//! module aligns those detections with inactivity-based sessions and runs
//! the robustness experiments (attribute sparsity, multi-type catalogs).

pub mod catalog;
pub mod diversity;
pub mod error;
pub mod evaluation;
pub mod rng;
pub mod schema;
pub mod similarity;
pub mod synthetic;

pub use catalog::{AttributeValue, Catalog, Consultation, Item, UserLogs};
pub use diversity::{ContextChange, Detector, Diversity, DiversityPoint, HistoryWindow};
pub use error::{Error, Result, SchemaError};
pub use schema::{AttributeKind, AttributeSpec, Schema};
pub use similarity::{sim_items, SimResult};
