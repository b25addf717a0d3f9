//! Skeleton-based group activity recognition and temporal localization.

pub mod data;
pub mod numerics;
pub mod par;
pub mod synthgen;
pub mod statt;
pub mod heads;
pub mod metrics;
pub mod geometry;
pub mod augment;
pub mod pipeline;
pub mod backbone;
mod error;
#[cfg(test)]
mod testutil;

pub use error::ModelError;
