//! Multi-view acquisition core: camera model, calibration from court
//! landmarks, triangulation, association, identity voting, trajectory
//! filtering, audio synchronization, and 2D projection.

mod assign;
mod calib;
mod camera;
mod court;
mod project;
mod sync;
mod triangulate;


pub use assign::{
    assign_hungarian, association_costs, filter_trajectories, ray_distance, vote_identity, Assignment, FilterConfig, Track,
    FORBIDDEN,
};
pub use calib::{refine_calibration, solve_extrinsics, ExtrinsicsFit, LmConfig, RefineResult};
pub use camera::{look_at, synthetic_rig, Camera, CameraExtrinsics, CameraFile, CameraIntrinsics, Pixel, Point3};
pub use court::CourtModel;
pub use project::{project_point, project_to_view, View};
pub use sync::{mfcc, read_raw_audio, sync_offset, write_raw_audio, MfccConfig, SyncConfig, SyncResult};
pub use triangulate::{triangulate, Triangulated, TriangulateConfig};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("need at least {needed} {what}, got {got}")]
    TooFew { what: &'static str, needed: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("row {0} has no allowed assignment")]
    ForbiddenRow(usize),
    #[error("no votes to decide an identity")]
    EmptyVotes,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
}
