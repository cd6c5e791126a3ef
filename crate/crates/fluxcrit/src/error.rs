//! Crate-wide error type.

use crate::vec3::Vec3;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("field evaluated at {at:?}, within the singular cutoff {cutoff:e} of the origin")]
    EvalAtSingularity { at: Vec3, cutoff: f64 },

    #[error("grid field queried outside its sample box (or inside a masked region) at {at:?}")]
    OutOfBounds { at: Vec3 },

    #[error("bad magic bytes: expected \"FLXF0001\", got {got:?}")]
    BadMagic { got: Vec<u8> },

    #[error("truncated grid payload: expected {expected} bytes after header, got {got}")]
    TruncatedPayload { expected: usize, got: usize },

    #[error("grid spacing must be positive, got ({0}, {1}, {2})")]
    NonPositiveSpacing(f64, f64, f64),

    #[error("invalid field specification: {0}")]
    InvalidFieldSpec(String),

    #[error("mesh level {level} exceeds the maximum supported level {max}")]
    LevelTooLarge { level: u32, max: u32 },

    #[error("seed {seed:?} with |seed| = {norm} outside the traceable range ({r_inner}, {r_outer}]")]
    SeedOutOfRange {
        seed: Vec3,
        norm: f64,
        r_inner: f64,
        r_outer: f64,
    },

    #[error("trace aborted at {at:?} after s = {s}: {source}")]
    TraceAborted {
        at: Vec3,
        s: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("inner radius {r} must be positive and smaller than the outer radius {alpha}")]
    BadRadii { r: f64, alpha: f64 },

    #[error("entry-set maps use different meshes ({0})")]
    MeshMismatch(String),

    #[error(
        "patch not entirely captured: {} of {} sample seeds failed the flux-tube hypothesis \
         (first failure: seed {first_seed:?}, {first_reason})",
        failed, total
    )]
    PatchNotEntirelyCaptured {
        failed: usize,
        total: usize,
        first_seed: Vec3,
        first_reason: String,
        /// Indices of the offending seeds in the patch triangulation.
        seeds: Vec<usize>,
    },

    #[error("patches overlap on the outer sphere; disjointness precondition violated")]
    PatchesOverlap,

    #[error("degenerate mantle: adjacent boundary streamline samples coincide")]
    DegenerateMantle,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
