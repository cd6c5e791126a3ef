// Validation sites use `!(x > 0.0)` on purpose: unlike `x <= 0.0` it also
// rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Streamline-concentration diagnostics for divergence-free 3D vector
//! fields with a possible isolated singularity at the origin.
//!
//! The library classifies the entry set on an outer sphere (seeds whose
//! streamlines reach a small inner ball), measures the entry flux as the
//! inner radius shrinks, verifies flux-tube conservation, and applies the
//! concentration criterion: entry flux bounded below by C r^(2 - 3/p)
//! rules out L^p integrability near the origin.
//!
//! ```
//! use fluxcrit::criterion::{flux_scan, Verdict};
//! use fluxcrit::{Field, TraceConfig};
//!
//! // A unit point sink concentrates every streamline into the origin:
//! // the entry flux stays at -1 for every inner radius, so the field
//! // cannot be square-integrable near the origin.
//! let field = Field::sink(1.0);
//! let cfg = TraceConfig::for_outer_radius(1.0);
//! let scan = flux_scan(&field, 1.0, 2.0, &[0.4, 0.2, 0.1], 2, &cfg).unwrap();
//! assert_eq!(scan.verdict, Verdict::CriterionSatisfied);
//! ```
//!
//! Modules follow the pipeline:
//! - [`field`]: evaluable vector fields (analytic built-ins, superpositions,
//!   FLXF grid files) and divergence diagnostics.
//! - [`tracer`]: adaptive streamline integration with first sphere-crossing
//!   detection.
//! - [`spheremesh`]: geodesic sphere meshes and surface quadrature.
//! - [`entryset`]: per-triangle entry-set classification with interval
//!   estimates of measure and flux.
//! - [`fluxtube`]: patch advection, flux conservation, mantle tangency,
//!   image disjointness.
//! - [`criterion`]: radius scans, power-law fits, the L^p verdict, and the
//!   discrete inequality chain.

pub mod criterion;
pub mod entryset;
pub mod error;
pub mod field;
pub mod fluxtube;
pub mod numeric;
pub mod report;
pub mod spheremesh;
pub mod tracer;
pub mod vec3;

pub use error::{Error, Result};
pub use field::{superpose, Field, FieldSpec, GridField};
pub use spheremesh::{GeoMesh, PatchMask};
pub use tracer::{TraceConfig, TraceFate, TraceResult};
pub use vec3::Vec3;
