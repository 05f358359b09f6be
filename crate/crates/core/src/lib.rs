//! Mean curvature flow with additional forces on triangulated surfaces.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blowup;
pub mod flow;
pub mod force;
pub mod gaussian;
pub mod mesh;
pub mod scenario;
pub mod topology;

pub use flow::{evolve, singular_point_estimate, step, FlowStatus, FlowTrajectory, Snapshot, StepPolicy};
pub use force::{eval_force, rescale_force, ForceSpec};
pub use gaussian::{area_ratio_sup, entropy, f_functional, heat_kernel, monotonicity_ledger, KernelCenter};
pub use mesh::{build_mesh, compute_curvature, CurvatureField, MeshError, Point, TriMesh};
