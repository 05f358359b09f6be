//! Additional forcing terms β(x, T_xM) added to the mean curvature velocity.
//!
//! The tangent-plane argument enters only through the unit vertex normal.
//! Every force declares a sup-norm bound B; evaluation fails if a value
//! exceeds it, since all growth bounds downstream are computed from B.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{integrate_scalar, CurvatureField, MeshError, Point, ScalarField, TriMesh};

/// Relative slack allowed before a value counts as exceeding the declared bound.
pub const SUP_NORM_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForceError {
    #[error("force value {magnitude:e} at vertex {vertex} exceeds the declared bound {bound:e}")]
    SupNormViolation { vertex: usize, magnitude: f64, bound: f64 },
    #[error("rescaling factor must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("vertex {vertex} left the force domain (|x| = {radius} > {domain})")]
    DomainExit { vertex: usize, radius: f64, domain: f64 },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForceSpec {
    #[default]
    Zero,
    /// Spatially constant field v; B = |v|.
    Constant { vector: [f64; 3] },
    /// (mean of H over the surface)·n. With no declared bound the value is unchecked.
    VolumePreserving {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bound: Option<f64>,
    },
    /// x⊥/2, the force turning the flow into the rescaled flow; defined on the
    /// ball of radius `domain_radius` about the origin, with B = domain_radius/2.
    RescaledMcf { domain_radius: f64 },
    /// factor · inner.
    Scaled { factor: f64, inner: Box<ForceSpec> },
    /// x ↦ scale · inner(center + scale·x): the force seen in rescaled coordinates.
    Rescaled { center: [f64; 3], scale: f64, inner: Box<ForceSpec> },
}

fn v3(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl ForceSpec {
    pub fn constant(v: Vector3<f64>) -> Self {
        ForceSpec::Constant { vector: arr(&v) }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ForceSpec::Zero => true,
            ForceSpec::Constant { vector } => vector.iter().all(|c| *c == 0.0),
            ForceSpec::Scaled { factor, inner } => *factor == 0.0 || inner.is_zero(),
            ForceSpec::Rescaled { inner, .. } => inner.is_zero(),
            _ => false,
        }
    }

    /// Declared sup-norm bound B (infinite when undeclared).
    pub fn bound(&self) -> f64 {
        match self {
            ForceSpec::Zero => 0.0,
            ForceSpec::Constant { vector } => v3(vector).norm(),
            ForceSpec::VolumePreserving { bound } => bound.unwrap_or(f64::INFINITY),
            ForceSpec::RescaledMcf { domain_radius } => 0.5 * domain_radius,
            ForceSpec::Scaled { factor, inner } => factor.abs() * inner.bound(),
            ForceSpec::Rescaled { scale, inner, .. } => scale * inner.bound(),
        }
    }

    fn needs_mean_curvature(&self) -> bool {
        match self {
            ForceSpec::VolumePreserving { .. } => true,
            ForceSpec::Scaled { inner, .. } | ForceSpec::Rescaled { inner, .. } => inner.needs_mean_curvature(),
            _ => false,
        }
    }

    /// β at one point with unit normal `normal`. `mean_h` is the surface mean
    /// of scalar H in the coordinates of `x`. Does not check the bound.
    pub fn eval_at(&self, x: &Point, normal: &Vector3<f64>, mean_h: f64) -> Result<Vector3<f64>, ForceError> {
        Ok(match self {
            ForceSpec::Zero => Vector3::zeros(),
            ForceSpec::Constant { vector } => v3(vector),
            ForceSpec::VolumePreserving { .. } => normal * mean_h,
            ForceSpec::RescaledMcf { domain_radius } => {
                let radius = x.norm();
                if radius > *domain_radius {
                    return Err(ForceError::DomainExit { vertex: usize::MAX, radius, domain: *domain_radius });
                }
                normal * (0.5 * x.dot(normal))
            }
            ForceSpec::Scaled { factor, inner } => inner.eval_at(x, normal, mean_h)? * *factor,
            ForceSpec::Rescaled { center, scale, inner } => {
                // lengths in the inner frame are `scale` times longer, curvatures `1/scale`
                let y = v3(center) + x * *scale;
                inner.eval_at(&y, normal, mean_h / scale)? * *scale
            }
        })
    }
}

/// Per-vertex β on a mesh, checked against the declared bound.
pub fn eval_force(spec: &ForceSpec, mesh: &TriMesh, curvature: &CurvatureField) -> Result<Vec<Vector3<f64>>, ForceError> {
    if spec.is_zero() {
        return Ok(vec![Vector3::zeros(); mesh.n_vertices()]);
    }
    let mean_h = if spec.needs_mean_curvature() {
        integrate_scalar(mesh, ScalarField::Vertex(&curvature.mean))? / mesh.total_area()
    } else {
        0.0
    };
    let bound = spec.bound();
    let limit = bound * (1.0 + SUP_NORM_SLACK);
    let mut out = Vec::with_capacity(mesh.n_vertices());
    for (v, (x, n)) in mesh.positions().iter().zip(&curvature.normals).enumerate() {
        let b = spec.eval_at(x, n, mean_h).map_err(|e| match e {
            ForceError::DomainExit { radius, domain, .. } => ForceError::DomainExit { vertex: v, radius, domain },
            other => other,
        })?;
        let magnitude = b.norm();
        if !(magnitude <= limit) {
            return Err(ForceError::SupNormViolation { vertex: v, magnitude, bound });
        }
        out.push(b);
    }
    Ok(out)
}

/// The force seen after x ↦ (x − y)/α: β^α(x) = α·β(y + αx), bound αB.
pub fn rescale_force(spec: &ForceSpec, center: &Point, alpha: f64) -> Result<ForceSpec, ForceError> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(ForceError::NonPositiveScale(alpha));
    }
    Ok(match spec {
        ForceSpec::Zero => ForceSpec::Zero,
        ForceSpec::Constant { vector } => ForceSpec::constant(v3(vector) * alpha),
        // the mean curvature rescales exactly like the force, so the form is kept
        ForceSpec::VolumePreserving { bound } => ForceSpec::VolumePreserving { bound: bound.map(|b| alpha * b) },
        ForceSpec::Scaled { factor, inner } => {
            ForceSpec::Scaled { factor: *factor, inner: Box::new(rescale_force(inner, center, alpha)?) }
        }
        ForceSpec::Rescaled { center: c, scale, inner } => ForceSpec::Rescaled {
            center: arr(&(v3(c) + center * *scale)),
            scale: scale * alpha,
            inner: inner.clone(),
        },
        ForceSpec::RescaledMcf { .. } => {
            ForceSpec::Rescaled { center: arr(center), scale: alpha, inner: Box::new(spec.clone()) }
        }
    })
}
