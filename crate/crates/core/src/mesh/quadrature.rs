//! Edge-midpoint quadrature on triangles (exact for quadratics).
//!
//! Each triangle contributes three points, at its edge midpoints, with weight
//! area/3. Vertex fields are interpolated linearly, so a midpoint carries the
//! average of the two edge endpoints.

use super::{MeshError, Point, TriMesh};

#[derive(Debug, Clone, Copy)]
pub enum ScalarField<'a> {
    Vertex(&'a [f64]),
    Face(&'a [f64]),
}

#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub face: usize,
    /// Endpoints of the edge this point sits on.
    pub corners: [usize; 2],
    pub position: Point,
    pub weight: f64,
}

impl QuadPoint {
    /// Linear interpolation of a vertex field at this point.
    #[inline]
    pub fn interpolate<T>(&self, field: &[T]) -> T
    where
        T: Copy + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
    {
        (field[self.corners[0]] + field[self.corners[1]]) * 0.5
    }
}

pub fn quadrature_points(mesh: &TriMesh) -> impl Iterator<Item = QuadPoint> + '_ {
    let pos = mesh.positions();
    mesh.faces().iter().enumerate().flat_map(move |(fi, f)| {
        let w = mesh.face_areas()[fi] / 3.0;
        (0..3).map(move |k| {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            QuadPoint { face: fi, corners: [a, b], position: (pos[a] + pos[b]) * 0.5, weight: w }
        })
    })
}

/// ∫ f dμ for a per-vertex or per-face field.
pub fn integrate_scalar(mesh: &TriMesh, field: ScalarField<'_>) -> Result<f64, MeshError> {
    match field {
        ScalarField::Vertex(values) => {
            check_field(values, mesh.n_vertices())?;
            Ok(mesh
                .faces()
                .iter()
                .zip(mesh.face_areas())
                .map(|(f, a)| a * (values[f[0]] + values[f[1]] + values[f[2]]) / 3.0)
                .sum())
        }
        ScalarField::Face(values) => {
            check_field(values, mesh.n_faces())?;
            Ok(values.iter().zip(mesh.face_areas()).map(|(v, a)| v * a).sum())
        }
    }
}

/// ∫ f(x) dμ for a function of position, sampled at the quadrature points.
pub fn integrate_point_fn(mesh: &TriMesh, f: impl Fn(&Point) -> f64) -> f64 {
    quadrature_points(mesh).map(|q| q.weight * f(&q.position)).sum()
}

fn check_field(values: &[f64], expected: usize) -> Result<(), MeshError> {
    if values.len() != expected {
        return Err(MeshError::FieldLength { got: values.len(), expected });
    }
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(MeshError::NonFiniteInput(i)),
        None => Ok(()),
    }
}
