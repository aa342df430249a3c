//! Poincaré-ball primitives.
//!
//! Everything here works on the open unit ball with curvature −1: the
//! geodesic distance, the conformal rescaling that turns a Euclidean
//! gradient into a Riemannian one, and the retraction that pulls a point
//! which left the ball back onto the sphere of radius `1 − ε`.
//!
//! Norms are whole-tensor Euclidean norms. A `ParamTensor` of shape
//! `[128, 128]` is treated as a single point of a 16384-dimensional ball.

use crate::error::{Error, Result};

/// Default margin kept between projected points and the unit sphere.
pub const DEFAULT_PROJ_EPS: f64 = 1e-5;

/// A point of the open unit ball.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint {
    coords: Vec<f64>,
}

impl BallPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::usage("ball point needs at least one coordinate"));
        }
        let n = l2_norm(&coords);
        if !n.is_finite() || n >= 1.0 {
            return Err(Error::domain(format!(
                "point norm {n} is not inside the unit ball"
            )));
        }
        Ok(Self { coords })
    }

    pub fn origin(dim: usize) -> Self {
        Self {
            coords: vec![0.0; dim.max(1)],
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn distance(&self, other: &BallPoint) -> Result<f64> {
        poincare_distance(&self.coords, &other.coords)
    }
}

/// Flat numeric array plus shape; the unit the optimizers update and project.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub data: Vec<f64>,
    shape: Vec<usize>,
}

impl ParamTensor {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::usage(format!(
                "shape {shape:?} holds {expected} elements but data has {}",
                data.len()
            )));
        }
        Ok(Self { data, shape })
    }

    /// One-dimensional tensor over `data`.
    pub fn from_vec(data: Vec<f64>) -> Self {
        let shape = vec![data.len()];
        Self { data, shape }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            data: vec![value],
            shape: vec![],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            data: vec![0.0; shape.iter().product()],
            shape: shape.to_vec(),
        }
    }

    pub fn zeros_like(other: &ParamTensor) -> Self {
        Self::zeros(&other.shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Euclidean norm. Rescales by the largest magnitude when squaring would
/// overflow or underflow.
pub fn l2_norm(xs: &[f64]) -> f64 {
    let max = xs.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if max == 0.0 || !max.is_finite() {
        return max;
    }
    if (1e-150..1e150).contains(&max) {
        xs.iter().map(|x| x * x).sum::<f64>().sqrt()
    } else {
        xs.iter().map(|x| (x / max) * (x / max)).sum::<f64>().sqrt() * max
    }
}

/// Inverse hyperbolic cosine, with the argument clamped to `[1, ∞)`.
pub fn arcosh(x: f64) -> f64 {
    let x = x.max(1.0);
    (x + (x * x - 1.0).sqrt()).ln()
}

/// `arcosh(1 + z)` for `z ≥ 0`, evaluated without cancellation near `z = 0`.
pub(crate) fn arcosh1p(z: f64) -> f64 {
    let z = z.max(0.0);
    (z + (z * (z + 2.0)).sqrt()).ln_1p()
}

fn check_in_ball(x: &[f64], name: &str) -> Result<f64> {
    let sq: f64 = x.iter().map(|a| a * a).sum();
    if !sq.is_finite() || sq >= 1.0 {
        return Err(Error::domain(format!(
            "argument `{name}` has norm {} outside the unit ball",
            sq.sqrt()
        )));
    }
    Ok(sq)
}

/// Geodesic distance `arcosh(1 + 2‖u−v‖² / ((1−‖u‖²)(1−‖v‖²)))`.
pub fn poincare_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::usage(format!(
            "dimension mismatch: u has {} coordinates, v has {}",
            u.len(),
            v.len()
        )));
    }
    let uu = check_in_ball(u, "u")?;
    let vv = check_in_ball(v, "v")?;
    let diff: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    let z = 2.0 * diff / ((1.0 - uu) * (1.0 - vv));
    Ok(arcosh1p(z))
}

/// Distance together with its Euclidean gradients with respect to `u` and `v`.
///
/// The gradient is taken as zero at `u = v`, where the distance is not
/// differentiable.
pub fn poincare_distance_grad(u: &[f64], v: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let d = poincare_distance(u, v)?;
    let uu: f64 = u.iter().map(|a| a * a).sum();
    let vv: f64 = v.iter().map(|a| a * a).sum();
    let uv: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let diff: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    let alpha = 1.0 - uu;
    let beta = 1.0 - vv;
    let z = 2.0 * diff / (alpha * beta);
    let root = (z * (z + 2.0)).sqrt();
    if root == 0.0 {
        return Ok((d, vec![0.0; u.len()], vec![0.0; v.len()]));
    }
    let one_sided = |x: &[f64], y: &[f64], yy: f64, ax: f64, ay: f64| -> Vec<f64> {
        let c = 4.0 / (ay * root);
        let a = (yy - 2.0 * uv + 1.0) / (ax * ax);
        x.iter().zip(y).map(|(xi, yi)| c * (a * xi - yi / ax)).collect()
    };
    let gu = one_sided(u, v, vv, alpha, beta);
    let gv = one_sided(v, u, uu, beta, alpha);
    Ok((d, gu, gv))
}

/// Conformal factor `(1 − ‖θ‖²)² / 4` for a squared norm.
pub fn conformal_factor(norm_sq: f64) -> f64 {
    let s = 1.0 - norm_sq;
    s * s / 4.0
}

/// Riemannian gradient `((1 − ‖θ‖²)² / 4) · g` on the ball.
pub fn riemannian_rescale(theta: &ParamTensor, grad: &ParamTensor) -> Result<ParamTensor> {
    if theta.shape() != grad.shape() {
        return Err(Error::usage(format!(
            "shape mismatch: theta {:?} vs grad {:?}",
            theta.shape(),
            grad.shape()
        )));
    }
    let n = theta.norm();
    if !n.is_finite() || n >= 1.0 {
        return Err(Error::domain(format!(
            "theta norm {n} is not inside the unit ball"
        )));
    }
    let factor = conformal_factor(n * n);
    let data = grad.data.iter().map(|g| factor * g).collect();
    Ok(ParamTensor {
        data,
        shape: grad.shape.clone(),
    })
}

/// Retraction onto the ball: tensors with `‖θ‖ ≥ 1` are rescaled to norm
/// `1 − ε` along their own direction; anything inside is returned unchanged.
pub fn project_to_ball(theta: &ParamTensor, epsilon: f64) -> Result<ParamTensor> {
    let mut out = theta.clone();
    project_in_place(&mut out, epsilon)?;
    Ok(out)
}

/// In-place form of [`project_to_ball`]. Returns whether the projection fired.
pub fn project_in_place(theta: &mut ParamTensor, epsilon: f64) -> Result<bool> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::usage(format!("epsilon {epsilon} must lie in (0, 1)")));
    }
    if !theta.is_finite() {
        return Err(Error::domain("cannot project a non-finite tensor"));
    }
    let n = theta.norm();
    if n < 1.0 {
        return Ok(false);
    }
    let scale = (1.0 - epsilon) / n;
    for x in &mut theta.data {
        *x *= scale;
    }
    Ok(true)
}
