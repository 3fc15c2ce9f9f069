//! Constant-negative-curvature geometry on the Poincaré ball, with conversions
//! to the Klein and Lorentz (hyperboloid) models.
//!
//! A curvature `kappa < 0` gives a ball of radius `1/sqrt(|kappa|)`. Throughout,
//! `c = |kappa|`. The conformal factor is `lambda_x = 2 / (1 - c|x|^2)`.
//!
//! Every function returning a [`PoincareVector`] projects its result back into
//! the ball so that `|x| * sqrt(c) <= 1 - BALL_EPS`.
//!
//! The slice-level kernels in [`kernel`] are shared with the differentiable
//! layer in [`crate::manifold`], which supplies hand-written adjoints.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{norm, Tensor};

/// Margin kept between any point and the ball boundary.
pub const BALL_EPS: f64 = 1e-5;
/// Norms are floored at this value before dividing by them.
pub const MIN_NORM: f64 = 1e-15;
/// Upper clamp for `atanh` arguments.
pub const ATANH_MAX: f64 = 1.0 - 1e-10;

/// Karcher flow stops once the geodesic length of the weighted tangent
/// average falls below this.
pub const FRECHET_TOL: f64 = 1e-6;
pub const FRECHET_MAX_ITERS: usize = 100;

/// Step length for one Karcher flow update: the inverse of
/// `sum_i w_i rho_i coth(rho_i)` over `(rho_i, w_i)` pairs, with
/// `rho_i = sqrt(c) d(m, x_i)` and weights summing to one. This bounds the
/// Hessian of the objective, so the flow cannot overshoot when the points
/// are far apart; for nearby points it tends to the unit step.
pub fn karcher_step(terms: impl Iterator<Item = (f64, f64)>) -> f64 {
    let h: f64 = terms.map(|(rho, w)| w * if rho < 1e-8 { 1.0 } else { rho / rho.tanh() }).sum();
    1.0 / h.max(1.0)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("curvature mismatch: {left} vs {right}")]
    CurvatureMismatch { left: f64, right: f64 },
    #[error("matrix with {cols} columns cannot multiply a {dim}-dimensional vector")]
    ShapeMismatch { cols: usize, dim: usize },
    #[error("curvature must be strictly negative and finite, got {0}")]
    InvalidCurvature(f64),
    #[error("{0} needs at least one point")]
    Empty(&'static str),
    #[error("weights must be nonnegative, finite and not all zero")]
    InvalidWeights,
    #[error("{count} weights given for {points} points")]
    WeightCount { count: usize, points: usize },
    #[error("coordinates must be finite")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Sectional curvature `kappa`, always strictly negative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curvature(f64);

impl Curvature {
    pub fn new(kappa: f64) -> Result<Self> {
        if kappa < 0.0 && kappa.is_finite() {
            Ok(Self(kappa))
        } else {
            Err(GeometryError::InvalidCurvature(kappa))
        }
    }

    pub fn kappa(self) -> f64 {
        self.0
    }

    /// `|kappa|`.
    pub fn c(self) -> f64 {
        -self.0
    }

    pub fn radius(self) -> f64 {
        1.0 / self.c().sqrt()
    }
}

impl Default for Curvature {
    fn default() -> Self {
        Self(-1.0)
    }
}

/// Slice-level formulas; inputs are assumed to share a dimension.
pub mod kernel {
    use super::{ATANH_MAX, BALL_EPS, MIN_NORM};
    use crate::tensor::{dot, norm, sq_norm};

    pub fn clamped_atanh(x: f64) -> f64 {
        x.clamp(0.0, ATANH_MAX).atanh()
    }

    pub fn lambda(x: &[f64], c: f64) -> f64 {
        2.0 / (1.0 - c * sq_norm(x))
    }

    pub fn mobius_add(x: &[f64], y: &[f64], c: f64) -> Vec<f64> {
        let xy = dot(x, y);
        let x2 = sq_norm(x);
        let y2 = sq_norm(y);
        let a = 1.0 + 2.0 * c * xy + c * y2;
        let b = 1.0 - c * x2;
        let d = (1.0 + 2.0 * c * xy + c * c * x2 * y2).max(MIN_NORM);
        x.iter().zip(y).map(|(xi, yi)| (a * xi + b * yi) / d).collect()
    }

    /// Radial projection onto the ball of radius `(1 - BALL_EPS)/sqrt(c)`.
    pub fn project(x: &[f64], c: f64) -> Vec<f64> {
        let n = norm(x);
        let max = (1.0 - BALL_EPS) / c.sqrt();
        if n > max {
            x.iter().map(|v| v * max / n).collect()
        } else {
            x.to_vec()
        }
    }

    pub fn exp0(v: &[f64], c: f64) -> Vec<f64> {
        let sc = c.sqrt();
        let n = norm(v).max(MIN_NORM);
        let f = (sc * n).tanh() / (sc * n);
        project(&v.iter().map(|x| f * x).collect::<Vec<_>>(), c)
    }

    pub fn log0(y: &[f64], c: f64) -> Vec<f64> {
        let sc = c.sqrt();
        let n = norm(y).max(MIN_NORM);
        let f = clamped_atanh(sc * n) / (sc * n);
        y.iter().map(|x| f * x).collect()
    }

    pub fn exp_map(base: &[f64], v: &[f64], c: f64) -> Vec<f64> {
        let sc = c.sqrt();
        let n = norm(v).max(MIN_NORM);
        let f = (sc * lambda(base, c) * n / 2.0).tanh() / (sc * n);
        let second: Vec<f64> = v.iter().map(|x| f * x).collect();
        project(&mobius_add(base, &second, c), c)
    }

    pub fn log_map(base: &[f64], y: &[f64], c: f64) -> Vec<f64> {
        let sc = c.sqrt();
        let neg: Vec<f64> = base.iter().map(|v| -v).collect();
        let u = mobius_add(&neg, y, c);
        let n = norm(&u).max(MIN_NORM);
        let f = 2.0 / (sc * lambda(base, c)) * clamped_atanh(sc * n) / n;
        u.iter().map(|x| f * x).collect()
    }

    pub fn distance(x: &[f64], y: &[f64], c: f64) -> f64 {
        // (-x) + x rounds to ~1e-17 rather than zero.
        if x == y {
            return 0.0;
        }
        let sc = c.sqrt();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        2.0 / sc * clamped_atanh(sc * norm(&mobius_add(&neg, y, c)))
    }

    pub fn to_klein(x: &[f64], c: f64) -> Vec<f64> {
        let f = 2.0 / (1.0 + c * sq_norm(x));
        x.iter().map(|v| f * v).collect()
    }

    pub fn from_klein(k: &[f64], c: f64) -> Vec<f64> {
        let f = 1.0 / (1.0 + (1.0 - c * sq_norm(k)).max(0.0).sqrt());
        project(&k.iter().map(|v| f * v).collect::<Vec<_>>(), c)
    }

    pub fn to_lorentz(x: &[f64], c: f64) -> Vec<f64> {
        let x2 = c * sq_norm(x);
        let denom = 1.0 - x2;
        let mut out = Vec::with_capacity(x.len() + 1);
        out.push((1.0 + x2) / (c.sqrt() * denom));
        out.extend(x.iter().map(|v| 2.0 * v / denom));
        out
    }

    pub fn from_lorentz(p: &[f64], c: f64) -> Vec<f64> {
        let f = 1.0 / (1.0 + c.sqrt() * p[0]);
        project(&p[1..].iter().map(|v| f * v).collect::<Vec<_>>(), c)
    }

    /// Minkowski bilinear form `-x0*y0 + sum xi*yi`.
    pub fn minkowski_dot(p: &[f64], q: &[f64]) -> f64 {
        -p[0] * q[0] + dot(&p[1..], &q[1..])
    }

    /// Geodesic distance on the hyperboloid, evaluated through the spacelike
    /// chord `q = <p - r, p - r>_L` so nearby points keep full precision.
    pub fn lorentz_distance(p: &[f64], r: &[f64], c: f64) -> f64 {
        let diff: Vec<f64> = p.iter().zip(r).map(|(a, b)| a - b).collect();
        let q = minkowski_dot(&diff, &diff).max(0.0);
        2.0 / c.sqrt() * ((c * q).sqrt() / 2.0).asinh()
    }

    /// Lorentz factor of a Klein point.
    pub fn gamma(k: &[f64], c: f64) -> f64 {
        1.0 / (1.0 - c * sq_norm(k)).max(MIN_NORM).sqrt()
    }
}

fn check_finite(coords: &[f64]) -> Result<()> {
    if coords.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GeometryError::NonFinite)
    }
}

/// A point strictly inside the Poincaré ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoincareVector {
    coords: Vec<f64>,
    curvature: Curvature,
}

impl PoincareVector {
    /// Wraps `coords`, projecting them into the ball if needed.
    pub fn new(coords: Vec<f64>, curvature: Curvature) -> Result<Self> {
        check_finite(&coords)?;
        Ok(Self::projected(coords, curvature))
    }

    fn projected(coords: Vec<f64>, curvature: Curvature) -> Self {
        let coords = kernel::project(&coords, curvature.c());
        Self { coords, curvature }
    }

    pub fn origin(dim: usize, curvature: Curvature) -> Self {
        Self { coords: vec![0.0; dim], curvature }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn norm(&self) -> f64 {
        norm(&self.coords)
    }

    /// Möbius inverse `-x`.
    pub fn neg(&self) -> Self {
        Self {
            coords: self.coords.iter().map(|v| -v).collect(),
            curvature: self.curvature,
        }
    }

    fn same_manifold(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(GeometryError::DimensionMismatch { left: self.dim(), right: other.dim() });
        }
        if self.curvature != other.curvature {
            return Err(GeometryError::CurvatureMismatch {
                left: self.curvature.kappa(),
                right: other.curvature.kappa(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KleinVector {
    coords: Vec<f64>,
    curvature: Curvature,
}

impl KleinVector {
    pub fn new(coords: Vec<f64>, curvature: Curvature) -> Result<Self> {
        check_finite(&coords)?;
        let coords = kernel::project(&coords, curvature.c());
        Ok(Self { coords, curvature })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn gamma(&self) -> f64 {
        kernel::gamma(&self.coords, self.curvature.c())
    }
}

/// A point on the upper sheet `<x, x>_L = 1/kappa`, time coordinate first.
#[derive(Clone, Debug, PartialEq)]
pub struct LorentzVector {
    coords: Vec<f64>,
    curvature: Curvature,
}

impl LorentzVector {
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn minkowski_sq_norm(&self) -> f64 {
        kernel::minkowski_dot(&self.coords, &self.coords)
    }
}

pub fn mobius_add(x: &PoincareVector, y: &PoincareVector) -> Result<PoincareVector> {
    x.same_manifold(y)?;
    let c = x.curvature.c();
    Ok(PoincareVector::projected(kernel::mobius_add(&x.coords, &y.coords, c), x.curvature))
}

/// `W ⊗ x = exp0(W log0(x))` for a `D' x D` matrix.
pub fn mobius_matvec(w: &Tensor, x: &PoincareVector) -> Result<PoincareVector> {
    if w.shape().len() != 2 || w.cols() != x.dim() {
        return Err(GeometryError::ShapeMismatch { cols: w.cols(), dim: x.dim() });
    }
    let c = x.curvature.c();
    let t = w.matvec(&kernel::log0(&x.coords, c));
    Ok(PoincareVector::projected(kernel::exp0(&t, c), x.curvature))
}

/// Element-wise product taken in the tangent space at the origin.
pub fn mobius_pointwise(x: &PoincareVector, y: &PoincareVector) -> Result<PoincareVector> {
    x.same_manifold(y)?;
    let c = x.curvature.c();
    let (a, b) = (kernel::log0(&x.coords, c), kernel::log0(&y.coords, c));
    let t: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p * q).collect();
    Ok(PoincareVector::projected(kernel::exp0(&t, c), x.curvature))
}

pub fn exp_map(base: &PoincareVector, v: &[f64]) -> Result<PoincareVector> {
    if v.len() != base.dim() {
        return Err(GeometryError::DimensionMismatch { left: base.dim(), right: v.len() });
    }
    check_finite(v)?;
    let c = base.curvature.c();
    Ok(PoincareVector::projected(kernel::exp_map(&base.coords, v, c), base.curvature))
}

pub fn log_map(base: &PoincareVector, y: &PoincareVector) -> Result<Vec<f64>> {
    base.same_manifold(y)?;
    Ok(kernel::log_map(&base.coords, &y.coords, base.curvature.c()))
}

pub fn exp0(v: &[f64], curvature: Curvature) -> Result<PoincareVector> {
    check_finite(v)?;
    Ok(PoincareVector::projected(kernel::exp0(v, curvature.c()), curvature))
}

pub fn log0(x: &PoincareVector) -> Vec<f64> {
    kernel::log0(&x.coords, x.curvature.c())
}

pub fn distance(x: &PoincareVector, y: &PoincareVector) -> Result<f64> {
    x.same_manifold(y)?;
    Ok(kernel::distance(&x.coords, &y.coords, x.curvature.c()))
}

pub fn to_klein(x: &PoincareVector) -> KleinVector {
    let c = x.curvature.c();
    KleinVector { coords: kernel::project(&kernel::to_klein(&x.coords, c), c), curvature: x.curvature }
}

pub fn from_klein(k: &KleinVector) -> PoincareVector {
    PoincareVector::projected(kernel::from_klein(&k.coords, k.curvature.c()), k.curvature)
}

pub fn to_lorentz(x: &PoincareVector) -> LorentzVector {
    LorentzVector { coords: kernel::to_lorentz(&x.coords, x.curvature.c()), curvature: x.curvature }
}

pub fn from_lorentz(p: &LorentzVector) -> PoincareVector {
    PoincareVector::projected(kernel::from_lorentz(&p.coords, p.curvature.c()), p.curvature)
}

pub fn lorentz_distance(p: &LorentzVector, q: &LorentzVector) -> Result<f64> {
    if p.coords.len() != q.coords.len() {
        return Err(GeometryError::DimensionMismatch { left: p.coords.len(), right: q.coords.len() });
    }
    Ok(kernel::lorentz_distance(&p.coords, &q.coords, p.curvature.c()))
}

fn validate_weights(weights: &[f64], points: usize) -> Result<()> {
    if weights.len() != points {
        return Err(GeometryError::WeightCount { count: weights.len(), points });
    }
    let ok = weights.iter().all(|w| w.is_finite() && *w >= 0.0) && weights.iter().any(|w| *w > 0.0);
    if ok {
        Ok(())
    } else {
        Err(GeometryError::InvalidWeights)
    }
}

/// Lorentz-factor weighted average of Klein points:
/// `m = sum_i w_i gamma_i x_i / sum_l w_l gamma_l`.
pub fn einstein_midpoint(points: &[KleinVector], weights: &[f64]) -> Result<KleinVector> {
    let first = points.first().ok_or(GeometryError::Empty("einstein_midpoint"))?;
    validate_weights(weights, points.len())?;
    let dim = first.coords.len();
    let c = first.curvature.c();
    let mut acc = vec![0.0; dim];
    let mut total = 0.0;
    for (p, &w) in points.iter().zip(weights) {
        if p.coords.len() != dim {
            return Err(GeometryError::DimensionMismatch { left: dim, right: p.coords.len() });
        }
        let g = w * p.gamma();
        total += g;
        for (a, v) in acc.iter_mut().zip(&p.coords) {
            *a += g * v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= total);
    Ok(KleinVector { coords: kernel::project(&acc, c), curvature: first.curvature })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrechetMean {
    pub point: PoincareVector,
    pub iterations: usize,
    /// False when Karcher flow hit the iteration cap and the tangent-space mean
    /// at the origin was returned instead.
    pub converged: bool,
}

/// Weighted Fréchet mean by Karcher flow with the step from
/// [`karcher_step`], started from the tangent-space mean at the origin.
/// Zero-weight points are ignored.
pub fn frechet_mean(points: &[PoincareVector], weights: &[f64]) -> Result<FrechetMean> {
    let first = points.first().ok_or(GeometryError::Empty("frechet_mean"))?;
    validate_weights(weights, points.len())?;
    for p in points {
        first.same_manifold(p)?;
    }
    let curvature = first.curvature;
    let c = curvature.c();
    let active: Vec<(&[f64], f64)> =
        points.iter().zip(weights).filter(|(_, w)| **w > 0.0).map(|(p, w)| (p.coords(), *w)).collect();
    let total: f64 = active.iter().map(|(_, w)| w).sum();

    let mut tangent = vec![0.0; first.dim()];
    for (p, w) in &active {
        for (t, v) in tangent.iter_mut().zip(kernel::log0(p, c)) {
            *t += w / total * v;
        }
    }
    let fallback = kernel::exp0(&tangent, c);

    let mut m = fallback.clone();
    for it in 1..=FRECHET_MAX_ITERS {
        let lam = kernel::lambda(&m, c);
        let mut step = vec![0.0; m.len()];
        let mut rhos = Vec::with_capacity(active.len());
        for (p, w) in &active {
            let l = kernel::log_map(&m, p, c);
            rhos.push((c.sqrt() * lam * norm(&l), w / total));
            for (s, v) in step.iter_mut().zip(l) {
                *s += w / total * v;
            }
        }
        let length = lam * norm(&step);
        let eta = karcher_step(rhos.into_iter());
        step.iter_mut().for_each(|s| *s *= eta);
        m = kernel::exp_map(&m, &step, c);
        if length < FRECHET_TOL {
            return Ok(FrechetMean { point: PoincareVector::projected(m, curvature), iterations: it, converged: true });
        }
    }
    Ok(FrechetMean {
        point: PoincareVector::projected(fallback, curvature),
        iterations: FRECHET_MAX_ITERS,
        converged: false,
    })
}

/// Weighted objective `sum_i w_i d(m, x_i)^2` minimised by [`frechet_mean`].
pub fn frechet_objective(m: &[f64], points: &[PoincareVector], weights: &[f64]) -> f64 {
    points
        .iter()
        .zip(weights)
        .map(|(p, w)| {
            let d = kernel::distance(m, p.coords(), p.curvature().c());
            w * d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit() -> Curvature {
        Curvature::default()
    }

    fn p(v: &[f64]) -> PoincareVector {
        PoincareVector::new(v.to_vec(), unit()).unwrap()
    }

    fn random_point(rng: &mut ChaCha8Rng, dim: usize, max_r: f64, curv: Curvature) -> PoincareVector {
        let dir: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = norm(&dir).max(1e-12);
        let r = rng.random_range(0.0..max_r) * curv.radius();
        PoincareVector::new(dir.iter().map(|v| v * r / n).collect(), curv).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn rejects_nonnegative_curvature() {
        assert!(Curvature::new(0.0).is_err());
        assert!(Curvature::new(0.5).is_err());
        assert!(Curvature::new(f64::NAN).is_err());
        assert_eq!(Curvature::new(-2.0).unwrap().c(), 2.0);
    }

    #[test]
    fn mobius_add_one_dimensional_case() {
        let r = mobius_add(&p(&[0.3]), &p(&[0.4])).unwrap();
        assert!((r.coords()[0] - 0.625).abs() < 1e-15);
    }

    #[test]
    fn mobius_add_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let x = random_point(&mut rng, 5, 0.95, unit());
            let o = PoincareVector::origin(5, unit());
            assert!(close(mobius_add(&x, &o).unwrap().coords(), x.coords(), 1e-12));
            assert!(close(mobius_add(&o, &x).unwrap().coords(), x.coords(), 1e-12));
            assert!(close(mobius_add(&x.neg(), &x).unwrap().coords(), &[0.0; 5], 1e-12));
        }
    }

    #[test]
    fn mobius_add_rejects_mismatch() {
        let a = p(&[0.1, 0.2]);
        let b = p(&[0.1]);
        assert!(matches!(mobius_add(&a, &b), Err(GeometryError::DimensionMismatch { .. })));
        let k = PoincareVector::new(vec![0.1, 0.2], Curvature::new(-2.0).unwrap()).unwrap();
        assert!(matches!(mobius_add(&a, &k), Err(GeometryError::CurvatureMismatch { .. })));
    }

    #[test]
    fn matvec_identity_zero_and_shape() {
        let x = p(&[0.2, -0.3, 0.1]);
        let id = mobius_matvec(&Tensor::identity(3), &x).unwrap();
        assert!(close(id.coords(), x.coords(), 1e-12));
        let zero = mobius_matvec(&Tensor::zeros(vec![2, 3]), &x).unwrap();
        assert_eq!(zero.coords(), &[0.0, 0.0]);
        assert!(mobius_matvec(&Tensor::zeros(vec![2, 2]), &x).is_err());
    }

    #[test]
    fn pointwise_commutes_and_kills_origin() {
        let x = p(&[0.2, -0.3, 0.1]);
        let y = p(&[-0.5, 0.1, 0.4]);
        let a = mobius_pointwise(&x, &y).unwrap();
        let b = mobius_pointwise(&y, &x).unwrap();
        assert!(close(a.coords(), b.coords(), 1e-15));
        let o = PoincareVector::origin(3, unit());
        assert_eq!(mobius_pointwise(&o, &y).unwrap().coords(), &[0.0; 3]);
    }

    #[test]
    fn exp_of_zero_is_base() {
        let x = p(&[0.4, -0.1]);
        assert!(close(exp_map(&x, &[0.0, 0.0]).unwrap().coords(), x.coords(), 1e-15));
    }

    #[test]
    fn origin_round_trip() {
        let o = PoincareVector::origin(2, unit());
        let y = exp_map(&o, &[0.1, 0.2]).unwrap();
        assert!(close(&log_map(&o, &y).unwrap(), &[0.1, 0.2], 1e-9));
    }

    #[test]
    fn distance_along_ray() {
        let o = PoincareVector::origin(3, unit());
        for r in [0.0, 0.1, 0.5, 0.9, 0.99] {
            let d = distance(&o, &p(&[r, 0.0, 0.0])).unwrap();
            assert!((d - 2.0 * f64::atanh(r)).abs() < 1e-12);
        }
    }

    #[test]
    fn distance_of_exp0_matches_closed_form() {
        let o = PoincareVector::origin(2, unit());
        let v = [0.3, -0.4];
        let y = exp0(&v, unit()).unwrap();
        // |exp0(v)| = tanh(|v|), so d(0, exp0(v)) = 2 |v|.
        let expected = 2.0 * f64::atanh(f64::tanh(0.5));
        assert!((distance(&o, &y).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn outputs_stay_inside_ball() {
        let huge = exp0(&[1e3, -1e3], unit()).unwrap();
        assert!(huge.norm() <= 1.0 - BALL_EPS + 1e-15);
        let k = Curvature::new(-4.0).unwrap();
        let y = exp0(&[50.0, 0.0], k).unwrap();
        assert!(y.norm() * 2.0 <= 1.0 - BALL_EPS + 1e-15);
    }

    #[test]
    fn conversions_fix_origin() {
        let k = Curvature::new(-4.0).unwrap();
        let o = PoincareVector::origin(3, k);
        assert_eq!(to_klein(&o).coords(), &[0.0; 3]);
        let l = to_lorentz(&o);
        assert!((l.coords()[0] - 0.5).abs() < 1e-15);
        assert!(l.coords()[1..].iter().all(|v| *v == 0.0));
        assert!((l.minkowski_sq_norm() - 1.0 / k.kappa()).abs() < 1e-15);
    }

    #[test]
    fn conversions_round_trip_and_preserve_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kappa in [-1.0, -0.5, -3.0] {
            let k = Curvature::new(kappa).unwrap();
            for _ in 0..100 {
                let x = random_point(&mut rng, 4, 0.9, k);
                let y = random_point(&mut rng, 4, 0.9, k);
                assert!(close(from_klein(&to_klein(&x)).coords(), x.coords(), 1e-9));
                assert!(close(from_lorentz(&to_lorentz(&x)).coords(), x.coords(), 1e-9));
                let lx = to_lorentz(&x);
                assert!((lx.minkowski_sq_norm() - 1.0 / kappa).abs() < 1e-9 * lx.coords()[0].powi(2));
                let dp = distance(&x, &y).unwrap();
                let dl = lorentz_distance(&lx, &to_lorentz(&y)).unwrap();
                assert!((dp - dl).abs() < 1e-9, "{dp} vs {dl}");
            }
        }
    }

    #[test]
    fn midpoint_degenerate_cases() {
        let a = to_klein(&p(&[0.3, 0.2]));
        let m = einstein_midpoint(&[a.clone(), a.clone(), a.clone()], &[1.0, 5.0, 0.5]).unwrap();
        assert!(close(m.coords(), a.coords(), 1e-15));
        let b = to_klein(&p(&[-0.3, -0.2]));
        let m = einstein_midpoint(&[a, b], &[2.0, 2.0]).unwrap();
        assert!(close(m.coords(), &[0.0, 0.0], 1e-15));
    }

    #[test]
    fn midpoint_rejects_bad_input() {
        assert!(matches!(einstein_midpoint(&[], &[]), Err(GeometryError::Empty(_))));
        let a = to_klein(&p(&[0.3, 0.2]));
        assert!(matches!(einstein_midpoint(&[a.clone()], &[0.0]), Err(GeometryError::InvalidWeights)));
        assert!(matches!(einstein_midpoint(&[a.clone()], &[-1.0]), Err(GeometryError::InvalidWeights)));
        assert!(matches!(einstein_midpoint(&[a], &[1.0, 1.0]), Err(GeometryError::WeightCount { .. })));
    }

    #[test]
    fn frechet_mean_of_identical_points() {
        let x = p(&[0.2, -0.6]);
        let fm = frechet_mean(&[x.clone(), x.clone(), x.clone()], &[1.0, 2.0, 3.0]).unwrap();
        assert!(fm.converged);
        assert!(close(fm.point.coords(), x.coords(), 1e-12));
    }

    #[test]
    fn frechet_mean_two_point_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let x = random_point(&mut rng, 3, 0.9, unit());
            let y = random_point(&mut rng, 3, 0.9, unit());
            let fm = frechet_mean(&[x.clone(), y.clone()], &[1.0, 1.0]).unwrap();
            assert!(fm.converged);
            let dxy = distance(&x, &y).unwrap();
            assert!((distance(&fm.point, &x).unwrap() - dxy / 2.0).abs() < 1e-6);
            assert!((distance(&fm.point, &y).unwrap() - dxy / 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn frechet_mean_errors() {
        assert!(matches!(frechet_mean(&[], &[]), Err(GeometryError::Empty(_))));
        assert!(frechet_mean(&[p(&[0.1])], &[0.0]).is_err());
    }

    #[test]
    fn zero_weight_points_are_ignored() {
        let a = p(&[0.3, 0.1]);
        let far = p(&[-0.9, 0.0]);
        let with = frechet_mean(&[a.clone(), far], &[1.0, 0.0]).unwrap();
        assert!(close(with.point.coords(), a.coords(), 1e-12));
    }

    #[test]
    fn small_vectors_add_like_euclidean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-5e-5..5e-5)).collect();
            let y: Vec<f64> = (0..4).map(|_| rng.random_range(-5e-5..5e-5)).collect();
            let s = mobius_add(&p(&x), &p(&y)).unwrap();
            let e: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
            let diff: Vec<f64> = s.coords().iter().zip(&e).map(|(a, b)| a - b).collect();
            assert!(norm(&diff) <= 1e-7);
        }
    }
}
