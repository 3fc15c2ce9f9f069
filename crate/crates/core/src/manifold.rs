//! Differentiable geometry used by the network layers.
//!
//! [`Geo`] bundles a [`Space`] with a curvature-magnitude node on the tape.
//! In [`Space::Poincare`] the operations are the Möbius gyrovector operations
//! and every point-valued result is projected into the ball. In
//! [`Space::Euclidean`] they collapse to their flat counterparts (`+`, matrix
//! product, Hadamard product, identity maps, arithmetic mean), which is how the
//! Euclidean ablation is realised without touching layer code.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::geometry::{karcher_step, FRECHET_MAX_ITERS, FRECHET_TOL};
use crate::tensor::{norm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Poincare,
    Euclidean,
}

impl Space {
    pub fn is_hyperbolic(self) -> bool {
        self == Space::Poincare
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Geo {
    pub space: Space,
    /// Scalar node holding `c = |kappa|`.
    pub c: Var,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrechetInfo {
    pub iterations: usize,
    pub converged: bool,
}

impl Geo {
    pub fn new(space: Space, c: Var) -> Self {
        Self { space, c }
    }

    /// A geometry with constant curvature magnitude `c`.
    pub fn constant(tape: &mut Tape, space: Space, c: f64) -> Self {
        let c = tape.scalar(c);
        Self { space, c }
    }

    pub fn is_hyperbolic(&self) -> bool {
        self.space == Space::Poincare
    }

    pub fn project(&self, t: &mut Tape, x: Var) -> Var {
        match self.space {
            Space::Poincare => t.project(x, self.c),
            Space::Euclidean => x,
        }
    }

    pub fn exp0(&self, t: &mut Tape, v: Var) -> Var {
        match self.space {
            Space::Poincare => {
                let e = t.exp0(v, self.c);
                t.project(e, self.c)
            }
            Space::Euclidean => v,
        }
    }

    pub fn log0(&self, t: &mut Tape, x: Var) -> Var {
        match self.space {
            Space::Poincare => t.log0(x, self.c),
            Space::Euclidean => x,
        }
    }

    /// `x ⊕ y`.
    pub fn add(&self, t: &mut Tape, x: Var, y: Var) -> Var {
        match self.space {
            Space::Poincare => {
                let s = t.mobius_add(x, y, self.c);
                t.project(s, self.c)
            }
            Space::Euclidean => t.add(x, y),
        }
    }

    /// Left-to-right `x_0 ⊕ x_1 ⊕ ...`.
    pub fn add_all(&self, t: &mut Tape, xs: &[Var]) -> Var {
        let mut acc = xs[0];
        for x in &xs[1..] {
            acc = self.add(t, acc, *x);
        }
        acc
    }

    pub fn neg(&self, t: &mut Tape, x: Var) -> Var {
        t.neg(x)
    }

    /// `W ⊗ x = exp0(W log0(x))`.
    pub fn matvec(&self, t: &mut Tape, w: Var, x: Var) -> Var {
        let lx = self.log0(t, x);
        self.matvec_tangent(t, w, lx)
    }

    /// `W ⊗ x` given a precomputed `log0(x)`.
    pub fn matvec_tangent(&self, t: &mut Tape, w: Var, log_x: Var) -> Var {
        let y = t.matmul(w, log_x);
        self.exp0(t, y)
    }

    /// `x ⊙ y = exp0(log0(x) * log0(y))`.
    pub fn pointwise(&self, t: &mut Tape, x: Var, y: Var) -> Var {
        let (a, b) = (self.log0(t, x), self.log0(t, y));
        let p = t.mul(a, b);
        self.exp0(t, p)
    }

    /// A Möbius bias point stored as a tangent vector at the origin.
    pub fn bias(&self, t: &mut Tape, tangent: Var) -> Var {
        self.exp0(t, tangent)
    }

    /// `1 - c|x|^2`, i.e. `2 / lambda_x`.
    fn inv_half_lambda(&self, t: &mut Tape, x: Var) -> Var {
        let sq = t.dot(x, x);
        let csq = t.mul(sq, self.c);
        let one = t.scalar(1.0);
        t.sub(one, csq)
    }

    pub fn exp_map(&self, t: &mut Tape, base: Var, v: Var) -> Var {
        match self.space {
            Space::Poincare => {
                let s = self.inv_half_lambda(t, base);
                self.exp_map_with(t, base, s, v)
            }
            Space::Euclidean => t.add(base, v),
        }
    }

    /// `exp_x(v) = x ⊕ exp0(lambda_x v / 2)`, with `s = 1 - c|x|^2` supplied.
    fn exp_map_with(&self, t: &mut Tape, base: Var, s: Var, v: Var) -> Var {
        let scaled = t.div(v, s);
        let e = self.exp0(t, scaled);
        self.add(t, base, e)
    }

    pub fn log_map(&self, t: &mut Tape, base: Var, y: Var) -> Var {
        match self.space {
            Space::Poincare => {
                let s = self.inv_half_lambda(t, base);
                self.log_map_with(t, base, s, y)
            }
            Space::Euclidean => t.sub(y, base),
        }
    }

    /// `log_x(y) = (1 - c|x|^2) log0(-x ⊕ y)`.
    fn log_map_with(&self, t: &mut Tape, base: Var, s: Var, y: Var) -> Var {
        let nb = t.neg(base);
        let u = t.mobius_add(nb, y, self.c);
        let l = t.log0(u, self.c);
        t.mul(l, s)
    }

    /// Geodesic distance `2/sqrt(c) atanh(sqrt(c) |-x ⊕ y|)`.
    pub fn distance(&self, t: &mut Tape, x: Var, y: Var) -> Var {
        match self.space {
            Space::Poincare => {
                let nx = t.neg(x);
                let u = t.mobius_add(nx, y, self.c);
                let n = t.norm(u);
                let sc = t.sqrt(self.c);
                let arg = t.mul(sc, n);
                let a = t.atanh(arg);
                let two = t.scale(a, 2.0);
                t.div(two, sc)
            }
            Space::Euclidean => {
                let d = t.sub(y, x);
                t.norm(d)
            }
        }
    }

    pub fn to_klein(&self, t: &mut Tape, x: Var) -> Var {
        match self.space {
            Space::Poincare => {
                let sq = t.dot(x, x);
                let csq = t.mul(sq, self.c);
                let one = t.scalar(1.0);
                let den = t.add(one, csq);
                let k = t.div(x, den);
                let k = t.scale(k, 2.0);
                t.project(k, self.c)
            }
            Space::Euclidean => x,
        }
    }

    pub fn from_klein(&self, t: &mut Tape, k: Var) -> Var {
        match self.space {
            Space::Poincare => {
                let sq = t.dot(k, k);
                let csq = t.mul(sq, self.c);
                let one = t.scalar(1.0);
                let rem = t.sub(one, csq);
                let root = t.sqrt(rem);
                let den = t.add(one, root);
                let x = t.div(k, den);
                t.project(x, self.c)
            }
            Space::Euclidean => k,
        }
    }

    /// Hyperboloid coordinates `(x0, x_1..x_D)` of a ball point.
    pub fn to_lorentz(&self, t: &mut Tape, x: Var) -> Var {
        let sq = t.dot(x, x);
        let csq = t.mul(sq, self.c);
        let one = t.scalar(1.0);
        let den = t.sub(one, csq);
        let num = t.add(one, csq);
        let sc = t.sqrt(self.c);
        let den0 = t.mul(den, sc);
        let x0 = t.div(num, den0);
        let xs = t.div(x, den);
        let xs = t.scale(xs, 2.0);
        t.concat(&[x0, xs])
    }

    /// Distance between two hyperboloid points via the Minkowski chord.
    pub fn lorentz_distance(&self, t: &mut Tape, p: Var, q: Var) -> Var {
        let len = t.value(p).len();
        let diff = t.sub(p, q);
        let d0 = t.slice(diff, 0, 1);
        let ds = t.slice(diff, 1, len - 1);
        let time = t.mul(d0, d0);
        let space = t.dot(ds, ds);
        let chord = t.sub(space, time);
        let cq = t.mul(chord, self.c);
        let root = t.sqrt(cq);
        let half = t.scale(root, 0.5);
        let a = t.asinh(half);
        let sc = t.sqrt(self.c);
        let two = t.scale(a, 2.0);
        t.div(two, sc)
    }

    /// Attention-style distance: Lorentz distance on the ball, Euclidean norm
    /// when flat.
    pub fn point_distance_lorentz(&self, t: &mut Tape, x: Var, y: Var) -> Var {
        match self.space {
            Space::Poincare => {
                let (p, q) = (self.to_lorentz(t, x), self.to_lorentz(t, y));
                self.lorentz_distance(t, p, q)
            }
            Space::Euclidean => self.distance(t, x, y),
        }
    }

    /// Einstein midpoint of ball points with nonnegative weights (a vector
    /// node), computed in the Klein model. `None` means equal weights.
    pub fn einstein_midpoint(&self, t: &mut Tape, points: &[Var], weights: Option<Var>) -> Var {
        assert!(!points.is_empty(), "einstein_midpoint of no points");
        let weights = weights.unwrap_or_else(|| t.constant(Tensor::vector(vec![1.0; points.len()])));
        match self.space {
            Space::Poincare => {
                let klein: Vec<Var> = points.iter().map(|p| self.to_klein(t, *p)).collect();
                let one = t.scalar(1.0);
                let gammas: Vec<Var> = klein
                    .iter()
                    .map(|k| {
                        let sq = t.dot(*k, *k);
                        let csq = t.mul(sq, self.c);
                        let rem = t.sub(one, csq);
                        let root = t.sqrt(rem);
                        t.div(one, root)
                    })
                    .collect();
                let gamma = t.concat(&gammas);
                let wg = t.mul(weights, gamma);
                let total = t.sum(wg);
                let coef = t.div(wg, total);
                let m = t.weighted_sum(&klein, coef);
                let m = t.project(m, self.c);
                self.from_klein(t, m)
            }
            Space::Euclidean => {
                let total = t.sum(weights);
                let coef = t.div(weights, total);
                t.weighted_sum(points, coef)
            }
        }
    }

    /// Weighted Fréchet mean by damped Karcher flow, unrolled on the tape so that the
    /// result is differentiable in the points (and the curvature). Points with
    /// zero weight are dropped; weights must not all be zero.
    pub fn frechet_mean(&self, t: &mut Tape, points: &[Var], weights: &[f64]) -> (Var, FrechetInfo) {
        let active: Vec<(Var, f64)> =
            points.iter().zip(weights).filter(|(_, w)| **w > 0.0).map(|(p, w)| (*p, *w)).collect();
        assert!(!active.is_empty(), "frechet_mean needs a positive weight");
        let total: f64 = active.iter().map(|(_, w)| w).sum();
        let pts: Vec<Var> = active.iter().map(|(p, _)| *p).collect();
        let coef = t.constant(Tensor::vector(active.iter().map(|(_, w)| w / total).collect()));

        if self.space == Space::Euclidean {
            return (t.weighted_sum(&pts, coef), FrechetInfo { iterations: 0, converged: true });
        }
        if pts.len() == 1 {
            return (pts[0], FrechetInfo { iterations: 0, converged: true });
        }

        let logs: Vec<Var> = pts.iter().map(|p| self.log0(t, *p)).collect();
        let tangent = t.weighted_sum(&logs, coef);
        let fallback = self.exp0(t, tangent);
        let mut m = fallback;
        for it in 1..=FRECHET_MAX_ITERS {
            let s = self.inv_half_lambda(t, m);
            let logs: Vec<Var> = pts.iter().map(|p| self.log_map_with(t, m, s, *p)).collect();
            let step = t.weighted_sum(&logs, coef);
            let lam = 2.0 / t.item(s);
            let length = lam * norm(t.data(step));
            let sc = t.item(self.c).sqrt();
            let rhos: Vec<(f64, f64)> =
                logs.iter().zip(&active).map(|(l, (_, w))| (sc * lam * norm(t.data(*l)), w / total)).collect();
            // The step length is data-dependent but enters as a constant: it
            // does not move the fixed point.
            let step = t.scale(step, karcher_step(rhos.into_iter()));
            m = self.exp_map_with(t, m, s, step);
            if length < FRECHET_TOL {
                return (m, FrechetInfo { iterations: it, converged: true });
            }
        }
        (fallback, FrechetInfo { iterations: FRECHET_MAX_ITERS, converged: false })
    }

    /// Moves a point from the geometry `from` to this one through the tangent
    /// space at the origin.
    pub fn recurve(&self, t: &mut Tape, x: Var, from: &Geo) -> Var {
        if from.c == self.c && from.space == self.space {
            return x;
        }
        let v = from.log0(t, x);
        self.exp0(t, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_gradients;
    use crate::geometry::{self, kernel, Curvature, PoincareVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-scale..scale)).collect()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn forward_matches_plain_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for c in [1.0, 0.7, 2.5] {
            let x = rand_vec(&mut rng, 4, 0.3);
            let y = rand_vec(&mut rng, 4, 0.3);
            let mut t = Tape::new();
            let geo = Geo::constant(&mut t, Space::Poincare, c);
            let (vx, vy) = (t.constant(Tensor::vector(x.clone())), t.constant(Tensor::vector(y.clone())));
            let s = geo.add(&mut t, vx, vy);
            assert!(close(t.data(s), &kernel::mobius_add(&x, &y, c), 1e-14));
            let e = geo.exp_map(&mut t, vx, vy);
            assert!(close(t.data(e), &kernel::exp_map(&x, &y, c), 1e-12));
            let l = geo.log_map(&mut t, vx, vy);
            assert!(close(t.data(l), &kernel::log_map(&x, &y, c), 1e-12));
            let d = geo.distance(&mut t, vx, vy);
            assert!((t.item(d) - kernel::distance(&x, &y, c)).abs() < 1e-12);
            let (lx, ly) = (geo.to_lorentz(&mut t, vx), geo.to_lorentz(&mut t, vy));
            let dl = geo.lorentz_distance(&mut t, lx, ly);
            assert!((t.item(dl) - kernel::distance(&x, &y, c)).abs() < 1e-9);
            let k = geo.to_klein(&mut t, vx);
            let back = geo.from_klein(&mut t, k);
            assert!(close(t.data(back), &x, 1e-12));
        }
    }

    #[test]
    fn midpoint_and_frechet_match_plain_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let curv = Curvature::default();
        let pts: Vec<Vec<f64>> = (0..4).map(|_| rand_vec(&mut rng, 3, 0.4)).collect();
        let weights = [0.5, 1.0, 2.0, 0.25];
        let mut t = Tape::new();
        let geo = Geo::constant(&mut t, Space::Poincare, 1.0);
        let vars: Vec<Var> = pts.iter().map(|p| t.constant(Tensor::vector(p.clone()))).collect();
        let w = t.constant(Tensor::vector(weights.to_vec()));
        let m = geo.einstein_midpoint(&mut t, &vars, Some(w));
        let plain: Vec<_> = pts.iter().map(|p| geometry::to_klein(&PoincareVector::new(p.clone(), curv).unwrap())).collect();
        let expected = geometry::from_klein(&geometry::einstein_midpoint(&plain, &weights).unwrap());
        assert!(close(t.data(m), expected.coords(), 1e-12));

        let (fm, info) = geo.frechet_mean(&mut t, &vars, &weights);
        let pv: Vec<_> = pts.iter().map(|p| PoincareVector::new(p.clone(), curv).unwrap()).collect();
        let plain = geometry::frechet_mean(&pv, &weights).unwrap();
        assert!(info.converged);
        assert_eq!(info.iterations, plain.iterations);
        assert!(close(t.data(fm), plain.point.coords(), 1e-12));
    }

    #[test]
    fn euclidean_space_is_flat() {
        let mut t = Tape::new();
        let geo = Geo::constant(&mut t, Space::Euclidean, 1.0);
        let x = t.constant(Tensor::vector(vec![2.0, -1.0]));
        let y = t.constant(Tensor::vector(vec![0.5, 3.0]));
        let s = geo.add(&mut t, x, y);
        assert_eq!(t.data(s), &[2.5, 2.0]);
        let e = geo.exp0(&mut t, x);
        assert_eq!(e, x);
        let (m, _) = geo.frechet_mean(&mut t, &[x, y], &[1.0, 3.0]);
        assert!(close(t.data(m), &[0.875, 2.0], 1e-15));
        let mid = geo.einstein_midpoint(&mut t, &[x, y], None);
        assert!(close(t.data(mid), &[1.25, 1.0], 1e-15));
    }

    fn projection_loss(t: &mut Tape, out: Var, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = t.value(out).len();
        let w = t.constant(Tensor::vector(rand_vec(&mut rng, n, 1.0)));
        t.dot(out, w)
    }

    #[test]
    fn fused_ops_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = Tensor::vector(rand_vec(&mut rng, 5, 0.35));
        let y = Tensor::vector(rand_vec(&mut rng, 5, 0.35));
        let c = Tensor::scalar(1.3);
        type Build = fn(&mut Tape, &Geo, Var, Var) -> Var;
        let cases: Vec<(&str, Build)> = vec![
            ("add", |t, g, x, y| g.add(t, x, y)),
            ("exp0", |t, g, x, _| g.exp0(t, x)),
            ("log0", |t, g, x, _| g.log0(t, x)),
            ("pointwise", |t, g, x, y| g.pointwise(t, x, y)),
            ("exp_map", |t, g, x, y| g.exp_map(t, x, y)),
            ("log_map", |t, g, x, y| g.log_map(t, x, y)),
            ("distance", |t, g, x, y| g.distance(t, x, y)),
            ("lorentz", |t, g, x, y| g.point_distance_lorentz(t, x, y)),
            ("to_klein", |t, g, x, _| g.to_klein(t, x)),
            ("from_klein", |t, g, x, _| g.from_klein(t, x)),
            ("midpoint", |t, g, x, y| g.einstein_midpoint(t, &[x, y], None)),
            ("frechet", |t, g, x, y| g.frechet_mean(t, &[x, y], &[1.0, 2.0]).0),
        ];
        for (name, build) in cases {
            let report = check_gradients(
                &[x.clone(), y.clone(), c.clone()],
                |t, v| {
                    let geo = Geo::new(Space::Poincare, v[2]);
                    let out = build(t, &geo, v[0], v[1]);
                    projection_loss(t, out, 99)
                },
                1e-6,
            );
            assert!(report.max_relative_error() < 1e-4, "{name}: {:?}", report.relative_errors);
        }
    }

    #[test]
    fn projection_has_no_radial_gradient() {
        let mut t = Tape::new();
        let c = t.scalar(1.0);
        let x = t.leaf(Tensor::vector(vec![3.0, 4.0]));
        let p = t.project(x, c);
        let n = t.norm(p);
        let g = t.backward(n).unwrap();
        assert!(close(g.get(x).unwrap(), &[0.0, 0.0], 1e-15));
    }
}
