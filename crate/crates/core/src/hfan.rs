//! Hyperbolic Fourier attention over a user's history.
//!
//! Pipeline for one user with history rows `e_1..e_S` (oldest first):
//!
//! 1. `log0(exp0(e_s))` row by row, then the real 2-D DFT of the `S x d`
//!    block scaled by `1/sqrt(S d)` so that the transform is an isometry,
//!    then `exp0` row by row;
//! 2. a hyperbolic GRU over the rows from oldest to newest, starting at the
//!    origin; every per-step state is kept;
//! 3. a Möbius linear projection of each state;
//! 4. attention weights `alpha_s = exp(-beta d_L(c, h'_s) - offset)` with the
//!    distance taken on the hyperboloid, `beta = softplus(rho)`;
//! 5. the Einstein midpoint of the projected states in the Klein model,
//!    mapped back to the ball.

use rand::Rng;

use crate::autodiff::{Bound, ParamStore, Tape, Var};
use crate::manifold::Geo;
use crate::tensor::Tensor;

/// Parameter names, relative to a prefix.
const NAMES: [&str; 13] = ["wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh", "proj", "centroid", "rho", "offset"];

/// Registers HFAN parameters for inputs of dimension `d` and states of
/// dimension `l`.
pub fn init_params<R: Rng>(store: &mut ParamStore, prefix: &str, d: usize, l: usize, rng: &mut R) {
    let name = |n: &str| format!("{prefix}.{n}");
    for g in ["z", "r"] {
        store.glorot(&name(&format!("w{g}")), l, d, rng);
        store.glorot(&name(&format!("u{g}")), l, l, rng);
        store.zeros(&name(&format!("b{g}")), vec![l]);
    }
    store.glorot(&name("wh"), l, l, rng);
    store.glorot(&name("uh"), l, d, rng);
    store.zeros(&name("bh"), vec![l]);
    store.glorot(&name("proj"), l, l, rng);
    store.normal(&name("centroid"), vec![l], 0.1, rng);
    // softplus(rho) = 1
    store.fill(&name("rho"), vec![], (std::f64::consts::E - 1.0).ln());
    store.zeros(&name("offset"), vec![]);
}

/// HFAN parameters bound on a tape. Biases and the centroid are tangent
/// vectors at the origin and enter through `exp0`.
#[derive(Clone, Copy, Debug)]
pub struct HfanParams {
    /// Update gate: input side `wz`, state side `uz`, bias `bz`.
    pub wz: Var,
    pub uz: Var,
    pub bz: Var,
    /// Reset gate.
    pub wr: Var,
    pub ur: Var,
    pub br: Var,
    /// Candidate: state side `wh`, input side `uh`, bias `bh`.
    pub wh: Var,
    pub uh: Var,
    pub bh: Var,
    pub proj: Var,
    pub centroid: Var,
    /// Inverse temperature before softplus.
    pub rho: Var,
    pub offset: Var,
}

impl HfanParams {
    pub fn bind(b: &Bound, prefix: &str) -> Self {
        let v = |n: &str| b.get(&format!("{prefix}.{n}"));
        Self {
            wz: v("wz"),
            uz: v("uz"),
            bz: v("bz"),
            wr: v("wr"),
            ur: v("ur"),
            br: v("br"),
            wh: v("wh"),
            uh: v("uh"),
            bh: v("bh"),
            proj: v("proj"),
            centroid: v("centroid"),
            rho: v("rho"),
            offset: v("offset"),
        }
    }

    pub fn names(prefix: &str) -> Vec<String> {
        NAMES.iter().map(|n| format!("{prefix}.{n}")).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HfanOptions {
    pub use_dft: bool,
    /// Feed the Fourier points straight to the projection. Requires equal
    /// input and state dimensions.
    pub bypass_gru: bool,
}

impl Default for HfanOptions {
    fn default() -> Self {
        Self { use_dft: true, bypass_gru: false }
    }
}

/// One hyperbolic GRU step.
///
/// `z = sigma(log0(Wz x ⊕ Uz h ⊕ bz))`, `r` likewise,
/// `h~ = Wh (r ⊙ h) ⊕ Uh x ⊕ bh`, `h_t = h ⊕ (z ⊙ (-h ⊕ h~))`
/// where `r ⊙ h = exp0(r * log0 h)`.
pub fn gru_step(t: &mut Tape, geo: &Geo, p: &HfanParams, h_prev: Var, x: Var) -> Var {
    let lx = geo.log0(t, x);
    let lh = geo.log0(t, h_prev);
    let gate = |t: &mut Tape, w: Var, u: Var, b: Var| {
        let a = geo.matvec_tangent(t, w, lx);
        let c = geo.matvec_tangent(t, u, lh);
        let bias = geo.bias(t, b);
        let s = geo.add(t, a, c);
        let s = geo.add(t, s, bias);
        let l = geo.log0(t, s);
        t.sigmoid(l)
    };
    let z = gate(t, p.wz, p.uz, p.bz);
    let r = gate(t, p.wr, p.ur, p.br);

    let rh = t.mul(r, lh);
    let a = geo.matvec_tangent(t, p.wh, rh);
    let c = geo.matvec_tangent(t, p.uh, lx);
    let bias = geo.bias(t, p.bh);
    let cand = geo.add(t, a, c);
    let cand = geo.add(t, cand, bias);

    let nh = geo.neg(t, h_prev);
    let delta = geo.add(t, nh, cand);
    let ld = geo.log0(t, delta);
    let step = t.mul(z, ld);
    let step = geo.exp0(t, step);
    geo.add(t, h_prev, step)
}

/// Fourier stage: the history as ball points after frequency mixing.
pub fn fourier_points(t: &mut Tape, geo: &Geo, history: Var, use_dft: bool) -> Vec<Var> {
    let shape = t.value(history).shape().to_vec();
    let (s, d) = (shape[0], shape[1]);
    let tangents: Vec<Var> = (0..s)
        .map(|i| {
            let e = t.row(history, i);
            let x = geo.exp0(t, e);
            geo.log0(t, x)
        })
        .collect();
    let rows = if use_dft {
        let m = t.stack(&tangents);
        let f = t.dft2_real(m);
        let f = t.scale(f, 1.0 / ((s * d) as f64).sqrt());
        (0..s).map(|i| t.row(f, i)).collect()
    } else {
        tangents
    };
    rows.into_iter().map(|v| geo.exp0(t, v)).collect()
}

/// Attention weights over projected states and the resulting midpoint.
pub fn attention(t: &mut Tape, geo: &Geo, states: &[Var], centroid: Var, beta: Var, offset: Var) -> (Var, Var) {
    let c = geo.bias(t, centroid);
    let scores: Vec<Var> = states
        .iter()
        .map(|h| {
            let d = geo.point_distance_lorentz(t, c, *h);
            let bd = t.mul(beta, d);
            let s = t.add(bd, offset);
            let s = t.neg(s);
            t.exp(s)
        })
        .collect();
    let alpha = t.concat(&scores);
    let m = geo.einstein_midpoint(t, states, Some(alpha));
    (m, alpha)
}

/// User vector from a `S x d` history matrix. Returns the point and the
/// attention weights.
pub fn hfan_forward(t: &mut Tape, geo: &Geo, p: &HfanParams, history: Var, opts: HfanOptions) -> (Var, Var) {
    let xs = fourier_points(t, geo, history, opts.use_dft);
    let states: Vec<Var> = if opts.bypass_gru {
        xs
    } else {
        let l = t.value(p.uz).rows();
        let mut h = t.constant(Tensor::zeros(vec![l]));
        xs.iter()
            .map(|x| {
                h = gru_step(t, geo, p, h, *x);
                h
            })
            .collect()
    };
    let projected: Vec<Var> = states.iter().map(|h| geo.matvec(t, p.proj, *h)).collect();
    let beta = t.softplus(p.rho);
    attention(t, geo, &projected, p.centroid, beta, p.offset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_gradients;
    use crate::geometry::{self, kernel, Curvature, PoincareVector};
    use crate::manifold::Space;
    use crate::spectral::{dft2_real, EmbeddingSequence};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn setup(d: usize, l: usize, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        init_params(&mut store, "hfan", d, l, &mut rng);
        // Nonzero biases so that the bias path is exercised.
        for b in ["bz", "br", "bh"] {
            store.normal(&format!("hfan.{b}"), vec![l], 0.2, &mut rng);
        }
        store.fill("hfan.offset", vec![], 0.3);
        store
    }

    fn history(s: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 0.6).unwrap();
        Tensor::matrix(s, d, (0..s * d).map(|_| n.sample(&mut rng)).collect())
    }

    fn run(store: &ParamStore, hist: &Tensor, opts: HfanOptions) -> (Vec<f64>, Vec<f64>) {
        let mut t = Tape::new();
        let b = store.bind(&mut t, |_| false);
        let p = HfanParams::bind(&b, "hfan");
        let geo = Geo::constant(&mut t, Space::Poincare, 1.0);
        let h = t.constant(hist.clone());
        let (u, a) = hfan_forward(&mut t, &geo, &p, h, opts);
        (t.data(u).to_vec(), t.data(a).to_vec())
    }

    fn sigmoid(v: &[f64]) -> Vec<f64> {
        v.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect()
    }

    fn mat(store: &ParamStore, n: &str) -> Tensor {
        store.get(&format!("hfan.{n}")).unwrap().clone()
    }

    fn pv(x: Vec<f64>) -> PoincareVector {
        PoincareVector::new(x, Curvature::default()).unwrap()
    }

    /// Straight-line evaluation with the plain geometry functions.
    fn reference(store: &ParamStore, hist: &Tensor) -> Vec<f64> {
        let curv = Curvature::default();
        let (s, d) = (hist.rows(), hist.cols());
        let rows: Vec<Vec<f64>> = (0..s).map(|i| geometry::log0(&geometry::exp0(hist.row(i), curv).unwrap())).collect();
        let f = dft2_real(&EmbeddingSequence::new(rows).unwrap());
        let scale = 1.0 / ((s * d) as f64).sqrt();
        let xs: Vec<PoincareVector> = f
            .rows()
            .map(|r| geometry::exp0(&r.iter().map(|v| v * scale).collect::<Vec<_>>(), curv).unwrap())
            .collect();
        let bias = |n: &str| geometry::exp0(mat(store, n).data(), curv).unwrap();
        let mm = |n: &str, x: &PoincareVector| geometry::mobius_matvec(&mat(store, n), x).unwrap();
        let add = |a: &PoincareVector, b: &PoincareVector| geometry::mobius_add(a, b).unwrap();
        let l = mat(store, "uz").rows();
        let mut h = PoincareVector::origin(l, curv);
        let mut states = Vec::new();
        for x in &xs {
            let z = sigmoid(&geometry::log0(&add(&add(&mm("wz", x), &mm("uz", &h)), &bias("bz"))));
            let r = sigmoid(&geometry::log0(&add(&add(&mm("wr", x), &mm("ur", &h)), &bias("br"))));
            let lh = geometry::log0(&h);
            let rh = geometry::exp0(&r.iter().zip(&lh).map(|(a, b)| a * b).collect::<Vec<_>>(), curv).unwrap();
            let cand = add(&add(&mm("wh", &rh), &mm("uh", x)), &bias("bh"));
            let ld = geometry::log0(&add(&h.neg(), &cand));
            let step = geometry::exp0(&z.iter().zip(&ld).map(|(a, b)| a * b).collect::<Vec<_>>(), curv).unwrap();
            h = add(&h, &step);
            states.push(mm("proj", &h));
        }
        let centroid = geometry::to_lorentz(&bias("centroid"));
        let beta = (1.0 + mat(store, "rho").item().exp()).ln();
        let offset = mat(store, "offset").item();
        let weights: Vec<f64> = states
            .iter()
            .map(|h| (-beta * geometry::lorentz_distance(&centroid, &geometry::to_lorentz(h)).unwrap() - offset).exp())
            .collect();
        let klein: Vec<_> = states.iter().map(geometry::to_klein).collect();
        geometry::from_klein(&geometry::einstein_midpoint(&klein, &weights).unwrap()).into_coords()
    }

    #[test]
    fn matches_straight_line_reference() {
        let store = setup(5, 4, 1);
        let hist = history(3, 5, 2);
        let (u, _) = run(&store, &hist, HfanOptions::default());
        let expected = reference(&store, &hist);
        for (a, b) in u.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-10, "{u:?} vs {expected:?}");
        }
    }

    #[test]
    fn single_item_history_returns_its_state() {
        let store = setup(4, 4, 3);
        let hist = history(1, 4, 4);
        let mut t = Tape::new();
        let b = store.bind(&mut t, |_| false);
        let p = HfanParams::bind(&b, "hfan");
        let geo = Geo::constant(&mut t, Space::Poincare, 1.0);
        let h = t.constant(hist);
        let xs = fourier_points(&mut t, &geo, h, true);
        let origin = t.constant(Tensor::zeros(vec![4]));
        let state = gru_step(&mut t, &geo, &p, origin, xs[0]);
        let projected = geo.matvec(&mut t, p.proj, state);
        for rho in [-3.0, 0.0, 4.0] {
            let beta = t.scalar(rho);
            let (m, _) = attention(&mut t, &geo, &[projected], p.centroid, beta, p.offset);
            for (a, b) in t.data(m).iter().zip(t.data(projected)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duplicating_every_item_leaves_the_midpoint_unchanged() {
        let store = setup(4, 4, 5);
        let hist = history(3, 4, 6);
        let doubled: Vec<f64> = (0..3).flat_map(|i| [hist.row(i), hist.row(i)].concat()).collect();
        let doubled = Tensor::matrix(6, 4, doubled);
        let opts = HfanOptions { use_dft: false, bypass_gru: true };
        let (a, _) = run(&store, &hist, opts);
        let (b, _) = run(&store, &doubled, opts);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_keep_the_origin_fixed() {
        let mut store = setup(3, 3, 7);
        for n in ["wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh"] {
            let shape = store.get(&format!("hfan.{n}")).unwrap().shape().to_vec();
            store.zeros(&format!("hfan.{n}"), shape);
        }
        let mut t = Tape::new();
        let b = store.bind(&mut t, |_| false);
        let p = HfanParams::bind(&b, "hfan");
        let geo = Geo::constant(&mut t, Space::Poincare, 1.0);
        let origin = t.constant(Tensor::zeros(vec![3]));
        let x = t.constant(Tensor::vector(vec![0.3, -0.2, 0.1]));
        let h = gru_step(&mut t, &geo, &p, origin, x);
        assert!(t.data(h).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn near_origin_step_matches_euclidean_gru() {
        let scale = 1e-4;
        let mut store = setup(4, 4, 8);
        for b in ["bz", "br", "bh"] {
            let v: Vec<f64> = store.get(&format!("hfan.{b}")).unwrap().data().iter().map(|x| x * scale).collect();
            store.insert(format!("hfan.{b}"), Tensor::vector(v));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..4).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..4).map(|_| scale * rng.random_range(-1.0..1.0)).collect();

        let mut t = Tape::new();
        let b = store.bind(&mut t, |_| false);
        let p = HfanParams::bind(&b, "hfan");
        let geo = Geo::constant(&mut t, Space::Poincare, 1.0);
        let (xv, hv) = (t.constant(Tensor::vector(x.clone())), t.constant(Tensor::vector(h.clone())));
        let out = gru_step(&mut t, &geo, &p, hv, xv);
        let hyp = t.data(out).to_vec();

        let mv = |n: &str, v: &[f64]| mat(&store, n).matvec(v);
        let lin = |w: &str, u: &str, bn: &str, a: &[f64], c: &[f64]| -> Vec<f64> {
            let (p, q, r) = (mv(w, a), mv(u, c), mat(&store, bn).into_data());
            (0..4).map(|i| p[i] + q[i] + r[i]).collect()
        };
        let z = sigmoid(&lin("wz", "uz", "bz", &x, &h));
        let r = sigmoid(&lin("wr", "ur", "br", &x, &h));
        let rh: Vec<f64> = r.iter().zip(&h).map(|(a, b)| a * b).collect();
        let cand = lin("wh", "uh", "bh", &rh, &x);
        let euc: Vec<f64> = (0..4).map(|i| h[i] + z[i] * (cand[i] - h[i])).collect();
        let diff: Vec<f64> = hyp.iter().zip(&euc).map(|(a, b)| a - b).collect();
        let rel = crate::tensor::norm(&diff) / crate::tensor::norm(&euc);
        assert!(rel < 1e-3, "relative error {rel}");
    }

    #[test]
    fn output_stays_in_the_ball_and_weights_are_positive() {
        let store = setup(6, 5, 10);
        for seed in 0..10 {
            let hist = history(2 + seed as usize, 6, 100 + seed);
            let (u, alpha) = run(&store, &hist, HfanOptions::default());
            assert!(crate::tensor::norm(&u) < 1.0);
            assert!(alpha.iter().all(|a| a.is_finite() && *a > 0.0));
        }
    }

    #[test]
    fn zero_beta_gives_lorentz_factor_weighting() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec<f64>> = (0..4).map(|_| kernel::project(&(0..3).map(|_| rng.random_range(-0.6..0.6)).collect::<Vec<_>>(), 1.0)).collect();
        let mut t = Tape::new();
        let geo = Geo::constant(&mut t, Space::Poincare, 1.0);
        let vars: Vec<Var> = pts.iter().map(|p| t.constant(Tensor::vector(p.clone()))).collect();
        let centroid = t.constant(Tensor::vector(vec![0.2, 0.1, -0.3]));
        let beta = t.scalar(0.0);
        let offset = t.scalar(0.7);
        let (m, alpha) = attention(&mut t, &geo, &vars, centroid, beta, offset);
        let a = t.data(alpha);
        assert!(a.iter().all(|v| (v - a[0]).abs() < 1e-15));
        let klein: Vec<_> = pts.iter().map(|p| geometry::to_klein(&pv(p.clone()))).collect();
        let expected = geometry::from_klein(&geometry::einstein_midpoint(&klein, &[1.0; 4]).unwrap());
        for (x, y) in t.data(m).iter().zip(expected.coords()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_ignores_order_but_the_gru_does_not() {
        let store = setup(4, 4, 12);
        let hist = history(4, 4, 13);
        let reversed = Tensor::matrix(4, 4, (0..4).rev().flat_map(|i| hist.row(i).to_vec()).collect());

        let mut t = Tape::new();
        let geo = Geo::constant(&mut t, Space::Poincare, 1.0);
        let b = store.bind(&mut t, |_| false);
        let p = HfanParams::bind(&b, "hfan");
        let pts: Vec<Var> = (0..4).map(|i| {
            let v = t.constant(Tensor::vector(hist.row(i).iter().map(|x| x * 0.3).collect()));
            geo.exp0(&mut t, v)
        }).collect();
        let beta = t.softplus(p.rho);
        let (m1, _) = attention(&mut t, &geo, &pts, p.centroid, beta, p.offset);
        let rev: Vec<Var> = pts.iter().rev().copied().collect();
        let (m2, _) = attention(&mut t, &geo, &rev, p.centroid, beta, p.offset);
        for (x, y) in t.data(m1).iter().zip(t.data(m2)) {
            assert!((x - y).abs() < 1e-14);
        }

        let (a, _) = run(&store, &hist, HfanOptions::default());
        let (b, _) = run(&store, &reversed, HfanOptions::default());
        let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-6);
    }

    #[test]
    fn gru_step_gradients() {
        let store = setup(3, 4, 14);
        let names = ["wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh"];
        let mut inputs: Vec<Tensor> = names.iter().map(|n| mat(&store, n)).collect();
        inputs.push(Tensor::vector(vec![0.2, -0.4, 0.1]));
        inputs.push(Tensor::vector(vec![0.1, 0.3, -0.2, 0.05]));
        inputs.push(Tensor::scalar(1.2));
        let weights = Tensor::vector(vec![0.7, -1.1, 0.4, 0.9]);
        let report = check_gradients(
            &inputs,
            |t, v| {
                let p = HfanParams {
                    wz: v[0], uz: v[1], bz: v[2], wr: v[3], ur: v[4], br: v[5], wh: v[6], uh: v[7], bh: v[8],
                    proj: v[0], centroid: v[2], rho: v[11], offset: v[11],
                };
                let geo = Geo::new(Space::Poincare, v[11]);
                let x = geo.exp0(t, v[9]);
                let h = geo.exp0(t, v[10]);
                let out = gru_step(t, &geo, &p, h, x);
                let w = t.constant(weights.clone());
                t.dot(out, w)
            },
            1e-6,
        );
        assert!(report.max_relative_error() < 1e-4, "{:?}", report.relative_errors);
    }

    #[test]
    fn full_forward_gradients() {
        let store = setup(3, 3, 15);
        let names = ["wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh", "proj", "centroid", "rho"];
        let mut inputs: Vec<Tensor> = names.iter().map(|n| mat(&store, n)).collect();
        inputs.push(history(3, 3, 16));
        let weights = Tensor::vector(vec![0.5, -0.8, 1.3]);
        let report = check_gradients(
            &inputs,
            |t, v| {
                let offset = t.scalar(0.3);
                let p = HfanParams {
                    wz: v[0], uz: v[1], bz: v[2], wr: v[3], ur: v[4], br: v[5], wh: v[6], uh: v[7], bh: v[8],
                    proj: v[9], centroid: v[10], rho: v[11], offset,
                };
                let geo = Geo::constant(t, Space::Poincare, 1.0);
                let (u, _) = hfan_forward(t, &geo, &p, v[12], HfanOptions::default());
                let w = t.constant(weights.clone());
                t.dot(u, w)
            },
            1e-6,
        );
        assert!(report.max_relative_error() < 1e-4, "{:?}", report.relative_errors);
    }

    #[test]
    fn dft_gradient_is_exact() {
        let report = check_gradients(
            &[history(4, 3, 17)],
            |t, v| {
                let f = t.dft2_real(v[0]);
                let w = t.constant(history(4, 3, 18));
                let p = t.mul(f, w);
                t.sum(p)
            },
            1e-5,
        );
        assert!(report.max_relative_error() < 1e-8);
    }
}
