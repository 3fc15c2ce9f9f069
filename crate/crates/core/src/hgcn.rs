//! Hyperbolic graph convolution over the social graph.
//!
//! Each layer maps every user point through a Möbius linear map at the
//! previous curvature, replaces it with the weighted Fréchet mean of its
//! neighbourhood (weights from the normalized adjacency with self-loops), and
//! moves the result to the next curvature through a ReLU in the tangent space
//! at the origin.

use rand::Rng;

use crate::autodiff::{Bound, ParamStore, Tape, Var};
use crate::data::SocialGraph;
use crate::manifold::{Geo, Space};

/// `D^{-1/2} (A + I) D^{-1/2}` stored by rows. Each row lists `(column,
/// weight)` in ascending column order and always contains the diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    rows: Vec<Vec<(usize, f64)>>,
}

impl NormalizedAdjacency {
    pub fn from_lists(adj: &[Vec<usize>]) -> Self {
        let deg: Vec<f64> = adj
            .iter()
            .enumerate()
            .map(|(v, ns)| (ns.iter().filter(|&&u| u != v).count() + 1) as f64)
            .collect();
        let rows = adj
            .iter()
            .enumerate()
            .map(|(v, ns)| {
                let mut cols: Vec<usize> = ns.iter().copied().filter(|&u| u != v).chain([v]).collect();
                cols.sort_unstable();
                cols.dedup();
                cols.into_iter().map(|u| (u, 1.0 / (deg[v] * deg[u]).sqrt())).collect()
            })
            .collect();
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, v: usize) -> &[(usize, f64)] {
        &self.rows[v]
    }

    pub fn get(&self, v: usize, u: usize) -> f64 {
        self.rows[v].iter().find(|(c, _)| *c == u).map_or(0.0, |(_, w)| *w)
    }
}

pub fn normalize_adjacency(graph: &SocialGraph) -> NormalizedAdjacency {
    NormalizedAdjacency::from_lists(&graph.adjacency_lists())
}

/// Registers weights `{prefix}.w{i}` of shape `dims[i+1] x dims[i]` and the
/// log curvatures `{prefix}.log_c{i}` of the layer outputs, `i = 1..=layers`,
/// all starting at `c`. The input curvature belongs to the caller.
pub fn init_params<R: Rng>(store: &mut ParamStore, prefix: &str, dims: &[usize], c: f64, rng: &mut R) {
    assert!(dims.len() >= 2, "hgcn needs at least one layer");
    for i in 0..dims.len() - 1 {
        store.glorot(&format!("{prefix}.w{i}"), dims[i + 1], dims[i], rng);
    }
    for i in 1..dims.len() {
        store.fill(&format!("{prefix}.log_c{i}"), vec![], c.ln());
    }
}

#[derive(Clone, Debug)]
pub struct HgcnParams {
    pub weights: Vec<Var>,
    /// One more than `weights`: the input curvature followed by one per layer.
    pub log_c: Vec<Var>,
}

impl HgcnParams {
    /// `log_c_in` is the log curvature of the input points.
    pub fn bind(b: &Bound, prefix: &str, log_c_in: Var) -> Self {
        let mut weights = Vec::new();
        while let Some(w) = b.try_get(&format!("{prefix}.w{}", weights.len())) {
            weights.push(w);
        }
        let log_c = std::iter::once(log_c_in)
            .chain((1..=weights.len()).map(|i| b.get(&format!("{prefix}.log_c{i}"))))
            .collect();
        Self { weights, log_c }
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    /// Geometry at layer boundary `i` (0 is the input).
    pub fn geo(&self, t: &mut Tape, space: Space, i: usize) -> Geo {
        let c = t.exp(self.log_c[i]);
        Geo::new(space, c)
    }
}

/// Runs all layers. `points` must lie in the input geometry `p.geo(0)`; the
/// output lies in `p.geo(p.layers())`, which is returned alongside.
pub fn hgcn_forward(t: &mut Tape, space: Space, p: &HgcnParams, points: &[Var], adj: &NormalizedAdjacency) -> (Vec<Var>, Geo) {
    assert_eq!(points.len(), adj.len(), "one point per vertex");
    let mut geo = p.geo(t, space, 0);
    let mut h = points.to_vec();
    for (i, w) in p.weights.iter().enumerate() {
        let next = p.geo(t, space, i + 1);
        h = layer(t, &geo, &next, *w, &h, adj);
        geo = next;
    }
    (h, geo)
}

/// One convolution layer from geometry `from` to geometry `to`.
pub fn layer(t: &mut Tape, from: &Geo, to: &Geo, w: Var, h: &[Var], adj: &NormalizedAdjacency) -> Vec<Var> {
    let moved: Vec<Var> = h.iter().map(|x| from.matvec(t, w, *x)).collect();
    (0..adj.len())
        .map(|v| {
            let row = adj.row(v);
            let pts: Vec<Var> = row.iter().map(|(u, _)| moved[*u]).collect();
            let weights: Vec<f64> = row.iter().map(|(_, a)| *a).collect();
            let (m, _) = from.frechet_mean(t, &pts, &weights);
            let tangent = from.log0(t, m);
            let act = t.relu(tangent);
            to.exp0(t, act)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_gradients;
    use crate::data::Relation;
    use crate::geometry::{self, kernel, Curvature, PoincareVector};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn graph(n: usize, edges: &[(usize, usize)]) -> SocialGraph {
        let mut g = SocialGraph::new(n);
        for &(a, b) in edges {
            g.add_edge(a, b, Relation::Follow);
        }
        g
    }

    fn random_points(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n).map(|_| kernel::exp0(&(0..d).map(|_| rng.random_range(-0.8..0.8)).collect::<Vec<_>>(), 1.0)).collect()
    }

    fn run(store: &ParamStore, adj: &NormalizedAdjacency, pts: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut t = Tape::new();
        let b = store.bind(&mut t, |_| false);
        let log_c_in = t.scalar(0.0);
        let p = HgcnParams::bind(&b, "hgcn", log_c_in);
        let vars: Vec<Var> = pts.iter().map(|x| t.constant(Tensor::vector(x.clone()))).collect();
        let (out, _) = hgcn_forward(&mut t, Space::Poincare, &p, &vars, adj);
        out.iter().map(|v| t.data(*v).to_vec()).collect()
    }

    #[test]
    fn two_users_share_weight_evenly() {
        let a = normalize_adjacency(&graph(2, &[(0, 1)]));
        for (v, u) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert!((a.get(v, u) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn isolated_user_keeps_a_unit_self_loop() {
        let a = normalize_adjacency(&graph(1, &[]));
        assert_eq!(a.row(0), &[(0, 1.0)]);
    }

    #[test]
    fn star_center_to_leaf_weight() {
        let a = normalize_adjacency(&graph(4, &[(0, 1), (0, 2), (0, 3)]));
        for leaf in 1..4 {
            assert!((a.get(0, leaf) - 0.3536).abs() < 1e-4);
            assert_eq!(a.get(0, leaf), a.get(leaf, 0));
        }
        assert!((a.get(0, 0) - 0.25).abs() < 1e-15);
        assert_eq!(a.get(1, 2), 0.0);
    }

    #[test]
    fn identity_layer_fixes_an_isolated_point() {
        let mut store = ParamStore::new();
        store.insert("hgcn.w0", Tensor::identity(3));
        store.fill("hgcn.log_c1", vec![], 0.0);
        let x = kernel::exp0(&[0.3, 0.0, 0.7], 1.0);
        let out = run(&store, &normalize_adjacency(&graph(1, &[])), std::slice::from_ref(&x));
        for (a, b) in out[0].iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_neighbours_are_unchanged() {
        let mut store = ParamStore::new();
        store.insert("hgcn.w0", Tensor::identity(2));
        store.fill("hgcn.log_c1", vec![], 0.0);
        let x = kernel::exp0(&[0.4, 0.9], 1.0);
        let out = run(&store, &normalize_adjacency(&graph(2, &[(0, 1)])), &[x.clone(), x.clone()]);
        for o in &out {
            for (a, b) in o.iter().zip(&x) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    /// Composition of the layer steps with the plain geometry functions.
    fn oracle(w: &Tensor, c0: f64, c1: f64, adj: &NormalizedAdjacency, pts: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k0 = Curvature::new(-c0).unwrap();
        let moved: Vec<PoincareVector> = pts
            .iter()
            .map(|x| geometry::mobius_matvec(w, &PoincareVector::new(x.clone(), k0).unwrap()).unwrap())
            .collect();
        (0..adj.len())
            .map(|v| {
                let pts: Vec<PoincareVector> = adj.row(v).iter().map(|(u, _)| moved[*u].clone()).collect();
                let ws: Vec<f64> = adj.row(v).iter().map(|(_, a)| *a).collect();
                let m = geometry::frechet_mean(&pts, &ws).unwrap().point;
                let tangent: Vec<f64> = geometry::log0(&m).into_iter().map(|z| z.max(0.0)).collect();
                kernel::project(&kernel::exp0(&tangent, c1), c1)
            })
            .collect()
    }

    #[test]
    fn four_node_layer_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        init_params(&mut store, "hgcn", &[3, 3], 1.0, &mut rng);
        store.fill("hgcn.log_c1", vec![], 0.7f64.ln());
        let adj = normalize_adjacency(&graph(4, &[(0, 1), (1, 2), (2, 0), (2, 3)]));
        let pts = random_points(4, 3, &mut rng);
        let out = run(&store, &adj, &pts);
        let expected = oracle(store.get("hgcn.w0").unwrap(), 1.0, 0.7, &adj, &pts);
        for (o, e) in out.iter().zip(&expected) {
            for (a, b) in o.iter().zip(e) {
                assert!((a - b).abs() < 1e-9, "{o:?} vs {e:?}");
            }
        }
    }

    #[test]
    fn relabelling_users_permutes_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        init_params(&mut store, "hgcn", &[3, 4, 3], 1.0, &mut rng);
        let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3)];
        let pts = random_points(5, 3, &mut rng);
        let perm = [3, 0, 4, 1, 2];
        let permuted_edges: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let mut permuted_pts = vec![Vec::new(); 5];
        for (i, p) in pts.iter().enumerate() {
            permuted_pts[perm[i]] = p.clone();
        }
        let a = run(&store, &normalize_adjacency(&graph(5, &edges)), &pts);
        let b = run(&store, &normalize_adjacency(&graph(5, &permuted_edges)), &permuted_pts);
        for i in 0..5 {
            for (x, y) in a[i].iter().zip(&b[perm[i]]) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn outputs_stay_in_the_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        init_params(&mut store, "hgcn", &[4, 4, 4], 1.0, &mut rng);
        let g = crate::graph::barabasi_albert(40, 2, 1);
        let adj = NormalizedAdjacency::from_lists(&g);
        let pts = random_points(40, 4, &mut rng);
        for o in run(&store, &adj, &pts) {
            assert!(crate::tensor::norm(&o) < 1.0);
            assert!(o.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn gradients_for_weights_and_curvatures() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let adj = normalize_adjacency(&graph(3, &[(0, 1), (1, 2)]));
        let pts = random_points(3, 3, &mut rng);
        let w0 = Tensor::matrix(3, 3, (0..9).map(|_| rng.random_range(-0.8..0.8)).collect());
        let w1 = Tensor::matrix(2, 3, (0..6).map(|_| rng.random_range(-0.8..0.8)).collect());
        let inputs = [w0, w1, Tensor::scalar(0.0), Tensor::scalar(-0.3), Tensor::scalar(-0.1)];
        let probe = Tensor::vector(vec![0.9, -0.6]);
        let report = check_gradients(
            &inputs,
            |t, v| {
                let p = HgcnParams { weights: vec![v[0], v[1]], log_c: vec![v[2], v[3], v[4]] };
                let g0 = p.geo(t, Space::Poincare, 0);
                let xs: Vec<Var> = pts
                    .iter()
                    .map(|x| {
                        let c = t.constant(Tensor::vector(kernel::log0(x, 1.0)));
                        g0.exp0(t, c)
                    })
                    .collect();
                let (out, _) = hgcn_forward(t, Space::Poincare, &p, &xs, &adj);
                let w = t.constant(probe.clone());
                let dots: Vec<Var> = out.iter().map(|o| t.dot(*o, w)).collect();
                let all = t.concat(&dots);
                t.sum(all)
            },
            1e-6,
        );
        assert!(report.max_relative_error() < 1e-4, "{:?}", report.relative_errors);
    }

    #[test]
    fn euclidean_mode_is_a_plain_gcn() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        init_params(&mut store, "hgcn", &[2, 2], 1.0, &mut rng);
        let adj = normalize_adjacency(&graph(3, &[(0, 1), (1, 2)]));
        let pts: Vec<Vec<f64>> = (0..3).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let mut t = Tape::new();
        let b = store.bind(&mut t, |_| false);
        let log_c_in = t.scalar(0.0);
        let p = HgcnParams::bind(&b, "hgcn", log_c_in);
        let vars: Vec<Var> = pts.iter().map(|x| t.constant(Tensor::vector(x.clone()))).collect();
        let (out, _) = hgcn_forward(&mut t, Space::Euclidean, &p, &vars, &adj);
        let w = store.get("hgcn.w0").unwrap();
        for v in 0..3 {
            let total: f64 = adj.row(v).iter().map(|(_, a)| a).sum();
            let mut acc = [0.0; 2];
            for (u, a) in adj.row(v) {
                let m = w.matvec(&pts[*u]);
                acc[0] += a / total * m[0];
                acc[1] += a / total * m[1];
            }
            for (x, y) in t.data(out[v]).iter().zip(acc) {
                assert!((x - y.max(0.0)).abs() < 1e-12);
            }
        }
    }
}
