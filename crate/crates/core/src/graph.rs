//! Scale-free diagnostics: power-law degree fits and Gromov four-point
//! hyperbolicity, plus the generators and label statistics used to test them.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::grow_preferential;

/// Fewer nonzero degrees than this are rejected by [`fit_power_law`].
pub const MIN_FIT_SAMPLES: usize = 50;
/// Candidate cutoffs must leave at least this many samples in the tail.
pub const MIN_TAIL: usize = 10;
/// Graphs up to this size get exact four-point enumeration.
pub const EXACT_DELTA_MAX_NODES: usize = 60;
pub const DEFAULT_DELTA_SAMPLES: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("need at least {needed} nonzero degrees, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("degenerate distribution: all degrees equal {0}")]
    Degenerate(usize),
    #[error("graph is empty")]
    Empty,
    #[error("adjacency list names vertex {0}, which does not exist")]
    BadVertex(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub gamma: f64,
    pub xmin: usize,
    pub ks_distance: f64,
    /// Number of samples at or above `xmin`.
    pub n_tail: usize,
}

/// Discrete power-law fit. For each candidate `xmin` the exponent is
/// `1 + n / sum ln(d_i / (xmin - 0.5))` over the tail `d_i >= xmin`; the
/// cutoff with the smallest Kolmogorov–Smirnov distance between the empirical
/// tail and the fitted discrete law wins.
pub fn fit_power_law(degrees: &[usize]) -> Result<PowerLawFit, GraphError> {
    let mut xs: Vec<usize> = degrees.iter().copied().filter(|d| *d > 0).collect();
    if xs.len() < MIN_FIT_SAMPLES {
        return Err(GraphError::TooFewSamples { needed: MIN_FIT_SAMPLES, got: xs.len() });
    }
    xs.sort_unstable();
    if xs[0] == xs[xs.len() - 1] {
        return Err(GraphError::Degenerate(xs[0]));
    }
    let mut candidates: Vec<usize> = xs.clone();
    candidates.dedup();

    let mut best: Option<PowerLawFit> = None;
    for &xmin in &candidates {
        let start = xs.partition_point(|d| *d < xmin);
        let tail = &xs[start..];
        if tail.len() < MIN_TAIL || tail[0] == tail[tail.len() - 1] {
            break;
        }
        let shift = xmin as f64 - 0.5;
        let log_sum: f64 = tail.iter().map(|d| (*d as f64 / shift).ln()).sum();
        let gamma = 1.0 + tail.len() as f64 / log_sum;
        let ks = ks_distance(tail, xmin, gamma);
        if best.as_ref().is_none_or(|b| ks < b.ks_distance) {
            best = Some(PowerLawFit { gamma, xmin, ks_distance: ks, n_tail: tail.len() });
        }
    }
    best.ok_or(GraphError::Degenerate(xs[0]))
}

/// Largest gap between the empirical CDF of the sorted `tail` and the CDF of
/// the discrete power law `P(x) = x^-gamma / zeta(gamma, xmin)`.
fn ks_distance(tail: &[usize], xmin: usize, gamma: f64) -> f64 {
    let z = hurwitz_zeta(gamma, xmin as f64);
    let n = tail.len() as f64;
    let mut worst: f64 = 0.0;
    let mut i = 0;
    while i < tail.len() {
        let x = tail[i];
        let j = tail.partition_point(|d| *d <= x);
        let empirical = j as f64 / n;
        let model = 1.0 - hurwitz_zeta(gamma, (x + 1) as f64) / z;
        worst = worst.max((empirical - model).abs());
        i = j;
    }
    worst
}

/// `sum_{k >= 0} (q + k)^-s` for `s > 1`, by direct summation followed by an
/// Euler–Maclaurin tail.
pub fn hurwitz_zeta(s: f64, q: f64) -> f64 {
    const N: usize = 24;
    let mut sum = 0.0;
    for k in 0..N {
        sum += (q + k as f64).powf(-s);
    }
    let a = q + N as f64;
    let mut tail = a.powf(1.0 - s) / (s - 1.0) + 0.5 * a.powf(-s);
    // Bernoulli terms B2/2!, B4/4!, B6/6! with the rising factorials of s.
    let b = [1.0 / 12.0, -1.0 / 720.0, 1.0 / 30240.0];
    let mut rising = s;
    let mut power = a.powf(-s - 1.0);
    for (i, coef) in b.iter().enumerate() {
        tail += coef * rising * power;
        let k = 2 * i + 1;
        rising *= (s + k as f64) * (s + k as f64 + 1.0);
        power /= a * a;
    }
    sum + tail
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeltaMode {
    /// Exact up to [`EXACT_DELTA_MAX_NODES`] vertices, sampled above.
    Auto { seed: u64 },
    Exact,
    Sampled { samples: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub delta: f64,
    /// False when `delta` is the maximum over sampled quadruples, which is a
    /// lower bound on the true value.
    pub exact: bool,
    /// Vertices in the component that was measured.
    pub nodes: usize,
    /// Set when the input was disconnected and only its largest component
    /// was measured.
    pub largest_component_only: bool,
}

impl DeltaReport {
    pub fn label(&self) -> &'static str {
        if self.exact {
            "exact"
        } else {
            "sampled lower bound"
        }
    }
}

/// Gromov hyperbolicity by the four-point condition on hop distances. For
/// `x, y, z, w` with the three pair sums sorted `S1 >= S2 >= S3`, the
/// quadruple contributes `(S1 - S2) / 2`; `delta` is the maximum.
pub fn gromov_delta(adjacency: &[Vec<usize>], mode: DeltaMode) -> Result<DeltaReport, GraphError> {
    if adjacency.is_empty() {
        return Err(GraphError::Empty);
    }
    let n = adjacency.len();
    if let Some(&bad) = adjacency.iter().flatten().find(|v| **v >= n) {
        return Err(GraphError::BadVertex(bad));
    }
    let component = largest_component(adjacency);
    let largest_component_only = component.len() < n;
    let sub = induced(adjacency, &component);
    let m = sub.len();
    let dist = all_pairs_hops(&sub);

    let exact = match mode {
        DeltaMode::Exact => true,
        DeltaMode::Auto { .. } => m <= EXACT_DELTA_MAX_NODES,
        DeltaMode::Sampled { .. } => false,
    };
    let delta = if m < 4 {
        0.0
    } else if exact {
        exact_delta(&dist, m)
    } else {
        let (samples, seed) = match mode {
            DeltaMode::Sampled { samples, seed } => (samples, seed),
            DeltaMode::Auto { seed } => (DEFAULT_DELTA_SAMPLES, seed),
            DeltaMode::Exact => unreachable!(),
        };
        sampled_delta(&dist, m, samples, seed)
    };
    Ok(DeltaReport { delta, exact: exact || m < 4, nodes: m, largest_component_only })
}

fn four_point(dist: &[u32], m: usize, a: usize, b: usize, c: usize, d: usize) -> u32 {
    let at = |i: usize, j: usize| dist[i * m + j];
    let mut s = [at(a, b) + at(c, d), at(a, c) + at(b, d), at(a, d) + at(b, c)];
    s.sort_unstable();
    s[2] - s[1]
}

fn exact_delta(dist: &[u32], m: usize) -> f64 {
    let twice = (0..m)
        .into_par_iter()
        .map(|a| {
            let mut best = 0;
            for b in a + 1..m {
                for c in b + 1..m {
                    for d in c + 1..m {
                        best = best.max(four_point(dist, m, a, b, c, d));
                    }
                }
            }
            best
        })
        .max()
        .unwrap_or(0);
    f64::from(twice) / 2.0
}

fn sampled_delta(dist: &[u32], m: usize, samples: usize, seed: u64) -> f64 {
    const CHUNK: usize = 50_000;
    let chunks = samples.div_ceil(CHUNK);
    let twice = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let count = CHUNK.min(samples - k * CHUNK);
            let mut best = 0;
            for _ in 0..count {
                let q = rand::seq::index::sample(&mut rng, m, 4);
                best = best.max(four_point(dist, m, q.index(0), q.index(1), q.index(2), q.index(3)));
            }
            best
        })
        .max()
        .unwrap_or(0);
    f64::from(twice) / 2.0
}

fn bfs(adjacency: &[Vec<usize>], source: usize, out: &mut [u32]) {
    out.fill(u32::MAX);
    out[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(v) = queue.pop_front() {
        for &w in &adjacency[v] {
            if out[w] == u32::MAX {
                out[w] = out[v] + 1;
                queue.push_back(w);
            }
        }
    }
}

fn all_pairs_hops(adjacency: &[Vec<usize>]) -> Vec<u32> {
    let m = adjacency.len();
    let mut dist = vec![0u32; m * m];
    dist.par_chunks_mut(m.max(1)).enumerate().for_each(|(s, row)| bfs(adjacency, s, row));
    dist
}

/// Vertices of the largest connected component, ascending. Ties go to the
/// component containing the smallest vertex.
pub fn largest_component(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let mut label = vec![usize::MAX; n];
    let mut best: Vec<usize> = Vec::new();
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        let mut comp = vec![s];
        label[s] = s;
        let mut i = 0;
        while i < comp.len() {
            let v = comp[i];
            for &w in &adjacency[v] {
                if label[w] == usize::MAX {
                    label[w] = s;
                    comp.push(w);
                }
            }
            i += 1;
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best.sort_unstable();
    best
}

fn induced(adjacency: &[Vec<usize>], vertices: &[usize]) -> Vec<Vec<usize>> {
    let mut map = vec![usize::MAX; adjacency.len()];
    for (i, v) in vertices.iter().enumerate() {
        map[*v] = i;
    }
    vertices
        .iter()
        .map(|v| adjacency[*v].iter().filter(|w| map[**w] != usize::MAX).map(|w| map[*w]).collect())
        .collect()
}

/// Undirected Barabási–Albert graph as adjacency lists.
pub fn barabasi_albert(n: usize, m: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges = grow_preferential(n, m, &mut rng, |_, _| 1.0);
    adjacency_from_edges(n, &edges)
}

pub fn adjacency_from_edges(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a != b && !adj[a].contains(&b) {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    adj.iter_mut().for_each(|l| l.sort_unstable());
    adj
}

/// Newman's assortativity coefficient for a binary vertex label:
/// `r = (sum_i e_ii - sum_i a_i^2) / (1 - sum_i a_i^2)` over edge ends.
pub fn label_assortativity(adjacency: &[Vec<usize>], labels: &[bool]) -> f64 {
    let mut e = [[0.0f64; 2]; 2];
    let mut total = 0.0;
    for (v, ns) in adjacency.iter().enumerate() {
        for &w in ns {
            e[usize::from(labels[v])][usize::from(labels[w])] += 1.0;
            total += 1.0;
        }
    }
    if total == 0.0 {
        return 0.0;
    }
    let trace = (e[0][0] + e[1][1]) / total;
    let a: Vec<f64> = (0..2).map(|i| (e[i][0] + e[i][1]) / total).collect();
    let sq: f64 = a.iter().map(|x| x * x).sum();
    if (1.0 - sq).abs() < 1e-15 {
        return 0.0;
    }
    (trace - sq) / (1.0 - sq)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleFreeReport {
    pub nodes: usize,
    pub edges: usize,
    pub power_law: Option<PowerLawFit>,
    /// Why no power law was fitted, when `power_law` is absent.
    pub fit_error: Option<String>,
    pub delta: DeltaReport,
}

/// Degree fit plus hyperbolicity for one graph. `degrees` is supplied
/// separately so that trees can be fitted on out-degrees.
pub fn scale_free_report(adjacency: &[Vec<usize>], degrees: &[usize], seed: u64) -> Result<ScaleFreeReport, GraphError> {
    let delta = gromov_delta(adjacency, DeltaMode::Auto { seed })?;
    let (power_law, fit_error) = match fit_power_law(degrees) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(ScaleFreeReport {
        nodes: adjacency.len(),
        edges: adjacency.iter().map(Vec::len).sum::<usize>() / 2,
        power_law,
        fit_error,
        delta,
    })
}
