//! Synthetic corpora with planted user and conversation context.
//!
//! Users belong to latent communities and a subset of them are hateful; the
//! social graph grows by preferential attachment biased towards same-flag
//! neighbours. Histories carry the user's leaning. Utterance embeddings are
//! `topic + look + noise`, where the look is either the hate or non-hate
//! direction. Labels follow the author and the parent:
//!
//! * a non-hateful author always writes non-hate;
//! * a hateful author replying to hate writes hate, and with probability
//!   `context_sensitivity` it is implicit (non-hate look);
//! * otherwise a hateful author writes explicit hate with probability
//!   `explicit_rate`, non-hate otherwise.
//!
//! Implicit hate is therefore invisible in its own embedding but determined by
//! the author's history and the parent's label.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{ConversationTree, Corpus, CorpusError, Relation, Split, UserRecord, Utterance};
use crate::spectral::EmbeddingSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_trees: usize,
    pub d: usize,
    pub seed: u64,
    pub hateful_fraction: f64,
    pub homophily: f64,
    pub context_sensitivity: f64,
    pub explicit_rate: f64,
    pub communities: usize,
    pub mean_tree_size: f64,
    pub min_history: usize,
    pub max_history: usize,
    /// Distance of each look from the origin along the hate direction.
    pub look_scale: f64,
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 300,
            n_trees: 500,
            d: 16,
            seed: 0,
            hateful_fraction: 0.72,
            homophily: 0.5,
            context_sensitivity: 0.8,
            explicit_rate: 0.6,
            communities: 4,
            mean_tree_size: 6.0,
            min_history: 3,
            max_history: 8,
            look_scale: 1.0,
            noise: 0.3,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InvalidConfig(m.into()));
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.n_users < 3 {
            return bad("n_users must be at least 3");
        }
        if self.n_trees == 0 || self.d == 0 || self.communities == 0 {
            return bad("n_trees, d and communities must be positive");
        }
        if !(unit(self.hateful_fraction) && unit(self.homophily) && unit(self.context_sensitivity) && unit(self.explicit_rate)) {
            return bad("hateful_fraction, homophily, context_sensitivity and explicit_rate must lie in [0, 1]");
        }
        if !(self.mean_tree_size >= 1.0) {
            return bad("mean_tree_size must be at least 1");
        }
        if self.min_history == 0 || self.max_history < self.min_history {
            return bad("history length range is empty");
        }
        if !(self.noise >= 0.0 && self.look_scale >= 0.0) {
            return bad("noise and look_scale must be nonnegative");
        }
        Ok(())
    }
}

/// Latent variables behind a generated corpus, indexed like `Corpus::users`.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthTruth {
    pub hateful: Vec<bool>,
    pub community: Vec<usize>,
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<Corpus, CorpusError> {
    generate_synthetic_with_truth(config).map(|(c, _)| c)
}

pub fn generate_synthetic_with_truth(config: &SynthConfig) -> Result<(Corpus, SynthTruth), CorpusError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.d;
    let noise = Normal::new(0.0, config.noise).expect("validated");

    let hate_dir = unit_vector(&mut rng, d);
    let look = |hate: bool| -> Vec<f64> {
        let s = if hate { config.look_scale } else { -config.look_scale };
        hate_dir.iter().map(|v| s * v).collect()
    };
    let community_means: Vec<Vec<f64>> =
        (0..config.communities).map(|_| orthogonal_gaussian(&mut rng, &hate_dir, 0.6)).collect();
    let n_topics = 8;
    let topics: Vec<Vec<f64>> = (0..n_topics).map(|_| orthogonal_gaussian(&mut rng, &hate_dir, 0.5)).collect();

    // Communities in the first half lean hateful, the rest lean benign; at
    // homophily 0 every user is hateful with the same probability.
    let f = config.hateful_fraction;
    let spread = f.min(1.0 - f) * config.homophily;
    let half = config.communities.div_ceil(2);
    let mut community = Vec::with_capacity(config.n_users);
    let mut hateful = Vec::with_capacity(config.n_users);
    for _ in 0..config.n_users {
        let k = rng.random_range(0..config.communities);
        let p = if config.communities == 1 {
            f
        } else if k < half {
            f + spread * (config.communities - half) as f64 / half as f64
        } else {
            f - spread
        };
        community.push(k);
        hateful.push(rng.random_bool(p.clamp(0.0, 1.0)));
    }

    let h = config.homophily;
    let edges = grow_preferential(config.n_users, 2, &mut rng, |a, b| if hateful[a] == hateful[b] { 1.0 } else { 1.0 - h });
    let relations = [Relation::Retweet, Relation::Mention, Relation::Reply, Relation::Follow];

    let uw = digits(config.n_users);
    let user_id = |i: usize| format!("u{i:0uw$}");
    let mut users = Vec::with_capacity(config.n_users);
    for i in 0..config.n_users {
        let s = rng.random_range(config.min_history..=config.max_history);
        let lean = if hateful[i] { 0.75 } else { 0.1 };
        let rows: Vec<Vec<f64>> = (0..s)
            .map(|_| {
                let l = look(rng.random_bool(lean));
                (0..d).map(|j| community_means[community[i]][j] + l[j] + noise.sample(&mut rng)).collect()
            })
            .collect();
        let history = EmbeddingSequence::new(rows).expect("nonempty uniform rows");
        users.push(UserRecord { id: user_id(i), history, empty_history: false });
    }
    let edges: Vec<(String, String, Relation)> = edges
        .into_iter()
        .map(|(a, b)| (user_id(a), user_id(b), relations[rng.random_range(0..relations.len())]))
        .collect();

    let tw = digits(config.n_trees);
    let size_dist = Poisson::new((config.mean_tree_size - 2.0).max(1e-9)).expect("positive rate");
    let mut trees = Vec::with_capacity(config.n_trees);
    for t in 0..config.n_trees {
        let tree_id = format!("t{t:0tw$}");
        let size = if config.mean_tree_size < 2.0 {
            1 + usize::from(rng.random_bool(config.mean_tree_size - 1.0))
        } else {
            2 + size_dist.sample(&mut rng) as usize
        };
        let parents = grow_pa_tree(size, &mut rng);
        let topic = &topics[rng.random_range(0..n_topics)];
        let split = match rng.random::<f64>() {
            x if x < 0.7 => Split::Train,
            x if x < 0.85 => Split::Val,
            _ => Split::Test,
        };
        let nw = digits(size);
        let node_id = |i: usize| format!("{tree_id}-n{i:0nw$}");
        let mut hate = vec![false; size];
        let mut nodes = Vec::with_capacity(size);
        // Parents always precede children in `grow_pa_tree` output.
        for i in 0..size {
            let author = rng.random_range(0..config.n_users);
            let parent_hate = parents[i].is_some_and(|p| hate[p]);
            let (label_hate, implicit) = if !hateful[author] {
                (false, None)
            } else if parent_hate {
                (true, Some(rng.random_bool(config.context_sensitivity)))
            } else if rng.random_bool(config.explicit_rate) {
                (true, Some(false))
            } else {
                (false, None)
            };
            hate[i] = label_hate;
            let l = look(label_hate && implicit == Some(false));
            let embedding = (0..d).map(|j| topic[j] + l[j] + noise.sample(&mut rng)).collect();
            nodes.push(Utterance {
                id: node_id(i),
                tree_id: tree_id.clone(),
                parent_id: parents[i].map(node_id),
                author_id: user_id(author),
                embedding,
                label_hate,
                label_implicit: implicit,
                split,
            });
        }
        trees.push(ConversationTree::new(tree_id, nodes)?);
    }

    let corpus = Corpus::new(trees, users, edges)?;
    Ok((corpus, SynthTruth { hateful, community }))
}

/// Parent of each node of a tree grown by preferential attachment: node `i`
/// attaches to an earlier node with probability proportional to its
/// out-degree plus one. Node 0 is the root.
pub fn grow_pa_tree<R: Rng>(n: usize, rng: &mut R) -> Vec<Option<usize>> {
    let mut parents = Vec::with_capacity(n);
    // One ticket per node plus one per child it already has.
    let mut tickets: Vec<usize> = Vec::with_capacity(2 * n);
    for i in 0..n {
        if i == 0 {
            parents.push(None);
        } else {
            let p = tickets[rng.random_range(0..tickets.len())];
            parents.push(Some(p));
            tickets.push(p);
        }
        tickets.push(i);
    }
    parents
}

/// Barabási–Albert growth with `m` links per new vertex. A new vertex `v`
/// picks distinct targets `u` with probability proportional to
/// `deg(u) * affinity(u, v)`, falling back to plain degree when every
/// affinity-weighted candidate has weight zero. Starts from a clique on
/// `m + 1` vertices.
pub(crate) fn grow_preferential<R: Rng>(
    n: usize,
    m: usize,
    rng: &mut R,
    affinity: impl Fn(usize, usize) -> f64,
) -> Vec<(usize, usize)> {
    let seed = (m + 1).min(n);
    let mut degree = vec![0usize; n];
    let mut edges = Vec::new();
    for a in 0..seed {
        for b in a + 1..seed {
            edges.push((b, a));
            degree[a] += 1;
            degree[b] += 1;
        }
    }
    let mut weights = vec![0.0; n];
    for v in seed..n {
        let mut chosen = Vec::with_capacity(m);
        for _ in 0..m.min(v) {
            let mut total = 0.0;
            for u in 0..v {
                weights[u] = if chosen.contains(&u) { 0.0 } else { degree[u] as f64 * affinity(u, v) };
                total += weights[u];
            }
            if total <= 0.0 {
                for u in 0..v {
                    weights[u] = if chosen.contains(&u) { 0.0 } else { degree[u] as f64 };
                    total += weights[u];
                }
            }
            let mut x = rng.random::<f64>() * total;
            let mut pick = v - 1;
            for (u, w) in weights[..v].iter().enumerate() {
                if *w > 0.0 {
                    pick = u;
                    if x < *w {
                        break;
                    }
                    x -= w;
                }
            }
            chosen.push(pick);
        }
        for &u in &chosen {
            edges.push((v, u));
            degree[u] += 1;
            degree[v] += 1;
        }
    }
    edges
}

fn digits(n: usize) -> usize {
    n.saturating_sub(1).max(1).to_string().len()
}

fn unit_vector<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v: Vec<f64> = (0..d).map(|_| normal.sample(rng)).collect();
        let n = crate::tensor::norm(&v);
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Gaussian vector with per-coordinate deviation `std`, with its component
/// along the unit vector `axis` removed.
fn orthogonal_gaussian<R: Rng>(rng: &mut R, axis: &[f64], std: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, std).expect("valid deviation");
    let v: Vec<f64> = axis.iter().map(|_| normal.sample(rng)).collect();
    let along = crate::tensor::dot(&v, axis);
    v.iter().zip(axis).map(|(x, a)| x - along * a).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{save_corpus, CorpusPaths};
    use crate::graph::label_assortativity;

    fn small() -> SynthConfig {
        SynthConfig { n_users: 80, n_trees: 60, seed: 3, ..SynthConfig::default() }
    }

    #[test]
    fn same_seed_gives_identical_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for dir in [&a, &b] {
            save_corpus(&generate_synthetic(&small()).unwrap(), &CorpusPaths::in_dir(dir.path())).unwrap();
        }
        for name in ["utterances.jsonl", "embeddings.jsonl", "user_histories.jsonl", "social_edges.jsonl"] {
            let x = std::fs::read(a.path().join(name)).unwrap();
            let y = std::fs::read(b.path().join(name)).unwrap();
            assert_eq!(x, y, "{name}");
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&SynthConfig { seed: 4, ..small() }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn rejects_invalid_settings() {
        for cfg in [
            SynthConfig { homophily: 1.5, ..small() },
            SynthConfig { n_users: 2, ..small() },
            SynthConfig { n_trees: 0, ..small() },
            SynthConfig { min_history: 5, max_history: 2, ..small() },
        ] {
            assert!(matches!(generate_synthetic(&cfg), Err(CorpusError::InvalidConfig(_))));
        }
    }

    #[test]
    fn labels_follow_the_planted_rules() {
        let (corpus, truth) = generate_synthetic_with_truth(&small()).unwrap();
        for (tree, i) in corpus.utterances() {
            let n = tree.node(i);
            let author = tree.author(i);
            if !truth.hateful[author] {
                assert!(!n.label_hate);
            }
            if n.is_implicit_hate() {
                let p = tree.parent(i).expect("implicit hate always replies");
                assert!(tree.node(p).label_hate);
            }
            assert_eq!(n.split, tree.node(tree.root()).split);
        }
    }

    #[test]
    fn zero_context_sensitivity_has_no_implicit_hate() {
        let corpus = generate_synthetic(&SynthConfig { context_sensitivity: 0.0, homophily: 0.0, ..small() }).unwrap();
        assert!(corpus.utterances().all(|(t, i)| !t.node(i).is_implicit_hate()));
    }

    #[test]
    fn default_label_mix_is_close_to_target_ratios() {
        let corpus = generate_synthetic(&SynthConfig::default()).unwrap();
        let stats = corpus.stats();
        let train = &stats.splits["train"];
        let hate = train.hate as f64 / train.utterances as f64;
        let implicit = train.implicit as f64 / train.hate as f64;
        assert!((hate - 0.52).abs() < 0.06, "hate share {hate}");
        assert!((implicit - 0.42).abs() < 0.06, "implicit share {implicit}");
    }

    #[test]
    fn no_homophily_means_no_label_assortativity() {
        let mut values = Vec::new();
        for seed in 0..5 {
            let cfg = SynthConfig { n_users: 2000, n_trees: 1, homophily: 0.0, seed, ..SynthConfig::default() };
            let (corpus, truth) = generate_synthetic_with_truth(&cfg).unwrap();
            values.push(label_assortativity(&corpus.graph().adjacency_lists(), &truth.hateful));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        assert!(mean.abs() <= 0.05, "{values:?}");
    }

    #[test]
    fn homophily_makes_labels_assortative() {
        let cfg = SynthConfig { n_users: 1000, n_trees: 1, homophily: 0.9, ..SynthConfig::default() };
        let (corpus, truth) = generate_synthetic_with_truth(&cfg).unwrap();
        assert!(label_assortativity(&corpus.graph().adjacency_lists(), &truth.hateful) > 0.2);
    }

    #[test]
    fn pa_tree_parents_precede_children() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let parents = grow_pa_tree(500, &mut rng);
        assert_eq!(parents[0], None);
        assert!(parents.iter().enumerate().skip(1).all(|(i, p)| p.is_some_and(|p| p < i)));
    }

    #[test]
    fn ba_growth_has_expected_edge_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let edges = grow_preferential(100, 2, &mut rng, |_, _| 1.0);
        assert_eq!(edges.len(), 3 + 97 * 2);
        assert!(edges.iter().all(|(a, b)| a != b));
    }
}
