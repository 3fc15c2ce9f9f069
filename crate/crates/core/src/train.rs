//! Training with early stopping, parallel evaluation, the ablation harness
//! and an embedding-only probe.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Adam, AdamConfig, Bound, Tape, Var};
use crate::data::{Corpus, Split};
use crate::hgcn::{normalize_adjacency, NormalizedAdjacency};
use crate::metrics::{render_table, roc_auc, MetricsReport, Prediction, DEFAULT_THRESHOLD};
use crate::model::{hate_probability, Model, ModelConfig, Variant};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub weight_decay: f64,
    /// Trees per batch.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            lr: 1.3e-2,
            weight_decay: 3.2e-4,
            batch_size: 32,
            max_epochs: 50,
            patience: 10,
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err("lr and weight_decay must be finite and nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(format!("threshold must lie in [0, 1], got {}", self.threshold));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over batches of the per-batch mean cross-entropy.
    pub train_loss: f64,
    pub val: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// False when the loss after five epochs is not below the first epoch's.
    pub loss_decreased: bool,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training utterances in the corpus")]
    NoTrainingData,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged in epoch {epoch}, batch {batch}: {reason}")]
    Diverged { epoch: usize, batch: usize, reason: String, last_good: Box<Model> },
}

/// Mean cross-entropy over the training nodes of the given trees, or `None`
/// when they hold no such node.
fn batch_loss(
    t: &mut Tape,
    model: &Model,
    corpus: &Corpus,
    adj: &NormalizedAdjacency,
    trees: &[usize],
    rng: &mut ChaCha8Rng,
) -> Option<(Var, Bound)> {
    let (bound, b) = model.bind(t, true);
    let users = model.user_points(t, &b, corpus, adj);
    let mut terms = Vec::new();
    for &ti in trees {
        let tree = &corpus.trees()[ti];
        let logits = model.tree_logits(t, &b, tree, users.as_deref(), Some(&mut *rng));
        for (j, l) in logits.into_iter().enumerate() {
            let node = tree.node(j);
            if node.split != Split::Train {
                continue;
            }
            let ls = t.log_softmax(l);
            let target = if node.label_hate { [0.0, -1.0] } else { [-1.0, 0.0] };
            let pick = t.constant(Tensor::vector(target.to_vec()));
            terms.push(t.dot(ls, pick));
        }
    }
    if terms.is_empty() {
        return None;
    }
    let all = t.concat(&terms);
    Some((t.mean(all), bound))
}

/// Trains with early stopping on validation overall F1 and returns the model
/// restored to its best epoch. `on_epoch` sees every epoch as it finishes.
pub fn train(corpus: &Corpus, cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<(Model, TrainReport), TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    let train_trees: Vec<usize> = (0..corpus.trees().len())
        .filter(|&i| corpus.trees()[i].nodes().iter().any(|n| n.split == Split::Train))
        .collect();
    if train_trees.is_empty() {
        return Err(TrainError::NoTrainingData);
    }
    let adj = normalize_adjacency(corpus.graph());
    let mut model = Model::new(cfg.model.clone(), corpus.dim(), cfg.seed);
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamConfig::default() });
    let mut order = train_trees;
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut t = Tape::new();
            let Some((loss, bound)) = batch_loss(&mut t, &model, corpus, &adj, batch, &mut rng) else { continue };
            let value = t.item(loss);
            let diverged = |reason: String, model: &Model| TrainError::Diverged {
                epoch,
                batch: bi,
                reason,
                last_good: Box::new(model.clone()),
            };
            if !value.is_finite() {
                return Err(diverged(format!("loss is {value}"), &model));
            }
            let grads = t.backward(loss).map_err(|e| diverged(e.to_string(), &model))?;
            let mut named = bound.gradients(&model.params, &grads);
            named.retain(|name, _| !model.is_frozen(name));
            let before = model.clone();
            adam.step(&mut model.params, &named).map_err(|e| diverged(e.to_string(), &before))?;
            if model.params.iter().any(|(_, p)| !p.is_finite()) {
                return Err(diverged("non-finite parameter after update".into(), &before));
            }
            losses.push(value);
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
        let val = evaluate(&model, corpus, Split::Val, cfg.threshold);
        let record = EpochRecord { epoch, train_loss, val };
        on_epoch(&record);
        let score = record.val.overall.f1;
        epochs.push(record);
        match &best {
            Some((s, _, _)) if score <= *s => {}
            _ => best = Some((score, epoch, model.clone())),
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.1);
        if epoch >= best_epoch + cfg.patience {
            stopped_early = true;
            break;
        }
    }

    let loss_decreased = match epochs.as_slice() {
        [first, .., last] => epochs.get(4).unwrap_or(last).train_loss < first.train_loss,
        _ => true,
    };
    let (best_epoch, model) = match best {
        Some((_, e, m)) => (e, m),
        None => (0, model),
    };
    Ok((model, TrainReport { epochs, best_epoch, stopped_early, loss_decreased }))
}

/// Hate probability for every node of `split` (all nodes with `None`), in
/// corpus order. Trees are scored in parallel.
pub fn predict(model: &Model, corpus: &Corpus, split: Option<Split>) -> Vec<Prediction> {
    let adj = normalize_adjacency(corpus.graph());
    let mut t = Tape::new();
    let (_, b) = model.bind(&mut t, false);
    let users: Option<Vec<Tensor>> =
        model.user_points(&mut t, &b, corpus, &adj).map(|u| u.iter().map(|v| t.value(*v).clone()).collect());

    let per_tree: Vec<Vec<Prediction>> = corpus
        .trees()
        .par_iter()
        .map(|tree| {
            let wanted: Vec<usize> =
                (0..tree.len()).filter(|&j| split.is_none_or(|s| tree.node(j).split == s)).collect();
            if wanted.is_empty() {
                return Vec::new();
            }
            let mut t = Tape::new();
            let (_, b) = model.bind(&mut t, false);
            let user_vars: Option<Vec<Var>> = users.as_ref().map(|us| {
                let mut vars = vec![None; us.len()];
                for j in 0..tree.len() {
                    let a = tree.author(j);
                    if vars[a].is_none() {
                        vars[a] = Some(t.constant(us[a].clone()));
                    }
                }
                // Users outside this tree are never read.
                let filler = t.constant(Tensor::zeros(vec![0]));
                vars.into_iter().map(|v| v.unwrap_or(filler)).collect()
            });
            let logits = model.tree_logits::<ChaCha8Rng>(&mut t, &b, tree, user_vars.as_deref(), None);
            wanted
                .into_iter()
                .map(|j| {
                    let node = tree.node(j);
                    Prediction {
                        prob: hate_probability(t.data(logits[j])),
                        label_hate: node.label_hate,
                        implicit_hate: node.is_implicit_hate(),
                        depth: tree.depth(j),
                    }
                })
                .collect()
        })
        .collect();
    per_tree.into_iter().flatten().collect()
}

pub fn evaluate(model: &Model, corpus: &Corpus, split: Split, threshold: f64) -> MetricsReport {
    MetricsReport::compute(&predict(model, corpus, Some(split)), threshold)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub variant: Variant,
    pub test: MetricsReport,
    pub best_epoch: usize,
    /// False for the Euclidean variant, where no ball constraint applies.
    pub hyperbolic: bool,
}

/// Trains and tests one variant with every other setting unchanged.
pub fn run_ablation(
    corpus: &Corpus,
    cfg: &TrainConfig,
    variant: Variant,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(AblationResult, Model, TrainReport), TrainError> {
    let cfg = TrainConfig { model: ModelConfig { variant, ..cfg.model.clone() }, ..cfg.clone() };
    let (model, report) = train(corpus, &cfg, on_epoch)?;
    let test = evaluate(&model, corpus, Split::Test, cfg.threshold);
    let result = AblationResult { variant, test, best_epoch: report.best_epoch, hyperbolic: variant.space().is_hyperbolic() };
    Ok((result, model, report))
}

/// Runs [`run_ablation`] for each variant in turn. `on_epoch` also receives
/// the variant being trained.
pub fn run_ablations(
    corpus: &Corpus,
    cfg: &TrainConfig,
    variants: &[Variant],
    mut on_epoch: impl FnMut(Variant, &EpochRecord),
) -> Result<Vec<AblationResult>, TrainError> {
    variants
        .iter()
        .map(|&v| run_ablation(corpus, cfg, v, |r| on_epoch(v, r)).map(|(result, _, _)| result))
        .collect()
}

/// One table row per result, labelled by variant, in the given order.
pub fn ablation_table(results: &[AblationResult]) -> String {
    let rows: Vec<(String, MetricsReport)> = results.iter().map(|r| (r.variant.label().to_string(), r.test.clone())).collect();
    render_table(&rows)
}

/// Logistic regression on utterance embeddings alone, fitted on the train
/// split's implicit pool (implicit hate against non-hate) and scored by AUC
/// on the test split's implicit pool. Values near 0.5 mean the embeddings
/// carry no implicit-hate signal.
pub fn embedding_probe_auc(corpus: &Corpus) -> f64 {
    let pool = |split: Split| -> (Vec<&[f64]>, Vec<bool>) {
        corpus
            .utterances()
            .map(|(tree, j)| tree.node(j))
            .filter(|n| n.split == split && (!n.label_hate || n.is_implicit_hate()))
            .map(|n| (n.embedding.as_slice(), n.label_hate))
            .unzip()
    };
    let (xs, ys) = pool(Split::Train);
    let d = corpus.dim();
    let mut w = vec![0.0; d + 1];
    let n = xs.len().max(1) as f64;
    let sigmoid = |z: f64| 1.0 / (1.0 + (-z).exp());
    let score = |w: &[f64], x: &[f64]| w[d] + x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    for _ in 0..500 {
        let mut g = vec![0.0; d + 1];
        for (x, y) in xs.iter().zip(&ys) {
            let r = sigmoid(score(&w, x)) - if *y { 1.0 } else { 0.0 };
            for k in 0..d {
                g[k] += r * x[k] / n;
            }
            g[d] += r / n;
        }
        for k in 0..=d {
            let l2 = if k < d { 1e-3 * w[k] } else { 0.0 };
            w[k] -= 0.5 * (g[k] + l2);
        }
    }
    let (tx, ty) = pool(Split::Test);
    let scores: Vec<f64> = tx.iter().map(|x| score(&w, x)).collect();
    roc_auc(&scores, &ty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};

    fn tiny_corpus(seed: u64) -> Corpus {
        generate_synthetic(&SynthConfig { n_users: 20, n_trees: 12, d: 4, seed, ..SynthConfig::default() }).unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            model: ModelConfig { latent_dim: 4, user_dim: 4, hidden_dim: 4, mlp_hidden: 4, ..ModelConfig::default() },
            batch_size: 4,
            max_epochs: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_alone() {
        let corpus = tiny_corpus(1);
        let cfg = TrainConfig { lr: 0.0, max_epochs: 1, ..tiny_config() };
        let (model, _) = train(&corpus, &cfg, |_| {}).unwrap();
        assert_eq!(model.params, Model::new(cfg.model.clone(), corpus.dim(), cfg.seed).params);
    }

    #[test]
    fn same_seed_same_run() {
        let corpus = tiny_corpus(2);
        let cfg = tiny_config();
        let (m1, r1) = train(&corpus, &cfg, |_| {}).unwrap();
        let (m2, r2) = train(&corpus, &cfg, |_| {}).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn training_moves_the_frozen_parameters_not_at_all() {
        let corpus = tiny_corpus(3);
        let mut cfg = tiny_config();
        cfg.max_epochs = 1;
        cfg.model.freeze_hgcn = true;
        cfg.model.train_curvature = false;
        let (model, _) = train(&corpus, &cfg, |_| {}).unwrap();
        let init = Model::new(cfg.model.clone(), corpus.dim(), cfg.seed);
        for (name, p) in model.params.iter() {
            let moved = p != init.params.get(name).unwrap();
            assert_eq!(moved, !(name.starts_with("hgcn.") || name == "log_c"), "{name}");
        }
    }

    #[test]
    fn predictions_cover_the_split_in_order() {
        let corpus = tiny_corpus(4);
        let model = Model::new(tiny_config().model, corpus.dim(), 0);
        let all = predict(&model, &corpus, None);
        assert_eq!(all.len(), corpus.num_utterances());
        assert!(all.iter().all(|p| p.prob > 0.0 && p.prob < 1.0));
        let test = predict(&model, &corpus, Some(Split::Test));
        let expected = corpus.utterances().filter(|(t, j)| t.node(*j).split == Split::Test).count();
        assert_eq!(test.len(), expected);
    }

    #[test]
    fn probe_near_chance_on_default_corpus() {
        let corpus = generate_synthetic(&SynthConfig { n_users: 200, n_trees: 400, ..SynthConfig::default() }).unwrap();
        let auc = embedding_probe_auc(&corpus);
        assert!((0.35..=0.65).contains(&auc), "auc {auc}");
    }
}
