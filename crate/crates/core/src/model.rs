//! The assembled model: user points from histories and the social graph,
//! the bidirectional tree recursion, and the classifier on
//! `[log0 h_up; log0 h_down; e]`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Bound, ParamStore, Tape, Var};
use crate::csht::{self, CshtParams};
use crate::data::{ConversationTree, Corpus};
use crate::hfan::{self, HfanOptions, HfanParams};
use crate::hgcn::{self, HgcnParams, NormalizedAdjacency};
use crate::manifold::{Geo, Space};
use crate::tensor::Tensor;

/// The full model and its seven ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    NoDft,
    NoHfan,
    NoHgcn,
    NoHfanHgcn,
    NoUserContext,
    Uni,
    Euclidean,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::NoDft,
        Variant::NoHfan,
        Variant::NoHgcn,
        Variant::NoHfanHgcn,
        Variant::NoUserContext,
        Variant::Uni,
        Variant::Euclidean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoDft => "no-dft",
            Variant::NoHfan => "no-hfan",
            Variant::NoHgcn => "no-hgcn",
            Variant::NoHfanHgcn => "no-hfan-hgcn",
            Variant::NoUserContext => "no-user-context",
            Variant::Uni => "uni",
            Variant::Euclidean => "euclidean",
        }
    }

    /// Row label in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "Full model",
            Variant::NoDft => "- DFT",
            Variant::NoHfan => "- HFAN",
            Variant::NoHgcn => "- HGCN",
            Variant::NoHfanHgcn => "- HFAN - HGCN",
            Variant::NoUserContext => "- User Context",
            Variant::Uni => "Bi -> Uni tree",
            Variant::Euclidean => "Hyperbolic -> Euclidean",
        }
    }

    pub fn space(self) -> Space {
        if self == Variant::Euclidean {
            Space::Euclidean
        } else {
            Space::Poincare
        }
    }

    pub fn user_context(self) -> bool {
        self != Variant::NoUserContext
    }

    pub fn uses_hfan(self) -> bool {
        self.user_context() && !matches!(self, Variant::NoHfan | Variant::NoHfanHgcn)
    }

    pub fn uses_hgcn(self) -> bool {
        self.user_context() && !matches!(self, Variant::NoHgcn | Variant::NoHfanHgcn)
    }

    pub fn bidirectional(self) -> bool {
        self != Variant::Uni
    }

    pub fn use_dft(self) -> bool {
        self != Variant::NoDft
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (expected one of: {})", Variant::ALL.map(Variant::name).join(", ")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// HFAN state dimension `l`.
    pub latent_dim: usize,
    /// User vector dimension `g`.
    pub user_dim: usize,
    /// Tree-cell hidden dimension `h`.
    pub hidden_dim: usize,
    pub mlp_hidden: usize,
    pub hgcn_layers: usize,
    /// Initial `c = -kappa` of every curvature parameter.
    pub curvature: f64,
    pub train_curvature: bool,
    pub dropout: f64,
    pub freeze_hfan: bool,
    pub freeze_hgcn: bool,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            user_dim: 16,
            hidden_dim: 32,
            mlp_hidden: 32,
            hgcn_layers: 2,
            curvature: 1.0,
            train_curvature: true,
            dropout: 0.41,
            freeze_hfan: false,
            freeze_hgcn: false,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.latent_dim == 0 || self.user_dim == 0 || self.hidden_dim == 0 || self.mlp_hidden == 0 {
            return Err("dimensions must be positive".into());
        }
        if self.hgcn_layers == 0 {
            return Err("hgcn_layers must be at least 1".into());
        }
        if !(self.curvature.is_finite() && self.curvature > 0.0) {
            return Err(format!("curvature must be a positive c (kappa = -c), got {}", self.curvature));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{path}: unsupported checkpoint version {found}")]
    Version { path: String, found: u32 },
    #[error("checkpoint input dimension {found} does not match corpus dimension {expected}")]
    Dimension { found: usize, expected: usize },
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    input_dim: usize,
    config: ModelConfig,
    params: ParamStore,
}

/// Configuration plus parameters. `input_dim` is the utterance embedding
/// dimension `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub input_dim: usize,
    pub params: ParamStore,
}

/// Parameters of one model bound on a tape.
#[derive(Clone, Debug)]
pub struct Bindings {
    pub geo: Geo,
    pub hfan: Option<HfanParams>,
    pub hgcn: Option<HgcnParams>,
    pub skip: Option<Var>,
    pub csht: CshtParams,
    pub mlp: [Var; 4],
}

impl Model {
    pub fn new(config: ModelConfig, input_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let v = config.variant;
        let (d, l, g, h) = (input_dim, config.latent_dim, config.user_dim, config.hidden_dim);
        p.fill("log_c", vec![], config.curvature.ln());
        let user_in = if v.uses_hfan() { l } else { d };
        if v.uses_hfan() {
            hfan::init_params(&mut p, "hfan", d, l, &mut rng);
        }
        if v.uses_hgcn() {
            let dims: Vec<usize> = std::iter::once(user_in).chain(std::iter::repeat_n(g, config.hgcn_layers)).collect();
            hgcn::init_params(&mut p, "hgcn", &dims, config.curvature, &mut rng);
        } else if v.user_context() {
            p.glorot("skip.w", g, user_in, &mut rng);
        }
        csht::init_params(&mut p, "csht", d, g, h, v.user_context(), &mut rng);
        p.glorot("mlp.w1", config.mlp_hidden, 2 * h + d, &mut rng);
        p.zeros("mlp.b1", vec![config.mlp_hidden]);
        p.glorot("mlp.w2", 2, config.mlp_hidden, &mut rng);
        p.zeros("mlp.b2", vec![2]);
        Self { config, input_dim, params: p }
    }

    /// Parameters that receive no updates.
    pub fn is_frozen(&self, name: &str) -> bool {
        let curvature = name == "log_c" || name.starts_with("hgcn.log_c");
        (curvature && (!self.config.train_curvature || self.config.variant.space() == Space::Euclidean))
            || (self.config.freeze_hfan && name.starts_with("hfan."))
            || (self.config.freeze_hgcn && name.starts_with("hgcn."))
    }

    /// Binds every parameter; with `trainable == false` all become constants.
    pub fn bind(&self, t: &mut Tape, trainable: bool) -> (Bound, Bindings) {
        let b = self.params.bind(t, |n| !trainable || self.is_frozen(n));
        let v = self.config.variant;
        let log_c = b.get("log_c");
        let c = t.exp(log_c);
        let bindings = Bindings {
            geo: Geo::new(v.space(), c),
            hfan: v.uses_hfan().then(|| HfanParams::bind(&b, "hfan")),
            hgcn: v.uses_hgcn().then(|| HgcnParams::bind(&b, "hgcn", log_c)),
            skip: b.try_get("skip.w"),
            csht: CshtParams::bind(&b, "csht"),
            mlp: ["mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2"].map(|n| b.get(n)),
        };
        (b, bindings)
    }

    /// One point per user in the model geometry, or `None` without user
    /// context.
    pub fn user_points(&self, t: &mut Tape, b: &Bindings, corpus: &Corpus, adj: &NormalizedAdjacency) -> Option<Vec<Var>> {
        let v = self.config.variant;
        if !v.user_context() {
            return None;
        }
        let geo = b.geo;
        let hist: Vec<Var> = corpus
            .users()
            .iter()
            .map(|u| {
                let seq = &u.history;
                if let Some(p) = &b.hfan {
                    let h = t.constant(seq.as_tensor().clone());
                    hfan::hfan_forward(t, &geo, p, h, HfanOptions { use_dft: v.use_dft(), bypass_gru: false }).0
                } else {
                    let n = seq.len() as f64;
                    let mean: Vec<f64> =
                        (0..seq.dim()).map(|k| seq.rows().map(|r| r[k]).sum::<f64>() / n).collect();
                    let m = t.constant(Tensor::vector(mean));
                    geo.exp0(t, m)
                }
            })
            .collect();
        Some(match (&b.hgcn, b.skip) {
            (Some(p), _) => {
                let (out, out_geo) = hgcn::hgcn_forward(t, v.space(), p, &hist, adj);
                out.into_iter().map(|x| geo.recurve(t, x, &out_geo)).collect()
            }
            (None, Some(w)) => hist.into_iter().map(|x| geo.matvec(t, w, x)).collect(),
            (None, None) => unreachable!("user context without an aggregation map"),
        })
    }

    /// Logits for every node of `tree`. `users` is indexed by corpus user.
    /// Dropout is applied when an RNG is supplied.
    pub fn tree_logits<R: Rng>(
        &self,
        t: &mut Tape,
        b: &Bindings,
        tree: &ConversationTree,
        users: Option<&[Var]>,
        mut dropout: Option<&mut R>,
    ) -> Vec<Var> {
        let geo = b.geo;
        let embeddings: Vec<Var> = tree.nodes().iter().map(|n| t.constant(Tensor::vector(n.embedding.clone()))).collect();
        let xs: Vec<Var> = embeddings.iter().map(|e| geo.exp0(t, *e)).collect();
        let authors: Option<Vec<Var>> = users.map(|u| (0..tree.len()).map(|j| u[tree.author(j)]).collect());
        let states = csht::csht_forward(t, &geo, &b.csht, tree, &xs, authors.as_deref(), self.config.variant.bidirectional());
        states
            .iter()
            .zip(&embeddings)
            .map(|((up, down), e)| {
                let lu = geo.log0(t, *up);
                let ld = geo.log0(t, *down);
                let z = t.concat(&[lu, ld, *e]);
                self.classify(t, &b.mlp, z, dropout.as_deref_mut())
            })
            .collect()
    }

    /// Two-logit MLP with one ReLU hidden layer.
    pub fn classify<R: Rng>(&self, t: &mut Tape, mlp: &[Var; 4], z: Var, mut dropout: Option<&mut R>) -> Var {
        let p = self.config.dropout;
        let mut drop = |t: &mut Tape, v: Var| match dropout.as_deref_mut() {
            Some(rng) if p > 0.0 => {
                let n = t.value(v).len();
                let mask = (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) }).collect();
                t.apply_mask(v, mask)
            }
            _ => v,
        };
        let z = drop(t, z);
        let a = t.matmul(mlp[0], z);
        let a = t.add(a, mlp[1]);
        let a = t.relu(a);
        let a = drop(t, a);
        let o = t.matmul(mlp[2], a);
        t.add(o, mlp[3])
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            input_dim: self.input_dim,
            config: self.config.clone(),
            params: self.params.clone(),
        };
        let p = path.display().to_string();
        let json = serde_json::to_string(&ck).map_err(|source| CheckpointError::Json { path: p.clone(), source })?;
        std::fs::write(path, json).map_err(|source| CheckpointError::Io { path: p, source })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io { path: p.clone(), source })?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|source| CheckpointError::Json { path: p.clone(), source })?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version { path: p, found: ck.version });
        }
        Ok(Self { config: ck.config, input_dim: ck.input_dim, params: ck.params })
    }

    /// Rejects a corpus whose embeddings this model cannot read.
    pub fn check_corpus(&self, corpus: &Corpus) -> Result<(), CheckpointError> {
        if corpus.dim() == self.input_dim {
            Ok(())
        } else {
            Err(CheckpointError::Dimension { found: self.input_dim, expected: corpus.dim() })
        }
    }
}

/// `p(hate) = softmax(logits)[1]`.
pub fn hate_probability(logits: &[f64]) -> f64 {
    1.0 / (1.0 + (logits[0] - logits[1]).exp())
}
