//! Run configuration. Layers, lowest first: profile defaults, the
//! `HYPERSYN_SEED` environment variable, a config file, command-line flags.

use std::path::{Path, PathBuf};

use hypersyn::data::SynthConfig;
use hypersyn::model::{ModelConfig, Variant};
use hypersyn::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const SEED_ENV: &str = "HYPERSYN_SEED";

/// Dimension defaults. `paper` uses the published sizes; `desk` shrinks the
/// user, hidden and latent dimensions so a run fits on a laptop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Desk,
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    /// Corpus directory holding the four JSONL files.
    pub data: Option<PathBuf>,
    /// Not written to config.json: where a run lands does not change what
    /// it produces.
    #[serde(skip_serializing, default = "default_out")]
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    /// A variant name, or `all` for the ablation harness.
    pub variant: String,
    /// Trees per batch (`b`).
    pub batch_size: usize,
    /// User vector dimension (`g`).
    pub user_dim: usize,
    /// Tree-cell hidden dimension (`h`).
    pub hidden_dim: usize,
    /// History state dimension (`l`).
    pub latent_dim: usize,
    pub mlp_hidden: usize,
    pub hgcn_layers: usize,
    pub curvature: f64,
    pub train_curvature: bool,
    pub freeze_hfan: bool,
    pub freeze_hgcn: bool,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub threshold: f64,
    pub split: String,
    /// Also report metrics over a grid of thresholds (evaluate only).
    pub sweep: bool,
    /// Graph to analyze: a social-edge file or a tree id.
    pub input: Option<String>,
    pub report: Option<PathBuf>,
    /// Generator settings. Its seed always follows the top-level seed.
    pub synth: SynthConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("hypersyn-out")
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let train = TrainConfig::default();
        let m = &train.model;
        let (user_dim, hidden_dim, latent_dim) = match profile {
            Profile::Desk => (m.user_dim, m.hidden_dim, m.latent_dim),
            Profile::Paper => (512, 768, 100),
        };
        Self {
            profile,
            seed: 0,
            data: None,
            out: default_out(),
            checkpoint: None,
            variant: Variant::Full.name().to_string(),
            batch_size: train.batch_size,
            user_dim,
            hidden_dim,
            latent_dim,
            mlp_hidden: m.mlp_hidden,
            hgcn_layers: m.hgcn_layers,
            curvature: m.curvature,
            train_curvature: m.train_curvature,
            freeze_hfan: m.freeze_hfan,
            freeze_hgcn: m.freeze_hgcn,
            lr: train.lr,
            weight_decay: train.weight_decay,
            dropout: m.dropout,
            max_epochs: train.max_epochs,
            patience: train.patience,
            threshold: train.threshold,
            split: "test".into(),
            sweep: false,
            input: None,
            report: None,
            synth: SynthConfig::default(),
        }
    }

    /// Merges the layers. `flags` holds only the flags actually given.
    pub fn resolve(file: Option<&Path>, env_seed: Option<&str>, flags: Map<String, Value>) -> Result<Self, String> {
        let file = match file {
            Some(p) => read_file(p)?,
            None => Map::new(),
        };
        let profile_of = |m: &Map<String, Value>| m.get("profile").cloned();
        let profile = match profile_of(&flags).or_else(|| profile_of(&file)) {
            Some(v) => serde_json::from_value(v).map_err(|e| format!("profile: {e}"))?,
            None => Profile::Desk,
        };
        let mut merged = serde_json::to_value(Self::for_profile(profile)).map_err(|e| e.to_string())?;
        if let Some(s) = env_seed {
            let seed: u64 = s.trim().parse().map_err(|_| format!("{SEED_ENV}={s:?} is not an unsigned integer"))?;
            merge(&mut merged, serde_json::json!({ "seed": seed }));
        }
        merge(&mut merged, Value::Object(file));
        merge(&mut merged, Value::Object(flags));
        let mut cfg: Self = serde_json::from_value(merged).map_err(|e| format!("config: {e}"))?;
        cfg.synth.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn model_config(&self, variant: Variant) -> ModelConfig {
        ModelConfig {
            latent_dim: self.latent_dim,
            user_dim: self.user_dim,
            hidden_dim: self.hidden_dim,
            mlp_hidden: self.mlp_hidden,
            hgcn_layers: self.hgcn_layers,
            curvature: self.curvature,
            train_curvature: self.train_curvature,
            dropout: self.dropout,
            freeze_hfan: self.freeze_hfan,
            freeze_hgcn: self.freeze_hgcn,
            variant,
        }
    }

    pub fn train_config(&self, variant: Variant) -> Result<TrainConfig, String> {
        let cfg = TrainConfig {
            model: self.model_config(variant),
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            threshold: self.threshold,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every variant named by `variant`; `all` expands to the full list.
    pub fn variants(&self) -> Result<Vec<Variant>, String> {
        if self.variant == "all" {
            Ok(Variant::ALL.to_vec())
        } else {
            Ok(vec![self.variant.parse()?])
        }
    }
}

/// TOML, or JSON when the extension says so (a previous run's config.json).
fn read_file(path: &Path) -> Result<Map<String, Value>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let value: Value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
    } else {
        let t: toml::Value = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::to_value(t).map_err(|e| format!("{}: {e}", path.display()))?
    };
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(format!("{}: expected a table of settings", path.display())),
    }
}

/// Recursive object merge; anything else in `top` replaces `base`.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, top) => *slot = top,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn flags(v: Value) -> Map<String, Value> {
        match v {
            Value::Object(m) => m,
            _ => panic!(),
        }
    }

    #[test]
    fn defaults_match_training_defaults() {
        let c = RunConfig::resolve(None, None, Map::new()).unwrap();
        assert_eq!(c.train_config(Variant::Full).unwrap(), TrainConfig::default());
    }

    #[test]
    fn paper_profile_uses_published_sizes() {
        let c = RunConfig::resolve(None, None, flags(json!({"profile": "paper"}))).unwrap();
        assert_eq!((c.batch_size, c.user_dim, c.hidden_dim, c.latent_dim), (32, 512, 768, 100));
        assert_eq!((c.lr, c.weight_decay, c.dropout), (1.3e-2, 3.2e-4, 0.41));
    }

    #[test]
    fn flags_beat_file_beat_env() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        std::fs::write(&file, "seed = 5\nlr = 0.5\n[synth]\nn_trees = 9\n").unwrap();
        let c = RunConfig::resolve(Some(&file), Some("3"), flags(json!({"lr": 0.25}))).unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.lr, 0.25);
        assert_eq!(c.synth.n_trees, 9);
        assert_eq!(c.synth.n_users, SynthConfig::default().n_users);
        assert_eq!(c.synth.seed, 5);

        let c = RunConfig::resolve(None, Some("3"), Map::new()).unwrap();
        assert_eq!(c.seed, 3);
        let c = RunConfig::resolve(None, Some("3"), flags(json!({"seed": 8}))).unwrap();
        assert_eq!(c.seed, 8);
    }

    #[test]
    fn unknown_keys_and_bad_env_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        std::fs::write(&file, "learning_rate = 0.1\n").unwrap();
        assert!(RunConfig::resolve(Some(&file), None, Map::new()).is_err());
        assert!(RunConfig::resolve(None, Some("seven"), Map::new()).is_err());
    }

    #[test]
    fn written_config_reloads_to_the_same_run() {
        let c = RunConfig::resolve(None, None, flags(json!({"seed": 4, "variant": "uni", "data": "corpus"}))).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(&c).unwrap()).unwrap();
        assert_eq!(RunConfig::resolve(Some(&path), None, Map::new()).unwrap(), c);
    }

    #[test]
    fn all_expands_to_every_variant() {
        let mut c = RunConfig::for_profile(Profile::Desk);
        c.variant = "all".into();
        assert_eq!(c.variants().unwrap().len(), 8);
        c.variant = "bogus".into();
        assert!(c.variants().is_err());
    }
}
