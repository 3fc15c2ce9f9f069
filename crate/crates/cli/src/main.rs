mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};

use commands::{Failure, RunLog};
use config::{Profile, RunConfig, SEED_ENV};

/// Hate speech detection with hyperbolic user and conversation context.
///
/// Settings come from, in increasing priority: built-in defaults,
/// HYPERSYN_SEED (seed only), --config FILE, and flags.
#[derive(Parser)]
#[command(name = "hypersyn", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus to the output directory.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        synth: SynthFlags,
    },
    /// Train one variant, keep the best checkpoint and score the test split.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        hyper: HyperFlags,
    },
    /// Score a checkpoint on one split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalFlags,
    },
    /// Train and test ablation variants (`--variant all` for every one) and
    /// print a combined table.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        hyper: HyperFlags,
    },
    /// Power-law degree fit and Gromov hyperbolicity of a social graph or
    /// one conversation tree.
    AnalyzeGraph {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        graph: GraphFlags,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Ablate { .. } => "ablate",
            Command::AnalyzeGraph { .. } => "analyze-graph",
        }
    }
}

#[derive(Args, Serialize)]
struct Common {
    /// Settings file (TOML, or JSON such as a previous run's config.json).
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    /// Corpus directory.
    #[arg(long, value_name = "DIR")]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    profile: Option<Profile>,
}

#[derive(Args, Serialize)]
struct SynthFlags {
    #[arg(long)]
    #[serde(rename = "n_users", skip_serializing_if = "Option::is_none")]
    users: Option<usize>,
    #[arg(long)]
    #[serde(rename = "n_trees", skip_serializing_if = "Option::is_none")]
    trees: Option<usize>,
    /// Utterance embedding dimension.
    #[arg(long)]
    #[serde(rename = "d", skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    hateful_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    homophily: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    context_sensitivity: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    explicit_rate: Option<f64>,
}

#[derive(Args, Serialize)]
struct HyperFlags {
    /// Variant name; `ablate` also accepts `all`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    variant: Option<String>,
    /// Trees per batch.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    user_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    latent_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mlp_hidden: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    hgcn_layers: Option<usize>,
    /// Initial c of the ball of curvature -c.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    curvature: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    train_curvature: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    freeze_hfan: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    freeze_hgcn: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    weight_decay: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dropout: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    patience: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
}

#[derive(Args, Serialize)]
struct EvalFlags {
    #[arg(long, value_name = "FILE")]
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<PathBuf>,
    /// train, val or test.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    /// Also report metrics at thresholds 0.05, 0.10, ..., 0.95.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep: Option<bool>,
}

#[derive(Args, Serialize)]
struct GraphFlags {
    /// A social_edges.jsonl file, or a tree id looked up in --data. Without
    /// it the social graph of --data is used.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    input: Option<String>,
    /// Where to write the JSON report (default: OUT/report.json).
    #[arg(long, value_name = "FILE")]
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<PathBuf>,
}

fn object(v: impl Serialize) -> Map<String, Value> {
    match serde_json::to_value(v) {
        Ok(Value::Object(m)) => m,
        _ => Map::new(),
    }
}

fn flag_layer(command: &Command) -> (Option<PathBuf>, Map<String, Value>) {
    let (common, mut rest) = match command {
        Command::Generate { common, synth } => {
            let mut m = Map::new();
            m.insert("synth".into(), Value::Object(object(synth)));
            (common, m)
        }
        Command::Train { common, hyper } | Command::Ablate { common, hyper } => (common, object(hyper)),
        Command::Evaluate { common, eval } => (common, object(eval)),
        Command::AnalyzeGraph { common, graph } => (common, object(graph)),
    };
    rest.extend(object(common));
    (common.config.clone(), rest)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(Failure::USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let command = cli.command.name();
    let (file, flags) = flag_layer(&cli.command);
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = match RunConfig::resolve(file.as_deref(), env_seed.as_deref(), flags) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(Failure::USAGE);
        }
    };
    let mut log = match RunLog::start(&cfg, command) {
        Ok(log) => log,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.code());
        }
    };
    let result = match cli.command {
        Command::Generate { .. } => commands::generate(&cfg, &mut log),
        Command::Train { .. } => commands::train(&cfg, &mut log),
        Command::Evaluate { .. } => commands::evaluate(&cfg, &mut log),
        Command::Ablate { .. } => commands::ablate(&cfg, &mut log),
        Command::AnalyzeGraph { .. } => commands::analyze_graph(&cfg, &mut log),
    };
    match log.finish(result) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
