use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hypersyn::data::{generate_synthetic, load_corpus, load_social_edges, save_corpus, Corpus, CorpusError, CorpusPaths, Split};
use hypersyn::graph::{adjacency_from_edges, scale_free_report, GraphError};
use hypersyn::metrics::{render_table, MetricsReport};
use hypersyn::model::{CheckpointError, Model};
use hypersyn::train::{self as training, ablation_table, run_ablations, EpochRecord, TrainError};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

/// A failed run, by exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    pub const USAGE: u8 = 1;

    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => Self::USAGE,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Data(_) => "data",
            Failure::Numeric(_) => "numeric",
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::InvalidConfig(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<GraphError> for Failure {
    fn from(e: GraphError) -> Self {
        Failure::Data(e.to_string())
    }
}

/// `run.log.jsonl` in the output directory: one JSON event per line, no
/// wall-clock fields, so reruns produce the same log.
pub struct RunLog {
    out: PathBuf,
    w: BufWriter<File>,
    error: Option<std::io::Error>,
}

impl RunLog {
    /// Creates the output directory and writes the resolved config.
    pub fn start(cfg: &RunConfig, command: &str) -> Result<Self, Failure> {
        std::fs::create_dir_all(&cfg.out)?;
        write_json(&cfg.out.join("config.json"), cfg)?;
        let w = BufWriter::new(File::create(cfg.out.join("run.log.jsonl"))?);
        let mut log = Self { out: cfg.out.clone(), w, error: None };
        log.event("start", json!({ "command": command, "seed": cfg.seed }));
        Ok(log)
    }

    pub fn event(&mut self, name: &str, fields: Value) {
        let mut obj = serde_json::Map::new();
        obj.insert("event".into(), name.into());
        if let Value::Object(m) = fields {
            obj.extend(m);
        }
        let line = Value::Object(obj).to_string();
        if let Err(e) = writeln!(self.w, "{line}").and_then(|_| self.w.flush()) {
            self.error.get_or_insert(e);
        }
    }

    fn epoch(&mut self, variant: &str, r: &EpochRecord) {
        eprintln!(
            "[{variant}] epoch {:>3}  loss {:.5}  val F1 {:.4}  val implicit F1 {:.4}",
            r.epoch, r.train_loss, r.val.overall.f1, r.val.implicit.f1
        );
        self.event("epoch", json!({ "variant": variant, "record": r }));
    }

    pub fn finish(mut self, result: Result<(), Failure>) -> Result<(), Failure> {
        match &result {
            Ok(()) => self.event("finish", json!({ "code": 0 })),
            Err(f) => self.event("error", json!({ "code": f.code(), "kind": f.kind(), "message": f.to_string() })),
        }
        match self.error.take() {
            Some(e) if result.is_ok() => Err(e.into()),
            _ => result,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Data(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn corpus(cfg: &RunConfig) -> Result<Corpus, Failure> {
    let dir = cfg.data.as_ref().ok_or_else(|| Failure::Usage("a corpus directory is required (--data DIR)".into()))?;
    Ok(load_corpus(&CorpusPaths::in_dir(dir))?)
}

fn train_failure(e: TrainError, log: &mut RunLog) -> Failure {
    match e {
        TrainError::Config(m) => Failure::Usage(m),
        TrainError::NoTrainingData => Failure::Data(e.to_string()),
        TrainError::Diverged { ref last_good, .. } => {
            let path = log.path("last_good.checkpoint.json");
            match last_good.save(&path) {
                Ok(()) => log.event("last-good-checkpoint", json!({ "path": path })),
                Err(err) => log.event("last-good-checkpoint", json!({ "error": err.to_string() })),
            }
            Failure::Numeric(e.to_string())
        }
    }
}

pub fn generate(cfg: &RunConfig, log: &mut RunLog) -> Result<(), Failure> {
    let corpus = generate_synthetic(&cfg.synth)?;
    save_corpus(&corpus, &CorpusPaths::in_dir(&cfg.out))?;
    let stats = corpus.stats();
    write_json(&log.path("stats.json"), &stats)?;
    log.event("corpus", json!({ "stats": stats }));
    println!(
        "wrote {} trees, {} utterances, {} users, {} social edges to {}",
        stats.trees,
        corpus.num_utterances(),
        stats.users,
        stats.social_edges,
        cfg.out.display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig, log: &mut RunLog) -> Result<(), Failure> {
    let variants = cfg.variants().map_err(Failure::Usage)?;
    let [variant] = variants[..] else {
        return Err(Failure::Usage("train takes a single variant; use `ablate --variant all` for every one".into()));
    };
    let tc = cfg.train_config(variant).map_err(Failure::Usage)?;
    let corpus = corpus(cfg)?;
    let name = variant.name();
    let (model, report) = match training::train(&corpus, &tc, |r| log.epoch(name, r)) {
        Ok(ok) => ok,
        Err(e) => return Err(train_failure(e, log)),
    };
    if !report.loss_decreased {
        log.event("warning", json!({ "message": "training loss did not fall over the first five epochs" }));
    }
    model.save(&log.path("checkpoint.json"))?;
    let test = training::evaluate(&model, &corpus, Split::Test, tc.threshold);
    let table = render_table(&[(variant.label().to_string(), test.clone())]);
    write_json(
        &log.path("metrics.json"),
        &json!({
            "variant": name,
            "best_epoch": report.best_epoch,
            "stopped_early": report.stopped_early,
            "loss_decreased": report.loss_decreased,
            "test": test,
        }),
    )?;
    write_text(&log.path("table.txt"), &table)?;
    log.event("test", json!({ "variant": name, "best_epoch": report.best_epoch, "metrics": test }));
    print!("{table}");
    Ok(())
}

pub fn evaluate(cfg: &RunConfig, log: &mut RunLog) -> Result<(), Failure> {
    let path = cfg.checkpoint.as_ref().ok_or_else(|| Failure::Usage("a checkpoint is required (--checkpoint FILE)".into()))?;
    let split = Split::parse(&cfg.split).ok_or_else(|| Failure::Usage(format!("unknown split {:?} (expected train, val or test)", cfg.split)))?;
    if !(0.0..=1.0).contains(&cfg.threshold) {
        return Err(Failure::Usage(format!("threshold must lie in [0, 1], got {}", cfg.threshold)));
    }
    let model = Model::load(path)?;
    let corpus = corpus(cfg)?;
    model.check_corpus(&corpus)?;
    let preds = training::predict(&model, &corpus, Some(split));
    if preds.is_empty() {
        return Err(Failure::Data(format!("the corpus has no {} utterances", split.as_str())));
    }
    let report = MetricsReport::compute(&preds, cfg.threshold);
    let sweep: Vec<MetricsReport> = if cfg.sweep {
        (1..20).map(|k| MetricsReport::compute(&preds, k as f64 * 0.05)).collect()
    } else {
        Vec::new()
    };
    let table = render_table(&[(model.config.variant.label().to_string(), report.clone())]);
    write_json(
        &log.path("metrics.json"),
        &json!({ "variant": model.config.variant.name(), "split": split.as_str(), "metrics": report, "sweep": sweep }),
    )?;
    write_text(&log.path("table.txt"), &table)?;
    log.event("evaluate", json!({ "split": split.as_str(), "metrics": report }));
    print!("{table}");
    if cfg.sweep {
        println!("\n{:>9} {:>8} {:>8}", "threshold", "F1", "impl F1");
        for r in &sweep {
            println!("{:>9.2} {:>8.2} {:>8.2}", r.threshold, r.overall.f1 * 100.0, r.implicit.f1 * 100.0);
        }
    }
    Ok(())
}

pub fn ablate(cfg: &RunConfig, log: &mut RunLog) -> Result<(), Failure> {
    let variants = cfg.variants().map_err(Failure::Usage)?;
    for v in &variants {
        cfg.train_config(*v).map_err(Failure::Usage)?;
    }
    let tc = cfg.train_config(variants[0]).map_err(Failure::Usage)?;
    let corpus = corpus(cfg)?;
    let results = match run_ablations(&corpus, &tc, &variants, |v, r| log.epoch(v.name(), r)) {
        Ok(results) => results,
        Err(e) => return Err(train_failure(e, log)),
    };
    for r in &results {
        log.event("test", json!({ "variant": r.variant.name(), "best_epoch": r.best_epoch, "metrics": r.test }));
    }
    let table = ablation_table(&results);
    write_json(&log.path("ablation.json"), &results)?;
    write_text(&log.path("ablation.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn analyze_graph(cfg: &RunConfig, log: &mut RunLog) -> Result<(), Failure> {
    let (source, adjacency, degrees) = match cfg.input.as_deref() {
        Some(input) if Path::new(input).is_file() => {
            let edges = load_social_edges(Path::new(input))?;
            let mut ids: HashMap<String, usize> = HashMap::new();
            let mut pairs = Vec::with_capacity(edges.len());
            for (src, dst, _) in edges {
                let n = ids.len();
                let a = *ids.entry(src).or_insert(n);
                let n = ids.len();
                let b = *ids.entry(dst).or_insert(n);
                pairs.push((a, b));
            }
            let adj = adjacency_from_edges(ids.len(), &pairs);
            let degrees = adj.iter().map(Vec::len).collect();
            (json!({ "social_edges": input }), adj, degrees)
        }
        Some(tree_id) => {
            let corpus = corpus(cfg)?;
            let tree = corpus.tree(tree_id).ok_or_else(|| Failure::Data(format!("no file or tree named {tree_id:?}")))?;
            let pairs: Vec<(usize, usize)> = tree.edges().into_iter().map(|(p, c, _)| (p, c)).collect();
            (json!({ "tree": tree_id }), adjacency_from_edges(tree.len(), &pairs), tree.out_degrees())
        }
        None => {
            let corpus = corpus(cfg)?;
            let g = corpus.graph();
            (json!({ "social_graph": cfg.data }), g.adjacency_lists(), g.degrees())
        }
    };
    let report = scale_free_report(&adjacency, &degrees, cfg.seed)?;
    let path = cfg.report.clone().unwrap_or_else(|| log.path("report.json"));
    write_json(&path, &json!({ "source": source, "report": report }))?;
    log.event("graph", json!({ "source": source, "report": report }));
    println!("nodes {}  edges {}", report.nodes, report.edges);
    match (&report.power_law, &report.fit_error) {
        (Some(f), _) => println!("power law: gamma {:.3}  xmin {}  KS {:.4}", f.gamma, f.xmin, f.ks_distance),
        (None, Some(e)) => println!("power law: not fitted ({e})"),
        (None, None) => {}
    }
    let d = &report.delta;
    let scope = if d.largest_component_only { format!(" on the largest component ({} nodes)", d.nodes) } else { String::new() };
    println!("delta {} ({}){scope}", d.delta, d.label());
    Ok(())
}
