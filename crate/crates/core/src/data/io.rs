//! JSON-lines corpus files.
//!
//! * `utterances.jsonl`: `{id, tree_id, parent_id|null, author_id, label_hate, label_implicit|null, split}`
//! * `embeddings.jsonl`: `{id, vector}`
//! * `user_histories.jsonl`: `{user_id, vectors}`
//! * `social_edges.jsonl`: `{src, dst, relation}`

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use super::{ConversationTree, Corpus, CorpusError, Relation, Split, UserRecord, Utterance};
use crate::spectral::EmbeddingSequence;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusPaths {
    pub utterances: PathBuf,
    pub embeddings: PathBuf,
    pub histories: PathBuf,
    pub edges: PathBuf,
}

impl CorpusPaths {
    /// The four standard file names inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let d = dir.as_ref();
        Self {
            utterances: d.join("utterances.jsonl"),
            embeddings: d.join("embeddings.jsonl"),
            histories: d.join("user_histories.jsonl"),
            edges: d.join("social_edges.jsonl"),
        }
    }
}

struct Line<'a> {
    file: &'a Path,
    line: usize,
    obj: Map<String, Value>,
}

impl Line<'_> {
    fn err(&self, field: &str, message: impl Into<String>) -> CorpusError {
        CorpusError::Schema { file: self.file.to_path_buf(), line: self.line, field: field.into(), message: message.into() }
    }

    fn get(&self, field: &str) -> Result<&Value, CorpusError> {
        self.obj.get(field).ok_or_else(|| self.err(field, "missing"))
    }

    fn string(&self, field: &str) -> Result<String, CorpusError> {
        match self.get(field)? {
            Value::String(s) => Ok(s.clone()),
            _ => Err(self.err(field, "expected a string")),
        }
    }

    fn opt_string(&self, field: &str) -> Result<Option<String>, CorpusError> {
        match self.obj.get(field) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(self.err(field, "expected a string or null")),
        }
    }

    fn flag(v: &Value) -> Option<bool> {
        match v {
            Value::Bool(b) => Some(*b),
            Value::Number(n) => match n.as_u64() {
                Some(0) => Some(false),
                Some(1) => Some(true),
                _ => None,
            },
            _ => None,
        }
    }

    fn bool01(&self, field: &str) -> Result<bool, CorpusError> {
        Self::flag(self.get(field)?).ok_or_else(|| self.err(field, "expected 0 or 1"))
    }

    fn opt_bool01(&self, field: &str) -> Result<Option<bool>, CorpusError> {
        match self.obj.get(field) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => Self::flag(v).map(Some).ok_or_else(|| self.err(field, "expected 0, 1 or null")),
        }
    }

    fn vector_of(&self, field: &str, v: &Value) -> Result<Vec<f64>, CorpusError> {
        let arr = v.as_array().ok_or_else(|| self.err(field, "expected an array of numbers"))?;
        arr.iter()
            .map(|x| x.as_f64().filter(|f| f.is_finite()).ok_or_else(|| self.err(field, "expected finite numbers")))
            .collect()
    }

    fn vector(&self, field: &str) -> Result<Vec<f64>, CorpusError> {
        self.vector_of(field, self.get(field)?)
    }

    fn matrix(&self, field: &str) -> Result<Vec<Vec<f64>>, CorpusError> {
        let arr = self.get(field)?.as_array().ok_or_else(|| self.err(field, "expected an array of vectors"))?;
        arr.iter().map(|row| self.vector_of(field, row)).collect()
    }
}

fn read_lines(path: &Path) -> Result<Vec<Line<'_>>, CorpusError> {
    let io = |source| CorpusError::Io { file: path.to_path_buf(), source };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| CorpusError::Schema {
            file: path.to_path_buf(),
            line: i + 1,
            field: "-".into(),
            message,
        };
        match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(obj)) => out.push(Line { file: path, line: i + 1, obj }),
            Ok(_) => return Err(schema("expected a JSON object".into())),
            Err(e) => return Err(schema(e.to_string())),
        }
    }
    Ok(out)
}

/// Reads and validates a corpus. Either every file is consistent and a
/// [`Corpus`] comes back, or nothing does.
pub fn load_corpus(paths: &CorpusPaths) -> Result<Corpus, CorpusError> {
    let mut embeddings: HashMap<String, Vec<f64>> = HashMap::new();
    for l in read_lines(&paths.embeddings)? {
        let id = l.string("id")?;
        let v = l.vector("vector")?;
        if embeddings.insert(id.clone(), v).is_some() {
            return Err(l.err("id", format!("duplicate embedding for {id}")));
        }
    }

    let mut by_tree: BTreeMap<String, Vec<Utterance>> = BTreeMap::new();
    for l in read_lines(&paths.utterances)? {
        let id = l.string("id")?;
        let split = l.string("split")?;
        let split = Split::parse(&split).ok_or_else(|| l.err("split", format!("unknown split {split:?}")))?;
        let embedding = embeddings.remove(&id).ok_or_else(|| CorpusError::MissingEmbedding { id: id.clone() })?;
        let u = Utterance {
            tree_id: l.string("tree_id")?,
            parent_id: l.opt_string("parent_id")?,
            author_id: l.string("author_id")?,
            label_hate: l.bool01("label_hate")?,
            label_implicit: l.opt_bool01("label_implicit")?,
            id,
            embedding,
            split,
        };
        by_tree.entry(u.tree_id.clone()).or_default().push(u);
    }
    let trees = by_tree.into_iter().map(|(id, nodes)| ConversationTree::new(id, nodes)).collect::<Result<Vec<_>, _>>()?;
    if trees.is_empty() {
        return Err(CorpusError::NoTrees);
    }

    let mut users = Vec::new();
    for l in read_lines(&paths.histories)? {
        let id = l.string("user_id")?;
        let mut rows = l.matrix("vectors")?;
        let empty = rows.is_empty();
        if empty {
            let d = trees[0].node(0).embedding.len();
            rows.push(vec![0.0; d]);
        }
        let history = EmbeddingSequence::new(rows).map_err(|e| l.err("vectors", e.to_string()))?;
        users.push(UserRecord { id, history, empty_history: empty });
    }

    Corpus::new(trees, users, load_social_edges(&paths.edges)?)
}

/// Reads `social_edges.jsonl` on its own, as `(src, dst, relation)` triples.
pub fn load_social_edges(path: &Path) -> Result<Vec<(String, String, Relation)>, CorpusError> {
    let mut edges = Vec::new();
    for l in read_lines(path)? {
        let rel = l.string("relation")?;
        let rel = Relation::parse(&rel).ok_or_else(|| l.err("relation", format!("unknown relation {rel:?}")))?;
        edges.push((l.string("src")?, l.string("dst")?, rel));
    }
    Ok(edges)
}

#[derive(Serialize)]
struct UtteranceLine<'a> {
    id: &'a str,
    tree_id: &'a str,
    parent_id: Option<&'a str>,
    author_id: &'a str,
    label_hate: u8,
    label_implicit: Option<u8>,
    split: &'a str,
}

#[derive(Serialize)]
struct EmbeddingLine<'a> {
    id: &'a str,
    vector: &'a [f64],
}

#[derive(Serialize)]
struct HistoryLine<'a> {
    user_id: &'a str,
    vectors: Vec<&'a [f64]>,
}

#[derive(Serialize)]
struct EdgeLine<'a> {
    src: &'a str,
    dst: &'a str,
    relation: &'a str,
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl Iterator<Item = T>) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io { file: path.to_path_buf(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for row in rows {
        serde_json::to_writer(&mut w, &row).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes the four corpus files. Output is a pure function of the corpus.
pub fn save_corpus(corpus: &Corpus, paths: &CorpusPaths) -> Result<(), CorpusError> {
    let utterances = || corpus.utterances().map(|(t, i)| t.node(i));
    write_jsonl(
        &paths.utterances,
        utterances().map(|u| UtteranceLine {
            id: &u.id,
            tree_id: &u.tree_id,
            parent_id: u.parent_id.as_deref(),
            author_id: &u.author_id,
            label_hate: u8::from(u.label_hate),
            label_implicit: u.label_implicit.map(u8::from),
            split: u.split.as_str(),
        }),
    )?;
    write_jsonl(&paths.embeddings, utterances().map(|u| EmbeddingLine { id: &u.id, vector: &u.embedding }))?;
    write_jsonl(
        &paths.histories,
        corpus.users().iter().map(|u| HistoryLine {
            user_id: &u.id,
            vectors: if u.empty_history { Vec::new() } else { u.history.rows().collect() },
        }),
    )?;
    let users = corpus.users();
    write_jsonl(
        &paths.edges,
        corpus.graph().tagged_edges().map(|(s, d, r)| EdgeLine { src: &users[s].id, dst: &users[d].id, relation: r.as_str() }),
    )
}
