//! Corpus schema: conversation trees of utterances, users with embedding
//! histories, and the social graph between users.
//!
//! A [`Corpus`] is only ever built through validation, so holding one means
//! every referential and structural invariant has been checked.

mod io;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::EmbeddingSequence;

pub use io::{load_corpus, load_social_edges, save_corpus, CorpusPaths};
pub(crate) use synth::grow_preferential;
pub use synth::{generate_synthetic, generate_synthetic_with_truth, grow_pa_tree, SynthConfig, SynthTruth};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{file}:{line}: field `{field}`: {message}")]
    Schema { file: PathBuf, line: usize, field: String, message: String },
    #[error("{file}: {source}")]
    Io { file: PathBuf, source: std::io::Error },
    #[error("no trees")]
    NoTrees,
    #[error("tree {tree} has no root")]
    NoRoot { tree: String },
    #[error("tree {tree} has {count} roots")]
    MultipleRoots { tree: String, count: usize },
    #[error("utterance {id} in tree {tree} has parent {parent}, which is not in that tree")]
    DanglingParent { tree: String, id: String, parent: String },
    #[error("tree {tree} contains a cycle")]
    Cycle { tree: String },
    #[error("utterance {id} has author {author}, who has no history record")]
    DanglingAuthor { id: String, author: String },
    #[error("social edge {src} -> {dst} names an unknown user")]
    DanglingUser { src: String, dst: String },
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: String },
    #[error("utterance {id} has no embedding")]
    MissingEmbedding { id: String },
    #[error("embedding for {id} has dimension {found}, expected {expected}")]
    Dimension { id: String, found: usize, expected: usize },
    #[error("utterance {id}: implicit label given for a non-hate utterance")]
    ImplicitWithoutHate { id: String },
    #[error("invalid generator setting: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub tree_id: String,
    pub parent_id: Option<String>,
    pub author_id: String,
    pub embedding: Vec<f64>,
    pub label_hate: bool,
    /// Only meaningful for hate utterances.
    pub label_implicit: Option<bool>,
    pub split: Split,
}

impl Utterance {
    pub fn is_implicit_hate(&self) -> bool {
        self.label_hate && self.label_implicit == Some(true)
    }
}

/// Relation carried by a tree edge, determined by the child's depth.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreeEdge {
    ParentComment,
    CommentReply,
    ReplyReply,
}

/// A validated rooted tree. Nodes are stored in ascending id order, so child
/// lists and per-level orderings are ascending by id as well.
#[derive(Clone, Debug, PartialEq)]
pub struct ConversationTree {
    pub id: String,
    nodes: Vec<Utterance>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    root: usize,
    authors: Vec<usize>,
}

impl ConversationTree {
    /// Validates structure. Authors are resolved later by [`Corpus::new`].
    pub fn new(id: impl Into<String>, mut nodes: Vec<Utterance>) -> Result<Self, CorpusError> {
        let id = id.into();
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId { kind: "utterance", id: n.id.clone() });
            }
        }
        let mut parent = vec![None; nodes.len()];
        let mut children = vec![Vec::new(); nodes.len()];
        let mut roots = Vec::new();
        for (i, n) in nodes.iter().enumerate() {
            match &n.parent_id {
                None => roots.push(i),
                Some(p) => {
                    let &pi = index.get(p).ok_or_else(|| CorpusError::DanglingParent {
                        tree: id.clone(),
                        id: n.id.clone(),
                        parent: p.clone(),
                    })?;
                    parent[i] = Some(pi);
                    children[pi].push(i);
                }
            }
        }
        let root = match roots.as_slice() {
            [] if nodes.is_empty() => return Err(CorpusError::NoRoot { tree: id }),
            [] => return Err(CorpusError::Cycle { tree: id }),
            [r] => *r,
            _ => return Err(CorpusError::MultipleRoots { tree: id, count: roots.len() }),
        };
        let mut depth = vec![usize::MAX; nodes.len()];
        depth[root] = 0;
        let mut stack = vec![root];
        let mut seen = 1;
        while let Some(v) = stack.pop() {
            for &c in &children[v] {
                depth[c] = depth[v] + 1;
                seen += 1;
                stack.push(c);
            }
        }
        if seen != nodes.len() {
            return Err(CorpusError::Cycle { tree: id });
        }
        let authors = vec![0; nodes.len()];
        Ok(Self { id, nodes, parent, children, depth, root, authors })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Utterance] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Utterance {
        &self.nodes[i]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn depth(&self, i: usize) -> usize {
        self.depth[i]
    }

    /// Index of the author in [`Corpus::users`].
    pub fn author(&self, i: usize) -> usize {
        self.authors[i]
    }

    /// Nodes grouped by depth, each level in ascending id order.
    pub fn levels(&self) -> Vec<Vec<usize>> {
        let max = self.depth.iter().copied().max().unwrap_or(0);
        let mut levels = vec![Vec::new(); max + 1];
        for i in 0..self.nodes.len() {
            levels[self.depth[i]].push(i);
        }
        levels
    }

    pub fn edges(&self) -> Vec<(usize, usize, TreeEdge)> {
        (0..self.nodes.len())
            .filter_map(|c| {
                let p = self.parent[c]?;
                let kind = match self.depth[c] {
                    1 => TreeEdge::ParentComment,
                    2 => TreeEdge::CommentReply,
                    _ => TreeEdge::ReplyReply,
                };
                Some((p, c, kind))
            })
            .collect()
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        self.children.iter().map(Vec::len).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserRecord {
    pub id: String,
    pub history: EmbeddingSequence,
    /// Set when the user had no history and was given one zero embedding.
    pub empty_history: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Retweet,
    Mention,
    Reply,
    Follow,
}

impl Relation {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "retweet" => Some(Relation::Retweet),
            "mention" => Some(Relation::Mention),
            "reply" => Some(Relation::Reply),
            "follow" => Some(Relation::Follow),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Retweet => "retweet",
            Relation::Mention => "mention",
            Relation::Reply => "reply",
            Relation::Follow => "follow",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Undirected user graph over indices into the user table. Parallel edges are
/// collapsed; each directed input edge is kept as `(src, dst, relation)`
/// metadata.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SocialGraph {
    adjacency: Vec<BTreeSet<usize>>,
    relations: BTreeMap<(usize, usize), BTreeSet<Relation>>,
}

impl SocialGraph {
    pub fn new(n: usize) -> Self {
        Self { adjacency: vec![BTreeSet::new(); n], relations: BTreeMap::new() }
    }

    pub fn add_edge(&mut self, src: usize, dst: usize, relation: Relation) {
        if src != dst {
            self.adjacency[src].insert(dst);
            self.adjacency[dst].insert(src);
        }
        self.relations.entry((src, dst)).or_default().insert(relation);
    }

    pub fn num_vertices(&self) -> usize {
        self.adjacency.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[v].iter().copied()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(BTreeSet::len).collect()
    }

    /// Directed input edges with their relation tags, in sorted order.
    pub fn tagged_edges(&self) -> impl Iterator<Item = (usize, usize, Relation)> + '_ {
        self.relations.iter().flat_map(|(&(s, d), rels)| rels.iter().map(move |r| (s, d, *r)))
    }

    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        self.adjacency.iter().map(|s| s.iter().copied().collect()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    dim: usize,
    trees: Vec<ConversationTree>,
    users: Vec<UserRecord>,
    graph: SocialGraph,
    user_index: HashMap<String, usize>,
}

impl Corpus {
    /// Validates and assembles a corpus. Trees and users are sorted by id.
    pub fn new(
        mut trees: Vec<ConversationTree>,
        mut users: Vec<UserRecord>,
        edges: Vec<(String, String, Relation)>,
    ) -> Result<Self, CorpusError> {
        if trees.is_empty() {
            return Err(CorpusError::NoTrees);
        }
        trees.sort_by(|a, b| a.id.cmp(&b.id));
        users.sort_by(|a, b| a.id.cmp(&b.id));
        let dim = trees[0].nodes[0].embedding.len();

        let mut user_index = HashMap::with_capacity(users.len());
        for (i, u) in users.iter().enumerate() {
            if user_index.insert(u.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId { kind: "user", id: u.id.clone() });
            }
            if u.history.dim() != dim {
                return Err(CorpusError::Dimension { id: u.id.clone(), found: u.history.dim(), expected: dim });
            }
        }

        let mut seen_tree = BTreeSet::new();
        let mut seen_node = BTreeSet::new();
        for tree in &mut trees {
            if !seen_tree.insert(tree.id.clone()) {
                return Err(CorpusError::DuplicateId { kind: "tree", id: tree.id.clone() });
            }
            for (i, n) in tree.nodes.iter().enumerate() {
                if !seen_node.insert(n.id.clone()) {
                    return Err(CorpusError::DuplicateId { kind: "utterance", id: n.id.clone() });
                }
                if n.embedding.len() != dim {
                    return Err(CorpusError::Dimension { id: n.id.clone(), found: n.embedding.len(), expected: dim });
                }
                if n.label_implicit.is_some() && !n.label_hate {
                    return Err(CorpusError::ImplicitWithoutHate { id: n.id.clone() });
                }
                tree.authors[i] = *user_index.get(&n.author_id).ok_or_else(|| CorpusError::DanglingAuthor {
                    id: n.id.clone(),
                    author: n.author_id.clone(),
                })?;
            }
        }

        let mut graph = SocialGraph::new(users.len());
        for (src, dst, rel) in edges {
            match (user_index.get(&src), user_index.get(&dst)) {
                (Some(&s), Some(&d)) => graph.add_edge(s, d, rel),
                _ => return Err(CorpusError::DanglingUser { src, dst }),
            }
        }
        Ok(Self { dim, trees, users, graph, user_index })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn trees(&self) -> &[ConversationTree] {
        &self.trees
    }

    pub fn users(&self) -> &[UserRecord] {
        &self.users
    }

    pub fn graph(&self) -> &SocialGraph {
        &self.graph
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn tree(&self, id: &str) -> Option<&ConversationTree> {
        self.trees.binary_search_by(|t| t.id.as_str().cmp(id)).ok().map(|i| &self.trees[i])
    }

    pub fn num_utterances(&self) -> usize {
        self.trees.iter().map(ConversationTree::len).sum()
    }

    pub fn utterances(&self) -> impl Iterator<Item = (&ConversationTree, usize)> {
        self.trees.iter().flat_map(|t| (0..t.len()).map(move |i| (t, i)))
    }

    pub fn stats(&self) -> CorpusStats {
        let mut s = CorpusStats::default();
        for (tree, i) in self.utterances() {
            let n = tree.node(i);
            let row = s.splits.entry(n.split.as_str().to_string()).or_default();
            row.utterances += 1;
            match tree.depth(i) {
                0 => {}
                1 => row.comments += 1,
                _ => row.replies += 1,
            }
            if n.label_hate {
                row.hate += 1;
                if n.is_implicit_hate() {
                    row.implicit += 1;
                } else {
                    row.explicit += 1;
                }
            } else {
                row.non_hate += 1;
            }
        }
        s.trees = self.trees.len();
        s.users = self.users.len();
        s.social_edges = self.graph.num_edges();
        s
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SplitStats {
    pub utterances: usize,
    pub comments: usize,
    pub replies: usize,
    pub hate: usize,
    pub non_hate: usize,
    pub implicit: usize,
    pub explicit: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CorpusStats {
    pub trees: usize,
    pub users: usize,
    pub social_edges: usize,
    pub splits: BTreeMap<String, SplitStats>,
}
