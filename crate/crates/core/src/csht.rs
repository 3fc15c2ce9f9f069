//! Bidirectional hyperbolic Tree-LSTM with separate gate pairs for the
//! utterance and for its author.
//!
//! For node `j` with utterance point `x`, author point `u` and predecessor
//! states `(c_k, h_k)`:
//!
//! ```text
//! h~   = Einstein midpoint of h_k (origin if none)
//! r    = Wfx x ⊕ Wfg u
//! f_k  = exp0(sigma(log0(r ⊕ Uf h_k ⊕ bf)))
//! i, v = gates on x and h~ (sigma, tanh)
//! m, s = gates on u and h~ (sigma, tanh)
//! o    = gate on u and h~ (sigma)
//! c    = i⊙v ⊕ m⊙s ⊕ f_1⊙c_1 ⊕ f_2⊙c_2 ⊕ ...
//! h    = o ⊙ exp0(tanh(log0 c))
//! ```
//!
//! `⊙` is the product of the tangent vectors at the origin. Predecessors are
//! the children (ascending node index) going up, and the parent going down.
//! Without user context the `m, s` pair and `Wfg` are absent and `o` reads
//! `x` instead.

use rand::Rng;

use crate::autodiff::{Bound, ParamStore, Tape, Var};
use crate::data::ConversationTree;
use crate::manifold::Geo;
use crate::tensor::Tensor;

/// Registers one direction of parameters under `prefix`.
pub fn init_direction<R: Rng>(store: &mut ParamStore, prefix: &str, d: usize, g: usize, h: usize, user_context: bool, rng: &mut R) {
    let mut gate = |name: &str, input: usize| {
        store.glorot(&format!("{prefix}.w{name}"), h, input, rng);
        store.glorot(&format!("{prefix}.u{name}"), h, h, rng);
        store.zeros(&format!("{prefix}.b{name}"), vec![h]);
    };
    gate("i", d);
    gate("v", d);
    if user_context {
        gate("m", g);
        gate("s", g);
        gate("o", g);
    } else {
        gate("o", d);
    }
    store.glorot(&format!("{prefix}.wfx"), h, d, rng);
    if user_context {
        store.glorot(&format!("{prefix}.wfg"), h, g, rng);
    }
    store.glorot(&format!("{prefix}.uf"), h, h, rng);
    store.zeros(&format!("{prefix}.bf"), vec![h]);
}

/// Registers both directions as `{prefix}.up` and `{prefix}.down`.
pub fn init_params<R: Rng>(store: &mut ParamStore, prefix: &str, d: usize, g: usize, h: usize, user_context: bool, rng: &mut R) {
    init_direction(store, &format!("{prefix}.up"), d, g, h, user_context, rng);
    init_direction(store, &format!("{prefix}.down"), d, g, h, user_context, rng);
}

/// Input matrix, hidden matrix and tangent bias of one gate.
#[derive(Clone, Copy, Debug)]
pub struct Gate {
    pub w: Var,
    pub u: Var,
    pub b: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct UserGates {
    pub m: Gate,
    pub s: Gate,
    pub wfg: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct CshtDirection {
    pub i: Gate,
    pub v: Gate,
    pub o: Gate,
    pub wfx: Var,
    pub uf: Var,
    pub bf: Var,
    pub user: Option<UserGates>,
}

impl CshtDirection {
    pub fn bind(b: &Bound, prefix: &str) -> Self {
        let gate = |n: &str| Gate {
            w: b.get(&format!("{prefix}.w{n}")),
            u: b.get(&format!("{prefix}.u{n}")),
            b: b.get(&format!("{prefix}.b{n}")),
        };
        let user = b.try_get(&format!("{prefix}.wfg")).map(|wfg| UserGates { m: gate("m"), s: gate("s"), wfg });
        Self {
            i: gate("i"),
            v: gate("v"),
            o: gate("o"),
            wfx: b.get(&format!("{prefix}.wfx")),
            uf: b.get(&format!("{prefix}.uf")),
            bf: b.get(&format!("{prefix}.bf")),
            user,
        }
    }

    pub fn hidden_dim(&self, t: &Tape) -> usize {
        t.value(self.uf).rows()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CshtParams {
    pub up: CshtDirection,
    pub down: CshtDirection,
}

impl CshtParams {
    pub fn bind(b: &Bound, prefix: &str) -> Self {
        Self { up: CshtDirection::bind(b, &format!("{prefix}.up")), down: CshtDirection::bind(b, &format!("{prefix}.down")) }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct NodeState {
    pub c: Var,
    pub h: Var,
}

/// Tangent of a gate: `log0(W ⊗ a ⊕ U ⊗ h~ ⊕ b)`, given `log0 a` and
/// `log0 h~`.
fn gate_tangent(t: &mut Tape, geo: &Geo, g: &Gate, log_in: Var, log_h: Var) -> Var {
    let a = geo.matvec_tangent(t, g.w, log_in);
    let b = geo.matvec_tangent(t, g.u, log_h);
    let bias = geo.bias(t, g.b);
    let s = geo.add(t, a, b);
    let s = geo.add(t, s, bias);
    geo.log0(t, s)
}

/// One cell. `u` is the author point and must be given exactly when the
/// parameters carry user gates.
pub fn csht_cell(t: &mut Tape, geo: &Geo, p: &CshtDirection, x: Var, u: Option<Var>, preds: &[NodeState]) -> NodeState {
    let h = p.hidden_dim(t);
    let h_agg = if preds.is_empty() {
        t.constant(Tensor::zeros(vec![h]))
    } else {
        let hs: Vec<Var> = preds.iter().map(|s| s.h).collect();
        geo.einstein_midpoint(t, &hs, None)
    };
    let lx = geo.log0(t, x);
    let lh = geo.log0(t, h_agg);

    let ti = gate_tangent(t, geo, &p.i, lx, lh);
    let i = t.sigmoid(ti);
    let tv = gate_tangent(t, geo, &p.v, lx, lh);
    let v = t.tanh(tv);
    let iv = t.mul(i, v);
    let mut terms = vec![geo.exp0(t, iv)];

    let mut r = geo.matvec_tangent(t, p.wfx, lx);
    let lo = match (&p.user, u) {
        (Some(ug), Some(u)) => {
            let lu = geo.log0(t, u);
            let tm = gate_tangent(t, geo, &ug.m, lu, lh);
            let m = t.sigmoid(tm);
            let ts = gate_tangent(t, geo, &ug.s, lu, lh);
            let s = t.tanh(ts);
            let ms = t.mul(m, s);
            terms.push(geo.exp0(t, ms));
            let rg = geo.matvec_tangent(t, ug.wfg, lu);
            r = geo.add(t, r, rg);
            gate_tangent(t, geo, &p.o, lu, lh)
        }
        (None, None) => gate_tangent(t, geo, &p.o, lx, lh),
        _ => panic!("author point given iff user gates are present"),
    };
    let o = t.sigmoid(lo);

    let bf = geo.bias(t, p.bf);
    for k in preds {
        let lk = geo.log0(t, k.h);
        let uh = geo.matvec_tangent(t, p.uf, lk);
        let s = geo.add(t, r, uh);
        let s = geo.add(t, s, bf);
        let tf = geo.log0(t, s);
        let f = t.sigmoid(tf);
        let lc = geo.log0(t, k.c);
        let fc = t.mul(f, lc);
        terms.push(geo.exp0(t, fc));
    }
    let c = geo.add_all(t, &terms);

    let lc = geo.log0(t, c);
    let th = t.tanh(lc);
    let oh = t.mul(o, th);
    NodeState { c, h: geo.exp0(t, oh) }
}

/// Runs both passes over a tree. `x[i]` is the utterance point of node `i`
/// and `u[i]` its author's point. Returns `(h_up, h_down)` per node; with
/// `bidirectional == false` the downward slot is the origin.
pub fn csht_forward(
    t: &mut Tape,
    geo: &Geo,
    p: &CshtParams,
    tree: &ConversationTree,
    x: &[Var],
    u: Option<&[Var]>,
    bidirectional: bool,
) -> Vec<(Var, Var)> {
    let n = tree.len();
    assert_eq!(x.len(), n);
    let author = |i: usize| u.map(|u| u[i]);
    let levels = tree.levels();

    let mut up: Vec<Option<NodeState>> = vec![None; n];
    for level in levels.iter().rev() {
        for &j in level {
            let preds: Vec<NodeState> = tree.children(j).iter().map(|&k| up[k].expect("children first")).collect();
            up[j] = Some(csht_cell(t, geo, &p.up, x[j], author(j), &preds));
        }
    }

    let down: Vec<Var> = if bidirectional {
        let mut down: Vec<Option<NodeState>> = vec![None; n];
        for level in &levels {
            for &j in level {
                let preds: Vec<NodeState> = tree.parent(j).map(|q| down[q].expect("parent first")).into_iter().collect();
                down[j] = Some(csht_cell(t, geo, &p.down, x[j], author(j), &preds));
            }
        }
        down.into_iter().map(|s| s.unwrap().h).collect()
    } else {
        let h = p.up.hidden_dim(t);
        let origin = t.constant(Tensor::zeros(vec![h]));
        vec![origin; n]
    };
    up.into_iter().zip(down).map(|(s, d)| (s.unwrap().h, d)).collect()
}
