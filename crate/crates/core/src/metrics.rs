//! Hate-class precision, recall and F1 on the whole test pool and on the
//! implicit pool (implicit-hate positives plus every non-hate node).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// One scored node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub prob: f64,
    pub label_hate: bool,
    pub implicit_hate: bool,
    pub depth: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    /// With no positives predicted or present the pool is trivially solved and
    /// every score is 1. Otherwise an empty denominator gives 0.
    pub fn scores(&self) -> Prf {
        if self.tp + self.fp + self.fn_ == 0 {
            return Prf { precision: 1.0, recall: 1.0, f1: 1.0 };
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_);
        Prf { precision, recall, f1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: Prf,
    pub implicit: Prf,
    pub comment_implicit_f1: f64,
    pub reply_implicit_f1: f64,
    pub nodes: usize,
    pub implicit_nodes: usize,
    pub threshold: f64,
}

impl MetricsReport {
    pub fn compute(preds: &[Prediction], threshold: f64) -> Self {
        let mut overall = Confusion::default();
        let mut implicit = Confusion::default();
        let mut comment = Confusion::default();
        let mut reply = Confusion::default();
        let mut implicit_nodes = 0;
        for p in preds {
            let yhat = p.prob >= threshold;
            overall.add(yhat, p.label_hate);
            if p.label_hate && !p.implicit_hate {
                continue;
            }
            implicit_nodes += 1;
            implicit.add(yhat, p.label_hate);
            match p.depth {
                0 => {}
                1 => comment.add(yhat, p.label_hate),
                _ => reply.add(yhat, p.label_hate),
            }
        }
        Self {
            overall: overall.scores(),
            implicit: implicit.scores(),
            comment_implicit_f1: comment.scores().f1,
            reply_implicit_f1: reply.scores().f1,
            nodes: preds.len(),
            implicit_nodes,
            threshold,
        }
    }

    fn cells(&self) -> [f64; 8] {
        [
            self.overall.f1,
            self.overall.precision,
            self.overall.recall,
            self.implicit.f1,
            self.implicit.precision,
            self.implicit.recall,
            self.comment_implicit_f1,
            self.reply_implicit_f1,
        ]
    }
}

/// Aligned text table with one row per report: overall F1/P/R, then the
/// implicit pool F1/P/R and its comment and reply F1, all in percent.
pub fn render_table(rows: &[(String, MetricsReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.chars().count()).chain([10]).max().unwrap_or(10);
    let mut out = String::new();
    let _ = writeln!(out, "{:width$} | {:^23} | {:^41}", "", "Overall", "Implicit");
    let _ = writeln!(
        out,
        "{:width$} | {:>7}{:>8}{:>8} | {:>7}{:>8}{:>8}{:>9}{:>9}",
        "Model", "F1", "P", "R", "F1", "P", "R", "Comment", "Reply"
    );
    let _ = writeln!(out, "{}", "-".repeat(width + 71));
    for (name, r) in rows {
        let c = r.cells().map(|v| v * 100.0);
        let pad = width - name.chars().count();
        let _ = writeln!(
            out,
            "{name}{:pad$} | {:>7.2}{:>8.2}{:>8.2} | {:>7.2}{:>8.2}{:>8.2}{:>9.2}{:>9.2}",
            "", c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]
        );
    }
    out
}

/// Area under the ROC curve by the rank-sum formula, ties counted half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = r;
        }
        i = j + 1;
    }
    let pos = labels.iter().filter(|l| **l).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return 0.5;
    }
    let sum: f64 = ranks.iter().zip(labels).filter(|(_, l)| **l).map(|(r, _)| r).sum();
    (sum - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pred(prob: f64, hate: bool, implicit: bool, depth: usize) -> Prediction {
        Prediction { prob, label_hate: hate, implicit_hate: implicit, depth }
    }

    #[test]
    fn hand_built_confusion() {
        // TP = 2, FP = 1, FN = 1, TN = 2.
        let preds = [
            pred(0.9, true, false, 0),
            pred(0.8, true, true, 1),
            pred(0.7, false, false, 1),
            pred(0.2, true, true, 2),
            pred(0.1, false, false, 2),
            pred(0.3, false, false, 3),
        ];
        let r = MetricsReport::compute(&preds, DEFAULT_THRESHOLD);
        for v in [r.overall.precision, r.overall.recall, r.overall.f1] {
            assert!((v - 0.6667).abs() < 1e-4);
        }
        // Implicit pool drops the explicit positive: TP 1, FP 1, FN 1.
        assert_eq!(r.implicit_nodes, 5);
        assert!((r.implicit.f1 - 0.5).abs() < 1e-12);
        // Comments: TP 1, FP 1. Replies: FN 1.
        assert!((r.comment_implicit_f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.reply_implicit_f1, 0.0);
    }

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let preds = [pred(0.9, true, true, 1), pred(0.9, true, true, 2), pred(0.1, false, false, 1), pred(0.8, true, false, 0)];
        let r = MetricsReport::compute(&preds, DEFAULT_THRESHOLD);
        assert!(r.cells().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn predicting_no_hate_scores_zero() {
        let preds = [pred(0.1, true, true, 1), pred(0.2, false, false, 2)];
        let r = MetricsReport::compute(&preds, DEFAULT_THRESHOLD);
        assert_eq!(r.overall.recall, 0.0);
        assert_eq!(r.overall.f1, 0.0);
        assert_eq!(r.overall.precision, 0.0);
    }

    #[test]
    fn auc_of_known_rankings() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), 1.0);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]), 0.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[false, true]), 0.5);
        assert!((roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn table_has_a_row_per_report() {
        let rows = vec![("a".to_string(), MetricsReport::default()), ("bb".to_string(), MetricsReport::default())];
        let t = render_table(&rows);
        assert_eq!(t.lines().count(), 5);
        assert!(t.contains("Comment") && t.contains("Reply"));
    }

    proptest! {
        #[test]
        fn reports_ignore_order(
            raw in proptest::collection::vec((0.0f64..1.0, any::<bool>(), any::<bool>(), 0usize..4), 1..40),
            seed in any::<u64>(),
        ) {
            let preds: Vec<Prediction> = raw.iter().map(|&(p, h, i, d)| pred(p, h, h && i, d)).collect();
            let mut shuffled = preds.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let a = MetricsReport::compute(&preds, DEFAULT_THRESHOLD);
            let b = MetricsReport::compute(&shuffled, DEFAULT_THRESHOLD);
            prop_assert_eq!(&a, &b);
            for v in a.cells() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
