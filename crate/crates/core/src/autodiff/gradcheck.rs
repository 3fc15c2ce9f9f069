use super::{Tape, Var};
use crate::tensor::{norm, Tensor};

/// Outcome of comparing tape gradients with central finite differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Per input: `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`,
    /// norms taken over the whole input tensor.
    pub relative_errors: Vec<f64>,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

impl GradCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().cloned().fold(0.0, f64::max)
    }
}

/// Builds `f` on a fresh tape with `inputs` as leaves, differentiates the
/// scalar it returns, and compares against central differences of step `h`.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, h: f64) -> GradCheck
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.item(out)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out).expect("scalar output");
    let analytic: Vec<Vec<f64>> =
        vars.iter().zip(inputs).map(|(v, t)| grads.get_or_zeros(*v, t.len())).collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut g = vec![0.0; inputs[i].len()];
        for k in 0..inputs[i].len() {
            let orig = work[i].data()[k];
            work[i].data_mut()[k] = orig + h;
            let up = eval(&work);
            work[i].data_mut()[k] = orig - h;
            let down = eval(&work);
            work[i].data_mut()[k] = orig;
            g[k] = (up - down) / (2.0 * h);
        }
        numeric.push(g);
    }

    let relative_errors = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| {
            let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
            norm(&diff) / norm(a).max(norm(n)).max(1e-8)
        })
        .collect();
    GradCheck { relative_errors, analytic, numeric }
}
