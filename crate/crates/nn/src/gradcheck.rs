use crate::{Graph, Tensor, Var};

pub const DENOM_FLOOR: f64 = 1e-6;

/// Compares reverse-mode gradients of a scalar computation against central
/// differences `(f(x+h) - f(x-h)) / 2h`, coordinate by coordinate.
///
/// `f` receives a fresh graph and one leaf per entry of `params` and must
/// return a single-element node. Returns the largest
/// `|analytic - numeric| / max(DENOM_FLOOR, |analytic| + |numeric|)`; the
/// floor keeps gradients that are exactly zero from turning rounding noise
/// into large ratios.
pub fn grad_check<F>(params: &[Tensor<f64>], h: f64, f: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let eval = |values: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out);

    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for (pi, var) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(params[pi].shape().to_vec());
        let analytic = grads.get(*var).unwrap_or(&zeros).data().to_vec();
        for (j, &a) in analytic.iter().enumerate() {
            let orig = work[pi].data()[j];
            work[pi].data_mut()[j] = orig + h;
            let up = eval(&work);
            work[pi].data_mut()[j] = orig - h;
            let down = eval(&work);
            work[pi].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(DENOM_FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}
