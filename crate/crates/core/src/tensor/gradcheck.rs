//! Central finite-difference checking of reverse-mode gradients.
//!
//! The numeric side only ever runs forward passes, so it is independent of the backward
//! rules it validates.

use super::{Graph, Tensor, TensorError, Var};

/// Outcome of one gradient comparison.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// max |analytic − numeric| / max(max |analytic|, max |numeric|, floor)
    pub relative_error: f64,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

/// Builds `f(inputs)` on a fresh graph and contracts the output with `projection`
/// (or sums it, if the output is already scalar).
fn evaluate<F>(f: &F, inputs: &[Tensor<f64>], projection: Option<&[f64]>) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var, TensorError>,
{
    let mut g = Graph::training(7, 0);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let vals = g.value(out);
    Ok(match projection {
        Some(p) => vals.iter().zip(p).map(|(a, b)| a * b).sum(),
        None => vals.iter().sum(),
    })
}

/// Compares analytic gradients of `sum(f(inputs) ⊙ projection)` against central differences
/// with step `eps`. Dropout masks are identical between passes because the graph seed, step
/// and op indices are fixed.
pub fn check<F>(f: F, inputs: &[Tensor<f64>], projection: &[f64], eps: f64) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var, TensorError>,
{
    let mut g = Graph::training(7, 0);
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.input(t.clone().with_requires_grad(true)))
        .collect();
    let out = f(&mut g, &vars)?;
    let [r, c] = g.shape(out);
    let proj = g.constant(r, c, projection[..r * c].to_vec())?;
    let weighted = g.mul(out, proj)?;
    let loss = g.sum(weighted);
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.grad(*v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let proj = &projection[..r * c];
    let mut numeric = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grads = vec![0.0; inputs[i].len()];
        for (j, grad) in grads.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += eps;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= eps;
            let fp = evaluate(&f, &plus, Some(proj))?;
            let fm = evaluate(&f, &minus, Some(proj))?;
            *grad = (fp - fm) / (2.0 * eps);
        }
        numeric.push(grads);
    }

    let mut max_diff: f64 = 0.0;
    let mut scale: f64 = 1e-8;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (x, y) in a.iter().zip(n) {
            max_diff = max_diff.max((x - y).abs());
            scale = scale.max(x.abs()).max(y.abs());
        }
    }
    Ok(GradCheck {
        relative_error: max_diff / scale,
        analytic,
        numeric,
    })
}
