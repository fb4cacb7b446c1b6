//! Central finite-difference gradient checking.
//!
//! The numeric side rebuilds the graph from scratch for every perturbed
//! evaluation, so it stays independent of the backward pass it verifies.

use super::{Graph, Result, Tensor, TensorError, Var};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max relative error per input tensor, in input order.
    pub per_input: Vec<f64>,
    pub max_rel_err: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Compares analytic gradients of a scalar-valued function against central
/// differences. `f` must be deterministic. Relative error uses the
/// denominator `max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.leaf(t.clone(), true))
        .collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(TensorError::NotScalar {
            op: "grad_check",
            shape: g.value(out).shape().to_vec(),
        });
    }
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .map(|grad| grad.data().to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let mut per_input = Vec::with_capacity(inputs.len());
    let mut pert = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut worst = 0.0f64;
        for e in 0..inputs[i].numel() {
            let orig = pert[i].data()[e];
            pert[i].data_mut()[e] = orig + eps;
            let plus = eval_scalar(&f, &pert)?;
            pert[i].data_mut()[e] = orig - eps;
            let minus = eval_scalar(&f, &pert)?;
            pert[i].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[i][e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(rel);
        }
        per_input.push(worst);
    }
    let max_rel_err = per_input.iter().cloned().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_input,
        max_rel_err,
        tol,
        pass: max_rel_err < tol,
    })
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_matches_analytic() {
        // f(x) = sum(x^2), x = [1, 2] -> grad [2, 4]
        let x = Tensor::row(&[1.0, 2.0]);
        let report = grad_check(
            |g, vars| {
                let sq = g.mul(vars[0], vars[0])?;
                Ok(g.sum(sq))
            },
            &[x],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )
        .unwrap();
        assert!(report.pass);
        assert!(report.max_rel_err < 1e-8, "err {}", report.max_rel_err);
    }

    #[test]
    fn rejects_non_scalar_output() {
        let x = Tensor::row(&[1.0, 2.0]);
        let err = grad_check(
            |g, vars| Ok(g.relu(vars[0])),
            &[x],
            DEFAULT_EPS,
            DEFAULT_TOL,
        )
        .unwrap_err();
        assert!(matches!(err, TensorError::NotScalar { .. }));
    }
}
