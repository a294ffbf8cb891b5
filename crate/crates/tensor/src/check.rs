//! Finite-difference gradient checking.

use crate::error::TensorError;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Denominator floor for the relative error, so that entries whose true
/// gradient is near zero are judged on absolute error instead.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, floor)`, maximised over entries.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> Result<f64, TensorError> {
    analytic.expect_same_shape(numeric, "gradient comparison")?;
    let mut worst: f64 = 0.0;
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        if !a.is_finite() || !n.is_finite() {
            return Err(TensorError::NonFinite("gradient comparison".into()));
        }
        let denom = a.abs().max(n.abs()).max(RELATIVE_ERROR_FLOOR);
        worst = worst.max((a - n).abs() / denom);
    }
    Ok(worst)
}

/// Central-difference gradient of a scalar function.
pub fn numeric_gradient(
    mut f: impl FnMut(&Tensor) -> Result<f64, TensorError>,
    x: &Tensor,
    eps: f64,
) -> Result<Tensor, TensorError> {
    if eps <= 0.0 {
        return Err(TensorError::Graph("finite-difference step must be positive".into()));
    }
    let mut grad = Tensor::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        let d = (plus - minus) / (2.0 * eps);
        if !d.is_finite() {
            return Err(TensorError::NonFinite("finite difference".into()));
        }
        grad.data_mut()[i] = d;
    }
    Ok(grad)
}

fn eval_scalar(f: &impl Fn(&mut Graph, Var) -> Result<Var, TensorError>, x: &Tensor) -> Result<f64, TensorError> {
    let mut g = Graph::new();
    let v = g.input(x.clone());
    let out = f(&mut g, v)?;
    g.check()?;
    if g.shape(out) != [1, 1] {
        return Err(TensorError::Graph("checked function must be scalar-valued".into()));
    }
    Ok(g.value(out).item())
}

/// Analytic gradient of `f` at `x` next to its central-difference estimate.
pub fn gradient_pair(
    f: impl Fn(&mut Graph, Var) -> Result<Var, TensorError>,
    x: &Tensor,
    eps: f64,
) -> Result<(Tensor, Tensor), TensorError> {
    let mut g = Graph::new();
    let v = g.input(x.clone());
    let out = f(&mut g, v)?;
    let grads = g.backward(out)?;
    let analytic = grads.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols()));
    let numeric = numeric_gradient(|p| eval_scalar(&f, p), x, eps)?;
    Ok((analytic, numeric))
}

/// True iff the analytic and central-difference gradients of the scalar
/// function `f` at `x` agree to within `tol` (max relative error).
pub fn grad_check(
    f: impl Fn(&mut Graph, Var) -> Result<Var, TensorError>,
    x: &Tensor,
    eps: f64,
    tol: f64,
) -> Result<bool, TensorError> {
    let (analytic, numeric) = gradient_pair(f, x, eps)?;
    Ok(max_relative_error(&analytic, &numeric)? < tol)
}

/// Gradient check over every parameter in a store.
///
/// Returns the worst relative error and the parameter it came from.
pub fn param_grad_check(
    f: impl Fn(&mut Graph) -> Result<Var, TensorError>,
    store: &ParamStore,
    eps: f64,
) -> Result<(f64, Option<ParamId>), TensorError> {
    let analytic = {
        let mut g = Graph::with_params(store);
        let out = f(&mut g)?;
        g.backward(out)?.param_grads()
    };
    let mut probe = store.clone();
    let mut worst = (0.0, None);
    for id in store.ids() {
        let base = store.get(id).clone();
        let numeric = numeric_gradient(
            |p| {
                *probe.get_mut(id) = p.clone();
                let mut g = Graph::with_params(&probe);
                let out = f(&mut g)?;
                g.check()?;
                Ok(g.value(out).item())
            },
            &base,
            eps,
        )?;
        *probe.get_mut(id) = base.clone();
        let a = analytic.get(id).cloned().unwrap_or_else(|| Tensor::zeros(base.rows(), base.cols()));
        let err = max_relative_error(&a, &numeric)?;
        if err > worst.0 {
            worst = (err, Some(id));
        }
    }
    Ok(worst)
}
