use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn eval<F>(f: &F, point: Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.constant(point);
    let y = f(&mut g, x)?;
    scalar_of(&g, y)
}

fn scalar_of(g: &Graph, y: Var) -> Result<f64> {
    let v = g.value(y);
    if v.numel() != 1 {
        return Err(Error::shape("grad_check", "output element count", 1, v.numel()));
    }
    Ok(v.data()[0])
}

/// Largest per-coordinate discrepancy between the tape gradient of `f` at
/// `point` and a central difference with step `eps`, measured as
/// `|analytic − numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::invalid("grad_check", format!("eps {eps} outside [1e-6, 1e-4]")));
    }
    let mut g = Graph::new();
    let x = g.param(point.clone());
    let y = f(&mut g, x)?;
    scalar_of(&g, y)?;
    let grads = g.backward(y)?;
    let analytic = grads
        .get(x)
        .map(|t| t.data().to_vec())
        .unwrap_or_else(|| vec![0.0; point.numel()]);

    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = point.clone();
        plus.data_mut()[i] += eps;
        let mut minus = point.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(&f, plus)? - eval(&f, minus)?) / (2.0 * eps);
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
