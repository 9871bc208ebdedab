//! Central finite-difference verification of analytic gradients.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Max over coordinates of `|analytic − fd| / max(1, |analytic|)` for a
/// scalar function of `x`, in 64-bit.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let out = f(&mut g, xv)?;
    if g.value(out).numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar function, output shape is {:?}",
            g.shape(out)
        )));
    }
    g.backward(out)?;
    let analytic = g
        .grad(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |probe: Tensor<f64>| -> Result<f64> {
        let mut g = Graph::inference();
        let v = g.constant(probe);
        let out = f(&mut g, v)?;
        Ok(g.value(out).item())
    };

    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        worst = worst.max((a - fd).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
