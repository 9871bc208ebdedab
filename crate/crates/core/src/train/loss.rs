use crate::encoder::DescriptorEncoder;
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Scalar, Var};

/// Mean squared distance between the frozen encoder's patch tokens (summary
/// excluded) of `pred` and `target`. Gradients flow into `pred` only when
/// the encoder parameters are frozen.
pub fn perceptual_proxy<T: Scalar>(
    g: &mut Graph<T>,
    enc: &DescriptorEncoder,
    store: &ParamStore<T>,
    pred: Var,
    target: Var,
    h: usize,
    w: usize,
) -> Result<Var> {
    let a = enc.image_forward(g, store, pred, h, w)?;
    let b = enc.image_forward(g, store, target, h, w)?;
    let l = g.shape(a)[0];
    let a = g.slice_rows(a, 1, l - 1)?;
    let b = g.slice_rows(b, 1, l - 1)?;
    g.mse(a, b)
}

/// `smooth_l1(pred, target) + w_p · perceptual_proxy(pred, target)`.
#[allow(clippy::too_many_arguments)]
pub fn loss_total<T: Scalar>(
    g: &mut Graph<T>,
    enc: &DescriptorEncoder,
    store: &ParamStore<T>,
    pred: Var,
    target: Var,
    h: usize,
    w: usize,
    perceptual_weight: f64,
    beta: f64,
) -> Result<Var> {
    if g.shape(pred) != g.shape(target) {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            g.shape(pred),
            g.shape(target)
        )));
    }
    if perceptual_weight < 0.0 {
        return Err(Error::Config(format!("perceptual weight must be non-negative, got {perceptual_weight}")));
    }
    let l1 = g.smooth_l1(pred, target, beta)?;
    if perceptual_weight == 0.0 {
        return Ok(l1);
    }
    let p = perceptual_proxy(g, enc, store, pred, target, h, w)?;
    let p = g.scale(p, perceptual_weight);
    g.add(l1, p)
}
