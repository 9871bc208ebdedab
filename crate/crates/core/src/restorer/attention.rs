use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::numerics::{Graph, ParamStore, Scalar, Var};

/// `SA(Q, K, V)`: per head `softmax(Q Kᵀ / √d_h) V`, heads concatenated
/// and passed through the output projection.
pub fn self_attention<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    out: &Linear,
) -> Result<Var> {
    let a = g.attention(q, k, v, heads)?;
    out.forward(g, store, a)
}

/// All-in-one attention: `S = Σ_i λ_i · SA(c_i, K, V)`.
///
/// The descriptors are stacked into one query sequence for a single
/// attention call; attention rows are independent, so this equals running
/// each `SA(c_i, K, V)` separately.
#[allow(clippy::too_many_arguments)]
pub fn aioa<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    descriptors: &[Var],
    lambda: &[f64],
    k: Var,
    v: Var,
    heads: usize,
    out: &Linear,
    classes: usize,
) -> Result<Var> {
    if descriptors.len() != classes || lambda.len() != classes {
        return Err(Error::Config(format!(
            "expected {classes} descriptors and weights, got {} and {}",
            descriptors.len(),
            lambda.len()
        )));
    }
    let rows = g.shape(descriptors[0])[0];
    for &c in descriptors {
        if g.shape(c)[0] != rows {
            return Err(Error::Shape(format!(
                "descriptors differ in length: {:?} vs {:?}",
                g.shape(c),
                g.shape(descriptors[0])
            )));
        }
    }
    let q = if descriptors.len() == 1 { descriptors[0] } else { g.concat_rows(descriptors)? };
    let sa = self_attention(g, store, q, k, v, heads, out)?;
    let mut acc: Option<Var> = None;
    for (i, &l) in lambda.iter().enumerate() {
        let part = if classes == 1 { sa } else { g.slice_rows(sa, i * rows, rows)? };
        let term = g.scale(part, l);
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term)?,
        });
    }
    Ok(acc.expect("at least one class"))
}
