//! Parameterised layers shared by the encoder and the restorer. Layers hold
//! [`ParamId`]s; values come from the [`ParamStore`] at forward time.

use rand::Rng;

use crate::error::Result;
use crate::numerics::{Graph, ParamId, ParamStore, Scalar, Var};

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Normal init with std `gain / √fan_in`, zero bias.
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let std = gain / (fan_in as f64).sqrt();
        let w = store.insert_normal(format!("{name}.w"), &[fan_in, fan_out], std, rng)?;
        let b = if bias { Some(store.insert_const(format!("{name}.b"), &[fan_out], 0.0)?) } else { None };
        Ok(Linear { w, b, fan_in, fan_out })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(store, b);
                g.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.insert_const(format!("{name}.gamma"), &[dim], 1.0)?,
            beta: store.insert_const(format!("{name}.beta"), &[dim], 0.0)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}
