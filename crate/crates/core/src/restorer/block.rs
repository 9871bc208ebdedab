use rand::Rng;

use super::attention::aioa;
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear};
use crate::numerics::{Graph, ParamId, ParamStore, Scalar, Var};

/// All-in-one transformer block: AiOA over the scene descriptors, joint
/// self-attention over `[S; x]`, then a gated depth-wise-conv feed-forward.
#[derive(Clone, Debug)]
pub struct AioBlock {
    pub width: usize,
    pub heads: usize,
    pub classes: usize,
    hidden: usize,
    norm_kv: LayerNorm,
    aioa_k: Linear,
    aioa_v: Linear,
    aioa_o: Linear,
    norm_sa: LayerNorm,
    sa_q: Linear,
    sa_k: Linear,
    sa_v: Linear,
    sa_o: Linear,
    norm_ffn: LayerNorm,
    ffn_in: Linear,
    ffn_dw: ParamId,
    ffn_out: Linear,
}

/// Intermediate values of one block, kept for inspection.
#[derive(Clone, Copy, Debug)]
pub struct BlockTrace {
    pub scheme: Var,
    pub joint_attention: Var,
    pub output: Var,
}

impl AioBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        heads: usize,
        classes: usize,
        expansion: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let c = width;
        let hidden = c * expansion;
        let n = |s: &str| format!("{name}.{s}");
        Ok(AioBlock {
            width,
            heads,
            classes,
            hidden,
            norm_kv: LayerNorm::new(store, &n("aioa.norm"), c)?,
            aioa_k: Linear::new(store, &n("aioa.k"), c, c, true, 1.0, rng)?,
            aioa_v: Linear::new(store, &n("aioa.v"), c, c, true, 1.0, rng)?,
            aioa_o: Linear::new(store, &n("aioa.o"), c, c, true, 1.0, rng)?,
            norm_sa: LayerNorm::new(store, &n("sa.norm"), c)?,
            sa_q: Linear::new(store, &n("sa.q"), c, c, true, 1.0, rng)?,
            sa_k: Linear::new(store, &n("sa.k"), c, c, true, 1.0, rng)?,
            sa_v: Linear::new(store, &n("sa.v"), c, c, true, 1.0, rng)?,
            sa_o: Linear::new(store, &n("sa.o"), c, c, true, 0.5, rng)?,
            norm_ffn: LayerNorm::new(store, &n("ffn.norm"), c)?,
            ffn_in: Linear::new(store, &n("ffn.in"), c, 2 * hidden, true, 1.0, rng)?,
            ffn_dw: store.insert_normal(n("ffn.dw"), &[3, 3, 2 * hidden], 1.0 / 3.0, rng)?,
            ffn_out: Linear::new(store, &n("ffn.out"), hidden, c, true, 0.5, rng)?,
        })
    }

    /// The same weights driven by a different number of descriptors.
    pub fn with_classes(&self, classes: usize) -> Self {
        AioBlock { classes, ..self.clone() }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        h: usize,
        w: usize,
        descriptors: &[Var],
        lambda: &[f64],
    ) -> Result<Var> {
        Ok(self.forward_traced(g, store, x, h, w, descriptors, lambda)?.output)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward_traced<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        h: usize,
        w: usize,
        descriptors: &[Var],
        lambda: &[f64],
    ) -> Result<BlockTrace> {
        let shape = g.shape(x).to_vec();
        if shape != [h * w, self.width] {
            return Err(Error::Shape(format!(
                "block of width {} on a {h}×{w} map expects [{}, {}], got {shape:?}",
                self.width,
                h * w,
                self.width
            )));
        }
        for &c in descriptors {
            if g.shape(c).len() != 2 || g.shape(c)[1] != self.width {
                return Err(Error::Shape(format!(
                    "descriptor {:?} does not match block width {}",
                    g.shape(c),
                    self.width
                )));
            }
        }

        // (a) restoration schemes from the descriptors
        let y = self.norm_kv.forward(g, store, x)?;
        let k = self.aioa_k.forward(g, store, y)?;
        let v = self.aioa_v.forward(g, store, y)?;
        let scheme = aioa(g, store, descriptors, lambda, k, v, self.heads, &self.aioa_o, self.classes)?;

        // (b) joint self-attention over [S; x], residual on image positions
        let m = g.shape(scheme)[0];
        let joint = g.concat_rows(&[scheme, x])?;
        let j = self.norm_sa.forward(g, store, joint)?;
        // only image positions are kept, so only they need queries
        let j_img = g.slice_rows(j, m, h * w)?;
        let q = self.sa_q.forward(g, store, j_img)?;
        let kk = self.sa_k.forward(g, store, j)?;
        let vv = self.sa_v.forward(g, store, j)?;
        let joint_attention = g.attention(q, kk, vv, self.heads)?;
        let a = self.sa_o.forward(g, store, joint_attention)?;
        let x = g.add(x, a)?;

        // (c) gated depth-wise-conv feed-forward
        let y = self.norm_ffn.forward(g, store, x)?;
        let y = self.ffn_in.forward(g, store, y)?;
        let dw = g.param(store, self.ffn_dw);
        let y = g.depthwise_conv2d(y, dw, h, w)?;
        let y1 = g.slice_cols(y, 0, self.hidden)?;
        let y2 = g.slice_cols(y, self.hidden, self.hidden)?;
        let y1 = g.gelu(y1);
        let y = g.mul(y1, y2)?;
        let y = self.ffn_out.forward(g, store, y)?;
        let output = g.add(x, y)?;
        Ok(BlockTrace { scheme, joint_attention, output })
    }
}
