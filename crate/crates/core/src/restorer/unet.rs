use rand::Rng;

use super::block::AioBlock;
use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::numerics::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

pub const RESTORER_PREFIX: &str = "restorer.";

/// The transformer U-Net. Parameters live under [`RESTORER_PREFIX`].
#[derive(Clone, Debug)]
pub struct Restorer {
    pub cfg: ModelConfig,
    patch_embed: Linear,
    /// Descriptor projection per scale, `d_e × C_s`.
    w_c: Vec<ParamId>,
    enc: Vec<Vec<AioBlock>>,
    down: Vec<Linear>,
    up: Vec<Linear>,
    fuse: Vec<Linear>,
    dec: Vec<Vec<AioBlock>>,
    head_feat: Linear,
    /// 3×3 full-resolution conv over `[features; input]`, `[3, 3, c+3, hidden]`.
    head_conv: ParamId,
    head_conv_b: ParamId,
    head_fc2: Linear,
    /// Per-image colour curve from pooled decoder features.
    head_global: Linear,
    head_curve: Linear,
}

impl Restorer {
    pub fn new<T: Scalar, R: Rng>(cfg: ModelConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let p = |s: &str| format!("{RESTORER_PREFIX}{s}");
        let s_count = cfg.scales();
        let w = &cfg.widths;
        let d_e = cfg.encoder.dim;
        let patch_embed = Linear::new(store, &p("patch_embed"), 3 * cfg.patch * cfg.patch, w[0], true, 1.0, rng)?;
        let mut w_c = Vec::with_capacity(s_count);
        for (s, &c) in w.iter().enumerate() {
            w_c.push(store.insert_normal(p(&format!("w_c{s}")), &[d_e, c], 1.0 / (d_e as f64).sqrt(), rng)?);
        }
        let blocks = |store: &mut ParamStore<T>, rng: &mut R, path: &str, s: usize| -> Result<Vec<AioBlock>> {
            (0..cfg.blocks[s])
                .map(|b| {
                    AioBlock::new(
                        store,
                        &p(&format!("{path}{s}.block{b}")),
                        w[s],
                        cfg.heads[s],
                        cfg.classes,
                        cfg.ffn_expansion,
                        rng,
                    )
                })
                .collect()
        };
        let mut enc = Vec::with_capacity(s_count);
        let mut down = Vec::new();
        for s in 0..s_count {
            enc.push(blocks(store, rng, "enc", s)?);
            if s + 1 < s_count {
                down.push(Linear::new(store, &p(&format!("down{s}")), 4 * w[s], w[s + 1], true, 1.0, rng)?);
            }
        }
        let mut up = Vec::new();
        let mut fuse = Vec::new();
        let mut dec = Vec::new();
        for s in 0..s_count.saturating_sub(1) {
            up.push(Linear::new(store, &p(&format!("up{s}")), w[s + 1], 4 * w[s], true, 1.0, rng)?);
            fuse.push(Linear::new(store, &p(&format!("fuse{s}")), 2 * w[s], w[s], true, 1.0, rng)?);
            dec.push(blocks(store, rng, "dec", s)?);
        }
        let head_feat = Linear::new(store, &p("head.feat"), w[0], cfg.head_channels, true, 1.0, rng)?;
        let hc = cfg.head_channels + 3;
        let head_conv =
            store.insert_normal(p("head.conv.w"), &[3, 3, hc, cfg.head_hidden], 1.0 / ((9 * hc) as f64).sqrt(), rng)?;
        let head_conv_b = store.insert_const(p("head.conv.b"), &[cfg.head_hidden], 0.0)?;
        let head_fc2 = Linear::new(store, &p("head.fc2"), cfg.head_hidden, 3, true, 0.1, rng)?;
        let head_global = Linear::new(store, &p("head.global"), w[0], cfg.head_hidden, true, 1.0, rng)?;
        let head_curve = Linear::new(store, &p("head.curve"), cfg.head_hidden, 9, true, 0.1, rng)?;
        Ok(Restorer {
            cfg,
            patch_embed,
            w_c,
            enc,
            down,
            up,
            fuse,
            dec,
            head_feat,
            head_conv,
            head_conv_b,
            head_fc2,
            head_global,
            head_curve,
        })
    }

    pub fn w_c(&self, scale: usize) -> ParamId {
        self.w_c[scale]
    }

    pub fn check_extent(&self, h: usize, w: usize) -> Result<()> {
        let d = self.cfg.divisibility();
        if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
            return Err(Error::Shape(format!(
                "image extents must be multiples of {d}, got {w}×{h}"
            )));
        }
        Ok(())
    }

    /// Restored `(h·w) × 3` map, clamped to [0, 1].
    ///
    /// `raw` holds the unprojected `(k+1) × d_e` descriptor per class; each
    /// scale projects them with its own `W_c`. `lambda` is shared by every
    /// block.
    ///
    /// The head adds two residuals to the input: a local one from upsampled
    /// decoder features convolved together with the input, and a per-image
    /// quadratic colour curve predicted from mean-pooled decoder features.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        img: Var,
        h: usize,
        w: usize,
        raw: &[Var],
        lambda: &[f64],
    ) -> Result<Var> {
        self.check_extent(h, w)?;
        if g.shape(img) != [h * w, 3] {
            return Err(Error::Shape(format!("expected a [{}, 3] image map, got {:?}", h * w, g.shape(img))));
        }
        let s_count = self.cfg.scales();
        let mut descs: Vec<Vec<Var>> = Vec::with_capacity(s_count);
        for &wc in &self.w_c {
            let wc = g.param(store, wc);
            descs.push(raw.iter().map(|&r| g.matmul(r, wc)).collect::<Result<_>>()?);
        }

        let p = self.cfg.patch;
        let (mut hs, mut ws) = (h / p, w / p);
        let x = g.space_to_depth(img, h, w, p)?;
        let mut x = self.patch_embed.forward(g, store, x)?;
        let mut skips = Vec::with_capacity(s_count);
        for s in 0..s_count {
            for b in &self.enc[s] {
                x = b.forward(g, store, x, hs, ws, &descs[s], lambda)?;
            }
            if s + 1 < s_count {
                skips.push(x);
                let y = g.space_to_depth(x, hs, ws, 2)?;
                x = self.down[s].forward(g, store, y)?;
                hs /= 2;
                ws /= 2;
            }
        }
        for s in (0..s_count - 1).rev() {
            let y = self.up[s].forward(g, store, x)?;
            x = g.depth_to_space(y, hs, ws, 2)?;
            hs *= 2;
            ws *= 2;
            let cat = g.concat_cols(&[x, skips[s]])?;
            x = self.fuse[s].forward(g, store, cat)?;
            for b in &self.dec[s] {
                x = b.forward(g, store, x, hs, ws, &descs[s], lambda)?;
            }
        }

        let f = self.head_feat.forward(g, store, x)?;
        let f = g.upsample_bilinear(f, hs, ws, p)?;
        let f = g.concat_cols(&[f, img])?;
        let k = g.param(store, self.head_conv);
        let f = g.conv2d(f, k, h, w)?;
        let b = g.param(store, self.head_conv_b);
        let f = g.add_bias(f, b)?;
        let f = g.gelu(f);
        let local = self.head_fc2.forward(g, store, f)?;

        // img·(1 + a) + img²·q + b with per-channel a, q, b for the whole image
        let n = hs * ws;
        let avg = g.constant(Tensor::new(vec![1, n], vec![T::of(1.0 / n as f64); n])?);
        let pooled = g.matmul(avg, x)?;
        let z = self.head_global.forward(g, store, pooled)?;
        let z = g.gelu(z);
        let curve = self.head_curve.forward(g, store, z)?;
        let ones = g.constant(Tensor::new(vec![h * w, 1], vec![T::of(1.0); h * w])?);
        let curve = g.matmul(ones, curve)?;
        let a = g.slice_cols(curve, 0, 3)?;
        let q = g.slice_cols(curve, 3, 3)?;
        let b = g.slice_cols(curve, 6, 3)?;
        let sq = g.mul(img, img)?;
        let ga = g.mul(img, a)?;
        let gq = g.mul(sq, q)?;
        let glob = g.add(ga, gq)?;
        let glob = g.add(glob, b)?;

        let out = g.add(img, local)?;
        let out = g.add(out, glob)?;
        Ok(g.clamp(out, 0.0, 1.0))
    }

    /// Blocks in forward order (encoder path, then decoder path).
    pub fn blocks(&self) -> impl Iterator<Item = &AioBlock> {
        self.enc.iter().flatten().chain(self.dec.iter().rev().flatten())
    }
}
