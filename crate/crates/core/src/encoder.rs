//! Toy text/image encoder pair standing in for a pretrained vision-language
//! model, plus the memory bank of class text embeddings.
//!
//! The image side patchifies the input, embeds each patch linearly, prepends
//! a learned summary token and runs a few pre-norm self-attention blocks.
//! There are no positional embeddings, so patch tokens are permutation
//! equivariant. The text side is a closed four-word vocabulary: an embedding
//! table followed by a residual MLP. All parameters live under
//! [`ENCODER_PREFIX`] in the shared [`ParamStore`].

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::nn::{LayerNorm, Linear};
use crate::numerics::{Adam, Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::synth::{Degradation, Sample};

pub const ENCODER_PREFIX: &str = "encoder.";

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Shared embedding width d_e of text embeddings, image tokens and z.
    pub dim: usize,
    pub patch: usize,
    pub blocks: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { dim: 64, patch: 8, blocks: 2, heads: 4, mlp_ratio: 4 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.patch == 0 || self.heads == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config(format!("encoder extents must be positive: {self:?}")));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "encoder width {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }

    /// Number of tokens produced for an `h × w` image, summary included.
    pub fn token_count(&self, h: usize, w: usize) -> usize {
        1 + (h / self.patch) * (w / self.patch)
    }
}

#[derive(Clone, Debug)]
struct EncoderBlock {
    norm1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Clone, Debug)]
pub struct DescriptorEncoder {
    pub cfg: EncoderConfig,
    text_table: ParamId,
    text_fc1: Linear,
    text_fc2: Linear,
    patch_embed: Linear,
    summary: ParamId,
    blocks: Vec<EncoderBlock>,
    norm_out: LayerNorm,
    proj: Linear,
}

/// Tokens `e^1..e^l` of one image; row 0 is the summary token.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTokenSet {
    pub tokens: Tensor<f32>,
    pub grid: (usize, usize),
}

impl ImageTokenSet {
    pub fn len(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn summary(&self) -> &[f32] {
        self.tokens.row(0)
    }

    pub fn token(&self, i: usize) -> &[f32] {
        self.tokens.row(i)
    }

    /// Copy with every token scaled to unit length.
    pub fn normalized(&self) -> ImageTokenSet {
        let d = self.dim();
        let mut t = self.tokens.clone();
        for row in t.data_mut().chunks_mut(d) {
            normalize(row);
        }
        ImageTokenSet { tokens: t, grid: self.grid }
    }
}

pub(crate) fn normalize(v: &mut [f32]) {
    let n = (v.iter().map(|x| x * x).sum::<f32>() + 1e-12).sqrt();
    for x in v {
        *x /= n;
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb).max(1e-24)
}

impl DescriptorEncoder {
    pub fn new<T: Scalar, R: Rng>(cfg: EncoderConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let p = |s: &str| format!("{ENCODER_PREFIX}{s}");
        let n = Degradation::ALL.len();
        let text_table = store.insert_normal(p("text.table"), &[n, d], 1.0, rng)?;
        let text_fc1 = Linear::new(store, &p("text.fc1"), d, d, true, 1.0, rng)?;
        let text_fc2 = Linear::new(store, &p("text.fc2"), d, d, true, 0.5, rng)?;
        let patch_in = cfg.patch * cfg.patch * 3;
        let patch_embed = Linear::new(store, &p("image.patch"), patch_in, d, true, 1.0, rng)?;
        let summary = store.insert_normal(p("image.summary"), &[1, d], 0.5, rng)?;
        let hidden = d * cfg.mlp_ratio;
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for b in 0..cfg.blocks {
            let name = |s: &str| p(&format!("image.block{b}.{s}"));
            blocks.push(EncoderBlock {
                norm1: LayerNorm::new(store, &name("norm1"), d)?,
                q: Linear::new(store, &name("q"), d, d, true, 1.0, rng)?,
                k: Linear::new(store, &name("k"), d, d, true, 1.0, rng)?,
                v: Linear::new(store, &name("v"), d, d, true, 1.0, rng)?,
                o: Linear::new(store, &name("o"), d, d, true, 0.5, rng)?,
                norm2: LayerNorm::new(store, &name("norm2"), d)?,
                fc1: Linear::new(store, &name("fc1"), d, hidden, true, 1.0, rng)?,
                fc2: Linear::new(store, &name("fc2"), hidden, d, true, 0.5, rng)?,
            });
        }
        let norm_out = LayerNorm::new(store, &p("image.norm_out"), d)?;
        let proj = Linear::new(store, &p("proj"), d, d, true, 1.0, rng)?;
        Ok(DescriptorEncoder {
            cfg,
            text_table,
            text_fc1,
            text_fc2,
            patch_embed,
            summary,
            blocks,
            norm_out,
            proj,
        })
    }

    /// Unit-norm text embeddings for the given vocabulary indices, one row each.
    pub fn text_forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, classes: &[usize]) -> Result<Var> {
        let n = Degradation::ALL.len();
        let mut onehot = vec![0.0; classes.len() * n];
        for (r, &c) in classes.iter().enumerate() {
            if c >= n {
                return Err(Error::Vocabulary(format!("class index {c} outside the {n}-word vocabulary")));
            }
            onehot[r * n + c] = 1.0;
        }
        let sel = g.constant(Tensor::from_f64(vec![classes.len(), n], &onehot)?);
        let table = g.param(store, self.text_table);
        let x = g.matmul(sel, table)?;
        let h = self.text_fc1.forward(g, store, x)?;
        let h = g.gelu(h);
        let h = self.text_fc2.forward(g, store, h)?;
        let x = g.add(x, h)?;
        Ok(g.l2_normalize_rows(x))
    }

    fn check_extent(&self, h: usize, w: usize) -> Result<()> {
        let p = self.cfg.patch;
        if h == 0 || w == 0 || h % p != 0 || w % p != 0 {
            return Err(Error::Shape(format!("encoder needs extents divisible by {p}, got {w}×{h}")));
        }
        Ok(())
    }

    /// Token set `l × d_e` for an `(h·w) × 3` image map; row 0 is the summary.
    pub fn image_forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        img: Var,
        h: usize,
        w: usize,
    ) -> Result<Var> {
        self.check_extent(h, w)?;
        let patches = g.space_to_depth(img, h, w, self.cfg.patch)?;
        let x = self.patch_embed.forward(g, store, patches)?;
        let summary = g.param(store, self.summary);
        let mut x = g.concat_rows(&[summary, x])?;
        for b in &self.blocks {
            let y = b.norm1.forward(g, store, x)?;
            let q = b.q.forward(g, store, y)?;
            let k = b.k.forward(g, store, y)?;
            let v = b.v.forward(g, store, y)?;
            let a = g.attention(q, k, v, self.cfg.heads)?;
            let a = b.o.forward(g, store, a)?;
            x = g.add(x, a)?;
            let y = b.norm2.forward(g, store, x)?;
            let y = b.fc1.forward(g, store, y)?;
            let y = g.gelu(y);
            let y = b.fc2.forward(g, store, y)?;
            x = g.add(x, y)?;
        }
        self.norm_out.forward(g, store, x)
    }

    /// Projection head applied to summary token rows.
    pub fn project_forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, e1: Var) -> Result<Var> {
        self.proj.forward(g, store, e1)
    }

    pub fn encode_text(&self, store: &ParamStore<f32>, text: &str) -> Result<Vec<f32>> {
        let class: Degradation = text.parse()?;
        let mut g = Graph::inference();
        let x = self.text_forward(&mut g, store, &[class.index()])?;
        Ok(g.value(x).data().to_vec())
    }

    pub fn encode_image(&self, store: &ParamStore<f32>, img: &ImageBuffer) -> Result<ImageTokenSet> {
        self.check_extent(img.height(), img.width())?;
        let mut g = Graph::inference();
        let x = g.constant(img.to_tensor());
        let t = self.image_forward(&mut g, store, x, img.height(), img.width())?;
        let grid = (img.height() / self.cfg.patch, img.width() / self.cfg.patch);
        Ok(ImageTokenSet { tokens: g.value(t).clone(), grid })
    }

    pub fn project_summary(&self, store: &ParamStore<f32>, e1: &[f32]) -> Result<Vec<f32>> {
        if e1.len() != self.cfg.dim {
            return Err(Error::Shape(format!(
                "summary token has width {}, projection expects {}",
                e1.len(),
                self.cfg.dim
            )));
        }
        let mut g = Graph::inference();
        let x = g.constant(Tensor::new(vec![1, e1.len()], e1.to_vec())?);
        let z = self.project_forward(&mut g, store, x)?;
        Ok(g.value(z).data().to_vec())
    }
}

/// The fixed, ordered set of degradation classes with cached unit-norm text
/// embeddings. Index `i` is the class identity everywhere downstream.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    classes: Vec<Degradation>,
    embeddings: Tensor<f32>,
}

impl MemoryBank {
    pub fn new(classes: Vec<Degradation>, embeddings: Tensor<f32>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Config("memory bank has no classes".into()));
        }
        let (n, _) = embeddings.dims2()?;
        if n != classes.len() {
            return Err(Error::Shape(format!("{} classes but {n} embeddings", classes.len())));
        }
        for (i, c) in classes.iter().enumerate() {
            if classes[..i].contains(c) {
                return Err(Error::Config(format!("class {c} listed twice in the memory bank")));
            }
        }
        Ok(MemoryBank { classes, embeddings })
    }

    /// Embeds every class text with the current encoder weights.
    pub fn from_encoder(enc: &DescriptorEncoder, store: &ParamStore<f32>) -> Result<Self> {
        let classes = Degradation::ALL.to_vec();
        let mut g = Graph::inference();
        let idx: Vec<usize> = classes.iter().map(|c| c.index()).collect();
        let x = enc.text_forward(&mut g, store, &idx)?;
        MemoryBank::new(classes, g.value(x).clone())
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.shape()[1]
    }

    pub fn classes(&self) -> &[Degradation] {
        &self.classes
    }

    pub fn texts(&self) -> Vec<&'static str> {
        self.classes.iter().map(|c| c.text()).collect()
    }

    pub fn embedding(&self, i: usize) -> &[f32] {
        self.embeddings.row(i)
    }

    pub fn embeddings(&self) -> &Tensor<f32> {
        &self.embeddings
    }

    pub fn position(&self, class: Degradation) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub temperature: f64,
    /// Square random-crop side used as augmentation; `None` trains on full
    /// images.
    pub crop: Option<usize>,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig { epochs: 30, lr: 3e-4, batch: 16, temperature: 0.07, crop: None, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignReport {
    pub initial_heldout_loss: f64,
    pub final_heldout_loss: f64,
    pub epoch_losses: Vec<f64>,
}

fn single_label(s: &Sample) -> Result<usize> {
    match s.labels[..] {
        [c] => Ok(c.index()),
        _ => Err(Error::Dataset(format!(
            "row {} has {} labels; alignment needs exactly one",
            s.id,
            s.labels.len()
        ))),
    }
}

/// Symmetric temperature-scaled contrastive loss between the projected
/// summary tokens of a batch and the class text embeddings.
fn contrastive_loss<T: Scalar>(
    enc: &DescriptorEncoder,
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    batch: &[(&ImageBuffer, usize)],
    temperature: f64,
) -> Result<Var> {
    let n = Degradation::ALL.len();
    let b = batch.len();
    let texts = enc.text_forward(g, store, &(0..n).collect::<Vec<_>>())?;
    let mut zs = Vec::with_capacity(b);
    for (img, _) in batch {
        let x = g.constant(img.to_tensor());
        let t = enc.image_forward(g, store, x, img.height(), img.width())?;
        let e1 = g.slice_rows(t, 0, 1)?;
        zs.push(enc.project_forward(g, store, e1)?);
    }
    let z = g.concat_rows(&zs)?;
    let z = g.l2_normalize_rows(z);
    let tt = g.transpose(texts)?;
    let logits = g.matmul(z, tt)?;
    let logits = g.scale(logits, 1.0 / temperature);

    let mut onehot = vec![0.0; b * n];
    let mut counts = vec![0usize; n];
    for (r, &(_, c)) in batch.iter().enumerate() {
        onehot[r * n + c] = 1.0;
        counts[c] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    let mask = g.constant(Tensor::from_f64(vec![b, n], &onehot)?);
    let ls = g.log_softmax(logits)?;
    let i2t = g.mul(ls, mask)?;
    let i2t = g.sum(i2t);
    let i2t = g.scale(i2t, -1.0 / b as f64);

    let mut target = vec![0.0; n * b];
    for (r, &(_, c)) in batch.iter().enumerate() {
        target[c * b + r] = 1.0 / counts[c] as f64;
    }
    let target = g.constant(Tensor::from_f64(vec![n, b], &target)?);
    let lt = g.transpose(logits)?;
    let lt = g.log_softmax(lt)?;
    let t2i = g.mul(lt, target)?;
    let t2i = g.sum(t2i);
    let t2i = g.scale(t2i, -1.0 / present as f64);

    let total = g.add(i2t, t2i)?;
    Ok(g.scale(total, 0.5))
}

fn heldout_loss(enc: &DescriptorEncoder, store: &ParamStore<f32>, set: &[(&ImageBuffer, usize)], cfg: &AlignConfig) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for chunk in set.chunks(cfg.batch.max(1)) {
        let mut g = Graph::inference();
        let l = contrastive_loss(enc, &mut g, store, chunk, cfg.temperature)?;
        total += g.value(l).item() as f64 * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count.max(1) as f64)
}

fn random_crop<R: Rng>(img: &ImageBuffer, side: Option<usize>, rng: &mut R) -> Result<ImageBuffer> {
    let Some(side) = side else { return Ok(img.clone()) };
    if img.width() < side || img.height() < side {
        return Err(Error::Config(format!("crop {side} exceeds image {}×{}", img.width(), img.height())));
    }
    let x0 = rng.gen_range(0..=img.width() - side);
    let y0 = rng.gen_range(0..=img.height() - side);
    img.crop(x0, y0, side, side)
}

/// Contrastively aligns image summaries with class texts, then freezes every
/// encoder parameter. Deterministic for a given seed.
pub fn align_pretrain(
    enc: &DescriptorEncoder,
    store: &mut ParamStore<f32>,
    train: &[Sample],
    heldout: &[Sample],
    cfg: &AlignConfig,
) -> Result<AlignReport> {
    if train.is_empty() {
        return Err(Error::Config("alignment set is empty".into()));
    }
    if cfg.batch == 0 || cfg.temperature <= 0.0 {
        return Err(Error::Config("alignment batch and temperature must be positive".into()));
    }
    let tr: Vec<(&ImageBuffer, usize)> =
        train.iter().map(|s| single_label(s).map(|c| (&s.degraded, c))).collect::<Result<_>>()?;
    let ho: Vec<(&ImageBuffer, usize)> =
        heldout.iter().map(|s| single_label(s).map(|c| (&s.degraded, c))).collect::<Result<_>>()?;

    store.set_frozen(ENCODER_PREFIX, false);
    let initial = if ho.is_empty() { f64::NAN } else { heldout_loss(enc, store, &ho, cfg)? };
    let mut adam = Adam::new(cfg.lr, 0.9, 0.999, 1e-8)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..tr.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let crops: Vec<(ImageBuffer, usize)> = chunk
                .iter()
                .map(|&i| {
                    let (img, c) = tr[i];
                    random_crop(img, cfg.crop, &mut rng).map(|im| (im, c))
                })
                .collect::<Result<_>>()?;
            let batch: Vec<(&ImageBuffer, usize)> = crops.iter().map(|(im, c)| (im, *c)).collect();
            let mut g = Graph::new();
            let loss = contrastive_loss(enc, &mut g, store, &batch, cfg.temperature)?;
            let lv = g.value(loss).item() as f64;
            if !lv.is_finite() {
                return Err(Error::NonFinite { step: adam.t, lr: cfg.lr, grad_norm: f64::NAN });
            }
            g.backward(loss)?;
            let grads: Vec<_> = g.param_grads().into_iter().map(|(id, t)| (id, t.clone())).collect();
            adam.step(store, &grads)?;
            sum += lv * batch.len() as f64;
        }
        epoch_losses.push(sum / tr.len() as f64);
    }
    let fin = if ho.is_empty() { f64::NAN } else { heldout_loss(enc, store, &ho, cfg)? };
    store.set_frozen(ENCODER_PREFIX, true);
    Ok(AlignReport { initial_heldout_loss: initial, final_heldout_loss: fin, epoch_losses })
}

/// Result of classifying single-degradation images by their adaptive
/// weights (argmax over the memory bank).
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub classes: Vec<Degradation>,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    /// Pairwise cosine between class text embeddings.
    pub text_cosine: Vec<Vec<f64>>,
}

impl ProbeReport {
    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.correct() as f64 / self.total().max(1) as f64
    }

    pub fn max_text_cosine(&self) -> f64 {
        let n = self.text_cosine.len();
        let mut m = f64::NEG_INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                m = m.max(self.text_cosine[i][j]);
            }
        }
        m
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<10}", "true\\pred");
        for c in &self.classes {
            let _ = write!(s, " {:>9}", c.text());
        }
        let _ = writeln!(s, " {:>9}", "acc");
        for (i, c) in self.classes.iter().enumerate() {
            let _ = write!(s, "{:<10}", c.text());
            for v in &self.confusion[i] {
                let _ = write!(s, " {v:>9}");
            }
            let row: usize = self.confusion[i].iter().sum();
            let acc = self.confusion[i][i] as f64 / row.max(1) as f64;
            let _ = writeln!(s, " {acc:>9.3}");
        }
        let _ = writeln!(s, "overall accuracy {:.3} ({}/{})", self.accuracy(), self.correct(), self.total());
        let _ = writeln!(s, "max pairwise text cosine {:.3}", self.max_text_cosine());
        s
    }
}

pub fn probe(enc: &DescriptorEncoder, store: &ParamStore<f32>, bank: &MemoryBank, samples: &[Sample]) -> Result<ProbeReport> {
    let n = bank.len();
    let mut confusion = vec![vec![0; n]; n];
    for s in samples {
        let truth = single_label(s)?;
        let truth = bank
            .position(Degradation::ALL[truth])
            .ok_or_else(|| Error::Dataset(format!("row {} class missing from the bank", s.id)))?;
        let tokens = enc.encode_image(store, &s.degraded)?;
        let z = enc.project_summary(store, tokens.summary())?;
        let w = crate::descriptor::adaptive_weights(&z, bank)?;
        confusion[truth][w.argmax()] += 1;
    }
    let text_cosine = (0..n)
        .map(|i| (0..n).map(|j| cosine(bank.embedding(i), bank.embedding(j))).collect())
        .collect();
    Ok(ProbeReport { classes: bank.classes().to_vec(), confusion, text_cosine })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (DescriptorEncoder, ParamStore<f32>) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = DescriptorEncoder::new(EncoderConfig::default(), &mut store, &mut rng).unwrap();
        (enc, store)
    }

    #[test]
    fn text_embeddings_are_unit_norm_and_deterministic() {
        let (enc, store) = setup();
        for c in Degradation::ALL {
            let a = enc.encode_text(&store, c.text()).unwrap();
            let n: f32 = a.iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
            assert_eq!(a, enc.encode_text(&store, c.text()).unwrap());
        }
        assert!(matches!(enc.encode_text(&store, "fog"), Err(Error::Vocabulary(_))));
    }

    #[test]
    fn image_token_count_and_width() {
        let (enc, store) = setup();
        let img = crate::synth::procedural_image(64, 64, 1);
        let t = enc.encode_image(&store, &img).unwrap();
        assert_eq!(t.len(), 65);
        assert_eq!(t.dim(), 64);
        assert_eq!(t, enc.encode_image(&store, &img).unwrap());
        let odd = crate::synth::procedural_image(60, 64, 1);
        assert!(matches!(enc.encode_image(&store, &odd), Err(Error::Shape(_))));
    }

    #[test]
    fn projection_with_zero_weights_returns_bias() {
        let (enc, mut store) = setup();
        let w = store.id("encoder.proj.w").unwrap();
        let b = store.id("encoder.proj.b").unwrap();
        store.value_mut(w).data_mut().fill(0.0);
        for (i, v) in store.value_mut(b).data_mut().iter_mut().enumerate() {
            *v = i as f32 * 0.5;
        }
        let z = enc.project_summary(&store, &[0.3; 64]).unwrap();
        assert_eq!(z, store.value(b).data());
        assert!(matches!(enc.project_summary(&store, &[0.0; 3]), Err(Error::Shape(_))));
    }

    #[test]
    fn multi_label_rows_are_rejected() {
        let (enc, mut store) = setup();
        let img = crate::synth::procedural_image(16, 16, 0);
        let s = Sample {
            id: "x".into(),
            base_index: 0,
            clean: img.clone(),
            degraded: img,
            labels: vec![Degradation::Haze, Degradation::Rain],
            seed: 0,
        };
        let r = align_pretrain(&enc, &mut store, &[s], &[], &AlignConfig::default());
        assert!(matches!(r, Err(Error::Dataset(_))));
    }

    #[test]
    fn bank_rejects_duplicates_and_empty() {
        let e = Tensor::<f32>::zeros(&[2, 4]);
        assert!(MemoryBank::new(vec![Degradation::Haze, Degradation::Haze], e).is_err());
        assert!(matches!(MemoryBank::new(vec![], Tensor::zeros(&[1, 4])), Err(Error::Config(_))));
    }
}
