//! Per-class token sampling, composite scene descriptors and adaptive weights.

use std::fmt::Write as _;

use crate::encoder::{normalize, DescriptorEncoder, ImageTokenSet, MemoryBank};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::numerics::{Graph, ParamStore, Scalar, Tensor, Var};

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Numerically stable softmax in 64-bit.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericDomain(format!("non-finite logit in {logits:?}")));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

/// `softmax_j(x_t · e^j)` over every token, summary included.
pub fn token_similarity(x_t: &[f32], tokens: &Tensor<f32>) -> Result<Vec<f64>> {
    let (l, d) = tokens.dims2()?;
    if x_t.len() != d {
        return Err(Error::Shape(format!("text embedding width {} vs token width {d}", x_t.len())));
    }
    let logits: Vec<f64> = (0..l).map(|j| dot(x_t, tokens.row(j))).collect();
    softmax(&logits)
}

/// Indices of the `k` largest scores in descending order; ties go to the
/// lower index.
pub fn topk_indices(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(Error::Parameter(format!("k = {k} must lie in [1, {}]", scores.len())));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopK {
    pub indices: Vec<usize>,
    /// `k × d_e`, rows in the order of `indices`.
    pub tokens: Tensor<f32>,
}

pub fn sample_topk(tokens: &Tensor<f32>, sim: &[f64], k: usize) -> Result<TopK> {
    let (l, d) = tokens.dims2()?;
    if sim.len() != l {
        return Err(Error::Shape(format!("{} similarities for {l} tokens", sim.len())));
    }
    let indices = topk_indices(sim, k)?;
    let mut data = Vec::with_capacity(k * d);
    for &i in &indices {
        data.extend_from_slice(tokens.row(i));
    }
    Ok(TopK { indices, tokens: Tensor::new(vec![k, d], data)? })
}

/// `concat_rows[x_m; x_t] · W_c`: `(k+1) × C`, text token last.
pub fn build_descriptor<T: Scalar>(g: &mut Graph<T>, x_m: &Tensor<T>, x_t: &[T], w_c: Var) -> Result<Var> {
    let (k, d) = x_m.dims2()?;
    if x_t.len() != d {
        return Err(Error::Shape(format!("text token width {} vs sampled token width {d}", x_t.len())));
    }
    let mut raw = x_m.data().to_vec();
    raw.extend_from_slice(x_t);
    let raw = g.constant(Tensor::new(vec![k + 1, d], raw)?);
    g.matmul(raw, w_c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveWeights {
    pub lambda: Vec<f64>,
}

impl AdaptiveWeights {
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("no degradation classes".into()));
        }
        Ok(AdaptiveWeights { lambda: vec![1.0 / n as f64; n] })
    }

    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::Config("no degradation classes".into()));
        }
        Ok(AdaptiveWeights { lambda: softmax(logits)? })
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    /// Index of the largest weight; ties go to the lower index.
    pub fn argmax(&self) -> usize {
        topk_indices(&self.lambda, 1).map(|v| v[0]).unwrap_or(0)
    }
}

/// `λ_i = softmax_i(ẑ · x_t^i)` with `z` normalised to unit length.
pub fn adaptive_weights(z: &[f32], bank: &MemoryBank) -> Result<AdaptiveWeights> {
    if bank.is_empty() {
        return Err(Error::Config("memory bank is empty".into()));
    }
    if z.len() != bank.dim() {
        return Err(Error::Shape(format!("z width {} vs bank width {}", z.len(), bank.dim())));
    }
    let mut zn = z.to_vec();
    normalize(&mut zn);
    let logits: Vec<f64> = (0..bank.len()).map(|i| dot(&zn, bank.embedding(i))).collect();
    AdaptiveWeights::from_logits(&logits)
}

/// Everything the restorer needs from the frozen encoder for one image:
/// raw (pre-projection) descriptors per class and the adaptive weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneDescriptors {
    pub weights: AdaptiveWeights,
    /// Per class, `(k+1) × d_e`: the top-k tokens then the text embedding.
    pub raw: Vec<Tensor<f32>>,
    pub selected: Vec<Vec<usize>>,
}

impl SceneDescriptors {
    pub fn k(&self) -> usize {
        self.raw[0].shape()[0] - 1
    }

    /// Same descriptors with λ replaced by the uniform vector.
    pub fn with_uniform_weights(mut self) -> Result<Self> {
        self.weights = AdaptiveWeights::uniform(self.raw.len())?;
        Ok(self)
    }
}

pub fn describe_tokens(tokens: &ImageTokenSet, z: &[f32], bank: &MemoryBank, k: usize) -> Result<SceneDescriptors> {
    if tokens.dim() != bank.dim() {
        return Err(Error::Shape(format!("token width {} vs bank width {}", tokens.dim(), bank.dim())));
    }
    let weights = adaptive_weights(z, bank)?;
    let norm = tokens.normalized();
    let mut raw = Vec::with_capacity(bank.len());
    let mut selected = Vec::with_capacity(bank.len());
    for i in 0..bank.len() {
        let x_t = bank.embedding(i);
        let sim = token_similarity(x_t, &norm.tokens)?;
        let top = sample_topk(&norm.tokens, &sim, k)?;
        let mut data = top.tokens.into_data();
        data.extend_from_slice(x_t);
        raw.push(Tensor::new(vec![k + 1, bank.dim()], data)?);
        selected.push(top.indices);
    }
    Ok(SceneDescriptors { weights, raw, selected })
}

pub fn describe(
    enc: &DescriptorEncoder,
    store: &ParamStore<f32>,
    bank: &MemoryBank,
    img: &ImageBuffer,
    k: usize,
) -> Result<SceneDescriptors> {
    let tokens = enc.encode_image(store, img)?;
    let z = enc.project_summary(store, tokens.summary())?;
    describe_tokens(&tokens, &z, bank, k)
}

/// Plain-text λ vector and selected token indices for one image.
pub fn debug_report(name: &str, d: &SceneDescriptors, bank: &MemoryBank) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "image {name}");
    for (i, c) in bank.classes().iter().enumerate() {
        let idx: Vec<String> = d.selected[i].iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "  {:<9} lambda={:.4} tokens=[{}]", c.text(), d.weights.lambda[i], idx.join(","));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Degradation;

    #[test]
    fn similarity_hand_case() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let s = token_similarity(&[1.0, 0.0], &t).unwrap();
        let e = std::f64::consts::E;
        assert!((s[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((s[0] - 0.731).abs() < 1e-3 && (s[1] - 0.269).abs() < 1e-3);
        assert!(matches!(token_similarity(&[1.0], &t), Err(Error::Shape(_))));
    }

    #[test]
    fn identical_tokens_give_uniform_similarity() {
        let t = Tensor::new(vec![4, 2], vec![0.3, 0.4, 0.3, 0.4, 0.3, 0.4, 0.3, 0.4]).unwrap();
        for v in token_similarity(&[0.6, 0.8], &t).unwrap() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn topk_examples() {
        let t = Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5]).unwrap();
        let s = token_similarity(&[1.0, 0.0], &t).unwrap();
        assert_eq!(sample_topk(&t, &s, 1).unwrap().indices, vec![0]);
        assert_eq!(sample_topk(&t, &s, 3).unwrap().indices, vec![0, 2, 1]);
        assert!(matches!(sample_topk(&t, &s, 4), Err(Error::Parameter(_))));
        assert_eq!(topk_indices(&[0.5, 0.7, 0.5, 0.7], 4).unwrap(), vec![1, 3, 0, 2]);
    }

    #[test]
    fn descriptor_shape_identity_and_linearity() {
        let xm = Tensor::<f64>::new(vec![10, 32], (0..320).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let xt: Vec<f64> = (0..32).map(|i| i as f64 / 32.0).collect();
        let mut g = Graph::new();
        let eye = g.constant(Tensor::eye(32));
        let c = build_descriptor(&mut g, &xm, &xt, eye).unwrap();
        assert_eq!(g.shape(c), &[11, 32]);
        assert_eq!(&g.value(c).data()[..320], xm.data());
        assert_eq!(&g.value(c).data()[320..], &xt[..]);

        let w = g.constant(Tensor::new(vec![32, 8], (0..256).map(|i| (i as f64).cos()).collect()).unwrap());
        let a = build_descriptor(&mut g, &xm, &xt, w).unwrap();
        let xm2 = xm.map(|v| 2.0 * v);
        let xt2: Vec<f64> = xt.iter().map(|v| 2.0 * v).collect();
        let b = build_descriptor(&mut g, &xm2, &xt2, w).unwrap();
        for (x, y) in g.value(a).data().iter().zip(g.value(b).data()) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
        let bad = Tensor::<f64>::zeros(&[10, 31]);
        assert!(matches!(build_descriptor(&mut g, &bad, &xt, w), Err(Error::Shape(_))));
    }

    #[test]
    fn adaptive_weight_examples() {
        let w = AdaptiveWeights::from_logits(&[3f64.ln(), 0.0]).unwrap();
        assert!((w.lambda[0] - 0.75).abs() < 1e-12 && (w.lambda[1] - 0.25).abs() < 1e-12);
        let w = AdaptiveWeights::from_logits(&[0.4; 4]).unwrap();
        assert!(w.lambda.iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let one = MemoryBank::new(vec![Degradation::Rain], Tensor::new(vec![1, 2], vec![0.6, 0.8]).unwrap()).unwrap();
        assert_eq!(adaptive_weights(&[-3.0, 5.0], &one).unwrap().lambda, vec![1.0]);
        assert!(matches!(adaptive_weights(&[1.0], &one), Err(Error::Shape(_))));
        assert!(matches!(AdaptiveWeights::from_logits(&[]), Err(Error::Config(_))));
    }
}
