//! Built-in verification suites: finite-difference gradient checks of every
//! graph op and of a small end-to-end restorer, plus brute-force oracles for
//! attention and descriptor selection. Run by the `selftest` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::descriptor::{adaptive_weights, softmax, topk_indices};
use crate::encoder::{EncoderConfig, MemoryBank};
use crate::error::Result;
use crate::nn::Linear;
use crate::numerics::{grad_check, Graph, ParamStore, Tensor, Var};
use crate::restorer::{aioa, self_attention, AioBlock, ModelConfig, Restorer};
use crate::synth::Degradation;

pub const GRAD_TOL: f64 = 1e-3;
pub const GRAD_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    /// Largest observed error over all cases.
    pub worst: f64,
    pub tol: f64,
    pub failures: Vec<String>,
}

impl SuiteReport {
    fn new(name: &'static str, tol: f64) -> Self {
        SuiteReport { name, cases: 0, worst: 0.0, tol, failures: Vec::new() }
    }

    fn record(&mut self, case: &str, err: f64) {
        self.cases += 1;
        self.worst = self.worst.max(err);
        if !(err <= self.tol) {
            self.failures.push(format!("{case}: error {err:e}"));
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn line(&self) -> String {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        let mut s = format!(
            "{status} {:<12} {:>5} cases, worst error {:.2e} (tol {:.0e})",
            self.name, self.cases, self.worst, self.tol
        );
        for f in &self.failures {
            s.push_str("\n    ");
            s.push_str(f);
        }
        s
    }
}

pub fn rand_tensor<R: Rng>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape matches data")
}

/// `Σ y ⊙ w` against a fixed random `w`, so that every output coordinate
/// contributes a distinct gradient.
pub fn probe(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = rand_tensor(&mut ChaCha8Rng::seed_from_u64(seed), g.shape(y), -1.0, 1.0);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

pub type OpFn = Box<dyn Fn(&mut Graph<f64>, Var) -> Result<Var>>;

/// One scalar-valued probe per differentiable op and argument position:
/// `(name, input shape, function of the input)`.
pub fn op_cases() -> Vec<(&'static str, Vec<usize>, OpFn)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut fixed = |shape: &[usize]| rand_tensor(&mut rng, shape, -1.0, 1.0);
    let b34 = fixed(&[3, 4]);
    let b4 = fixed(&[4]);
    let b45 = fixed(&[4, 5]);
    let w_conv = fixed(&[3, 3, 2, 3]);
    let k_dw = fixed(&[3, 3, 2]);
    let k15 = fixed(&[1, 5, 2]);
    let kv = fixed(&[5, 4]);
    let gamma = fixed(&[4]);
    let map12 = fixed(&[12, 2]);
    let map10 = fixed(&[10, 2]);
    let c = |t: &Tensor<f64>| t.clone();

    macro_rules! case {
        ($name:expr, $shape:expr, [$($cap:ident),*], |$g:ident, $x:ident| $body:expr) => {{
            $(let $cap = c(&$cap);)*
            let f: OpFn = Box::new(move |$g: &mut Graph<f64>, $x: Var| -> Result<Var> {
                $(let $cap = $g.constant($cap.clone());)*
                $body
            });
            ($name, $shape.to_vec(), f)
        }};
    }

    vec![
        case!("add", [3, 4], [b34], |g, x| { let y = g.add(x, b34)?; probe(g, y, 1) }),
        case!("sub", [3, 4], [b34], |g, x| { let y = g.sub(b34, x)?; probe(g, y, 1) }),
        case!("mul", [3, 4], [], |g, x| { let y = g.mul(x, x)?; probe(g, y, 1) }),
        case!("add_bias(x)", [3, 4], [b4], |g, x| { let y = g.add_bias(x, b4)?; probe(g, y, 2) }),
        case!("add_bias(b)", [4], [b34], |g, x| { let y = g.add_bias(b34, x)?; probe(g, y, 2) }),
        case!("scale", [2, 3], [], |g, x| { let y = g.scale(x, -1.7); probe(g, y, 3) }),
        case!("scalar_mul(s)", [1], [b34], |g, x| { let y = g.scalar_mul(x, b34)?; probe(g, y, 4) }),
        case!("scalar_mul(x)", [3, 4], [], |g, x| {
            let s = g.constant(Tensor::scalar(0.7));
            let y = g.scalar_mul(s, x)?;
            probe(g, y, 4)
        }),
        case!("matmul(a)", [3, 4], [b45], |g, x| { let y = g.matmul(x, b45)?; probe(g, y, 5) }),
        case!("matmul(b)", [4, 5], [b34], |g, x| { let y = g.matmul(b34, x)?; probe(g, y, 5) }),
        case!("transpose", [3, 5], [], |g, x| { let y = g.transpose(x)?; probe(g, y, 6) }),
        case!("reshape", [3, 4], [], |g, x| { let y = g.reshape(x, &[2, 6])?; probe(g, y, 7) }),
        case!("softmax(last)", [3, 5], [], |g, x| { let y = g.softmax(x, 1)?; probe(g, y, 8) }),
        case!("softmax(first)", [4, 3], [], |g, x| { let y = g.softmax(x, 0)?; probe(g, y, 8) }),
        case!("log_softmax", [3, 5], [], |g, x| { let y = g.log_softmax(x)?; probe(g, y, 9) }),
        case!("gelu", [3, 4], [], |g, x| { let y = g.gelu(x); probe(g, y, 10) }),
        case!("clamp", [3, 4], [], |g, x| { let y = g.clamp(x, -0.5, 0.5); probe(g, y, 11) }),
        case!("layer_norm(x)", [3, 4], [gamma, b4], |g, x| { let y = g.layer_norm(x, gamma, b4)?; probe(g, y, 12) }),
        case!("layer_norm(gamma)", [4], [b34, b4], |g, x| { let y = g.layer_norm(b34, x, b4)?; probe(g, y, 12) }),
        case!("layer_norm(beta)", [4], [b34, gamma], |g, x| { let y = g.layer_norm(b34, gamma, x)?; probe(g, y, 12) }),
        case!("attention(q)", [3, 4], [kv], |g, x| { let y = g.attention(x, kv, kv, 2)?; probe(g, y, 13) }),
        case!("attention(k)", [5, 4], [b34, kv], |g, x| { let y = g.attention(b34, x, kv, 2)?; probe(g, y, 13) }),
        case!("attention(v)", [5, 4], [b34, kv], |g, x| { let y = g.attention(b34, kv, x, 1)?; probe(g, y, 13) }),
        case!("conv2d(x)", [12, 2], [w_conv], |g, x| { let y = g.conv2d(x, w_conv, 3, 4)?; probe(g, y, 14) }),
        case!("conv2d(w)", [3, 3, 2, 3], [map12], |g, x| { let y = g.conv2d(map12, x, 4, 3)?; probe(g, y, 14) }),
        case!("depthwise(x)", [12, 2], [k_dw], |g, x| { let y = g.depthwise_conv2d(x, k_dw, 3, 4)?; probe(g, y, 15) }),
        case!("depthwise(k)", [3, 3, 2], [map12], |g, x| { let y = g.depthwise_conv2d(map12, x, 4, 3)?; probe(g, y, 15) }),
        case!("depthwise(1x5,k)", [1, 5, 2], [map10], |g, x| { let y = g.depthwise_conv2d(map10, x, 2, 5)?; probe(g, y, 15) }),
        case!("depthwise(1x5,x)", [10, 2], [k15], |g, x| { let y = g.depthwise_conv2d(x, k15, 2, 5)?; probe(g, y, 15) }),
        case!("space_to_depth", [16, 2], [], |g, x| { let y = g.space_to_depth(x, 4, 4, 2)?; probe(g, y, 16) }),
        case!("depth_to_space", [4, 8], [], |g, x| { let y = g.depth_to_space(x, 2, 2, 2)?; probe(g, y, 17) }),
        case!("upsample_bilinear", [6, 2], [], |g, x| { let y = g.upsample_bilinear(x, 2, 3, 4)?; probe(g, y, 23) }),
        case!("concat_rows", [2, 4], [b34], |g, x| { let y = g.concat_rows(&[b34, x, x])?; probe(g, y, 18) }),
        case!("concat_cols", [3, 2], [b34], |g, x| { let y = g.concat_cols(&[x, b34, x])?; probe(g, y, 19) }),
        case!("slice_rows", [5, 3], [], |g, x| { let y = g.slice_rows(x, 1, 3)?; probe(g, y, 20) }),
        case!("slice_cols", [3, 5], [], |g, x| { let y = g.slice_cols(x, 2, 2)?; probe(g, y, 21) }),
        case!("sum", [3, 4], [], |g, x| { let y = g.mul(x, x)?; Ok(g.sum(y)) }),
        case!("mean", [3, 4], [], |g, x| { let y = g.mul(x, x)?; Ok(g.mean(y)) }),
        case!("smooth_l1", [3, 4], [b34], |g, x| { let y = g.scale(x, 2.0); g.smooth_l1(y, b34, 0.7) }),
        case!("mse", [3, 4], [b34], |g, x| g.mse(b34, x)),
        case!("l2_normalize_rows", [3, 4], [], |g, x| { let y = g.l2_normalize_rows(x); probe(g, y, 22) }),
    ]
}

pub fn op_grad_suite() -> Result<SuiteReport> {
    let mut report = SuiteReport::new("grad/ops", GRAD_TOL);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (name, shape, f) in op_cases() {
        let x = rand_tensor(&mut rng, &shape, -1.0, 1.0);
        report.record(name, grad_check(|g, x| f(g, x), &x, GRAD_EPS)?);
    }
    Ok(report)
}

/// Single-scale restorer small enough for exhaustive finite differences on
/// a 16×16 input.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        widths: vec![8],
        blocks: vec![1],
        heads: vec![2],
        patch: 2,
        k: 3,
        classes: Degradation::ALL.len(),
        ffn_expansion: 2,
        head_channels: 4,
        head_hidden: 8,
        adaptive: true,
        encoder: EncoderConfig { dim: 8, patch: 4, blocks: 1, heads: 2, mlp_ratio: 2 },
    }
}

/// Inputs for one end-to-end evaluation of a restorer.
pub struct TinyCase {
    pub restorer: Restorer,
    pub store: ParamStore<f64>,
    pub image: Tensor<f64>,
    pub raw: Vec<Tensor<f64>>,
    pub lambda: Vec<f64>,
    pub size: usize,
}

impl TinyCase {
    pub fn new(seed: u64) -> Result<Self> {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let restorer = Restorer::new(cfg.clone(), &mut store, &mut rng)?;
        let size = 16;
        // interior values keep the output clamp inactive
        let image = rand_tensor(&mut rng, &[size * size, 3], 0.3, 0.7);
        let raw = (0..cfg.classes).map(|_| rand_tensor(&mut rng, &[cfg.k + 1, cfg.encoder.dim], -1.0, 1.0)).collect();
        let logits: Vec<f64> = (0..cfg.classes).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lambda = softmax(&logits)?;
        Ok(TinyCase { restorer, store, image, raw, lambda, size })
    }

    /// Probed scalar output for an image variable.
    pub fn loss(&self, g: &mut Graph<f64>, img: Var) -> Result<Var> {
        let raw: Vec<Var> = self.raw.iter().map(|t| g.constant(t.clone())).collect();
        let y = self.restorer.forward(g, &self.store, img, self.size, self.size, &raw, &self.lambda)?;
        probe(g, y, 31)
    }
}

/// Finite-difference check of the full restorer with respect to the input
/// image and to every parameter tensor in turn.
pub fn model_grad_suite() -> Result<SuiteReport> {
    let mut report = SuiteReport::new("grad/model", GRAD_TOL);
    let case = TinyCase::new(11)?;
    report.record("input image", grad_check(|g, x| case.loss(g, x), &case.image, GRAD_EPS)?);
    for (id, p) in case.store.iter() {
        let err = grad_check(
            |g, x| {
                g.bind_param(id, x);
                let img = g.constant(case.image.clone());
                case.loss(g, img)
            },
            &p.value,
            GRAD_EPS,
        )?;
        report.record(&p.name, err);
    }
    Ok(report)
}

/// Direct triple-loop multi-head attention followed by `x W + b`.
fn naive_attention(q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>, heads: usize, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (a, d) = (q.shape()[0], q.shape()[1]);
    let nb = k.shape()[0];
    let dh = d / heads;
    let mut cat = vec![0.0; a * d];
    for h in 0..heads {
        for i in 0..a {
            let mut s = vec![0.0; nb];
            for (j, sj) in s.iter_mut().enumerate() {
                for t in 0..dh {
                    *sj += q.row(i)[h * dh + t] * k.row(j)[h * dh + t];
                }
                *sj /= (dh as f64).sqrt();
            }
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|x| (x - m).exp()).sum();
            for j in 0..nb {
                let p = (s[j] - m).exp() / z;
                for t in 0..dh {
                    cat[i * d + h * dh + t] += p * v.row(j)[h * dh + t];
                }
            }
        }
    }
    let dout = w.shape()[1];
    let mut out = vec![0.0; a * dout];
    for i in 0..a {
        for o in 0..dout {
            out[i * dout + o] = b.data()[o] + (0..d).map(|t| cat[i * d + t] * w.row(t)[o]).sum::<f64>();
        }
    }
    out
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn attention_suite() -> Result<SuiteReport> {
    let mut report = SuiteReport::new("attention", 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = 8;

    for (trial, heads) in [1, 2, 4].into_iter().cycle().take(12).enumerate() {
        let mut store = ParamStore::new();
        let out = Linear::new(&mut store, "o", d, d, true, 1.0, &mut rng)?;
        *store.value_mut(out.b.expect("bias")) = rand_tensor(&mut rng, &[d], -0.5, 0.5);
        let (a, b) = (rng.gen_range(1..6), rng.gen_range(1..7));
        let q = rand_tensor(&mut rng, &[a, d], -1.0, 1.0);
        let k = rand_tensor(&mut rng, &[b, d], -1.0, 1.0);
        let v = rand_tensor(&mut rng, &[b, d], -1.0, 1.0);
        let mut g = Graph::inference();
        let (qv, kv, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
        let y = self_attention(&mut g, &store, qv, kv, vv, heads, &out)?;
        let oracle = naive_attention(&q, &k, &v, heads, store.value(out.w), store.value(out.b.expect("bias")));
        report.record(&format!("self_attention #{trial} ({heads} heads)"), max_diff(g.value(y).data(), &oracle));

        // AiOA against the λ-weighted sum of independent oracle terms
        let n = 4;
        let rows = rng.gen_range(1..5);
        let cs: Vec<Tensor<f64>> = (0..n).map(|_| rand_tensor(&mut rng, &[rows, d], -1.0, 1.0)).collect();
        let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let lambda = softmax(&logits)?;
        let cv: Vec<Var> = cs.iter().map(|c| g.constant(c.clone())).collect();
        let s = aioa(&mut g, &store, &cv, &lambda, kv, vv, heads, &out, n)?;
        let mut expect = vec![0.0; rows * d];
        for (c, l) in cs.iter().zip(&lambda) {
            let term = naive_attention(c, &k, &v, heads, store.value(out.w), store.value(out.b.expect("bias")));
            for (e, t) in expect.iter_mut().zip(term) {
                *e += l * t;
            }
        }
        report.record(&format!("aioa #{trial}"), max_diff(g.value(s).data(), &expect));
    }

    // n copies of one descriptor under uniform λ reduce to the 1-class block
    let mut store = ParamStore::new();
    let block = AioBlock::new(&mut store, "b", d, 2, 4, 2, &mut rng)?;
    let (h, w) = (3, 4);
    let x = rand_tensor(&mut rng, &[h * w, d], -1.0, 1.0);
    let c = rand_tensor(&mut rng, &[5, d], -1.0, 1.0);
    let mut g = Graph::inference();
    let xv = g.constant(x);
    let cv = g.constant(c);
    let four = block.forward(&mut g, &store, xv, h, w, &[cv; 4], &[0.25; 4])?;
    let one = block.with_classes(1).forward(&mut g, &store, xv, h, w, &[cv], &[1.0])?;
    report.record("duplicated descriptors", max_diff(g.value(four).data(), g.value(one).data()));
    Ok(report)
}

pub fn descriptor_suite() -> Result<SuiteReport> {
    let mut report = SuiteReport::new("descriptors", 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for t in 0..1000 {
        let l = rng.gen_range(1..48);
        let k = rng.gen_range(1..=l);
        // coarse values so ties are common
        let scores: Vec<f64> = (0..l).map(|_| (rng.gen_range(0..12) as f64) / 4.0).collect();
        let mut order: Vec<(f64, usize)> = scores.iter().cloned().zip(0..).collect();
        order.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite").then(a.1.cmp(&b.1)));
        let oracle: Vec<usize> = order.iter().take(k).map(|p| p.1).collect();
        let miss = topk_indices(&scores, k)? != oracle;
        report.record(&format!("top-k vs full sort, trial {t} (L={l}, k={k})"), if miss { 1.0 } else { 0.0 });
    }

    for t in 0..200 {
        let emb = rand_tensor(&mut rng, &[4, 16], -1.0, 1.0).cast::<f32>();
        let mut e = emb.clone();
        for row in e.data_mut().chunks_mut(16) {
            let n = row.iter().map(|v| v * v).sum::<f32>().sqrt();
            row.iter_mut().for_each(|v| *v /= n);
        }
        let bank = MemoryBank::new(Degradation::ALL.to_vec(), e)?;
        let z: Vec<f32> = (0..16).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let lam = adaptive_weights(&z, &bank)?;
        let mut err = (lam.lambda.iter().sum::<f64>() - 1.0).abs();
        if lam.lambda.iter().any(|&v| v < 0.0) {
            err = f64::INFINITY;
        }
        report.record(&format!("adaptive weights sum to one, trial {t}"), err);
    }

    let p = softmax(&[3f64.ln(), 0.0])?;
    report.record("softmax [ln 3, 0]", max_diff(&p, &[0.75, 0.25]));
    Ok(report)
}

/// Every suite, in a fixed order.
pub fn run_all() -> Result<Vec<SuiteReport>> {
    Ok(vec![op_grad_suite()?, model_grad_suite()?, attention_suite()?, descriptor_suite()?])
}
