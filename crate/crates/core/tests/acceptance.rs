//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.
//!
//! The training criteria share one aligned encoder, built once per process.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use aio_core::encoder::{align_pretrain, probe, AlignConfig};
use aio_core::image::ImageBuffer;
use aio_core::restorer::{Model, ModelConfig};
use aio_core::selftest::{attention_suite, descriptor_suite, model_grad_suite, op_grad_suite, tiny_config};
use aio_core::synth::{canonical_recipes, generate_dataset, generate_samples, sample_bytes, single_recipes, GenerateConfig, Sample};
use aio_core::train::metrics::luminance;
use aio_core::train::{evaluate, psnr, ssim, Checkpoint, EvalReport, IdentityRestorer, TrainConfig, TrainPair, Trainer};

/// Printed outside the test harness capture so the lines always show.
fn report(n: u32, title: &str, pass: bool, detail: &str) -> bool {
    let status = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{status} criterion {n:>2} {title}: {detail}");
    pass
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

#[test]
fn criterion_01_gradient_suite() {
    let t = Instant::now();
    let ops = op_grad_suite().unwrap();
    let model = model_grad_suite().unwrap();
    let el = secs(t);
    let pass = ops.passed() && model.passed() && ops.cases >= 40 && el < 120.0;
    let detail = format!(
        "{} op cases worst {:.1e}, {} model cases worst {:.1e}, {el:.1}s",
        ops.cases, ops.worst, model.cases, model.worst
    );
    assert!(report(1, "gradient suite", pass, &detail), "{}\n{}", ops.line(), model.line());
}

#[test]
fn criterion_02_attention_oracles() {
    let r = attention_suite().unwrap();
    let detail = format!("{} cases worst {:.1e} (tol {:.0e})", r.cases, r.worst, r.tol);
    assert!(report(2, "attention oracles", r.passed() && r.tol <= 1e-6, &detail), "{}", r.line());
}

#[test]
fn criterion_03_descriptor_math() {
    let r = descriptor_suite().unwrap();
    let detail = format!("{} cases worst {:.1e}", r.cases, r.worst);
    assert!(report(3, "descriptor math", r.passed() && r.cases >= 1000, &detail), "{}", r.line());
}

struct Aligned {
    model: Model,
    seconds: f64,
}

/// Default model with its encoder aligned on 300 images per class.
fn aligned() -> &'static Aligned {
    static CELL: OnceLock<Aligned> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let mut m = Model::new(ModelConfig::default(), 0).unwrap();
        let cfg = GenerateConfig { recipes: single_recipes(), per_recipe: 300, seed: 1, width: 64, height: 64, ..Default::default() };
        let train = generate_samples(&cfg).unwrap();
        align_pretrain(&m.encoder, &mut m.params, &train, &[], &AlignConfig::default()).unwrap();
        m.refresh_bank().unwrap();
        m.freeze_encoder();
        Aligned { model: m, seconds: secs(t) }
    })
}

#[test]
fn criterion_04_alignment_probe() {
    let a = aligned();
    let held = generate_samples(&GenerateConfig {
        recipes: single_recipes(),
        per_recipe: 25,
        seed: 2,
        width: 64,
        height: 64,
        ..Default::default()
    })
    .unwrap();
    let p = probe(&a.model.encoder, &a.model.params, &a.model.bank, &held).unwrap();
    let pass = p.total() == 100 && p.accuracy() >= 0.9 && p.max_text_cosine() < 0.9 && a.seconds <= 600.0;
    let detail = format!(
        "accuracy {:.2} on {} held-out images, max text cosine {:.2}, alignment {:.0}s",
        p.accuracy(),
        p.total(),
        p.max_text_cosine(),
        a.seconds
    );
    assert!(report(4, "alignment probe", pass, &detail), "{}", p.to_table());
}

#[test]
fn criterion_05_overfit() {
    let t = Instant::now();
    let comp: Vec<_> = canonical_recipes().into_iter().filter(|r| r.len() > 1).collect();
    let gc = GenerateConfig { recipes: comp, per_recipe: 2, seed: 5, width: 64, height: 64, ..Default::default() };
    let samples: Vec<Sample> = generate_samples(&gc).unwrap().into_iter().take(8).collect();
    let pairs: Vec<TrainPair> = samples.iter().map(TrainPair::from).collect();
    let tc = TrainConfig { batch_size: 8, epochs: usize::MAX, ..Default::default() };
    let mut tr = Trainer::new(aligned().model.clone(), tc).unwrap();
    let base = evaluate(&IdentityRestorer, &samples).unwrap().overall.psnr_degraded;
    let target = 30.0f64.max(base + 8.0);
    let mut best = f64::NEG_INFINITY;
    while tr.step < 2000 {
        tr.run_epoch(&pairs).unwrap();
        if tr.step % 50 == 0 {
            best = best.max(evaluate(&tr.model, &samples).unwrap().overall.psnr_restored);
            if best >= target {
                break;
            }
        }
    }
    let el = secs(t);
    let pass = best >= target && el <= 1800.0;
    let detail = format!("{best:.2} dB after {} steps (degraded {base:.2} dB, target {target:.2}), {el:.0}s", tr.step);
    assert!(report(5, "overfit", pass, &detail));
}

fn split() -> (Vec<Sample>, Vec<Sample>) {
    let train = generate_samples(&GenerateConfig { per_recipe: 19, seed: 11, ..Default::default() }).unwrap();
    let test = generate_samples(&GenerateConfig { per_recipe: 5, seed: 12, ..Default::default() }).unwrap();
    (train.into_iter().take(200).collect(), test.into_iter().take(50).collect())
}

fn train_and_eval(mut model: Model, epochs: usize, train: &[Sample], test: &[Sample]) -> EvalReport {
    let pairs: Vec<TrainPair> = train.iter().map(TrainPair::from).collect();
    model.config.validate().unwrap();
    let tc = TrainConfig { epochs, seed: 3, ..Default::default() };
    let mut tr = Trainer::new(model, tc).unwrap();
    tr.fit(&pairs, |_, _| Ok(())).unwrap();
    evaluate(&tr.model, test).unwrap()
}

/// The 200/50, 30-epoch run with adaptive weights.
fn generalization() -> &'static EvalReport {
    static CELL: OnceLock<EvalReport> = OnceLock::new();
    CELL.get_or_init(|| {
        let (train, test) = split();
        train_and_eval(aligned().model.clone(), 30, &train, &test)
    })
}

#[test]
fn criterion_06_generalization() {
    let r = generalization();
    let gain = r.overall.psnr_gain();
    let frac = r.ssim_improved_fraction();
    let detail = format!(
        "PSNR {:.2} -> {:.2} dB ({gain:+.2}), SSIM improved on {:.0}% of {} test images",
        r.overall.psnr_degraded,
        r.overall.psnr_restored,
        100.0 * frac,
        r.images.len()
    );
    assert!(report(6, "generalization", gain >= 3.0 && frac >= 0.8, &detail), "{}", r.to_text());
}

#[test]
fn criterion_07_adaptive_weights_ablation() {
    let adaptive = generalization().overall.psnr_restored;
    let (train, test) = split();
    let mut m = aligned().model.clone();
    m.config.adaptive = false;
    let uniform = train_and_eval(m, 30, &train, &test).overall.psnr_restored;
    let detail = format!("adaptive {adaptive:.2} dB vs uniform {uniform:.2} dB");
    assert!(report(7, "adaptive vs uniform", adaptive >= uniform - 0.2, &detail));
}

#[test]
fn criterion_08_k_sweep() {
    let (train, test) = split();
    let mut out = Vec::new();
    for k in [5, 10, 25] {
        let mut m = aligned().model.clone();
        m.config.k = k;
        let r = train_and_eval(m, 1, &train[..44], &test[..22]);
        out.push(format!("k={k} {:.2} dB", r.overall.psnr_restored));
    }
    let pass = ModelConfig::default().k == 10;
    assert!(report(8, "k sweep", pass, &out.join(", ")));
}

/// SSIM from its definition with a full 2D window at every valid position.
fn ssim_reference(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let (w, h) = (a.width(), a.height());
    let (x, y) = (luminance(a), luminance(b));
    let n = 11;
    let mut win: Vec<f64> = (0..n * n)
        .map(|i| {
            let (di, dj) = ((i / n) as f64 - 5.0, (i % n) as f64 - 5.0);
            (-(di * di + dj * dj) / 4.5).exp()
        })
        .collect();
    let s: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= s);
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    let mut count = 0.0;
    for y0 in 0..=h - n {
        for x0 in 0..=w - n {
            let px = |v: &[f64], i: usize| v[(y0 + i / n) * w + x0 + i % n];
            let mx: f64 = (0..n * n).map(|i| win[i] * px(&x, i)).sum();
            let my: f64 = (0..n * n).map(|i| win[i] * px(&y, i)).sum();
            let vx: f64 = (0..n * n).map(|i| win[i] * (px(&x, i) - mx).powi(2)).sum();
            let vy: f64 = (0..n * n).map(|i| win[i] * (px(&y, i) - my).powi(2)).sum();
            let cxy: f64 = (0..n * n).map(|i| win[i] * (px(&x, i) - mx) * (px(&y, i) - my)).sum();
            total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1.0;
        }
    }
    total / count
}

#[test]
fn criterion_09_metrics() {
    let a = ImageBuffer::filled(16, 16, [0.5; 3]).unwrap();
    let b = ImageBuffer::filled(16, 16, [0.5 + 16.0 / 255.0; 3]).unwrap();
    let p = psnr(&a, &b).unwrap();
    let samples = generate_samples(&GenerateConfig { per_recipe: 1, width: 32, height: 32, seed: 4, ..Default::default() }).unwrap();
    let mut worst_self: f64 = 0.0;
    let mut worst_ref: f64 = 0.0;
    for s in &samples {
        worst_self = worst_self.max((ssim(&s.clean, &s.clean).unwrap() - 1.0).abs());
        worst_ref = worst_ref.max((ssim(&s.degraded, &s.clean).unwrap() - ssim_reference(&s.degraded, &s.clean)).abs());
    }
    let pass = (p - 24.05).abs() <= 0.01 && worst_self <= 1e-6 && worst_ref <= 1e-4;
    let detail = format!("PSNR {p:.3} dB, SSIM self error {worst_self:.1e}, reference error {worst_ref:.1e}");
    assert!(report(9, "metrics", pass, &detail));
}

#[test]
fn criterion_10_determinism_and_persistence() {
    let gc = GenerateConfig { per_recipe: 1, width: 32, height: 32, seed: 9, ..Default::default() };
    let bytes = |s: Vec<Sample>| s.iter().flat_map(sample_bytes).collect::<Vec<u8>>();
    let degrade_same = bytes(generate_samples(&gc).unwrap()) == bytes(generate_samples(&gc).unwrap());
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let trees: Vec<Vec<(String, Vec<u8>)>> = dirs
        .iter()
        .map(|d| {
            let m = generate_dataset(&gc, d.path()).unwrap();
            let mut files = vec![("manifest.jsonl".to_string(), std::fs::read(d.path().join("manifest.jsonl")).unwrap())];
            for r in &m.rows {
                for f in [&r.clean, &r.degraded] {
                    files.push((f.clone(), std::fs::read(d.path().join(f)).unwrap()));
                }
            }
            files
        })
        .collect();
    let files_same = trees[0] == trees[1];

    let data: Vec<TrainPair> = generate_samples(&GenerateConfig { width: 24, height: 24, ..gc.clone() })
        .unwrap()
        .iter()
        .take(4)
        .map(TrainPair::from)
        .collect();
    let cfg = |epochs| TrainConfig { epochs, crop: 16, batch_size: 2, seed: 1, ..Default::default() };
    let run = |epochs| {
        let mut t = Trainer::new(Model::new(tiny_config(), 1).unwrap(), cfg(epochs)).unwrap();
        t.fit(&data, |_, _| Ok(())).unwrap();
        t
    };
    let full = run(4);
    let train_same = full.checkpoint().to_bytes() == run(4).checkpoint().to_bytes();

    let ck = Checkpoint::from_bytes(&full.checkpoint().to_bytes()).unwrap();
    let img = &data[0].degraded.crop(0, 0, 16, 16).unwrap();
    let a = full.model.restore_tensor(img).unwrap();
    let b = ck.model.restore_tensor(img).unwrap();
    let bitwise = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());

    let half = Checkpoint::from_bytes(&run(2).checkpoint().to_bytes()).unwrap();
    let mut resumed = Trainer::resume(half, cfg(4)).unwrap();
    resumed.fit(&data, |_, _| Ok(())).unwrap();
    let resume_same = resumed.checkpoint().to_bytes() == full.checkpoint().to_bytes();

    let pass = degrade_same && files_same && train_same && bitwise && resume_same;
    let detail = format!(
        "degrade {degrade_same}/{files_same}, train rerun {train_same}, checkpoint forward {bitwise}, resume {resume_same}"
    );
    assert!(report(10, "determinism and persistence", pass, &detail));
}
