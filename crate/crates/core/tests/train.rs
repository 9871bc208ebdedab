use aio_core::image::ImageBuffer;
use aio_core::numerics::Graph;
use aio_core::restorer::Model;
use aio_core::selftest::tiny_config;
use aio_core::synth::{generate_samples, GenerateConfig, Sample};
use aio_core::train::metrics::{gaussian_window, luminance};
use aio_core::train::{
    evaluate, loss_total, psnr, ssim, Checkpoint, IdentityRestorer, OracleRestorer, TrainConfig, TrainPair, Trainer,
};
use aio_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn samples(n: usize, size: usize, seed: u64) -> Vec<Sample> {
    let s = generate_samples(&GenerateConfig { per_recipe: n.div_ceil(11), width: size, height: size, seed, ..Default::default() })
        .unwrap();
    s.into_iter().take(n).collect()
}

fn pairs(n: usize) -> Vec<TrainPair> {
    samples(n, 24, 1).iter().map(TrainPair::from).collect()
}

fn train_cfg(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, crop: 16, batch_size: 2, lr: 2e-3, seed: 5, ..Default::default() }
}

fn noisy(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ImageBuffer {
    ImageBuffer::new(w, h, (0..w * h * 3).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn encoder_hash(m: &Model) -> Vec<u8> {
    let mut h = Sha256::new();
    for (_, p) in m.params.iter().filter(|(_, p)| p.name.starts_with("encoder.")) {
        h.update(p.name.as_bytes());
        for v in p.value.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().to_vec()
}

fn loss_of(m: &Model, pred: &ImageBuffer, target: &ImageBuffer, wp: f64, beta: f64) -> f64 {
    let mut g = Graph::<f32>::inference();
    let p = g.constant(pred.to_tensor());
    let t = g.constant(target.to_tensor());
    let l = loss_total(&mut g, &m.encoder, &m.params, p, t, pred.height(), pred.width(), wp, beta).unwrap();
    g.value(l).item() as f64
}

#[test]
fn loss_examples() {
    let m = Model::new(tiny_config(), 0).unwrap();
    let t = ImageBuffer::filled(16, 16, [0.2; 3]).unwrap();
    let p = ImageBuffer::filled(16, 16, [0.7; 3]).unwrap();
    assert_eq!(loss_of(&m, &t, &t, 0.04, 1.0), 0.0);
    // quadratic branch: 0.5·0.25 / 1
    assert!((loss_of(&m, &p, &t, 0.0, 1.0) - 0.125).abs() < 1e-5);
    // linear branch: 0.5 − 0.05
    assert!((loss_of(&m, &p, &t, 0.0, 0.1) - 0.45).abs() < 1e-5);
    assert!(loss_of(&m, &p, &t, 0.5, 1.0) >= loss_of(&m, &p, &t, 0.0, 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let (a, b) = (noisy(&mut rng, 16, 16), noisy(&mut rng, 16, 16));
        assert!(loss_of(&m, &a, &b, 0.04, 1.0) >= 0.0);
    }
}

/// SSIM straight from the definition: a full 2D window at every valid
/// position, no separable filtering.
fn ssim_direct(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let (w, h) = (a.width(), a.height());
    let (x, y) = (luminance(a), luminance(b));
    let n = 11usize;
    let mut win = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            win[i * n + j] = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let s: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= s);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=h - n {
        for x0 in 0..=w - n {
            let at = |v: &[f64], i: usize, j: usize| v[(y0 + i) * w + x0 + j];
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    mx += win[i * n + j] * at(&x, i, j);
                    my += win[i * n + j] * at(&y, i, j);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let (dx, dy) = (at(&x, i, j) - mx, at(&y, i, j) - my);
                    vx += win[i * n + j] * dx * dx;
                    vy += win[i * n + j] * dy * dy;
                    cxy += win[i * n + j] * dx * dy;
                }
            }
            total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn ssim_matches_direct_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = samples(6, 32, 3);
    for smp in &s {
        let got = ssim(&smp.degraded, &smp.clean).unwrap();
        assert!((got - ssim_direct(&smp.degraded, &smp.clean)).abs() <= 1e-4, "{}", smp.id);
    }
    for _ in 0..4 {
        let (a, b) = (noisy(&mut rng, 32, 32), noisy(&mut rng, 32, 32));
        assert!((ssim(&a, &b).unwrap() - ssim_direct(&a, &b)).abs() <= 1e-4);
    }
    let w = gaussian_window(11, 1.5);
    assert!((w[5] / w[4] - (1.0f64 / 4.5).exp()).abs() < 1e-12);
}

#[test]
fn ssim_self_and_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (a, b) = (noisy(&mut rng, 24, 20), noisy(&mut rng, 24, 20));
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    assert!(ssim(&a, &b).unwrap() < 0.5);
    assert!(psnr(&a, &b).unwrap() > 0.0);
}

#[test]
fn evaluate_with_identity_and_oracle() {
    let s = samples(11, 32, 6);
    let id = evaluate(&IdentityRestorer, &s).unwrap();
    assert_eq!(id.images.len(), 11);
    assert_eq!(id.recipes.len(), 11);
    assert_eq!(id.overall.psnr_gain(), 0.0);
    assert_eq!(id.ssim_improved_fraction(), 0.0);
    let or = evaluate(&OracleRestorer::new(&s), &s).unwrap();
    assert_eq!(or.overall.psnr_restored, 100.0);
    assert!((or.overall.ssim_restored - 1.0).abs() < 1e-12);
    assert!(or.to_text().contains("overall"));
    assert!(or.to_json().contains("\"recipes\""));
    assert!(matches!(evaluate(&IdentityRestorer, &[]), Err(Error::Config(_))));
}

#[test]
fn checkpoint_round_trip_is_byte_and_bit_exact() {
    let mut t = Trainer::new(Model::new(tiny_config(), 2).unwrap(), train_cfg(1)).unwrap();
    t.fit(&pairs(4), |_, _| Ok(())).unwrap();
    let ck = t.checkpoint();
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.to_bytes(), bytes);
    let img = samples(1, 16, 9)[0].degraded.clone();
    let a = t.model.restore_tensor(&img).unwrap();
    let b = loaded.model.restore_tensor(&img).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() / 2]), Err(Error::Checkpoint(_))));
}

#[test]
fn resumed_training_equals_uninterrupted_training() {
    let data = pairs(4);
    let mut full = Trainer::new(Model::new(tiny_config(), 3).unwrap(), train_cfg(4)).unwrap();
    full.fit(&data, |_, _| Ok(())).unwrap();

    let mut first = Trainer::new(Model::new(tiny_config(), 3).unwrap(), train_cfg(2)).unwrap();
    first.fit(&data, |_, _| Ok(())).unwrap();
    let ck = Checkpoint::from_bytes(&first.checkpoint().to_bytes()).unwrap();
    let mut rest = Trainer::resume(ck, train_cfg(4)).unwrap();
    assert_eq!(rest.epoch, 2);
    rest.fit(&data, |_, _| Ok(())).unwrap();

    assert_eq!(rest.step, full.step);
    assert_eq!(rest.checkpoint().to_bytes(), full.checkpoint().to_bytes());
    assert_eq!(rest.log[..], full.log[full.log.len() - rest.log.len()..]);
}

#[test]
fn same_seed_same_run_and_frozen_encoder() {
    let data = pairs(4);
    let run = || {
        let mut t = Trainer::new(Model::new(tiny_config(), 4).unwrap(), train_cfg(2)).unwrap();
        let before = encoder_hash(&t.model);
        t.fit(&data, |_, _| Ok(())).unwrap();
        assert_eq!(encoder_hash(&t.model), before, "encoder weights changed");
        t.checkpoint().to_bytes()
    };
    assert_eq!(run(), run());
}

#[test]
fn fixed_batch_loss_decreases() {
    let s = samples(2, 16, 8);
    let batch: Vec<_> = s.iter().map(|s| (s.degraded.clone(), s.clean.clone())).collect();
    let mut t = Trainer::new(Model::new(tiny_config(), 5).unwrap(), train_cfg(1)).unwrap();
    let first = t.step_on(&batch).unwrap();
    let mut last = first;
    for _ in 0..99 {
        last = t.step_on(&batch).unwrap();
    }
    assert!(last < 0.7 * first, "{first} -> {last}");
    assert_eq!(t.step, 100);
    assert_eq!(t.log.len(), 100);
    assert_eq!(t.log[0].line(), format!("1,1,{first}"));
}

#[test]
fn non_finite_loss_aborts_with_context() {
    let s = samples(1, 16, 9);
    let batch = vec![(s[0].degraded.clone(), s[0].clean.clone())];
    let mut t = Trainer::new(Model::new(tiny_config(), 6).unwrap(), train_cfg(1)).unwrap();
    let id = t.model.params.iter().find(|(_, p)| p.name.starts_with("restorer.")).unwrap().0;
    t.model.params.value_mut(id).data_mut()[0] = f32::NAN;
    match t.step_on(&batch) {
        Err(Error::NonFinite { step, lr, .. }) => {
            assert_eq!(step, 0);
            assert_eq!(lr, 2e-3);
        }
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

#[test]
fn config_errors() {
    let m = Model::new(tiny_config(), 0).unwrap();
    for bad in [
        TrainConfig { crop: 18, ..train_cfg(1) },
        TrainConfig { lr: 0.0, ..train_cfg(1) },
        TrainConfig { batch_size: 0, ..train_cfg(1) },
        TrainConfig { smooth_beta: -1.0, ..train_cfg(1) },
    ] {
        assert!(matches!(Trainer::new(m.clone(), bad), Err(Error::Config(_))));
    }
    let mut t = Trainer::new(m, train_cfg(1)).unwrap();
    assert!(matches!(t.run_epoch(&[]), Err(Error::Config(_))));
}
