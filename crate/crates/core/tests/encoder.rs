use aio_core::encoder::{align_pretrain, cosine, AlignConfig, DescriptorEncoder, EncoderConfig, MemoryBank};
use aio_core::image::ImageBuffer;
use aio_core::numerics::ParamStore;
use aio_core::synth::{generate_samples, procedural_image, single_recipes, Degradation, GenerateConfig};
use aio_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn encoder(seed: u64) -> (DescriptorEncoder, ParamStore<f32>) {
    let mut store = ParamStore::new();
    let enc = DescriptorEncoder::new(EncoderConfig::default(), &mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (enc, store)
}

fn swap_patches(img: &ImageBuffer, p: usize, a: (usize, usize), b: (usize, usize)) -> ImageBuffer {
    let mut out = img.clone();
    for dy in 0..p {
        for dx in 0..p {
            let pa = img.pixel(a.1 * p + dx, a.0 * p + dy);
            let pb = img.pixel(b.1 * p + dx, b.0 * p + dy);
            out.set_pixel(a.1 * p + dx, a.0 * p + dy, pb);
            out.set_pixel(b.1 * p + dx, b.0 * p + dy, pa);
        }
    }
    out
}

#[test]
fn token_count_width_and_determinism() {
    let (enc, store) = encoder(1);
    let img = procedural_image(64, 64, 3);
    let t = enc.encode_image(&store, &img).unwrap();
    assert_eq!(t.len(), 65);
    assert_eq!(t.dim(), 64);
    assert_eq!(t.grid, (8, 8));
    assert!(t.tokens.is_finite());
    assert_eq!(enc.encode_image(&store, &img).unwrap(), t);
    let z = enc.project_summary(&store, t.summary()).unwrap();
    assert_eq!(z.len(), 64);
    assert!(matches!(enc.project_summary(&store, &z[..10]), Err(Error::Shape(_))));
    let odd = procedural_image(60, 64, 3);
    assert!(matches!(enc.encode_image(&store, &odd), Err(Error::Shape(_))));
}

#[test]
fn text_side_is_unit_norm_and_closed_vocabulary() {
    let (enc, store) = encoder(2);
    for c in Degradation::ALL {
        let e = enc.encode_text(&store, c.text()).unwrap();
        let n: f32 = e.iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((n - 1.0).abs() < 1e-5);
        assert_eq!(enc.encode_text(&store, c.text()).unwrap(), e);
    }
    assert!(matches!(enc.encode_text(&store, "fog"), Err(Error::Vocabulary(_))));
    let bank = MemoryBank::from_encoder(&enc, &store).unwrap();
    assert_eq!(bank.texts(), vec!["low-light", "haze", "rain", "snow"]);
    assert_eq!(bank.position(Degradation::Rain), Some(2));
}

#[test]
fn swapping_two_patches_swaps_their_tokens() {
    let (enc, store) = encoder(3);
    let img = procedural_image(32, 32, 9);
    let (a, b) = ((0, 1), (2, 3));
    let swapped = swap_patches(&img, 8, a, b);
    let t = enc.encode_image(&store, &img).unwrap();
    let s = enc.encode_image(&store, &swapped).unwrap();
    let idx = |(r, c): (usize, usize)| 1 + r * 4 + c;
    let close = |x: &[f32], y: &[f32]| x.iter().zip(y).all(|(p, q)| (p - q).abs() < 1e-4);
    assert!(close(s.token(idx(a)), t.token(idx(b))));
    assert!(close(s.token(idx(b)), t.token(idx(a))));
    for i in 1..17 {
        if i != idx(a) && i != idx(b) {
            assert!(close(s.token(i), t.token(i)), "token {i} moved");
        }
    }
    assert!(!close(t.token(idx(a)), t.token(idx(b))), "test patches must differ");
}

#[test]
fn alignment_lowers_heldout_loss_and_is_seeded() {
    let gen = |seed, n| {
        generate_samples(&GenerateConfig {
            recipes: single_recipes(),
            per_recipe: n,
            seed,
            width: 32,
            height: 32,
            ..Default::default()
        })
        .unwrap()
    };
    let train = gen(1, 12);
    let held = gen(2, 4);
    let cfg = AlignConfig { epochs: 4, lr: 1e-3, batch: 8, ..Default::default() };
    let run = || {
        let (enc, mut store) = encoder(4);
        let r = align_pretrain(&enc, &mut store, &train, &held, &cfg).unwrap();
        (enc, store, r)
    };
    let (enc, store, r) = run();
    assert!(r.final_heldout_loss < r.initial_heldout_loss, "{r:?}");
    assert_eq!(r.epoch_losses.len(), 4);
    assert!(store.iter().all(|(_, p)| p.frozen), "encoder must be frozen after alignment");
    let (_, store2, r2) = run();
    assert_eq!(r, r2);
    assert!(store.iter().zip(store2.iter()).all(|((_, a), (_, b))| a.value == b.value));

    let bank = MemoryBank::from_encoder(&enc, &store).unwrap();
    for i in 0..4 {
        for j in 0..i {
            assert!(cosine(bank.embedding(i), bank.embedding(j)) < 1.0 - 1e-3);
        }
    }
}

#[test]
fn alignment_rejects_composite_rows() {
    let (enc, mut store) = encoder(5);
    let comp = generate_samples(&GenerateConfig {
        recipes: vec![vec![Degradation::Haze, Degradation::Rain]],
        per_recipe: 2,
        width: 32,
        height: 32,
        ..Default::default()
    })
    .unwrap();
    let r = align_pretrain(&enc, &mut store, &comp, &[], &AlignConfig::default());
    assert!(matches!(r, Err(Error::Dataset(_))));
    assert!(matches!(align_pretrain(&enc, &mut store, &[], &[], &AlignConfig::default()), Err(Error::Config(_))));
}
