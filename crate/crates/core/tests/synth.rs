use aio_core::image::ImageBuffer;
use aio_core::synth::{
    apply_haze, apply_low_light, apply_particles, compose, generate_samples, procedural_image, DegradationRecipe,
    Degradation, GenerateConfig, Particles, RainParams, SnowParams,
};
use proptest::prelude::*;

fn image(seed: u64) -> ImageBuffer {
    procedural_image(24, 16, seed)
}

fn in_unit(img: &ImageBuffer) -> bool {
    img.data().iter().all(|v| (0.0..=1.0).contains(v))
}

fn kinds(mask: u8) -> Vec<Degradation> {
    Degradation::ALL.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, &d)| d).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn haze_moves_every_value_toward_airlight(seed in 0u64..1000, a in 0.0f32..=1.0, t in 0.0f32..=1.0) {
        let img = image(seed);
        let out = apply_haze(&img, a, t).unwrap();
        for (&j, &o) in img.data().iter().zip(out.data()) {
            prop_assert!((o - a).abs() <= (j - a).abs() + 1e-6);
            // fixed fraction of the distance remains
            prop_assert!(((o - a) - t * (j - a)).abs() <= 1e-5);
        }
        prop_assert!(in_unit(&out));
    }

    #[test]
    fn thicker_haze_is_closer_to_airlight(seed in 0u64..1000, a in 0.7f32..=1.0, t1 in 0.0f32..=1.0, t2 in 0.0f32..=1.0) {
        let img = image(seed);
        let (thick, thin) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let p = apply_haze(&img, a, thick).unwrap();
        let q = apply_haze(&img, a, thin).unwrap();
        for (&x, &y) in p.data().iter().zip(q.data()) {
            prop_assert!((x - a).abs() <= (y - a).abs() + 1e-6);
        }
    }

    #[test]
    fn low_light_never_brightens(seed in 0u64..1000, s in 0.01f32..=1.0, gamma in 1.0f32..4.0) {
        let img = image(seed);
        let out = apply_low_light(&img, s, gamma).unwrap();
        for (&j, &o) in img.data().iter().zip(out.data()) {
            prop_assert!(o <= j + 1e-6);
        }
        prop_assert!(in_unit(&out));
    }

    #[test]
    fn particles_only_lighten_and_stay_in_range(seed in 0u64..1000, count in 0usize..80, opacity in 0.0f32..=1.0, snow in any::<bool>()) {
        let img = image(seed);
        let p = if snow {
            Particles::Snow(SnowParams { count, radius: 2.0, opacity })
        } else {
            Particles::Rain(RainParams { count, length: 9.0, angle_deg: 10.0, opacity })
        };
        let out = apply_particles(&img, &p, seed).unwrap();
        prop_assert!(in_unit(&out));
        for (&j, &o) in img.data().iter().zip(out.data()) {
            prop_assert!(o >= j - 1e-6);
        }
        prop_assert_eq!(apply_particles(&img, &p, seed).unwrap(), out);
    }

    #[test]
    fn composed_recipes_are_labelled_seeded_and_bounded(seed in 0u64..1000, mask in 1u8..16) {
        let img = image(seed);
        let k = kinds(mask);
        let r = DegradationRecipe::sample(&k, img.width(), img.height(), seed).unwrap();
        let (out, labels) = compose(&img, &r).unwrap();
        prop_assert_eq!(&labels, &k);
        prop_assert!(in_unit(&out));
        prop_assert_eq!(compose(&img, &r).unwrap().0, out);
        // component order in the recipe does not matter
        let mut rev = r.clone();
        rev.components.reverse();
        prop_assert_eq!(compose(&img, &rev).unwrap().0, compose(&img, &r).unwrap().0);
    }
}

#[test]
fn identity_recipe_leaves_the_image_alone() {
    let img = image(3);
    let (out, labels) = compose(&img, &DegradationRecipe::identity()).unwrap();
    assert_eq!(out, img);
    assert!(labels.is_empty());
}

#[test]
fn same_seed_same_dataset() {
    let cfg = GenerateConfig { per_recipe: 2, width: 32, height: 32, seed: 7, ..Default::default() };
    let a = generate_samples(&cfg).unwrap();
    assert_eq!(a.len(), 22);
    assert_eq!(a, generate_samples(&cfg).unwrap());
    let b = generate_samples(&GenerateConfig { seed: 8, ..cfg }).unwrap();
    assert_ne!(a[0].degraded, b[0].degraded);
}
