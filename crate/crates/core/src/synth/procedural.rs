//! Built-in base images: colored gradients with a few flat shapes and a
//! faint texture, so the toolkit works without any user photos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::ImageBuffer;

fn color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [rng.gen_range(0.15..0.95), rng.gen_range(0.15..0.95), rng.gen_range(0.15..0.95)]
}

pub fn procedural_image(width: usize, height: usize, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c0, c1) = (color(&mut rng), color(&mut rng));
    let angle: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let (gx, gy) = (angle.cos(), angle.sin());
    let diag = ((width * width + height * height) as f32).sqrt();
    let freq: f32 = rng.gen_range(0.15..0.5);
    let tex_amp: f32 = rng.gen_range(0.0..0.05);

    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f32 - width as f32 / 2.0, y as f32 - height as f32 / 2.0);
            let t = ((fx * gx + fy * gy) / diag + 0.5).clamp(0.0, 1.0);
            let tex = tex_amp * ((x as f32 * freq).sin() * (y as f32 * freq * 0.7).cos());
            for c in 0..3 {
                data.push(c0[c] * (1.0 - t) + c1[c] * t + tex);
            }
        }
    }
    let mut img = ImageBuffer::new(width, height, data).expect("positive extents");

    let shapes = rng.gen_range(3..=6);
    for _ in 0..shapes {
        let col = color(&mut rng);
        let cx = rng.gen_range(0.0..width as f32);
        let cy = rng.gen_range(0.0..height as f32);
        let size = rng.gen_range(0.08..0.3) * width.min(height) as f32;
        let circle = rng.gen_bool(0.5);
        let aspect: f32 = rng.gen_range(0.5..2.0);
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
                let inside = if circle {
                    dx * dx + dy * dy <= size * size
                } else {
                    dx.abs() <= size * aspect && dy.abs() <= size / aspect
                };
                if inside {
                    img.set_pixel(x, y, col);
                }
            }
        }
    }
    img.quantized()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = procedural_image(32, 24, 5);
        assert_eq!(a, procedural_image(32, 24, 5));
        assert_ne!(a, procedural_image(32, 24, 6));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a, a.quantized());
    }
}
