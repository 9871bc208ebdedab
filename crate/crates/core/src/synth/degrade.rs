use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

/// The four degradation classes, in canonical application order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Degradation {
    #[serde(rename = "low-light")]
    LowLight,
    #[serde(rename = "haze")]
    Haze,
    #[serde(rename = "rain")]
    Rain,
    #[serde(rename = "snow")]
    Snow,
}

impl Degradation {
    pub const ALL: [Degradation; 4] =
        [Degradation::LowLight, Degradation::Haze, Degradation::Rain, Degradation::Snow];

    pub fn text(self) -> &'static str {
        match self {
            Degradation::LowLight => "low-light",
            Degradation::Haze => "haze",
            Degradation::Rain => "rain",
            Degradation::Snow => "snow",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Degradation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.text())
    }
}

impl FromStr for Degradation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Degradation::ALL
            .into_iter()
            .find(|d| d.text() == s)
            .ok_or_else(|| Error::Vocabulary(s.to_string()))
    }
}

/// Joins labels as `a+b+c` in canonical order.
pub fn label_key(labels: &[Degradation]) -> String {
    let mut l = labels.to_vec();
    l.sort();
    l.iter().map(|d| d.text()).collect::<Vec<_>>().join("+")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowLightParams {
    pub scale: f32,
    pub gamma: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HazeParams {
    pub airlight: f32,
    pub transmission: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RainParams {
    pub count: usize,
    pub length: f32,
    pub angle_deg: f32,
    pub opacity: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnowParams {
    pub count: usize,
    pub radius: f32,
    pub opacity: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Particles {
    Rain(RainParams),
    Snow(SnowParams),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Component {
    LowLight(LowLightParams),
    Haze(HazeParams),
    Rain(RainParams),
    Snow(SnowParams),
}

impl Component {
    pub fn kind(&self) -> Degradation {
        match self {
            Component::LowLight(_) => Degradation::LowLight,
            Component::Haze(_) => Degradation::Haze,
            Component::Rain(_) => Degradation::Rain,
            Component::Snow(_) => Degradation::Snow,
        }
    }
}

// Sampling ranges for randomly drawn recipes. Counts are per 64×64 pixels.
const LOW_SCALE: (f32, f32) = (0.45, 0.8);
const LOW_GAMMA: (f32, f32) = (1.2, 2.0);
const HAZE_A: (f32, f32) = (0.7, 1.0);
const HAZE_T: (f32, f32) = (0.3, 0.8);
const RAIN_DENSITY: (f32, f32) = (30.0, 60.0);
const RAIN_LEN: (f32, f32) = (6.0, 14.0);
const RAIN_ANGLE: (f32, f32) = (-20.0, 20.0);
const RAIN_OPACITY: (f32, f32) = (0.35, 0.65);
const SNOW_DENSITY: (f32, f32) = (20.0, 40.0);
const SNOW_RADIUS: (f32, f32) = (1.4, 2.8);
const SNOW_OPACITY: (f32, f32) = (0.6, 0.9);

/// An ordered subset of the four degradations with their parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationRecipe {
    pub components: Vec<Component>,
    pub seed: u64,
}

impl DegradationRecipe {
    pub fn new(components: Vec<Component>, seed: u64) -> Result<Self> {
        let r = DegradationRecipe { components, seed };
        r.validate()?;
        Ok(r)
    }

    pub fn identity() -> Self {
        DegradationRecipe { components: Vec::new(), seed: 0 }
    }

    /// Draws parameters for `kinds` from the sampling ranges; particle counts
    /// scale with the image area.
    pub fn sample(kinds: &[Degradation], width: usize, height: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_2ec1_9e5);
        let area = (width * height) as f32 / 4096.0;
        let mut u = |r: (f32, f32)| rng.gen_range(r.0..=r.1);
        let mut components = Vec::new();
        for &k in kinds {
            components.push(match k {
                Degradation::LowLight => {
                    Component::LowLight(LowLightParams { scale: u(LOW_SCALE), gamma: u(LOW_GAMMA) })
                }
                Degradation::Haze => {
                    Component::Haze(HazeParams { airlight: u(HAZE_A), transmission: u(HAZE_T) })
                }
                Degradation::Rain => Component::Rain(RainParams {
                    count: (u(RAIN_DENSITY) * area).round() as usize,
                    length: u(RAIN_LEN),
                    angle_deg: u(RAIN_ANGLE),
                    opacity: u(RAIN_OPACITY),
                }),
                Degradation::Snow => Component::Snow(SnowParams {
                    count: (u(SNOW_DENSITY) * area).round() as usize,
                    radius: u(SNOW_RADIUS),
                    opacity: u(SNOW_OPACITY),
                }),
            });
        }
        Self::new(components, seed)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = [false; 4];
        for c in &self.components {
            let k = c.kind().index();
            if seen[k] {
                return Err(Error::Parameter(format!("recipe lists {} twice", c.kind())));
            }
            seen[k] = true;
            match *c {
                Component::LowLight(p) => check_low_light(p.scale, p.gamma)?,
                Component::Haze(p) => {
                    in_range("airlight", p.airlight, 0.7, 1.0)?;
                    in_range("transmission", p.transmission, 0.2, 0.9)?;
                }
                Component::Rain(p) => {
                    check_opacity(p.opacity)?;
                    if !(p.length.is_finite() && p.length >= 0.0 && p.angle_deg.is_finite()) {
                        return Err(Error::Parameter(format!("invalid rain geometry {p:?}")));
                    }
                }
                Component::Snow(p) => {
                    check_opacity(p.opacity)?;
                    if !(p.radius.is_finite() && p.radius > 0.0) {
                        return Err(Error::Parameter(format!("snow radius must be positive, got {}", p.radius)));
                    }
                }
            }
        }
        Ok(())
    }

    /// Component labels in canonical order.
    pub fn labels(&self) -> Vec<Degradation> {
        let mut l: Vec<_> = self.components.iter().map(Component::kind).collect();
        l.sort();
        l
    }

    fn canonical(&self) -> Vec<Component> {
        let mut c = self.components.clone();
        c.sort_by_key(Component::kind);
        c
    }
}

fn in_range(name: &str, v: f32, lo: f32, hi: f32) -> Result<()> {
    if !(v >= lo && v <= hi) {
        return Err(Error::Parameter(format!("{name} = {v} outside [{lo}, {hi}]")));
    }
    Ok(())
}

fn check_low_light(s: f32, gamma: f32) -> Result<()> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::Parameter(format!("low-light scale {s} outside (0, 1]")));
    }
    if !(gamma >= 1.0 && gamma.is_finite()) {
        return Err(Error::Parameter(format!("low-light gamma {gamma} must be ≥ 1")));
    }
    Ok(())
}

fn check_opacity(o: f32) -> Result<()> {
    in_range("opacity", o, 0.0, 1.0)
}

/// Atmospheric scattering with uniform transmission: `J·t + A·(1 − t)`.
pub fn apply_haze(img: &ImageBuffer, airlight: f32, transmission: f32) -> Result<ImageBuffer> {
    in_range("airlight", airlight, 0.0, 1.0)?;
    in_range("transmission", transmission, 0.0, 1.0)?;
    Ok(img.map(|j| j * transmission + airlight * (1.0 - transmission)))
}

/// `clamp(s·J)^gamma`.
pub fn apply_low_light(img: &ImageBuffer, scale: f32, gamma: f32) -> Result<ImageBuffer> {
    check_low_light(scale, gamma)?;
    Ok(img.map(|j| (scale * j).clamp(0.0, 1.0).powf(gamma)))
}

/// Alpha-composites white rain streaks or snow discs at seeded positions.
pub fn apply_particles(img: &ImageBuffer, particles: &Particles, seed: u64) -> Result<ImageBuffer> {
    let (w, h) = (img.width(), img.height());
    let mut out = img.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let composite = |out: &mut ImageBuffer, x: usize, y: usize, alpha: f32| {
        let p = out.pixel(x, y);
        out.set_pixel(x, y, p.map(|v| v * (1.0 - alpha) + alpha));
    };
    match *particles {
        Particles::Rain(p) => {
            check_opacity(p.opacity)?;
            let theta = p.angle_deg.to_radians();
            let (dx, dy) = (theta.sin(), theta.cos());
            let steps = (p.length * 4.0).ceil().max(1.0) as usize;
            let mut mask = vec![false; w * h];
            for _ in 0..p.count {
                let cx = rng.gen_range(0.0..w as f32);
                let cy = rng.gen_range(0.0..h as f32);
                let mut touched = Vec::new();
                for s in 0..=steps {
                    let t = (s as f32 / steps as f32 - 0.5) * p.length;
                    let (x, y) = ((cx + t * dx).floor(), (cy + t * dy).floor());
                    if x < 0.0 || y < 0.0 || x >= w as f32 || y >= h as f32 {
                        continue;
                    }
                    let i = y as usize * w + x as usize;
                    if !mask[i] {
                        mask[i] = true;
                        touched.push(i);
                    }
                }
                for i in touched {
                    composite(&mut out, i % w, i / w, p.opacity);
                    mask[i] = false;
                }
            }
        }
        Particles::Snow(p) => {
            check_opacity(p.opacity)?;
            for _ in 0..p.count {
                let cx = rng.gen_range(0.0..w as f32);
                let cy = rng.gen_range(0.0..h as f32);
                let r = p.radius;
                let x0 = (cx - r).floor().max(0.0) as usize;
                let y0 = (cy - r).floor().max(0.0) as usize;
                let x1 = ((cx + r).ceil() as usize).min(w - 1);
                let y1 = ((cy + r).ceil() as usize).min(h - 1);
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let d = ((x as f32 + 0.5 - cx).powi(2) + (y as f32 + 0.5 - cy).powi(2)).sqrt();
                        // full coverage inside r/2, linear falloff to zero at r
                        let cover = ((r - d) / (0.5 * r)).clamp(0.0, 1.0);
                        if cover > 0.0 {
                            composite(&mut out, x, y, p.opacity * cover);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Applies the recipe's components in canonical order (low-light → haze →
/// rain → snow) and returns the result with its label set.
pub fn compose(img: &ImageBuffer, recipe: &DegradationRecipe) -> Result<(ImageBuffer, Vec<Degradation>)> {
    recipe.validate()?;
    let mut out = img.clone();
    for c in recipe.canonical() {
        let stream = recipe.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (c.kind().index() as u64 + 1);
        out = match c {
            Component::LowLight(p) => apply_low_light(&out, p.scale, p.gamma)?,
            Component::Haze(p) => apply_haze(&out, p.airlight, p.transmission)?,
            Component::Rain(p) => apply_particles(&out, &Particles::Rain(p), stream)?,
            Component::Snow(p) => apply_particles(&out, &Particles::Snow(p), stream)?,
        };
    }
    Ok((out, recipe.labels()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(v: f32) -> ImageBuffer {
        ImageBuffer::filled(6, 5, [v; 3]).unwrap()
    }

    #[test]
    fn haze_examples() {
        let img = gray(0.5);
        assert_eq!(apply_haze(&img, 0.8, 1.0).unwrap(), img);
        assert!(apply_haze(&img, 1.0, 0.0).unwrap().data().iter().all(|&v| v == 1.0));
        assert!(apply_haze(&img, 1.0, 0.5).unwrap().data().iter().all(|&v| v == 0.75));
        assert!(matches!(apply_haze(&img, 1.2, 0.5), Err(Error::Parameter(_))));
        assert!(matches!(apply_haze(&img, 0.9, -0.1), Err(Error::Parameter(_))));
    }

    #[test]
    fn low_light_examples() {
        let img = gray(0.5);
        assert_eq!(apply_low_light(&img, 1.0, 1.0).unwrap(), img);
        assert!(apply_low_light(&img, 0.5, 2.0).unwrap().data().iter().all(|&v| v == 0.0625));
        assert!(apply_low_light(&gray(0.0), 0.3, 1.5).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(matches!(apply_low_light(&img, 0.0, 2.0), Err(Error::Parameter(_))));
        assert!(matches!(apply_low_light(&img, 0.5, 0.9), Err(Error::Parameter(_))));
    }

    #[test]
    fn particle_examples() {
        let img = gray(0.3);
        let none = Particles::Rain(RainParams { count: 0, length: 5.0, angle_deg: 0.0, opacity: 0.5 });
        assert_eq!(apply_particles(&img, &none, 1).unwrap(), img);

        let snow = Particles::Snow(SnowParams { count: 1, radius: 3.0, opacity: 1.0 });
        let out = apply_particles(&img, &snow, 4).unwrap();
        let full = out.data().iter().filter(|&&v| v == 1.0).count();
        assert!(full > 0, "an opaque disc must saturate its core");

        let rain = Particles::Rain(RainParams { count: 3, length: 4.0, angle_deg: 10.0, opacity: 1.0 });
        let out = apply_particles(&img, &rain, 4).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.3 || v == 1.0));
        assert!(out.data().iter().any(|&v| v == 1.0));
        assert_eq!(out, apply_particles(&img, &rain, 4).unwrap());
    }

    #[test]
    fn compose_examples() {
        let img = gray(0.5);
        assert_eq!(compose(&img, &DegradationRecipe::identity()).unwrap().0, img);

        let haze = HazeParams { airlight: 0.8, transmission: 0.4 };
        let r = DegradationRecipe::new(vec![Component::Haze(haze)], 3).unwrap();
        assert_eq!(compose(&img, &r).unwrap().0, apply_haze(&img, 0.8, 0.4).unwrap());

        // listed out of order; canonical application still darkens first
        let r = DegradationRecipe::new(
            vec![
                Component::Haze(HazeParams { airlight: 1.0, transmission: 0.5 }),
                Component::LowLight(LowLightParams { scale: 0.5, gamma: 2.0 }),
            ],
            0,
        );
        // airlight 1.0 and t 0.5 are inside the recipe ranges
        let (out, labels) = compose(&img, &r.unwrap()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.53125));
        assert_eq!(labels, vec![Degradation::LowLight, Degradation::Haze]);
    }

    #[test]
    fn recipe_rejects_duplicates_and_bad_ranges() {
        let h = Component::Haze(HazeParams { airlight: 0.8, transmission: 0.4 });
        assert!(DegradationRecipe::new(vec![h, h], 0).is_err());
        let bad = Component::Haze(HazeParams { airlight: 0.5, transmission: 0.4 });
        assert!(DegradationRecipe::new(vec![bad], 0).is_err());
    }

    #[test]
    fn labels_parse_and_print() {
        for d in Degradation::ALL {
            assert_eq!(d.text().parse::<Degradation>().unwrap(), d);
        }
        assert!(matches!("fog".parse::<Degradation>(), Err(Error::Vocabulary(_))));
        assert_eq!(label_key(&[Degradation::Snow, Degradation::LowLight]), "low-light+snow");
    }
}
