use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::metrics::{psnr, ssim};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::restorer::Model;
use crate::synth::{label_key, Sample};

/// Anything that maps a degraded image to a restored one.
pub trait Restore {
    fn restore(&self, degraded: &ImageBuffer) -> Result<ImageBuffer>;
}

impl Restore for Model {
    fn restore(&self, degraded: &ImageBuffer) -> Result<ImageBuffer> {
        Model::restore(self, degraded)
    }
}

/// Returns its input unchanged.
pub struct IdentityRestorer;

impl Restore for IdentityRestorer {
    fn restore(&self, degraded: &ImageBuffer) -> Result<ImageBuffer> {
        Ok(degraded.clone())
    }
}

/// Looks up the clean image paired with each degraded input.
pub struct OracleRestorer {
    pairs: Vec<(ImageBuffer, ImageBuffer)>,
}

impl OracleRestorer {
    pub fn new(samples: &[Sample]) -> Self {
        OracleRestorer { pairs: samples.iter().map(|s| (s.degraded.clone(), s.clean.clone())).collect() }
    }
}

impl Restore for OracleRestorer {
    fn restore(&self, degraded: &ImageBuffer) -> Result<ImageBuffer> {
        self.pairs
            .iter()
            .find(|(d, _)| d == degraded)
            .map(|(_, c)| c.clone())
            .ok_or_else(|| Error::Dataset("oracle has no clean image for this input".into()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageScore {
    pub id: String,
    pub recipe: String,
    pub psnr_degraded: f64,
    pub ssim_degraded: f64,
    pub psnr_restored: f64,
    pub ssim_restored: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecipeSummary {
    pub recipe: String,
    pub count: usize,
    pub psnr_degraded: f64,
    pub ssim_degraded: f64,
    pub psnr_restored: f64,
    pub ssim_restored: f64,
}

impl RecipeSummary {
    fn from_scores(recipe: &str, scores: &[&ImageScore]) -> Self {
        let n = scores.len() as f64;
        let mean = |f: fn(&ImageScore) -> f64| scores.iter().map(|s| f(s)).sum::<f64>() / n;
        RecipeSummary {
            recipe: recipe.to_string(),
            count: scores.len(),
            psnr_degraded: mean(|s| s.psnr_degraded),
            ssim_degraded: mean(|s| s.ssim_degraded),
            psnr_restored: mean(|s| s.psnr_restored),
            ssim_restored: mean(|s| s.ssim_restored),
        }
    }

    pub fn psnr_gain(&self) -> f64 {
        self.psnr_restored - self.psnr_degraded
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub images: Vec<ImageScore>,
    pub recipes: Vec<RecipeSummary>,
    pub overall: RecipeSummary,
}

impl EvalReport {
    /// Fraction of images whose SSIM improved over the degraded input.
    pub fn ssim_improved_fraction(&self) -> f64 {
        let n = self.images.iter().filter(|s| s.ssim_restored > s.ssim_degraded).count();
        n as f64 / self.images.len() as f64
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<26} {:>5} {:>9} {:>9} {:>9} {:>9} {:>7}",
            "recipe", "n", "PSNR in", "PSNR out", "SSIM in", "SSIM out", "gain"
        );
        for r in self.recipes.iter().chain(std::iter::once(&self.overall)) {
            let _ = writeln!(
                s,
                "{:<26} {:>5} {:>9.3} {:>9.3} {:>9.4} {:>9.4} {:>+7.3}",
                r.recipe,
                r.count,
                r.psnr_degraded,
                r.psnr_restored,
                r.ssim_degraded,
                r.ssim_restored,
                r.psnr_gain()
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Scores a restorer on `samples`, grouped by recipe label.
pub fn evaluate(restorer: &dyn Restore, samples: &[Sample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Config("evaluation split is empty".into()));
    }
    let mut images = Vec::with_capacity(samples.len());
    for s in samples {
        let out = restorer.restore(&s.degraded)?;
        images.push(ImageScore {
            id: s.id.clone(),
            recipe: label_key(&s.labels),
            psnr_degraded: psnr(&s.degraded, &s.clean)?,
            ssim_degraded: ssim(&s.degraded, &s.clean)?,
            psnr_restored: psnr(&out, &s.clean)?,
            ssim_restored: ssim(&out, &s.clean)?,
        });
    }
    let mut groups: BTreeMap<&str, Vec<&ImageScore>> = BTreeMap::new();
    for i in &images {
        groups.entry(&i.recipe).or_default().push(i);
    }
    let recipes = groups.iter().map(|(k, v)| RecipeSummary::from_scores(k, v)).collect();
    let all: Vec<&ImageScore> = images.iter().collect();
    let overall = RecipeSummary::from_scores("overall", &all);
    Ok(EvalReport { images, recipes, overall })
}
