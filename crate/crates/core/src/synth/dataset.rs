//! Paired clean/degraded dataset generation and the line-delimited manifest.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::degrade::{compose, label_key, Degradation, DegradationRecipe};
use super::procedural::procedural_image;
use crate::error::{Error, Result};
use crate::image::{encode_ppm, read_image, write_image, ImageBuffer, ImageFormat};
use crate::seed::mix;

pub const GENERATOR: &str = "aio-synth";
pub const GENERATOR_VERSION: u32 = 1;

/// The 11 canonical recipes: four singles and seven composites.
pub fn canonical_recipes() -> Vec<Vec<Degradation>> {
    use Degradation::*;
    vec![
        vec![LowLight],
        vec![Haze],
        vec![Rain],
        vec![Snow],
        vec![LowLight, Haze],
        vec![LowLight, Rain],
        vec![LowLight, Snow],
        vec![Haze, Rain],
        vec![Haze, Snow],
        vec![LowLight, Haze, Rain],
        vec![LowLight, Haze, Snow],
    ]
}

pub fn single_recipes() -> Vec<Vec<Degradation>> {
    Degradation::ALL.iter().map(|&d| vec![d]).collect()
}

#[derive(Clone, Debug)]
pub struct GenerateConfig {
    /// User photos; `None` selects the procedural fallback.
    pub base_dir: Option<PathBuf>,
    pub recipes: Vec<Vec<Degradation>>,
    pub per_recipe: usize,
    pub seed: u64,
    /// Extent of procedural base images.
    pub width: usize,
    pub height: usize,
    pub format: ImageFormat,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            base_dir: None,
            recipes: canonical_recipes(),
            per_recipe: 4,
            seed: 0,
            width: 96,
            height: 96,
            format: ImageFormat::Ppm,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub base_index: usize,
    pub clean: ImageBuffer,
    pub degraded: ImageBuffer,
    pub labels: Vec<Degradation>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub generator: String,
    pub version: u32,
    pub seed: u64,
    pub per_recipe: usize,
    pub recipes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub clean: String,
    pub degraded: String,
    pub labels: Vec<Degradation>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub rows: Vec<ManifestRow>,
    /// Directory row paths are relative to.
    pub root: PathBuf,
}

fn load_bases(cfg: &GenerateConfig) -> Result<Option<Vec<ImageBuffer>>> {
    let Some(dir) = &cfg.base_dir else { return Ok(None) };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| ImageFormat::from_path(p).is_ok())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Dataset(format!("no .ppm or .png images in {}", dir.display())));
    }
    paths.iter().map(read_image).collect::<Result<Vec<_>>>().map(Some)
}

fn check_config(cfg: &GenerateConfig) -> Result<()> {
    if cfg.per_recipe == 0 {
        return Err(Error::Config("per-recipe count must be at least 1".into()));
    }
    if cfg.recipes.is_empty() {
        return Err(Error::Config("no recipes configured".into()));
    }
    if cfg.width == 0 || cfg.height == 0 {
        return Err(Error::Config("image extents must be positive".into()));
    }
    Ok(())
}

/// Generates every sample in memory. Rows are interleaved (base image major,
/// recipe minor) so any prefix stays balanced across recipes.
pub fn generate_samples(cfg: &GenerateConfig) -> Result<Vec<Sample>> {
    check_config(cfg)?;
    let bases = load_bases(cfg)?;
    let mut out = Vec::with_capacity(cfg.per_recipe * cfg.recipes.len());
    for j in 0..cfg.per_recipe {
        let clean = match &bases {
            Some(b) => b[j % b.len()].clone(),
            None => procedural_image(cfg.width, cfg.height, mix(cfg.seed, (1 << 32) | j as u64)),
        };
        for kinds in &cfg.recipes {
            let row = out.len() as u64;
            let seed = mix(cfg.seed, row);
            let recipe = DegradationRecipe::sample(kinds, clean.width(), clean.height(), seed)?;
            let (degraded, labels) = compose(&clean, &recipe)?;
            out.push(Sample {
                id: format!("{j:05}_{}", label_key(&labels)),
                base_index: j,
                clean: clean.clone(),
                degraded: degraded.quantized(),
                labels,
                seed,
            });
        }
    }
    Ok(out)
}

/// Writes clean/degraded pairs under `out_dir` plus `manifest.jsonl`.
pub fn generate_dataset(cfg: &GenerateConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let samples = generate_samples(cfg)?;
    for sub in ["clean", "degraded"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let ext = match cfg.format {
        ImageFormat::Ppm => "ppm",
        ImageFormat::Png => "png",
    };
    let mut rows = Vec::with_capacity(samples.len());
    let mut written_clean = HashSet::new();
    for s in &samples {
        let clean = format!("clean/{:05}.{ext}", s.base_index);
        if written_clean.insert(s.base_index) {
            write_image(&s.clean, out_dir.join(&clean))?;
        }
        let degraded = format!("degraded/{}.{ext}", s.id);
        write_image(&s.degraded, out_dir.join(&degraded))?;
        rows.push(ManifestRow { id: s.id.clone(), clean, degraded, labels: s.labels.clone(), seed: s.seed });
    }
    let manifest = DatasetManifest {
        header: ManifestHeader {
            generator: GENERATOR.into(),
            version: GENERATOR_VERSION,
            seed: cfg.seed,
            per_recipe: cfg.per_recipe,
            recipes: cfg.recipes.iter().map(|r| label_key(r)).collect(),
        },
        rows,
        root: out_dir.to_path_buf(),
    };
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

impl DatasetManifest {
    pub fn to_jsonl(&self) -> String {
        let mut s = serde_json::to_string(&self.header).expect("header serialises");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&serde_json::to_string(r).expect("row serialises"));
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let parse_err = |line: usize, e: serde_json::Error| {
            Error::Dataset(format!("{} line {line}: {e}", path.display()))
        };
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Dataset(format!("{} is empty", path.display())))?
            .map_err(|e| Error::io(path, e))?;
        let header: ManifestHeader = serde_json::from_str(&header_line).map_err(|e| parse_err(1, e))?;
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            rows.push(serde_json::from_str(&line).map_err(|e| parse_err(i + 2, e))?);
        }
        let m = DatasetManifest {
            header,
            rows,
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for r in &self.rows {
            if !ids.insert(&r.id) {
                return Err(Error::Dataset(format!("duplicate sample id {}", r.id)));
            }
        }
        Ok(())
    }

    /// The first `n` rows.
    pub fn take(&self, n: usize) -> Self {
        DatasetManifest { rows: self.rows.iter().take(n).cloned().collect(), ..self.clone() }
    }

    pub fn load_row(&self, row: &ManifestRow) -> Result<Sample> {
        let read = |rel: &str| {
            read_image(self.root.join(rel))
                .map_err(|e| Error::Dataset(format!("row {}: {e}", row.id)))
        };
        Ok(Sample {
            id: row.id.clone(),
            base_index: 0,
            clean: read(&row.clean)?,
            degraded: read(&row.degraded)?,
            labels: row.labels.clone(),
            seed: row.seed,
        })
    }

    pub fn load_samples(&self) -> Result<Vec<Sample>> {
        self.rows.iter().map(|r| self.load_row(r)).collect()
    }
}

/// Clean then degraded image, PPM-encoded; handy for byte-level comparisons.
pub fn sample_bytes(s: &Sample) -> Vec<u8> {
    let mut v = encode_ppm(&s.clean);
    v.extend(encode_ppm(&s.degraded));
    v
}
