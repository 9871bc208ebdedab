use crate::config::{join_list, KvConfig};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::synth::Degradation;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Channel width per U-Net scale, finest first.
    pub widths: Vec<usize>,
    /// AiOTB count per scale, used on both the encoder and decoder path.
    pub blocks: Vec<usize>,
    pub heads: Vec<usize>,
    /// Side of the non-overlapping patch embedding.
    pub patch: usize,
    /// Tokens sampled per class for each scene descriptor.
    pub k: usize,
    /// Number of degradation classes in the memory bank.
    pub classes: usize,
    pub ffn_expansion: usize,
    /// Channels taken from the finest decoder tokens and upsampled to full
    /// resolution by the output head.
    pub head_channels: usize,
    /// Width of the head's full-resolution 3×3 conv and of its global
    /// colour-curve branch.
    pub head_hidden: usize,
    /// `false` replaces λ with the uniform vector (ablation).
    pub adaptive: bool,
    pub encoder: EncoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            widths: vec![32, 64, 128],
            blocks: vec![2, 2, 2],
            heads: vec![1, 2, 4],
            patch: 4,
            k: 10,
            classes: Degradation::ALL.len(),
            ffn_expansion: 2,
            head_channels: 16,
            head_hidden: 32,
            adaptive: true,
            encoder: EncoderConfig::default(),
        }
    }
}

pub const MODEL_KEYS: &[&str] = &[
    "widths",
    "blocks",
    "heads",
    "patch",
    "k",
    "classes",
    "ffn_expansion",
    "head_channels",
    "head_hidden",
    "adaptive",
    "encoder.dim",
    "encoder.patch",
    "encoder.blocks",
    "encoder.heads",
    "encoder.mlp_ratio",
];

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

impl ModelConfig {
    pub fn scales(&self) -> usize {
        self.widths.len()
    }

    /// Input extents must be multiples of this.
    pub fn divisibility(&self) -> usize {
        let unet = self.patch << (self.scales().saturating_sub(1));
        let enc = self.encoder.patch;
        unet / gcd(unet, enc) * enc
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.widths.len();
        if s == 0 || self.blocks.len() != s || self.heads.len() != s {
            return Err(Error::Config(format!(
                "widths/blocks/heads must be non-empty and equally long, got {}/{}/{}",
                s,
                self.blocks.len(),
                self.heads.len()
            )));
        }
        for i in 0..s {
            if self.widths[i] == 0 || self.heads[i] == 0 || self.widths[i] % self.heads[i] != 0 {
                return Err(Error::Config(format!(
                    "scale {i}: width {} not divisible by {} heads",
                    self.widths[i], self.heads[i]
                )));
            }
        }
        if self.patch == 0 || self.k == 0 || self.classes == 0 || self.ffn_expansion == 0 {
            return Err(Error::Config("patch, k, classes and ffn_expansion must be positive".into()));
        }
        if self.head_channels == 0 || self.head_hidden == 0 {
            return Err(Error::Config("output head sizes must be positive".into()));
        }
        self.encoder.validate()
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut c = KvConfig::new();
        c.set("widths", join_list(&self.widths));
        c.set("blocks", join_list(&self.blocks));
        c.set("heads", join_list(&self.heads));
        c.set("patch", self.patch);
        c.set("k", self.k);
        c.set("classes", self.classes);
        c.set("ffn_expansion", self.ffn_expansion);
        c.set("head_channels", self.head_channels);
        c.set("head_hidden", self.head_hidden);
        c.set("adaptive", self.adaptive);
        c.set("encoder.dim", self.encoder.dim);
        c.set("encoder.patch", self.encoder.patch);
        c.set("encoder.blocks", self.encoder.blocks);
        c.set("encoder.heads", self.encoder.heads);
        c.set("encoder.mlp_ratio", self.encoder.mlp_ratio);
        c
    }

    /// Overrides fields present in `c`; other keys are ignored.
    pub fn apply_kv(&mut self, c: &KvConfig) -> Result<()> {
        if let Some(v) = c.get_list("widths")? {
            self.widths = v;
        }
        if let Some(v) = c.get_list("blocks")? {
            self.blocks = v;
        }
        if let Some(v) = c.get_list("heads")? {
            self.heads = v;
        }
        self.patch = c.get_or("patch", self.patch)?;
        self.k = c.get_or("k", self.k)?;
        self.classes = c.get_or("classes", self.classes)?;
        self.ffn_expansion = c.get_or("ffn_expansion", self.ffn_expansion)?;
        self.head_channels = c.get_or("head_channels", self.head_channels)?;
        self.head_hidden = c.get_or("head_hidden", self.head_hidden)?;
        self.adaptive = c.get_or("adaptive", self.adaptive)?;
        self.encoder.dim = c.get_or("encoder.dim", self.encoder.dim)?;
        self.encoder.patch = c.get_or("encoder.patch", self.encoder.patch)?;
        self.encoder.blocks = c.get_or("encoder.blocks", self.encoder.blocks)?;
        self.encoder.heads = c.get_or("encoder.heads", self.encoder.heads)?;
        self.encoder.mlp_ratio = c.get_or("encoder.mlp_ratio", self.encoder.mlp_ratio)?;
        Ok(())
    }

    pub fn from_kv(c: &KvConfig) -> Result<Self> {
        c.check_keys(MODEL_KEYS)?;
        let mut m = ModelConfig::default();
        m.apply_kv(c)?;
        m.validate()?;
        Ok(m)
    }
}
