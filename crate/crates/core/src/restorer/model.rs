use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::unet::{Restorer, RESTORER_PREFIX};
use crate::descriptor::{describe, AdaptiveWeights, SceneDescriptors};
use crate::encoder::{DescriptorEncoder, MemoryBank, ENCODER_PREFIX};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::numerics::{Graph, ParamStore, Scalar, Tensor, Var};
use crate::seed::mix;

/// Encoder, memory bank and restorer sharing one parameter store.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: DescriptorEncoder,
    pub restorer: Restorer,
    pub params: ParamStore<f32>,
    pub bank: MemoryBank,
}

impl Model {
    /// Seeded initialisation. The bank holds the (untrained) encoder's text
    /// embeddings until [`Model::refresh_bank`] is called after alignment.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0));
        let encoder = DescriptorEncoder::new(config.encoder.clone(), &mut params, &mut rng)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 1));
        let restorer = Restorer::new(config.clone(), &mut params, &mut rng)?;
        let bank = MemoryBank::from_encoder(&encoder, &params)?;
        let m = Model { config, encoder, restorer, params, bank };
        m.check_bank()?;
        Ok(m)
    }

    /// Rebuilds the architecture for `config` and takes parameter values,
    /// frozen flags and the bank from the given parts.
    pub fn from_parts(config: ModelConfig, params: ParamStore<f32>, bank: MemoryBank) -> Result<Self> {
        let mut m = Model::new(config, 0)?;
        let copied = m.params.load_from(&params)?;
        if copied != m.params.len() || copied != params.len() {
            return Err(Error::Checkpoint(format!(
                "parameter sets differ: model has {}, source has {}, {copied} matched by name",
                m.params.len(),
                params.len()
            )));
        }
        m.bank = bank;
        m.check_bank()?;
        Ok(m)
    }

    fn check_bank(&self) -> Result<()> {
        if self.bank.len() != self.config.classes {
            return Err(Error::Config(format!(
                "memory bank has {} classes, model expects {}",
                self.bank.len(),
                self.config.classes
            )));
        }
        if self.bank.dim() != self.config.encoder.dim {
            return Err(Error::Shape(format!(
                "bank width {} vs encoder width {}",
                self.bank.dim(),
                self.config.encoder.dim
            )));
        }
        Ok(())
    }

    pub fn refresh_bank(&mut self) -> Result<()> {
        self.bank = MemoryBank::from_encoder(&self.encoder, &self.params)?;
        self.check_bank()
    }

    pub fn freeze_encoder(&mut self) {
        self.params.set_frozen(ENCODER_PREFIX, true);
    }

    /// Descriptors and λ for one image (uniform λ when adaptive weights are
    /// disabled).
    pub fn describe(&self, img: &ImageBuffer) -> Result<SceneDescriptors> {
        self.restorer.check_extent(img.height(), img.width())?;
        let d = describe(&self.encoder, &self.params, &self.bank, img, self.config.k)?;
        if self.config.adaptive { Ok(d) } else { d.with_uniform_weights() }
    }

    /// Restorer forward on a prepared graph.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        img: Var,
        h: usize,
        w: usize,
        d: &SceneDescriptors,
    ) -> Result<Var> {
        let raw: Vec<Var> = d.raw.iter().map(|t| g.constant(t.cast())).collect();
        self.restorer.forward(g, store, img, h, w, &raw, &d.weights.lambda)
    }

    pub fn restore_with(&self, img: &ImageBuffer, d: &SceneDescriptors) -> Result<ImageBuffer> {
        let mut g = Graph::<f32>::inference();
        let x = g.constant(img.to_tensor());
        let y = self.forward(&mut g, &self.params, x, img.height(), img.width(), d)?;
        ImageBuffer::from_tensor(g.value(y), img.width(), img.height())
    }

    pub fn restore(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        let d = self.describe(img)?;
        self.restore_with(img, &d)
    }

    /// Forces uniform λ regardless of the configuration.
    pub fn uniform_descriptors(&self, img: &ImageBuffer) -> Result<SceneDescriptors> {
        let mut d = self.describe(img)?;
        d.weights = AdaptiveWeights::uniform(self.bank.len())?;
        Ok(d)
    }

    pub fn param_counts(&self) -> ParamCounts {
        ParamCounts {
            encoder: self.params.num_elements_with_prefix(ENCODER_PREFIX),
            restorer: self.params.num_elements_with_prefix(RESTORER_PREFIX),
            descriptor_projection: (0..self.config.scales())
                .map(|s| self.params.value(self.restorer.w_c(s)).numel())
                .sum(),
        }
    }

    /// Raw output tensor, useful for bitwise comparisons.
    pub fn restore_tensor(&self, img: &ImageBuffer) -> Result<Tensor<f32>> {
        let d = self.describe(img)?;
        let mut g = Graph::<f32>::inference();
        let x = g.constant(img.to_tensor());
        let y = self.forward(&mut g, &self.params, x, img.height(), img.width(), &d)?;
        Ok(g.value(y).clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCounts {
    pub encoder: usize,
    /// All restorer parameters, including the descriptor projections.
    pub restorer: usize,
    pub descriptor_projection: usize,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.encoder + self.restorer
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "encoder (frozen)      {:>10}", self.encoder);
        let _ = writeln!(s, "restorer              {:>10}", self.restorer);
        let _ = writeln!(s, "  of which W_c        {:>10}", self.descriptor_projection);
        let _ = writeln!(s, "total                 {:>10}", self.total());
        s
    }
}
