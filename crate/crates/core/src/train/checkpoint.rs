//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "AIORCKPT" | u32 version
//! u32 len | model config as key=value text
//! u64 epoch | u64 step
//! u8 has_rng [ 32-byte seed | u64 stream | u128 word position ]
//! u32 classes { u32 len | text } | u32 width | f32 embeddings…
//! u32 params { u32 len | name | u8 frozen | u32 ndim | u32 dims… | f32 data… }
//! u8 has_adam [ f64 lr | f64 β1 | f64 β2 | f64 ε | u64 t
//!               u32 entries { u32 len | name | tensor m | tensor v } ]
//! ```

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::KvConfig;
use crate::encoder::MemoryBank;
use crate::error::{Error, Result};
use crate::numerics::{Adam, ParamStore, Tensor};
use crate::restorer::{Model, ModelConfig};
use crate::synth::Degradation;

pub const MAGIC: &[u8; 8] = b"AIORCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Full ChaCha8 stream position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::from_seed(self.seed);
        r.set_stream(self.stream);
        r.set_word_pos(self.word_pos);
        r
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<Adam<f32>>,
    pub rng: Option<RngState>,
    pub epoch: u64,
    pub step: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len());
        self.0.extend_from_slice(b);
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn tensor(&mut self, t: &Tensor<f32>) {
        self.u32(t.ndim());
        for &d in t.shape() {
            self.u32(d);
        }
        self.f32s(t.data());
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.b.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {}: needed {n} more bytes, {} left",
                self.pos,
                self.b.len() - self.pos
            )));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().expect("16 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("invalid UTF-8 string at byte {at}")))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
    fn tensor(&mut self) -> Result<Tensor<f32>> {
        let at = self.pos;
        let nd = self.u32()?;
        let shape = (0..nd).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| Error::Checkpoint(format!("tensor extents overflow at byte {at}")))?;
        let data = self.f32s(n)?;
        Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("bad tensor at byte {at}: {e}")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION as usize);
        w.bytes(self.model.config.to_kv().to_text().as_bytes());
        w.u64(self.epoch);
        w.u64(self.step);
        match &self.rng {
            Some(r) => {
                w.u8(1);
                w.0.extend_from_slice(&r.seed);
                w.u64(r.stream);
                w.0.extend_from_slice(&r.word_pos.to_le_bytes());
            }
            None => w.u8(0),
        }
        let bank = &self.model.bank;
        w.u32(bank.len());
        for t in bank.texts() {
            w.bytes(t.as_bytes());
        }
        w.u32(bank.dim());
        w.f32s(bank.embeddings().data());
        let params = &self.model.params;
        w.u32(params.len());
        for (_, p) in params.iter() {
            w.bytes(p.name.as_bytes());
            w.u8(p.frozen as u8);
            w.tensor(&p.value);
        }
        match &self.optimizer {
            Some(a) => {
                w.u8(1);
                w.f64(a.lr);
                w.f64(a.beta1);
                w.f64(a.beta2);
                w.f64(a.eps);
                w.u64(a.t);
                let entries: Vec<_> = params
                    .ids()
                    .filter_map(|id| {
                        let i = id.index();
                        match (a.m.get(i).and_then(Option::as_ref), a.v.get(i).and_then(Option::as_ref)) {
                            (Some(m), Some(v)) => Some((&params.get(id).name, m, v)),
                            _ => None,
                        }
                    })
                    .collect();
                w.u32(entries.len());
                for (name, m, v) in entries {
                    w.bytes(name.as_bytes());
                    w.tensor(m);
                    w.tensor(v);
                }
            }
            None => w.u8(0),
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { b: bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic bytes)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let config = ModelConfig::from_kv(&KvConfig::parse(&r.string()?)?)?;
        let epoch = r.u64()?;
        let step = r.u64()?;
        let rng = match r.u8()? {
            0 => None,
            1 => {
                let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
                Some(RngState { seed, stream: r.u64()?, word_pos: r.u128()? })
            }
            f => return Err(Error::Checkpoint(format!("bad RNG flag {f} at byte {}", r.pos - 1))),
        };
        let n = r.u32()?;
        let classes = (0..n)
            .map(|_| r.string().and_then(|s| s.parse::<Degradation>()))
            .collect::<Result<Vec<_>>>()?;
        let dim = r.u32()?;
        let emb = r.f32s(n * dim)?;
        let bank = MemoryBank::new(classes, Tensor::new(vec![n.max(1), dim], emb)?)?;
        let count = r.u32()?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = r.string()?;
            let frozen = r.u8()? != 0;
            let id = params.insert(name, r.tensor()?)?;
            params.set_frozen_id(id, frozen);
        }
        let model = Model::from_parts(config, params, bank)?;
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let mut a = Adam::new(r.f64()?, r.f64()?, r.f64()?, r.f64()?)?;
                a.t = r.u64()?;
                a.m = vec![None; model.params.len()];
                a.v = vec![None; model.params.len()];
                for _ in 0..r.u32()? {
                    let name = r.string()?;
                    let id = model
                        .params
                        .id(&name)
                        .ok_or_else(|| Error::Checkpoint(format!("optimizer state for unknown parameter {name}")))?;
                    a.m[id.index()] = Some(r.tensor()?);
                    a.v[id.index()] = Some(r.tensor()?);
                }
                Some(a)
            }
            f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { model, optimizer, rng, epoch, step })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let b = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&b)
    }
}
