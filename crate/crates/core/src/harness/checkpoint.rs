//! Binary checkpoints: magic `DDTC`, little-endian.
//!
//! Layout: magic, version `u32`, config length `u32` and UTF-8 text, epoch
//! `u32`, RNG seed (32 bytes), stream `u64`, word position `u128`, parameter
//! count `u32`, then per parameter: name length `u32`, name, rank `u32`,
//! dims `u32 × rank`, values `f64 × numel`.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use ddt_tensor::Tensor;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::model::Model;
use crate::error::CoreError;
use crate::Result;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DDTC";
const VERSION: u32 = 1;

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
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: u32,
    pub rng: RngState,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, epoch: u32, rng: RngState) -> Self {
        let params = model.store.iter().map(|(_, name, t)| (name.to_string(), t.clone())).collect();
        Checkpoint { config: model.config.clone(), epoch, rng, params }
    }

    /// Rebuild the model and copy every parameter in by name.
    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::new(&self.config)?;
        let expected: BTreeSet<&str> = model.store.iter().map(|(_, n, _)| n).collect();
        let present: BTreeSet<&str> = self.params.iter().map(|(n, _)| n.as_str()).collect();
        let missing: Vec<&str> = expected.difference(&present).copied().collect();
        let extra: Vec<&str> = present.difference(&expected).copied().collect();
        if !missing.is_empty() || !extra.is_empty() || present.len() != self.params.len() {
            return Err(CoreError::Compat(format!(
                "checkpoint parameters do not match the model: missing [{}], unexpected [{}]{}",
                missing.join(", "),
                extra.join(", "),
                if present.len() != self.params.len() { ", duplicated names" } else { "" }
            )));
        }
        for (name, value) in &self.params {
            let id = model.store.id(name).expect("checked above");
            model
                .store
                .set(id, value.clone())
                .map_err(|e| CoreError::Compat(format!("parameter {name}: {e}")))?;
        }
        Ok(model)
    }

    /// Exact encoded size in bytes.
    pub fn byte_size(&self) -> usize {
        let config = self.config.to_string().len();
        let fixed = 4 + 4 + 4 + config + 4 + 32 + 8 + 16 + 4;
        fixed
            + self
                .params
                .iter()
                .map(|(n, t)| 4 + n.len() + 4 + 4 * t.rank() + 8 * t.numel())
                .sum::<usize>()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        let mut buf = Vec::with_capacity(self.byte_size());
        let config = self.config.to_string();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&u32_len(config.len())?.to_le_bytes());
        buf.extend_from_slice(config.as_bytes());
        buf.extend_from_slice(&self.epoch.to_le_bytes());
        buf.extend_from_slice(&self.rng.seed);
        buf.extend_from_slice(&self.rng.stream.to_le_bytes());
        buf.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        buf.extend_from_slice(&u32_len(self.params.len())?.to_le_bytes());
        for (name, t) in &self.params {
            buf.extend_from_slice(&u32_len(name.len())?.to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&u32_len(t.rank())?.to_le_bytes());
            for &d in t.shape() {
                buf.extend_from_slice(&u32_len(d)?.to_le_bytes());
            }
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read<R: Read>(input: &mut R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let mut r = Cursor { bytes: &bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(CoreError::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CoreError::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32("config length")? as usize;
        let text = std::str::from_utf8(r.take(len, "config")?)
            .map_err(|e| CoreError::Corrupt { offset: r.pos as u64, detail: format!("config text: {e}") })?;
        let config: TrainConfig = text.parse()?;
        let epoch = r.u32("epoch")?;
        let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().expect("32 bytes");
        let stream = u64::from_le_bytes(r.take(8, "rng stream")?.try_into().expect("8 bytes"));
        let word_pos = u128::from_le_bytes(r.take(16, "rng position")?.try_into().expect("16 bytes"));
        let count = r.u32("parameter count")? as usize;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = r.u32("name length")? as usize;
            let name = String::from_utf8(r.take(n, "name")?.to_vec())
                .map_err(|e| CoreError::Corrupt { offset: r.pos as u64, detail: format!("parameter name: {e}") })?;
            let rank = r.u32("rank")? as usize;
            let shape = (0..rank).map(|_| r.u32("dimension").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(8).ok_or_else(|| r.corrupt("parameter size overflows"))?, "values")?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            params.push((name, Tensor::new(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(r.corrupt(&format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { config, epoch, rng: RngState { seed, stream, word_pos }, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::read(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| CoreError::Contract(format!("{n} does not fit a u32 field")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn corrupt(&self, detail: &str) -> CoreError {
        CoreError::Corrupt { offset: self.pos as u64, detail: detail.to_string() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.corrupt(&format!("truncated while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}
