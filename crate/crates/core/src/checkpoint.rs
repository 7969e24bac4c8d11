//! Binary checkpoints: little-endian named tensors behind a small header.
//!
//! Layout: `b"HMPD"`, u32 version, u64 step, u32 record count, then per record
//! u16 name length, UTF-8 name, u8 dtype, u8 rank, u64 dims, raw values.

use std::path::Path;

use hmpdm_tensor::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{Codec, LatentStats};
use crate::config::{CodecMode, RunConfig};
use crate::engine::{TrainSettings, Trainer};
use crate::error::{io_err, Error, Result};
use crate::model::{Hmpdm, ModelConfig};

pub const MAGIC: [u8; 4] = *b"HMPD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Values {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    U64(Vec<u64>),
}

impl Values {
    fn dtype(&self) -> u8 {
        match self {
            Values::F32(_) => 0,
            Values::F64(_) => 1,
            Values::U8(_) => 2,
            Values::U64(_) => 3,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Values::F32(v) => v.len(),
            Values::F64(v) => v.len(),
            Values::U8(v) => v.len(),
            Values::U64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Values,
}

impl Record {
    pub fn new(name: impl Into<String>, shape: &[usize], values: Values) -> Result<Self> {
        let name = name.into();
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::Checkpoint(format!(
                "record {name}: shape {shape:?} does not hold {} values",
                values.len()
            )));
        }
        if name.len() > u16::MAX as usize || shape.len() > u8::MAX as usize {
            return Err(Error::Checkpoint(format!("record {name}: name or rank too long")));
        }
        Ok(Record {
            name,
            shape: shape.to_vec(),
            values,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub records: Vec<Record>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {} (need {n} more)", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn values<T, const N: usize>(&mut self, n: usize, f: fn([u8; N]) -> T) -> Result<Vec<T>> {
        let bytes = self.take(n.checked_mul(N).ok_or_else(|| Error::Checkpoint("record too large".into()))?)?;
        Ok(bytes
            .chunks_exact(N)
            .map(|c| f(c.try_into().expect("chunk size")))
            .collect())
    }
}

impl Checkpoint {
    pub fn new(step: u64) -> Self {
        Checkpoint {
            step,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: Record) -> Result<()> {
        if self.get(&record.name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate record {}", record.name)));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    fn require(&self, name: &str) -> Result<&Record> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing record {name}")))
    }

    pub fn f32s(&self, name: &str) -> Result<&[f32]> {
        match &self.require(name)?.values {
            Values::F32(v) => Ok(v),
            _ => Err(Error::Checkpoint(format!("record {name} is not f32"))),
        }
    }

    pub fn u8s(&self, name: &str) -> Result<&[u8]> {
        match &self.require(name)?.values {
            Values::U8(v) => Ok(v),
            _ => Err(Error::Checkpoint(format!("record {name} is not u8"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match &self.require(name)?.values {
            Values::U64(v) => Ok(v),
            _ => Err(Error::Checkpoint(format!("record {name} is not u64"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u16).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.values.dtype());
            out.push(r.shape.len() as u8);
            for &d in &r.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &r.values {
                Values::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Values::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Values::U8(v) => out.extend_from_slice(v),
                Values::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        let magic: [u8; 4] = r.array()?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (this build reads {VERSION})"
            )));
        }
        let step = r.u64()?;
        let count = r.u32()?;
        let mut ckpt = Checkpoint::new(step);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?
                .to_string();
            let dtype = r.u8()?;
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(
                    usize::try_from(r.u64()?).map_err(|_| Error::Checkpoint(format!("record {name}: dim overflow")))?,
                );
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("record {name}: size overflow")))?;
            let values = match dtype {
                0 => Values::F32(r.values(n, f32::from_le_bytes)?),
                1 => Values::F64(r.values(n, f64::from_le_bytes)?),
                2 => Values::U8(r.take(n)?.to_vec()),
                3 => Values::U64(r.values(n, u64::from_le_bytes)?),
                d => return Err(Error::Checkpoint(format!("record {name}: unknown dtype {d}"))),
            };
            ckpt.push(Record::new(name, &shape, values)?)?;
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(ckpt)
    }

    /// Writes through a temporary file so an interrupted save keeps the old file.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, path).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&buf)
    }
}

/// File name for the checkpoint written after `step` optimizer steps.
pub fn checkpoint_name(step: u64) -> String {
    format!("ckpt_{step:08}.hmpd")
}

fn push_store(ckpt: &mut Checkpoint, prefix: &str, store: &ParamStore<f32>) -> Result<()> {
    for (_, name, t) in store.iter() {
        ckpt.push(Record::new(format!("{prefix}{name}"), t.shape(), Values::F32(t.to_vec()))?)?;
    }
    Ok(())
}

fn load_store(ckpt: &Checkpoint, prefix: &str, store: &mut ParamStore<f32>) -> Result<()> {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = format!("{prefix}{}", store.name(id));
        let rec = ckpt.require(&name)?;
        if rec.shape != store.get(id).shape() {
            return Err(Error::Checkpoint(format!(
                "record {name}: shape {:?} does not match parameter {:?}",
                rec.shape,
                store.get(id).shape()
            )));
        }
        store.set(id, ckpt.f32s(&name)?.to_vec())?;
    }
    Ok(())
}

/// Everything needed to continue training bit-for-bit.
#[derive(Debug, Clone)]
pub struct TrainingState {
    pub config: RunConfig,
    pub trainer: Trainer<f32>,
    pub codec: Codec,
    pub stats: LatentStats,
}

impl TrainingState {
    pub fn step(&self) -> u64 {
        self.trainer.step()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new(self.trainer.step());
        let text = self.config.canonical_text();
        ckpt.push(Record::new("meta.config", &[text.len()], Values::U8(text.into_bytes()))?)?;
        ckpt.push(Record::new("meta.config_hash", &[1], Values::U64(vec![self.config.hash()]))?)?;
        let c = self.stats.mean.len();
        ckpt.push(Record::new("meta.latent_mean", &[c], Values::F32(self.stats.mean.clone()))?)?;
        ckpt.push(Record::new("meta.latent_std", &[c], Values::F32(self.stats.std.clone()))?)?;
        let store = &self.trainer.model.params;
        push_store(&mut ckpt, "param.", store)?;
        let (m, v) = self.trainer.opt.moments();
        for (i, (_, name, t)) in store.iter().enumerate() {
            ckpt.push(Record::new(format!("adam.m.{name}"), t.shape(), Values::F32(m[i].clone()))?)?;
            ckpt.push(Record::new(format!("adam.v.{name}"), t.shape(), Values::F32(v[i].clone()))?)?;
        }
        if let Some(codec) = self.codec.params() {
            push_store(&mut ckpt, "", codec)?;
        }
        Ok(ckpt)
    }

    /// Rebuilds the state. With `expected`, the stored config hash must match unless `force`.
    pub fn from_checkpoint(ckpt: &Checkpoint, expected: Option<&RunConfig>, force: bool) -> Result<Self> {
        let text = std::str::from_utf8(ckpt.u8s("meta.config")?)
            .map_err(|_| Error::Checkpoint("stored config is not UTF-8".into()))?;
        let stored = ckpt.u64s("meta.config_hash")?.first().copied().unwrap_or_default();
        let mut config = RunConfig::parse(text)?;
        if config.hash() != stored {
            return Err(Error::Checkpoint("stored config does not match its hash".into()));
        }
        if let Some(exp) = expected {
            if exp.hash() != stored {
                if !force {
                    return Err(Error::ConfigHashMismatch {
                        expected: exp.hash(),
                        found: stored,
                    });
                }
                log::warn!("config hash mismatch ignored; continuing with the supplied config");
                config = exp.clone();
            }
        }
        let stats = LatentStats {
            mean: ckpt.f32s("meta.latent_mean")?.to_vec(),
            std: ckpt.f32s("meta.latent_std")?.to_vec(),
        };
        let mut model = Hmpdm::<f32>::new(ModelConfig::from_run(&config), config.seed)?;
        load_store(ckpt, "param.", &mut model.params)?;
        let mut trainer = Trainer::new(model, TrainSettings::from_run(&config))?;
        let store = &trainer.model.params;
        let mut m = Vec::with_capacity(store.len());
        let mut v = Vec::with_capacity(store.len());
        for (_, name, _) in store.iter() {
            m.push(ckpt.f32s(&format!("adam.m.{name}"))?.to_vec());
            v.push(ckpt.f32s(&format!("adam.v.{name}"))?.to_vec());
        }
        trainer.opt.restore(ckpt.step, m, v)?;
        let mut codec = match config.codec {
            CodecMode::Identity => Codec::identity(config.codec_factor)?,
            CodecMode::Learned => Codec::learned(config.latent_channels, &mut ChaCha8Rng::seed_from_u64(0))?,
        };
        if let Some(store) = codec.params_mut() {
            load_store(ckpt, "", store)?;
        }
        Ok(TrainingState {
            config,
            trainer,
            codec,
            stats,
        })
    }
}
