//! Binary checkpoint format, all integers and reals little-endian:
//!
//! ```text
//! magic        8 bytes  "CPNETCKP"
//! version      u32      1
//! config       u32 length + UTF-8 network config text
//! epoch        u64
//! adam         u64 step, f64 lr, f64 beta1, f64 beta2, f64 eps,
//!              f64 decay_rate, u64 decay_steps
//! tensors      u32 count, then per tensor:
//!                u32 name length + UTF-8 name
//!                u8 flags (bit 0: trainable)
//!                u32 rows, u32 cols
//!                rows * cols f32 values
//! ```
//!
//! Model tensors come first in network order, then the Adam first and
//! second moments of every trainable tensor, named `adam.m/<name>` and
//! `adam.v/<name>`.

use std::fs;
use std::path::Path;

use super::config::NetworkConfig;
use super::model::Model;
use super::CpnetError;
use crate::nn::{Adam, AdamConfig, ParamStore};

pub const MAGIC: &[u8; 8] = b"CPNETCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub params: ParamStore,
    pub optimizer: Adam,
    pub epoch: u64,
}

impl Checkpoint {
    pub fn new(model: &Model, optimizer: &Adam, epoch: u64) -> Self {
        Self {
            config: model.config().clone(),
            params: model.params().clone(),
            optimizer: optimizer.clone(),
            epoch,
        }
    }

    /// Rebuild the model this checkpoint was taken from.
    pub fn model(&self) -> Result<Model, CpnetError> {
        let mut model = Model::build_cascade(self.config.clone())?;
        model.load_params(self.params.clone())?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.config.to_text());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        let a = &self.optimizer;
        out.extend_from_slice(&a.step.to_le_bytes());
        for v in [
            a.config.learning_rate,
            a.config.beta1,
            a.config.beta2,
            a.config.eps,
            a.config.decay_rate,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&a.config.decay_steps.to_le_bytes());

        let trainable: Vec<_> = self.params.iter().filter(|(_, p)| p.trainable).collect();
        let count = self.params.len() + 2 * trainable.len();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for (_, p) in self.params.iter() {
            put_tensor(&mut out, &p.name, p.trainable, p.rows, p.cols, &p.data);
        }
        for (prefix, moments) in [("adam.m/", &a.m), ("adam.v/", &a.v)] {
            for (id, p) in &trainable {
                let name = format!("{prefix}{}", p.name);
                put_tensor(&mut out, &name, false, p.rows, p.cols, &moments[id.index()]);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CpnetError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CpnetError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CpnetError::Format(format!("unsupported version {version}")));
        }
        let config = NetworkConfig::from_text(&r.string()?)?;
        let epoch = r.u64()?;
        let step = r.u64()?;
        let adam_config = AdamConfig {
            learning_rate: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            eps: r.f64()?,
            decay_rate: r.f64()?,
            decay_steps: r.u64()?,
        };
        let count = r.u32()? as usize;

        let template = Model::build_cascade(config.clone())?;
        let expected = template.params();
        let trainable = expected.iter().filter(|(_, p)| p.trainable).count();
        if count != expected.len() + 2 * trainable {
            return Err(CpnetError::Format(format!(
                "expected {} tensors, found {count}",
                expected.len() + 2 * trainable
            )));
        }
        let mut params = ParamStore::new();
        for _ in 0..expected.len() {
            let (name, flags, rows, cols, data) = r.tensor()?;
            params.add(name, rows, cols, data, flags & 1 == 1);
        }
        let mut model = template;
        model.load_params(params)?;

        let mut optimizer = Adam::new(adam_config, model.params());
        optimizer.step = step;
        for prefix in ["adam.m/", "adam.v/"] {
            for (id, p) in model.params().iter().filter(|(_, p)| p.trainable) {
                let (name, _, rows, cols, data) = r.tensor()?;
                if name != format!("{prefix}{}", p.name) || (rows, cols) != (p.rows, p.cols) {
                    return Err(CpnetError::Format(format!("unexpected optimizer tensor {name}")));
                }
                let slot = if prefix == "adam.m/" {
                    &mut optimizer.m[id.index()]
                } else {
                    &mut optimizer.v[id.index()]
                };
                *slot = data;
            }
        }
        if r.pos != bytes.len() {
            return Err(CpnetError::Format("trailing bytes".into()));
        }
        Ok(Self {
            config,
            params: model.params().clone(),
            optimizer,
            epoch,
        })
    }
}

pub fn checkpoint_save(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CpnetError> {
    fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<Checkpoint, CpnetError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, trainable: bool, rows: usize, cols: usize, data: &[f32]) {
    put_str(out, name);
    out.push(u8::from(trainable));
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CpnetError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CpnetError::TruncatedFile { offset: self.pos })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CpnetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CpnetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CpnetError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, CpnetError> {
        let len = self.u32()? as usize;
        let at = self.pos;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| CpnetError::Format(format!("invalid UTF-8 at byte {at}")))
    }

    fn tensor(&mut self) -> Result<(String, u8, usize, usize, Vec<f32>), CpnetError> {
        let name = self.string()?;
        let flags = self.take(1)?[0];
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| CpnetError::Format(format!("tensor {name} too large")))?;
        let data = self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok((name, flags, rows, cols, data))
    }
}
