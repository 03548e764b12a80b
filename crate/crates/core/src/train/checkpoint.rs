//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `HWFK`, `u32` version, `u32` length plus
//! that many bytes of sorted `key=value` lines, then records to end of file.
//! A record is `u32` name length, name bytes, `u8` dtype tag (0 = f32,
//! 1 = f64), `u32` rank, `u64` extents, raw values. Parameters come first in
//! registry order, followed by `optim.m.<name>` and `optim.v.<name>`.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use super::config::TrainConfig;
use super::optim::OptimState;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"HWFK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("corrupt checkpoint at byte {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },
    #[error("unsupported checkpoint version {found} (this build reads {supported})")]
    Version { found: u32, supported: u32 },
    #[error("checkpoint does not fit this architecture: {0}")]
    ArchitectureMismatch(String),
}

fn corrupt(offset: usize, reason: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt {
        offset,
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    raw: Vec<u8>,
}

impl Record {
    fn from_tensor<T: Scalar>(name: String, t: &Tensor<T>) -> Self {
        let mut raw = Vec::with_capacity(t.len() * T::DTYPE.size());
        for &v in t.data() {
            v.write_le(&mut raw);
        }
        Record {
            name,
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            raw,
        }
    }

    /// Values converted to `T` (exact when the stored type is `T` or narrower).
    pub fn tensor<T: Scalar>(&self) -> Tensor<T> {
        let data: Vec<T> = match self.dtype {
            DType::F32 => self
                .raw
                .chunks_exact(4)
                .map(|b| T::of(f64::from(f32::from_le_bytes(b.try_into().unwrap()))))
                .collect(),
            DType::F64 => self
                .raw
                .chunks_exact(8)
                .map(|b| T::of(f64::from_le_bytes(b.try_into().unwrap())))
                .collect(),
        };
        Tensor::new(self.shape.clone(), data).expect("record length checked on decode")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: BTreeMap<String, String>,
    pub records: Vec<Record>,
}

const OPTIM_STEP: &str = "optim.step";

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &Model<T>, optim: Option<&OptimState<T>>, train: Option<&TrainConfig>) -> Self {
        let mut config: BTreeMap<String, String> = model
            .config
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (format!("model.{k}"), v))
            .collect();
        if let Some(t) = train {
            config.extend(t.to_pairs().into_iter().map(|(k, v)| (format!("train.{k}"), v)));
        }
        let mut records: Vec<Record> = model
            .params
            .iter()
            .map(|(name, t)| Record::from_tensor(name.to_string(), t))
            .collect();
        if let Some(st) = optim {
            config.insert(OPTIM_STEP.into(), st.step.to_string());
            for (prefix, bufs) in [("optim.m", &st.m), ("optim.v", &st.v)] {
                for ((name, _), t) in model.params.iter().zip(bufs) {
                    records.push(Record::from_tensor(format!("{prefix}.{name}"), t));
                }
            }
        }
        Checkpoint { config, records }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend(VERSION.to_le_bytes());
        let text: String = self.config.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        out.extend((text.len() as u32).to_le_bytes());
        out.extend(text.as_bytes());
        for r in &self.records {
            out.extend((r.name.len() as u32).to_le_bytes());
            out.extend(r.name.as_bytes());
            out.push(r.dtype.tag());
            out.extend((r.shape.len() as u32).to_le_bytes());
            for &e in &r.shape {
                out.extend((e as u64).to_le_bytes());
            }
            out.extend(&r.raw);
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(corrupt(0, "bad magic"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::Version {
                found: version,
                supported: VERSION,
            });
        }
        let len = r.u32("config length")? as usize;
        let at = r.pos;
        let text = std::str::from_utf8(r.take(len, "config block")?).map_err(|_| corrupt(at, "config is not UTF-8"))?;
        let mut config = BTreeMap::new();
        for line in text.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| corrupt(at, format!("config line {line:?}")))?;
            config.insert(k.to_string(), v.to_string());
        }
        let mut records = Vec::new();
        while r.pos < buf.len() {
            let start = r.pos;
            let n = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(n, "name")?)
                .map_err(|_| corrupt(start, "record name is not UTF-8"))?
                .to_string();
            let tag_at = r.pos;
            let dtype = DType::from_tag(r.take(1, "dtype")?[0]).ok_or_else(|| corrupt(tag_at, "unknown dtype tag"))?;
            let rank = r.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                let e = r.u64("extent")?;
                shape.push(usize::try_from(e).map_err(|_| corrupt(r.pos, "extent overflows"))?);
            }
            let count = shape
                .iter()
                .try_fold(1usize, |a, &e| a.checked_mul(e))
                .and_then(|c| c.checked_mul(dtype.size()))
                .ok_or_else(|| corrupt(start, "record size overflows"))?;
            if shape.contains(&0) {
                return Err(corrupt(start, format!("record {name} has an empty extent")));
            }
            let raw = r.take(count, "record values")?.to_vec();
            records.push(Record { name, dtype, shape, raw });
        }
        Ok(Checkpoint { config, records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, self.encode()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Checkpoint::decode(&bytes)?)
    }

    fn section(&self, prefix: &str) -> impl Iterator<Item = (&str, &str)> {
        let p = format!("{prefix}.");
        self.config
            .iter()
            .filter_map(move |(k, v)| k.strip_prefix(&p).map(|k| (k, v.as_str())))
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::paper();
        for (k, v) in self.section("model") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<Option<TrainConfig>> {
        let mut any = false;
        let mut cfg = TrainConfig::default();
        for (k, v) in self.section("train") {
            cfg.set(k, v)?;
            any = true;
        }
        Ok(any.then_some(cfg))
    }

    /// Builds the model described by the embedded configuration.
    pub fn to_model<T: Scalar>(&self) -> Result<Model<T>> {
        let mut model = Model::zeros(self.model_config()?)?;
        self.restore(&mut model)?;
        Ok(model)
    }

    /// Copies every parameter into `model`, which must have the same architecture.
    pub fn restore<T: Scalar>(&self, model: &mut Model<T>) -> Result<()> {
        let stored = self.model_config()?;
        let mut a = stored.to_pairs();
        let mut b = model.config.to_pairs();
        a.remove("precision");
        b.remove("precision");
        if a != b {
            let diff: Vec<String> = a
                .iter()
                .filter(|(k, v)| b.get(*k) != Some(v))
                .map(|(k, v)| format!("{k}: checkpoint {v}, model {}", b[k]))
                .collect();
            return Err(CheckpointError::ArchitectureMismatch(diff.join("; ")).into());
        }
        let n = model.params.len();
        if self.records.len() < n {
            return Err(CheckpointError::ArchitectureMismatch(format!(
                "{} records for {n} parameters",
                self.records.len()
            ))
            .into());
        }
        for (id, rec) in model.params.ids().collect::<Vec<_>>().into_iter().zip(&self.records) {
            let want = model.params.get(id).shape();
            if rec.name != model.params.name(id) || rec.shape != want {
                return Err(CheckpointError::ArchitectureMismatch(format!(
                    "record {} {:?} where {} {:?} was expected",
                    rec.name,
                    rec.shape,
                    model.params.name(id),
                    want
                ))
                .into());
            }
            let t = rec.tensor::<T>();
            if !t.all_finite() {
                return Err(Error::Numeric(format!("checkpoint parameter {} is not finite", rec.name)));
            }
            *model.params.get_mut(id) = t;
        }
        Ok(())
    }

    /// Optimizer moments and step count, if the checkpoint carries them.
    pub fn optim_state<T: Scalar>(&self, model: &Model<T>) -> Result<Option<OptimState<T>>> {
        let Some(step) = self.config.get(OPTIM_STEP) else {
            return Ok(None);
        };
        let step = step
            .parse()
            .map_err(|_| corrupt(0, format!("optim.step {step:?} is not an integer")))?;
        let by_name: BTreeMap<&str, &Record> = self.records.iter().map(|r| (r.name.as_str(), r)).collect();
        let fetch = |prefix: &str| -> Result<Vec<Tensor<T>>> {
            model
                .params
                .iter()
                .map(|(name, t)| {
                    let key = format!("{prefix}.{name}");
                    match by_name.get(key.as_str()) {
                        Some(r) if r.shape == t.shape() => Ok(r.tensor()),
                        _ => Err(CheckpointError::ArchitectureMismatch(format!("missing or misshapen {key}")).into()),
                    }
                })
                .collect()
        };
        let m = fetch("optim.m")?;
        let v = fetch("optim.v")?;
        Ok(Some(OptimState { m, v, step }))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(corrupt(self.pos, format!("truncated {what}")));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}
