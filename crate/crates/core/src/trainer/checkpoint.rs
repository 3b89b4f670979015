//! Versioned binary checkpoint container.
//!
//! Layout (little-endian): `"PFCK"`, `u16` version, then five sections, each a
//! `u64` byte length followed by its payload:
//! model config (JSON), parameters, optimizer state (empty when absent),
//! run metadata (JSON), best parameters so far (empty when absent).
//!
//! A tensor block is `u32` tensor count, then per tensor a `u32` rank, `rank`
//! `u64` dimensions and the `f32` values. Optimizer payload is a `u64` step
//! count followed by two tensor blocks (first and second moments).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PFCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Pretrain,
    Finetune,
}

/// One line of training progress.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub phase: Phase,
    /// Index into the learning-rate grid (0 for pretraining).
    pub run: usize,
    pub learning_rate: f64,
    /// 1-based epoch within the run.
    pub epoch: usize,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretext_acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_bal_acc: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub run: usize,
    pub epoch: usize,
    pub learning_rate: f64,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub phase: Phase,
    pub seed: u64,
    pub train: Option<TrainConfig>,
    /// Learning-rate run the parameters belong to.
    pub run: usize,
    /// Completed epochs within `run`.
    pub epoch: usize,
    pub complete: bool,
    pub history: Vec<EpochLog>,
    pub best: Option<BestRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: ModelParams<f32>,
    pub optimizer: Option<AdamState<f32>>,
    pub meta: CheckpointMeta,
    /// Best parameters found so far, kept while fine-tuning is in progress.
    pub best_params: Option<ModelParams<f32>>,
}

impl Checkpoint {
    /// Untrained parameters wrapped as a complete checkpoint.
    pub fn initial(model: ModelConfig, params: ModelParams<f32>, seed: u64) -> Self {
        Checkpoint {
            model,
            params,
            optimizer: None,
            meta: CheckpointMeta {
                phase: Phase::Init,
                seed,
                train: None,
                run: 0,
                epoch: 0,
                complete: true,
                history: Vec::new(),
                best: None,
            },
            best_params: None,
        }
    }
}

fn put_tensors(out: &mut Vec<u8>, tensors: &[(Vec<usize>, &[f32])]) {
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (shape, data) in tensors {
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in *data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn param_tensors(p: &ModelParams<f32>) -> Vec<(Vec<usize>, &[f32])> {
    p.tensors().into_iter().map(|(_, s, d)| (s, d)).collect()
}

fn put_section(out: &mut Vec<u8>, payload: &[u8]) {
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    serde_json::to_vec(v).map_err(|e| Error::Format(e.to_string()))
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_section(&mut out, &to_json(&ckpt.model)?);

    let mut params = Vec::new();
    put_tensors(&mut params, &param_tensors(&ckpt.params));
    put_section(&mut out, &params);

    let mut opt = Vec::new();
    if let Some(state) = &ckpt.optimizer {
        let shapes: Vec<Vec<usize>> = ckpt
            .params
            .tensors()
            .into_iter()
            .map(|(_, s, _)| s)
            .collect();
        opt.extend_from_slice(&state.step.to_le_bytes());
        for moments in [&state.m, &state.v] {
            let t: Vec<(Vec<usize>, &[f32])> = shapes
                .iter()
                .cloned()
                .zip(moments.iter().map(|m| m.as_slice()))
                .collect();
            put_tensors(&mut opt, &t);
        }
    }
    put_section(&mut out, &opt);
    put_section(&mut out, &to_json(&ckpt.meta)?);

    let mut best = Vec::new();
    if let Some(b) = &ckpt.best_params {
        put_tensors(&mut best, &param_tensors(b));
    }
    put_section(&mut out, &best);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::Corrupt {
            offset: (self.base + self.pos) as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.corrupt(format!("truncated: needed {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn section(&mut self) -> Result<Reader<'a>> {
        let len = self.u64()?;
        let base = self.base + self.pos;
        let len = usize::try_from(len).map_err(|_| self.corrupt("section length overflow"))?;
        let bytes = self.take(len)?;
        Ok(Reader {
            bytes,
            pos: 0,
            base,
        })
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }

    fn finish(&self) -> Result<()> {
        if self.done() {
            Ok(())
        } else {
            Err(self.corrupt("unexpected trailing bytes"))
        }
    }

    fn tensors_into(&mut self, params: &mut ModelParams<f32>) -> Result<()> {
        let expected: Vec<Vec<usize>> = params.tensors().into_iter().map(|(_, s, _)| s).collect();
        let mut dst = params.tensors_mut();
        self.tensor_block(&expected, &mut dst)
    }

    fn tensor_block(&mut self, expected: &[Vec<usize>], dst: &mut [&mut [f32]]) -> Result<()> {
        let count = self.u32()? as usize;
        if count != expected.len() {
            return Err(self.corrupt(format!(
                "{count} tensors, configuration implies {}",
                expected.len()
            )));
        }
        for (shape, out) in expected.iter().zip(dst.iter_mut()) {
            let rank = self.u32()? as usize;
            let mut dims = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                dims.push(self.u64()? as usize);
            }
            if &dims != shape {
                return Err(self.corrupt(format!("tensor shape {dims:?}, expected {shape:?}")));
            }
            let raw = self.take(out.len() * 4)?;
            for (v, b) in out.iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(b.try_into().unwrap());
            }
        }
        Ok(())
    }

    fn json<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        serde_json::from_slice(self.bytes).map_err(|e| Error::Corrupt {
            offset: self.base as u64,
            reason: format!("invalid JSON section: {e}"),
        })
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let mut r = Reader {
        bytes,
        pos: 4,
        base: 0,
    };
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version as u32,
            expected: CHECKPOINT_VERSION as u32,
        });
    }
    let model: ModelConfig = r.section()?.json()?;
    model.validate().map_err(|e| Error::Corrupt {
        offset: 6,
        reason: format!("stored model configuration is invalid: {e}"),
    })?;

    let mut params = ModelParams::zeros(&model);
    let mut sec = r.section()?;
    sec.tensors_into(&mut params)?;
    sec.finish()?;

    let mut sec = r.section()?;
    let optimizer = if sec.done() {
        None
    } else {
        let step = sec.u64()?;
        let mut state = AdamState::new(&params);
        state.step = step;
        let shapes: Vec<Vec<usize>> = params.tensors().into_iter().map(|(_, s, _)| s).collect();
        for moments in [&mut state.m, &mut state.v] {
            let mut dst: Vec<&mut [f32]> = moments.iter_mut().map(|m| m.as_mut_slice()).collect();
            sec.tensor_block(&shapes, &mut dst)?;
        }
        sec.finish()?;
        Some(state)
    };

    let meta: CheckpointMeta = r.section()?.json()?;

    let mut sec = r.section()?;
    let best_params = if sec.done() {
        None
    } else {
        let mut best = ModelParams::zeros(&model);
        sec.tensors_into(&mut best)?;
        sec.finish()?;
        Some(best)
    };
    r.finish()?;
    Ok(Checkpoint {
        model,
        params,
        optimizer,
        meta,
        best_params,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ckpt)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
