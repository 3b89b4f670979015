//! ESR container: `"ESR1" | version u8 | n_subjects u32 |` then per subject
//! `id_len u16 | id | sample_rate f32 | n_epochs u32 |` and per epoch
//! `label u8 | n_samples u32 | samples f32 × n`. All integers and floats are
//! little-endian.

use std::fs;
use std::path::Path;

use super::{EpochRecord, SleepStage, SubjectSet};
use crate::error::{Error, Result};

pub const ESR_MAGIC: &[u8; 4] = b"ESR1";
pub const ESR_VERSION: u8 = 1;

pub fn encode_esr(subjects: &SubjectSet) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(9 + subjects.n_epochs() * (5 + 4 * 3000));
    out.extend_from_slice(ESR_MAGIC);
    out.push(ESR_VERSION);
    out.extend_from_slice(&(subjects.len() as u32).to_le_bytes());
    for (id, epochs) in subjects.iter() {
        let rate = match epochs.first() {
            Some(e) => e.sample_rate_hz,
            // Empty subjects keep a nominal rate so the header stays well formed.
            None => 100.0,
        };
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(epochs.len() as u32).to_le_bytes());
        for (pos, e) in epochs.iter().enumerate() {
            e.validate()?;
            // Indices are implicit on disk.
            if e.epoch_index as usize != pos {
                return Err(Error::validation(format!(
                    "subject {id:?}: epoch indices must run 0..n without gaps to be stored"
                )));
            }
            out.push(e.label.code());
            out.extend_from_slice(&(e.signal.len() as u32).to_le_bytes());
            for s in &e.signal {
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn write_esr(path: impl AsRef<Path>, subjects: &SubjectSet) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_esr(subjects)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_esr(path: impl AsRef<Path>) -> Result<SubjectSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_esr(&bytes)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Corrupt {
                offset: self.pos as u64,
                reason: format!(
                    "truncated while reading {what}: need {n} bytes, {} remain",
                    self.buf.len() - self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub(crate) fn decode_esr(bytes: &[u8]) -> Result<SubjectSet> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic = cur
        .take(4, "magic")
        .map_err(|_| Error::Format("file shorter than the ESR magic".into()))?;
    if magic != ESR_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected {ESR_MAGIC:?}"
        )));
    }
    let version = cur.u8("version")?;
    if version != ESR_VERSION {
        return Err(Error::Version {
            found: version as u32,
            expected: ESR_VERSION as u32,
        });
    }
    let n_subjects = cur.u32("subject count")?;
    let mut set = SubjectSet::new();
    for _ in 0..n_subjects {
        let id_start = cur.pos;
        let id_len = cur.u16("subject id length")? as usize;
        let id = std::str::from_utf8(cur.take(id_len, "subject id")?)
            .map_err(|_| Error::Corrupt {
                offset: id_start as u64 + 2,
                reason: "subject id is not UTF-8".into(),
            })?
            .to_string();
        let rate = cur.f32("sample rate")?;
        let n_epochs = cur.u32("epoch count")?;
        let mut epochs = Vec::with_capacity(n_epochs.min(1 << 16) as usize);
        for idx in 0..n_epochs {
            let label_at = cur.pos;
            let code = cur.u8("label")?;
            let label = SleepStage::from_code(code).ok_or_else(|| Error::Corrupt {
                offset: label_at as u64,
                reason: format!("label code {code} outside 0..4"),
            })?;
            let n = cur.u32("sample count")? as usize;
            let raw = cur.take(n.saturating_mul(4), "samples")?;
            let signal = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            epochs.push(EpochRecord {
                subject_id: id.clone(),
                epoch_index: idx,
                sample_rate_hz: rate,
                signal,
                label,
            });
        }
        set.insert(id, epochs)?;
    }
    if cur.pos != bytes.len() {
        return Err(Error::Corrupt {
            offset: cur.pos as u64,
            reason: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    Ok(set)
}
