//! Binary checkpoint files.
//!
//! Layout: `b"MRPH"`, version (`u32` LE), header length (`u64` LE), a JSON
//! header, the tensor payloads as little-endian `f32` in header order, and a
//! CRC-32 (`u32` LE) of the payload bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fit::{EpochRecord, TrainState};
use super::model::{ModelSpec, Sequential};
use super::optim::{OptimSpec, OptimState};
use crate::error::{Error, Result};
use crate::rng::{Rng, RngState};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"MRPH";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelSpec,
    optim: Option<OptimSpec>,
    epoch: usize,
    optim_step: u64,
    optim_slots: usize,
    rng: RngState,
    history: Vec<EpochRecord>,
    tensors: Vec<TensorEntry>,
}

/// In-memory checkpoint. Tensors are named `param/…`, `buffer/…` and
/// `optim{slot}/…`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelSpec,
    pub optim: Option<OptimSpec>,
    pub epoch: usize,
    pub optim_step: u64,
    pub optim_slots: usize,
    pub rng: RngState,
    pub history: Vec<EpochRecord>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    /// Snapshot of a model and its training state. Values are stored as `f32`.
    pub fn capture<T: Scalar>(model: &Sequential<T>, state: &TrainState<T>, optim: Option<&OptimSpec>) -> Self {
        let mut tensors = Vec::new();
        let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
        for (n, t) in model.params() {
            tensors.push((format!("param/{n}"), t.cast()));
        }
        for (n, t) in model.buffers() {
            tensors.push((format!("buffer/{n}"), t.cast()));
        }
        for (s, slot) in state.optim.slots.iter().enumerate() {
            for (n, t) in names.iter().zip(slot) {
                tensors.push((format!("optim{s}/{n}"), t.cast()));
            }
        }
        Checkpoint {
            model: model.spec().clone(),
            optim: optim.cloned(),
            epoch: state.epoch,
            optim_step: state.optim.step,
            optim_slots: state.optim.slots.len(),
            rng: state.rng.state(),
            history: state.history.clone(),
            tensors,
        }
    }

    /// Rebuilds the model and training state.
    pub fn restore<T: Scalar>(&self) -> Result<(Sequential<T>, TrainState<T>)> {
        let mut model = Sequential::<T>::new(&self.model)?;
        let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
        let mut slots = vec![vec![None; names.len()]; self.optim_slots];
        let mut seen = 0usize;
        for (name, t) in &self.tensors {
            if let Some(n) = name.strip_prefix("param/").or_else(|| name.strip_prefix("buffer/")) {
                model.set_tensor(n, t.cast())?;
                seen += 1;
            } else if let Some((slot, n)) = name.strip_prefix("optim").and_then(|r| r.split_once('/')) {
                let s: usize = slot.parse().map_err(|_| Error::Checkpoint(format!("bad tensor name `{name}`")))?;
                let p = names.iter().position(|x| x == n).ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{n}`")))?;
                let cell = slots.get_mut(s).ok_or_else(|| Error::Checkpoint(format!("optimizer slot {s} out of range")))?;
                cell[p] = Some(t.cast());
            } else {
                return Err(Error::Checkpoint(format!("bad tensor name `{name}`")));
            }
        }
        let expected = model.params().len() + model.buffers().len();
        if seen != expected {
            return Err(Error::Checkpoint(format!("{seen} model tensors stored, model has {expected}")));
        }
        let slots = slots
            .into_iter()
            .map(|s| s.into_iter().collect::<Option<Vec<_>>>())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Checkpoint("incomplete optimizer state".into()))?;
        let state = TrainState {
            epoch: self.epoch,
            rng: Rng::from_state(self.rng),
            optim: OptimState { step: self.optim_step, slots },
            history: self.history.clone(),
        };
        Ok((model, state))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut payload = Vec::new();
        for (name, t) in &self.tensors {
            entries.push(TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset: payload.len() as u64 });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            model: self.model.clone(),
            optim: self.optim.clone(),
            epoch: self.epoch,
            optim_step: self.optim_step,
            optim_slots: self.optim_slots,
            rng: self.rng,
            history: self.history.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + payload.len() + 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let need = |n: usize, what: &str| -> Result<()> {
            if bytes.len() < n {
                return Err(Error::Truncated { what: format!("checkpoint {what}"), expected: n, found: bytes.len() });
            }
            Ok(())
        };
        need(16, "preamble")?;
        if bytes[..4] != MAGIC {
            return Err(Error::BadMagic { what: "checkpoint".into(), found: u32::from_be_bytes(bytes[..4].try_into().unwrap()) });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
        }
        let hlen = usize::try_from(u64::from_le_bytes(bytes[8..16].try_into().unwrap()))
            .map_err(|_| Error::Checkpoint("header length overflows".into()))?;
        let hend = 16usize.checked_add(hlen).ok_or_else(|| Error::Checkpoint("header length overflows".into()))?;
        need(hend, "header")?;
        let header: Header = serde_json::from_slice(&bytes[16..hend])?;
        let mut plen = 0usize;
        for e in &header.tensors {
            if e.offset as usize != plen {
                return Err(Error::Checkpoint(format!("tensor `{}` is not at its expected offset", e.name)));
            }
            plen += 4 * e.shape.iter().product::<usize>();
        }
        need(hend + plen + 4, "payload")?;
        if bytes.len() != hend + plen + 4 {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - hend - plen - 4)));
        }
        let payload = &bytes[hend..hend + plen];
        let stored = u32::from_le_bytes(bytes[hend + plen..].try_into().unwrap());
        let actual = crc32fast::hash(payload);
        if stored != actual {
            return Err(Error::Checkpoint(format!("payload checksum 0x{actual:08x} does not match stored 0x{stored:08x}")));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let start = e.offset as usize;
            let len: usize = e.shape.iter().product();
            let data = payload[start..start + 4 * len].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
        }
        Ok(Checkpoint {
            model: header.model,
            optim: header.optim,
            epoch: header.epoch,
            optim_step: header.optim_step,
            optim_slots: header.optim_slots,
            rng: header.rng,
            history: header.history,
            tensors,
        })
    }

    /// Writes through a temporary file in the same directory, then renames.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let name = path.file_name().ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
        let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
        let write = || -> std::io::Result<()> {
            fs::create_dir_all(dir)?;
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp);
            Error::io(path, e)
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
