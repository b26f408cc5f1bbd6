//! Replay checkpoint: the bytes `LEDOTRPL`, a little-endian `u64` header
//! length, a JSON header, then little-endian `f64` payload: buffered vectors
//! label-major, followed by each prototype's mean and variance.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PrototypeStore, Prototype, ReplayBuffer, ReplayState};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LEDOTRPL";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    capacity: usize,
    dim: usize,
    /// (label, stored vectors)
    buffer: Vec<(usize, usize)>,
    /// (label, observation count)
    prototypes: Vec<(usize, usize)>,
    nominal_counts: BTreeMap<usize, usize>,
}

fn state_dim(state: &ReplayState) -> usize {
    state
        .buffer
        .slots
        .values()
        .flatten()
        .map(Vec::len)
        .chain(state.prototypes.classes.values().map(|p| p.mean.len()))
        .next()
        .unwrap_or(0)
}

pub fn save_checkpoint(state: &ReplayState, path: &Path) -> Result<()> {
    let dim = state_dim(state);
    let mut payload: Vec<f64> = Vec::new();
    for v in state.buffer.slots.values().flatten() {
        if v.len() != dim {
            return Err(Error::DimensionMismatch("ragged replay vectors".into()));
        }
        payload.extend_from_slice(v);
    }
    for p in state.prototypes.classes.values() {
        if p.mean.len() != dim || p.variance.len() != dim {
            return Err(Error::DimensionMismatch("ragged prototype".into()));
        }
        payload.extend_from_slice(&p.mean);
        payload.extend_from_slice(&p.variance);
    }
    let header = Header {
        format_version: VERSION,
        capacity: state.buffer.capacity,
        dim,
        buffer: state.buffer.slots.iter().map(|(&l, v)| (l, v.len())).collect(),
        prototypes: state.prototypes.classes.iter().map(|(&l, p)| (l, p.count)).collect(),
        nominal_counts: state.nominal_counts.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(16 + json.len() + 8 * payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for x in payload {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ReplayState> {
    let bytes = fs::read(path)?;
    let malformed = |reason: &str| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(malformed("not a replay checkpoint"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| malformed("header runs past end of file"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| malformed(&e.to_string()))?;
    if header.format_version != VERSION {
        return Err(malformed(&format!("unsupported version {}", header.format_version)));
    }
    let data = &bytes[16 + hlen..];
    let dim = header.dim;
    let expected = header.buffer.iter().map(|&(_, n)| n * dim).sum::<usize>() + header.prototypes.len() * 2 * dim;
    if data.len() != expected * 8 {
        return Err(Error::TruncatedBlob {
            path: path.to_path_buf(),
            expected: (expected * 8) as u64,
            found: data.len() as u64,
        });
    }
    let mut values = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |n: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = values.by_ref().take(n).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinitePayload(path.display().to_string()));
        }
        Ok(v)
    };
    let mut buffer = ReplayBuffer::new(header.capacity);
    for &(label, n) in &header.buffer {
        let vs = (0..n).map(|_| take(dim)).collect::<Result<Vec<_>>>()?;
        buffer.slots.insert(label, vs);
    }
    let mut prototypes = PrototypeStore::default();
    for &(label, count) in &header.prototypes {
        let mean = take(dim)?;
        let variance = take(dim)?;
        prototypes.classes.insert(label, Prototype { mean, variance, count });
    }
    Ok(ReplayState {
        buffer,
        prototypes,
        nominal_counts: header.nominal_counts,
    })
}
