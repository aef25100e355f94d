//! `HNRF` checkpoints: magic, version, a JSON header, then little-endian f32
//! arrays in parameter order (hash table, decoder layers, saliency grid),
//! optionally followed by the Adam moments of each array.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::diff_optim::{AdamState, Role};
use crate::error::{Error, Result};
use crate::model::NerfModel;
use crate::trainer::PrunerState;

pub const MAGIC: &[u8; 4] = b"HNRF";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: NerfModel<f32>,
    pub pruner: PrunerState,
    pub step: u64,
    pub epoch: u64,
    pub moments: Option<Vec<AdamState<f32>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    role: Role,
    shape: Vec<usize>,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: RunConfig,
    step: u64,
    epoch: u64,
    pruner: PrunerState,
    arrays: Vec<ArrayEntry>,
    moments: bool,
    #[serde(default)]
    adam_steps: Vec<u64>,
}

fn push_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes a checkpoint to bytes.
pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let params = ck.model.params();
    if let Some(m) = &ck.moments {
        if m.len() != params.len() || m.iter().zip(&params).any(|(s, p)| s.m.len() != p.len() || s.v.len() != p.len()) {
            return Err(Error::Config("optimizer moments do not match the model".into()));
        }
    }
    let header = Header {
        config: ck.config,
        step: ck.step,
        epoch: ck.epoch,
        pruner: ck.pruner,
        arrays: params
            .iter()
            .map(|p| ArrayEntry {
                name: p.name.clone(),
                role: p.role,
                shape: p.shape.clone(),
                len: p.len(),
            })
            .collect(),
        moments: ck.moments.is_some(),
        adam_steps: ck.moments.iter().flatten().map(|s| s.t).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in &params {
        push_f32s(&mut out, &p.values);
    }
    for s in ck.moments.iter().flatten() {
        push_f32s(&mut out, &s.m);
        push_f32s(&mut out, &s.v);
    }
    Ok(out)
}

fn integrity(msg: impl Into<String>) -> Error {
    Error::Integrity(msg.into())
}

/// Parses checkpoint bytes, validating every length before building a model.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 {
        return Err(integrity(format!("checkpoint is {} bytes, shorter than its preamble", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(integrity("bad magic, not an HNRF checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(integrity(format!("unsupported checkpoint version {version} (expected {VERSION})")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let rest = &bytes[16..];
    if header_len > rest.len() as u64 {
        return Err(integrity("truncated header"));
    }
    let (json, payload) = rest.split_at(header_len as usize);
    let header: Header = serde_json::from_slice(json).map_err(|e| integrity(format!("bad header: {e}")))?;

    let total: usize = header.arrays.iter().map(|a| a.len).sum();
    let copies = if header.moments { 3 } else { 1 };
    let want = total
        .checked_mul(4 * copies)
        .ok_or_else(|| integrity("array lengths overflow"))?;
    if payload.len() != want {
        return Err(integrity(format!("payload is {} bytes, header describes {want}", payload.len())));
    }

    let mut model = NerfModel::<f32>::new(header.config.model, 0)
        .map_err(|e| integrity(format!("header config is invalid: {e}")))?;
    {
        let params = model.params();
        if params.len() != header.arrays.len() {
            return Err(integrity(format!(
                "header lists {} arrays, config implies {}",
                header.arrays.len(),
                params.len()
            )));
        }
        for (p, a) in params.iter().zip(&header.arrays) {
            if p.name != a.name || p.shape != a.shape || p.len() != a.len || p.role != a.role {
                return Err(integrity(format!("array '{}' does not match the config layout", a.name)));
            }
        }
    }
    let mut floats = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    for p in model.params_mut() {
        for v in p.values.iter_mut() {
            *v = floats.next().unwrap();
        }
    }
    let moments = if header.moments {
        if header.adam_steps.len() != header.arrays.len() {
            return Err(integrity("optimizer step counts missing"));
        }
        let mut out = Vec::with_capacity(header.arrays.len());
        for (a, t) in header.arrays.iter().zip(&header.adam_steps) {
            let m: Vec<f32> = floats.by_ref().take(a.len).collect();
            let v: Vec<f32> = floats.by_ref().take(a.len).collect();
            out.push(AdamState {
                m,
                v,
                t: *t,
                cfg: header.config.train.adam,
            });
        }
        Some(out)
    } else {
        None
    };
    Ok(Checkpoint {
        config: header.config,
        model,
        pruner: header.pruner,
        step: header.step,
        epoch: header.epoch,
        moments,
    })
}

/// Writes next to `path` and renames into place.
pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ck)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Integrity(m) => Error::Integrity(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(moments: bool) -> Checkpoint {
        let mut config = RunConfig::desk();
        config.model.hashgrid.levels = 3;
        config.model.hashgrid.max_res = 32;
        config.model.hashgrid.log2_table_size = 8;
        config.model.decoder.hidden = 8;
        config.model.saliency.resolution = 5;
        let mut model = NerfModel::<f32>::new(config.model, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for p in model.params_mut() {
            p.values.iter_mut().for_each(|v| *v = rng.gen::<f32>() - 0.5);
        }
        let moments = moments.then(|| {
            model
                .params()
                .iter()
                .map(|p| {
                    let mut s = AdamState::new(p.len(), config.train.adam);
                    s.m.iter_mut().for_each(|v| *v = rng.gen());
                    s.v.iter_mut().for_each(|v| *v = rng.gen());
                    s.t = 12;
                    s
                })
                .collect()
        });
        Checkpoint {
            config,
            model,
            pruner: PrunerState {
                gamma: 0.0123,
                ..Default::default()
            },
            step: 77,
            epoch: 3,
            moments,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for moments in [false, true] {
            let ck = sample(moments);
            let path = dir.path().join("m.hnrf");
            save_checkpoint(&ck, &path).unwrap();
            let back = load_checkpoint(&path).unwrap();
            assert_eq!(back.config, ck.config);
            assert_eq!(back.step, 77);
            assert_eq!(back.pruner, ck.pruner);
            for (a, b) in back.model.params().iter().zip(ck.model.params()) {
                let x: Vec<u32> = a.values.iter().map(|v| v.to_bits()).collect();
                let y: Vec<u32> = b.values.iter().map(|v| v.to_bits()).collect();
                assert_eq!(x, y);
            }
            assert_eq!(back.moments, ck.moments);
        }
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = encode_checkpoint(&sample(false)).unwrap();
        for cut in [0, 3, 15, 16, 40, bytes.len() / 2, bytes.len() - 1] {
            let err = decode_checkpoint(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Integrity(_)), "cut {cut}: {err}");
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(decode_checkpoint(&longer), Err(Error::Integrity(_))));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_checkpoint(&sample(false)).unwrap();
        bytes[4] = 9;
        assert!(decode_checkpoint(&bytes).unwrap_err().to_string().contains("version"));
        bytes[0] = b'X';
        assert!(decode_checkpoint(&bytes).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn header_echoes_config() {
        let ck = sample(false);
        let bytes = encode_checkpoint(&ck).unwrap();
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let v: serde_json::Value = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
        assert_eq!(v["config"], ck.config.to_value());
    }
}
