//! Checkpoint archive: a magic tag, a JSON header describing the model
//! configuration and every stored array, then the raw f64 payload. The
//! format is self-describing, so loading rebuilds the model without any
//! external configuration.

use std::io::{Read, Write};
use std::path::Path;

use autograd::adam::{Adam, Moments};
use autograd::{Arr, ParamStore};
use serde::{Deserialize, Serialize};

use crate::error::CheckpointError;
use crate::model::ModelConfig;

const MAGIC: &[u8; 8] = b"PMTL\0CK1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EntryMeta {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AdamMeta {
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    /// Names with stored (m, v) pairs, in payload order.
    names: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model: ModelConfig,
    entries: Vec<EntryMeta>,
    adam: Option<AdamMeta>,
}

/// A loaded checkpoint: enough to rebuild, evaluate, or resume.
pub struct Checkpoint {
    pub model: ModelConfig,
    pub store: ParamStore,
    pub adam: Option<Adam>,
}

fn write_arr(out: &mut impl Write, arr: &Arr) -> std::io::Result<()> {
    debug_assert!(arr.is_standard_layout());
    for &v in arr.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_arr(inp: &mut impl Read, shape: &[usize]) -> Result<Arr, CheckpointError> {
    let n: usize = shape.iter().product();
    let mut bytes = vec![0u8; n * 8];
    inp.read_exact(&mut bytes)?;
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk is 8 bytes")))
        .collect();
    Arr::from_shape_vec(ndarray::IxDyn(shape), vals)
        .map_err(|e| CheckpointError::Format(format!("payload shape mismatch: {e}")))
}

/// Writes the model configuration, every parameter and buffer, and
/// (optionally) the optimizer state.
pub fn save_checkpoint(
    path: &Path,
    model: &ModelConfig,
    store: &ParamStore,
    adam: Option<&Adam>,
) -> Result<(), CheckpointError> {
    let entries: Vec<EntryMeta> = store
        .iter()
        .map(|(name, e)| EntryMeta {
            name: name.clone(),
            shape: e.value.shape().to_vec(),
            trainable: e.trainable,
        })
        .collect();
    let adam_meta = adam.map(|a| AdamMeta {
        t: a.t,
        beta1: a.beta1,
        beta2: a.beta2,
        eps: a.eps,
        names: a.state.keys().cloned().collect(),
    });
    let header = Header {
        format_version: FORMAT_VERSION,
        model: model.clone(),
        entries,
        adam: adam_meta,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| CheckpointError::Format(format!("header serialization failed: {e}")))?;

    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(header_json.len() as u64).to_le_bytes())?;
    out.write_all(&header_json)?;
    for (_, e) in store.iter() {
        write_arr(&mut out, &e.value)?;
    }
    if let Some(a) = adam {
        for (_, mom) in a.state.iter() {
            write_arr(&mut out, &mom.m)?;
            write_arr(&mut out, &mom.v)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads an archive written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut inp = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    inp.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::Format(format!(
            "{} is not a checkpoint archive (bad magic)",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 8];
    inp.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    inp.read_exact(&mut header_json)?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| CheckpointError::Format(format!("header parse failed: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Incompatible(format!(
            "archive format version {} but this build reads {}",
            header.format_version, FORMAT_VERSION
        )));
    }

    let mut store = ParamStore::new();
    for meta in &header.entries {
        let arr = read_arr(&mut inp, &meta.shape)?;
        if meta.trainable {
            store.register(&meta.name, arr);
        } else {
            store.register_buffer(&meta.name, arr);
        }
    }
    let adam = match &header.adam {
        Some(meta) => {
            let mut adam = Adam::new(meta.beta1, meta.beta2, meta.eps);
            adam.t = meta.t;
            for name in &meta.names {
                let shape = header
                    .entries
                    .iter()
                    .find(|e| &e.name == name)
                    .map(|e| e.shape.clone())
                    .ok_or_else(|| {
                        CheckpointError::Format(format!(
                            "optimizer state references unknown parameter {name}"
                        ))
                    })?;
                let m = read_arr(&mut inp, &shape)?;
                let v = read_arr(&mut inp, &shape)?;
                adam.state.insert(name.clone(), Moments { m, v });
            }
            Some(adam)
        }
        None => None,
    };

    Ok(Checkpoint {
        model: header.model,
        store,
        adam,
    })
}

/// Copies the parameters under the listed scope prefixes from `ckpt` into
/// `store`, returning the copied names. Anything outside the scopes keeps
/// its current (fresh) values.
pub fn init_from_checkpoint(
    store: &mut ParamStore,
    ckpt: &Checkpoint,
    scopes: &[String],
) -> Result<Vec<String>, CheckpointError> {
    store
        .copy_scoped(&ckpt.store, scopes)
        .map_err(CheckpointError::Incompatible)
}
