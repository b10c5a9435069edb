//! Single-file checkpoints.
//!
//! ```text
//! b"RAGATECK" | header length: u64 LE | header JSON | f32 LE weights
//! ```
//!
//! The header records the configuration, threshold, vocabulary and one
//! manifest entry per tensor with its byte offset into the weight block.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::MhaGateConfig;
use super::model::{MhaGateModel, Params};
use super::vocab::Vocabulary;
use super::MhaError;

const MAGIC: &[u8; 8] = b"RAGATECK";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    length: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: MhaGateConfig,
    threshold: f64,
    vocabulary: Option<Vocabulary>,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<W: Write>(model: &MhaGateModel, mut out: W) -> Result<(), MhaError> {
    let mut offset = 0;
    let tensors = model.params.tensors();
    let entries = tensors
        .iter()
        .map(|t| {
            let e = TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset,
                length: t.data.len(),
            };
            offset += 4 * t.data.len();
            e
        })
        .collect();
    let header = Header {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        threshold: model.threshold,
        vocabulary: model.vocabulary.clone(),
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).map_err(|e| MhaError::Checkpoint(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for t in &tensors {
        for &v in t.data {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<MhaGateModel, MhaError> {
    let bad = |m: String| MhaError::Checkpoint(m);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| bad(format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    header.config.validate()?;
    let mut weights = Vec::new();
    input.read_to_end(&mut weights)?;

    let mut params = Params::zeros(&header.config);
    let expected: Vec<(String, Vec<usize>)> = params
        .tensors()
        .into_iter()
        .map(|t| (t.name, t.shape))
        .collect();
    if expected.len() != header.tensors.len() {
        return Err(bad(format!(
            "expected {} tensors, found {}",
            expected.len(),
            header.tensors.len()
        )));
    }
    for ((slot, (name, shape)), entry) in params
        .tensors_mut()
        .into_iter()
        .zip(&expected)
        .zip(&header.tensors)
    {
        if &entry.name != name || &entry.shape != shape || entry.length != slot.len() {
            return Err(bad(format!(
                "tensor `{}` {:?} does not match expected `{name}` {shape:?}",
                entry.name, entry.shape
            )));
        }
        let bytes = weights
            .get(entry.offset..entry.offset + 4 * entry.length)
            .ok_or_else(|| bad(format!("tensor `{name}` runs past the end of the file")))?;
        for (v, chunk) in slot.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("chunk of 4")) as f64;
        }
    }
    if !params.all_finite() {
        return Err(bad("non-finite weights".into()));
    }
    Ok(MhaGateModel {
        config: header.config,
        params,
        threshold: header.threshold,
        vocabulary: header.vocabulary,
    })
}

pub fn save_checkpoint(model: &MhaGateModel, path: &Path) -> Result<(), MhaError> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<MhaGateModel, MhaError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
