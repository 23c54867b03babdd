//! Parameter file format: a length-prefixed UTF-8 JSON header (format
//! version, model config, named tensor shapes) followed by the raw f32
//! little-endian tensor payloads in declaration order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, ModelParams};

pub const FORMAT_VERSION: u32 = 1;

const MAX_HEADER_BYTES: u64 = 1 << 20;

#[derive(Serialize, Deserialize)]
struct FileHeader {
    format_version: u32,
    config: ModelConfig,
    tensors: Vec<TensorMeta>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

/// Writes parameters; `load_params(save_params(p))` is bit-exact.
pub fn save_params(params: &ModelParams, path: &Path) -> Result<(), ModelError> {
    let header = FileHeader {
        format_version: FORMAT_VERSION,
        config: params.config.clone(),
        tensors: (0..params.n_tensors())
            .map(|i| {
                let (rows, cols) = params.shape(i);
                TensorMeta { name: params.name(i).to_string(), rows, cols }
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for i in 0..params.n_tensors() {
        for &v in params.tensor(i) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ModelParams, ModelError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes);
    if header_len == 0 || header_len > MAX_HEADER_BYTES {
        return Err(ModelError::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("implausible header length {header_len}"),
        )));
    }
    let mut header_bytes = vec![0u8; header_len as usize];
    r.read_exact(&mut header_bytes)?;
    let header: FileHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    if header.format_version != FORMAT_VERSION {
        return Err(ModelError::VersionMismatch {
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let mut entries = Vec::with_capacity(header.tensors.len());
    for meta in header.tensors {
        let n = meta.rows * meta.cols;
        let mut buf = vec![0u8; n * 4];
        r.read_exact(&mut buf)?;
        let data: Vec<f32> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push((meta.name, meta.rows, meta.cols, data));
    }
    ModelParams::from_parts(header.config, entries)
}
