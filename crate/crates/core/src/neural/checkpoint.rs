//! Self-contained binary checkpoints.
//!
//! Layout: the magic bytes `CAPMEND` plus a format version byte, a
//! little-endian `u32` header length, a JSON header (gate order, dims, the
//! full vocabulary in index order, and the training configuration), then
//! every parameter block as raw little-endian `f64` in the fixed block
//! order of [`ModelParameters::block`]. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Vocabulary, PAD_INDEX, PAD_TOKEN, UNK_INDEX, UNK_TOKEN};
use crate::{Error, Result};

use super::params::{Dims, ModelParameters, GATE_ORDER};
use super::train::TrainingConfig;

const MAGIC: &[u8; 8] = b"CAPMEND\x01";

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    gate_order: String,
    vocab_size: usize,
    embed_dim: usize,
    hidden_dim: usize,
    training: TrainingConfig,
    vocab: Vec<String>,
}

fn bad(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.into(),
        message: message.into(),
    }
}

/// Writes parameters, configuration and vocabulary to `path`.
pub fn save_checkpoint(
    params: &ModelParameters,
    cfg: &TrainingConfig,
    vocab: &Vocabulary,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if vocab.len() != params.dims.vocab {
        return Err(bad(
            path,
            format!(
                "vocabulary size {} does not match embedding rows {}",
                vocab.len(),
                params.dims.vocab
            ),
        ));
    }
    let header = Header {
        format_version: 1,
        gate_order: GATE_ORDER.into(),
        vocab_size: params.dims.vocab,
        embed_dim: params.dims.embed,
        hidden_dim: params.dims.hidden,
        training: cfg.clone(),
        vocab: vocab.tokens().to_vec(),
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e: std::io::Error| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())
        .map_err(io)?;
    w.write_all(&header_bytes).map_err(io)?;
    for b in 0..params.block_count() {
        for &x in params.block(b) {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads a checkpoint back; fails closed on truncation, trailing bytes, or
/// any header inconsistency.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(ModelParameters, Vocabulary, TrainingConfig)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| bad(path, "file too short for magic bytes"))?;
    if &magic != MAGIC {
        return Err(bad(path, "not a capmend checkpoint"));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)
        .map_err(|_| bad(path, "truncated header length"))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| bad(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| bad(path, format!("invalid header: {e}")))?;

    if header.format_version != 1 {
        return Err(bad(
            path,
            format!("unsupported format version {}", header.format_version),
        ));
    }
    if header.gate_order != GATE_ORDER {
        return Err(bad(
            path,
            format!("unsupported gate order {:?}", header.gate_order),
        ));
    }
    if header.vocab.len() != header.vocab_size
        || header.vocab_size < 2
        || header.vocab.get(PAD_INDEX).map(String::as_str) != Some(PAD_TOKEN)
        || header.vocab.get(UNK_INDEX).map(String::as_str) != Some(UNK_TOKEN)
    {
        return Err(bad(path, "vocabulary table is inconsistent"));
    }
    if header.embed_dim == 0 || header.hidden_dim == 0 {
        return Err(bad(path, "dimensions must be positive"));
    }

    let dims = Dims {
        vocab: header.vocab_size,
        embed: header.embed_dim,
        hidden: header.hidden_dim,
    };
    let mut params = ModelParameters::zeros(dims);
    let mut buf = [0u8; 8];
    for b in 0..params.block_count() {
        let name = params.block_name(b);
        for x in params.block_mut(b).iter_mut() {
            r.read_exact(&mut buf)
                .map_err(|_| bad(path, format!("truncated while reading {name}")))?;
            *x = f64::from_le_bytes(buf);
        }
    }
    if r.read(&mut buf).map_err(|e| Error::io(path, e))? != 0 {
        return Err(bad(path, "trailing bytes after parameters"));
    }

    let vocab = Vocabulary::from_tokens(header.vocab);
    Ok((params, vocab, header.training))
}
