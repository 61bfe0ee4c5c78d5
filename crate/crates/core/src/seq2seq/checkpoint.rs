//! Binary checkpoint: magic `DSCL`, a version byte, a little-endian `u32`
//! header length, a JSON header, then every tensor as little-endian `f32`
//! in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Params;
use super::{ModelConfig, Seq2SeqModel};
use crate::corpus::Vocabulary;
use crate::error::{CheckpointError, Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DSCL";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset of the tensor within the data section.
    offset: usize,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocabulary: Vocabulary,
    tensors: Vec<TensorEntry>,
}

pub(crate) fn encode_checkpoint(model: &Seq2SeqModel<f32>, vocab: &Vocabulary) -> Result<Vec<u8>> {
    let mut offset = 0;
    let tensors = model
        .params
        .manifest()
        .into_iter()
        .map(|(name, shape)| {
            let count = shape.iter().product();
            let entry = TensorEntry { name, shape, offset, count };
            offset += 4 * count;
            entry
        })
        .collect();
    let header = Header {
        config: model.config.clone(),
        vocabulary: vocab.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(9 + json.len() + 4 * model.params.num_scalars());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    model.params.for_each_tensor(&mut |_, _, data| {
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    });
    Ok(out)
}

fn truncated(expected: usize, found: usize) -> Error {
    CheckpointError::Truncated { expected, found }.into()
}

pub(crate) fn decode_checkpoint(bytes: &[u8]) -> Result<(Seq2SeqModel<f32>, Vocabulary)> {
    if bytes.len() < 9 {
        return Err(truncated(9, bytes.len()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("four bytes");
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic(magic).into());
    }
    if bytes[4] != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(bytes[4]).into());
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().expect("four bytes")) as usize;
    let body_start = 9 + header_len;
    if bytes.len() < body_start {
        return Err(truncated(body_start, bytes.len()));
    }
    let header: Header =
        serde_json::from_slice(&bytes[9..body_start]).map_err(|e| CheckpointError::Header(e.to_string()))?;
    header
        .config
        .validate()
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.vocabulary.len() != header.config.vocab_size {
        return Err(CheckpointError::Header(format!(
            "vocabulary has {} entries but config declares {}",
            header.vocabulary.len(),
            header.config.vocab_size
        ))
        .into());
    }
    let mut params = Params::<f32>::zeros(&header.config);
    let expected = params.manifest();
    if expected.len() != header.tensors.len() {
        return Err(CheckpointError::Header(format!(
            "{} tensors listed, model has {}",
            header.tensors.len(),
            expected.len()
        ))
        .into());
    }
    let mut data_offset = 0;
    for ((name, shape), entry) in expected.iter().zip(&header.tensors) {
        if *name != entry.name {
            return Err(CheckpointError::Header(format!("expected tensor `{name}`, found `{}`", entry.name)).into());
        }
        if *shape != entry.shape {
            return Err(CheckpointError::ShapeMismatch {
                name: name.clone(),
                expected: shape.clone(),
                found: entry.shape.clone(),
            }
            .into());
        }
        let count: usize = shape.iter().product();
        if entry.offset != data_offset || entry.count != count {
            return Err(CheckpointError::Header(format!(
                "tensor `{name}` listed at offset {} with {} values, expected offset {data_offset} with {count}",
                entry.offset, entry.count
            ))
            .into());
        }
        data_offset += 4 * count;
    }
    let total = body_start + data_offset;
    if bytes.len() < total {
        return Err(truncated(total, bytes.len()));
    }
    if bytes.len() > total {
        return Err(CheckpointError::Header(format!("{} trailing bytes after tensor data", bytes.len() - total)).into());
    }
    let mut offset = body_start;
    params.for_each_tensor_mut(&mut |_, _, data| {
        for v in data.iter_mut() {
            *v = f32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("four bytes"));
            offset += 4;
        }
    });
    if let Some(name) = params.first_non_finite() {
        return Err(Error::NonFinite(format!("checkpoint tensor {name}")));
    }
    Ok((
        Seq2SeqModel {
            config: header.config,
            params,
        },
        header.vocabulary,
    ))
}

pub fn save_checkpoint(model: &Seq2SeqModel<f32>, vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model, vocab)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Seq2SeqModel<f32>, Vocabulary)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Seq2SeqModel<f32>, Vocabulary) {
        let vocab = Vocabulary::from_words(["alpha", "beta", "gamma"]);
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            d_model: 8,
            num_heads: 2,
            ff_dim: 8,
            encoder_layers: 1,
            decoder_layers: 1,
            max_positions: 6,
            dropout_rate: 0.0,
        };
        (Seq2SeqModel::new(cfg, 9).unwrap(), vocab)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (model, vocab) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, &vocab, &path).unwrap();
        let (loaded, v2) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(v2, vocab);
    }

    #[test]
    fn distinct_errors() {
        let (model, vocab) = sample();
        let bytes = encode_checkpoint(&model, &vocab).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Checkpoint(CheckpointError::BadMagic(_)))));

        let mut bad = bytes.clone();
        bad[4] = 7;
        assert!(matches!(
            decode_checkpoint(&bad),
            Err(Error::Checkpoint(CheckpointError::UnsupportedVersion(7)))
        ));

        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(decode_checkpoint(cut), Err(Error::Checkpoint(CheckpointError::Truncated { .. }))));

        let header_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let json = std::str::from_utf8(&bytes[9..9 + header_len]).unwrap();
        let edited = json.replacen("\"shape\":[6,8]", "\"shape\":[6,9]", 1);
        assert_ne!(edited, json);
        let mut bad = bytes[..5].to_vec();
        bad.extend_from_slice(&(edited.len() as u32).to_le_bytes());
        bad.extend_from_slice(edited.as_bytes());
        bad.extend_from_slice(&bytes[9 + header_len..]);
        assert!(matches!(
            decode_checkpoint(&bad),
            Err(Error::Checkpoint(CheckpointError::ShapeMismatch { .. }))
        ));

        let mut bad = bytes[..5].to_vec();
        bad.extend_from_slice(&3u32.to_le_bytes());
        bad.extend_from_slice(b"{x}");
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Checkpoint(CheckpointError::Header(_)))));
    }

    #[test]
    fn manifest_lists_offsets_and_counts() {
        let (model, vocab) = sample();
        let bytes = encode_checkpoint(&model, &vocab).unwrap();
        let header_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[9..9 + header_len]).unwrap();
        let tensors = header["tensors"].as_array().unwrap();
        assert_eq!(tensors[0]["name"], "embed.tokens");
        assert_eq!(tensors[0]["offset"], 0);
        assert_eq!(tensors[0]["count"], 3 * 8 + 4 * 8);
        let last = tensors.last().unwrap();
        let end = last["offset"].as_u64().unwrap() + 4 * last["count"].as_u64().unwrap();
        assert_eq!(end as usize, bytes.len() - 9 - header_len);

        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_checkpoint(&long), Err(Error::Checkpoint(CheckpointError::Header(_)))));
    }
}
