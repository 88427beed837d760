//! `NAMB` checkpoint files: magic, `u16` version, `u32`-prefixed JSON header,
//! then little-endian `f32` arrays at the offsets listed in the header.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chardata::Vocab;
use crate::error::{Error, Result};
use crate::nn::Tensor;

use super::ModelConfig;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NAMB";
pub const CHECKPOINT_VERSION: u16 = 1;
pub const MODEL_KIND: &str = "nambert";
pub const GLYPH_ENCODER_KIND: &str = "glyph-encoder";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in `f32` elements from the start of the data section.
    pub offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub config: ModelConfig,
    pub vocab: Vocab,
    /// Characters outside the vocabulary whose pinyin and glyph are stored
    /// after the vocabulary rows.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_chars: Vec<char>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    /// Same order as `header.tensors`.
    pub tensors: Vec<Tensor<f32>>,
}

pub fn write_checkpoint(
    path: impl AsRef<Path>,
    kind: &str,
    config: &ModelConfig,
    vocab: &Vocab,
    extra_chars: &[char],
    tensors: &[(String, Tensor<f32>)],
) -> Result<()> {
    let path = path.as_ref();
    let mut offset = 0;
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += t.len();
            e
        })
        .collect();
    let header = CheckpointHeader {
        kind: kind.to_string(),
        config: config.clone(),
        vocab: vocab.clone(),
        extra_chars: extra_chars.to_vec(),
        tensors: entries,
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(10 + json.len() + offset * 4);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, t) in tensors {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Read a checkpoint. `expected` sees the parsed header and returns the
/// `(name, shape)` list the caller requires; any difference is reported
/// before a single array is decoded.
pub fn read_checkpoint<F>(path: impl AsRef<Path>, expected: F) -> Result<Checkpoint>
where
    F: FnOnce(&CheckpointHeader) -> Result<Vec<(String, Vec<usize>)>>,
{
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes, expected)
}

pub fn parse_checkpoint<F>(bytes: &[u8], expected: F) -> Result<Checkpoint>
where
    F: FnOnce(&CheckpointHeader) -> Result<Vec<(String, Vec<usize>)>>,
{
    if bytes.len() < 10 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a NAMB checkpoint (bad magic)".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let hlen = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let data_start = 10usize
        .checked_add(hlen)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Format(format!("truncated checkpoint: header of {hlen} bytes does not fit")))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[10..data_start])
        .map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;

    let want = expected(&header)?;
    let got: Vec<(&str, &[usize])> = header
        .tensors
        .iter()
        .map(|t| (t.name.as_str(), t.shape.as_slice()))
        .collect();
    for (name, shape) in &want {
        match got.iter().find(|(n, _)| n == name) {
            None => return Err(Error::Format(format!("checkpoint is missing tensor {name}"))),
            Some((_, s)) if s != shape => {
                return Err(Error::Format(format!(
                    "tensor {name} has shape {s:?} in checkpoint, model expects {shape:?}"
                )))
            }
            _ => {}
        }
    }
    if let Some((extra, _)) = got.iter().find(|(n, _)| !want.iter().any(|(w, _)| w == n)) {
        return Err(Error::Format(format!("unexpected tensor {extra} in checkpoint")));
    }

    let mut next = 0;
    for t in &header.tensors {
        if t.offset != next {
            return Err(Error::Format(format!(
                "tensor {} starts at element {}, expected {next}",
                t.name, t.offset
            )));
        }
        next += t.shape.iter().product::<usize>();
    }
    let data = &bytes[data_start..];
    if data.len() != next * 4 {
        return Err(Error::Format(format!(
            "truncated checkpoint: data section has {} bytes, manifest needs {}",
            data.len(),
            next * 4
        )));
    }

    let tensors = header
        .tensors
        .iter()
        .map(|t| {
            let n: usize = t.shape.iter().product();
            let raw = &data[t.offset * 4..(t.offset + n) * 4];
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Tensor::from_vec(&t.shape, values)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Checkpoint { header, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Tensor<f32>)> {
        vec![
            (
                "a".into(),
                Tensor::from_vec(&[2, 2], vec![1.0, -2.0, 3.5, 0.25]).unwrap(),
            ),
            ("b".into(), Tensor::from_vec(&[3], vec![7.0, 8.0, 9.0]).unwrap()),
        ]
    }

    fn manifest() -> Vec<(String, Vec<usize>)> {
        vec![("a".into(), vec![2, 2]), ("b".into(), vec![3])]
    }

    fn written() -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.namb");
        let cfg = ModelConfig::toy(6);
        let vocab = Vocab::from_chars(['甲', '乙']).unwrap();
        write_checkpoint(&path, MODEL_KIND, &cfg, &vocab, &[], &sample()).unwrap();
        (dir, path)
    }

    #[test]
    fn round_trip_is_exact() {
        let (_d, path) = written();
        let ck = read_checkpoint(&path, |_| Ok(manifest())).unwrap();
        assert_eq!(ck.header.kind, MODEL_KIND);
        assert_eq!(ck.header.vocab.chars(), &['甲', '乙']);
        for ((_, want), got) in sample().iter().zip(&ck.tensors) {
            assert_eq!(want, got);
        }
    }

    #[test]
    fn shape_mismatch_names_the_tensor() {
        let (_d, path) = written();
        let err = read_checkpoint(&path, |_| Ok(vec![("a".into(), vec![4]), ("b".into(), vec![3])]))
            .unwrap_err()
            .to_string();
        assert!(err.contains("tensor a"), "{err}");
    }

    #[test]
    fn missing_and_extra_tensors_are_rejected() {
        let (_d, path) = written();
        let err = read_checkpoint(&path, |_| Ok(vec![("a".into(), vec![2, 2])])).unwrap_err();
        assert!(err.to_string().contains("unexpected tensor b"));
        let mut m = manifest();
        m.push(("c".into(), vec![1]));
        let err = read_checkpoint(&path, |_| Ok(m)).unwrap_err();
        assert!(err.to_string().contains("missing tensor c"));
    }

    #[test]
    fn truncation_is_detected() {
        let (_d, path) = written();
        let bytes = fs::read(&path).unwrap();
        let err = parse_checkpoint(&bytes[..bytes.len() - 3], |_| Ok(manifest())).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        let err = parse_checkpoint(&bytes[..12], |_| Ok(manifest())).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn bad_magic_and_version() {
        let (_d, path) = written();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4] = 9;
        assert!(parse_checkpoint(&bytes, |_| Ok(manifest()))
            .unwrap_err()
            .to_string()
            .contains("version 9"));
        bytes[0] = b'X';
        assert!(parse_checkpoint(&bytes, |_| Ok(manifest()))
            .unwrap_err()
            .to_string()
            .contains("magic"));
    }
}
