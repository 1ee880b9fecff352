//! Binary container for models and cached tensors.
//!
//! Layout:
//!
//! ```text
//! magic     8 bytes  "DACLAB\0\x01"
//! hlen      u64 LE   length of the manifest
//! manifest  hlen     UTF-8 JSON (see `Manifest`)
//! payload   ...      tensors back to back, little-endian IEEE-754
//! crc       u32 LE   CRC-32 of the payload
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{DType, Float, ParameterSet, Tensor};

use super::{ArchSpec, Head, MultiHeadModel, SCModel};

pub const MAGIC: &[u8; 8] = b"DACLAB\0\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadMeta {
    pub task_id: u32,
    pub classes: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    /// `multi_head`, `self_centered` or `patch_cache`.
    pub kind: String,
    pub dtype: DType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch: Option<ArchSpec>,
    #[serde(default)]
    pub heads: Vec<HeadMeta>,
    #[serde(default)]
    pub taps: Vec<String>,
    pub tensors: Vec<TensorEntry>,
}

/// Encodes `tensors` behind `manifest`; tensor entries are filled in here.
pub fn encode_container<T: Float>(mut manifest: Manifest, tensors: &[(String, &Tensor<T>)]) -> Vec<u8> {
    manifest.dtype = T::DTYPE;
    manifest.tensors.clear();
    let mut payload = Vec::new();
    for (name, t) in tensors {
        manifest.tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: payload.len() as u64,
        });
        for &v in t.data() {
            v.write_le(&mut payload);
        }
    }
    let header = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(8 + 8 + header.len() + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    let end = at
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format(format!("truncated while reading {what} ({} bytes available, {n} needed at offset {at})", bytes.len().saturating_sub(*at))))?;
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

/// Decodes a container, verifying the checksum, into tensors of type `T`.
pub fn decode_container<T: Float>(bytes: &[u8]) -> Result<(Manifest, Vec<(String, Tensor<T>)>)> {
    let mut at = 0;
    if take(bytes, &mut at, 8, "magic")? != MAGIC {
        return Err(Error::Format("bad magic; not a daclab container".into()));
    }
    let hlen = u64::from_le_bytes(take(bytes, &mut at, 8, "header length")?.try_into().unwrap());
    let hlen = usize::try_from(hlen).map_err(|_| Error::Format("header length overflows".into()))?;
    let header = take(bytes, &mut at, hlen, "manifest")?;
    let manifest: Manifest = serde_json::from_slice(header)
        .map_err(|e| Error::Format(format!("manifest is not valid JSON: {e}")))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {}", manifest.version)));
    }
    let width = manifest.dtype.width();
    let payload_len: usize = manifest
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>() * width)
        .sum();
    let payload = take(bytes, &mut at, payload_len, "payload")?;
    let crc = u32::from_le_bytes(take(bytes, &mut at, 4, "checksum")?.try_into().unwrap());
    if at != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after checksum", bytes.len() - at)));
    }
    let found = crc32fast::hash(payload);
    if found != crc {
        return Err(Error::Checksum { expected: crc, found });
    }
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    let mut expect_offset = 0u64;
    for e in &manifest.tensors {
        if e.offset != expect_offset {
            return Err(Error::Format(format!("tensor `{}` at offset {}, expected {expect_offset}", e.name, e.offset)));
        }
        let numel: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let raw = &payload[start..start + numel * width];
        let data: Vec<T> = raw
            .chunks_exact(width)
            .map(|c| match manifest.dtype {
                DType::F32 => T::of(f32::read_le(c) as f64),
                DType::F64 => T::of(f64::read_le(c)),
            })
            .collect();
        tensors.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
        expect_offset += (numel * width) as u64;
    }
    Ok((manifest, tensors))
}

fn model_manifest(kind: &str, arch: &ArchSpec, heads: &[HeadMeta]) -> Manifest {
    Manifest {
        version: FORMAT_VERSION,
        kind: kind.into(),
        dtype: DType::F32,
        arch_hash: Some(arch.hash()),
        arch: Some(arch.clone()),
        heads: heads.to_vec(),
        taps: arch.taps.clone(),
        tensors: Vec::new(),
    }
}

fn model_tensors<T: Float>(m: &MultiHeadModel<T>) -> Vec<(String, &Tensor<T>)> {
    let mut out: Vec<(String, &Tensor<T>)> = m
        .backbone()
        .iter()
        .map(|(n, t)| (format!("backbone/{n}"), t))
        .collect();
    for h in m.heads() {
        out.extend(h.params.iter().map(|(n, t)| (format!("head/{}/{n}", h.task_id), t)));
    }
    out
}

fn encode_as<T: Float>(kind: &str, m: &MultiHeadModel<T>) -> Vec<u8> {
    let heads: Vec<HeadMeta> = m
        .heads()
        .iter()
        .map(|h| HeadMeta {
            task_id: h.task_id,
            classes: h.classes.clone(),
        })
        .collect();
    encode_container(model_manifest(kind, m.arch(), &heads), &model_tensors(m))
}

pub fn encode_model<T: Float>(m: &MultiHeadModel<T>) -> Vec<u8> {
    encode_as("multi_head", m)
}

pub fn encode_sc_model<T: Float>(m: &SCModel<T>) -> Vec<u8> {
    encode_as("self_centered", m.as_multi_head())
}

/// Payload bytes of the backbone alone, used for hand-off comparisons.
pub fn backbone_bytes<T: Float>(params: &ParameterSet<T>) -> Vec<u8> {
    let mut out = Vec::new();
    for (name, t) in params.iter() {
        out.extend_from_slice(name.as_bytes());
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    out
}

/// Decodes a model, optionally checking it against an expected architecture.
pub fn decode_model<T: Float>(bytes: &[u8], expected: Option<&ArchSpec>) -> Result<MultiHeadModel<T>> {
    let (manifest, tensors) = decode_container::<T>(bytes)?;
    if manifest.kind != "multi_head" && manifest.kind != "self_centered" {
        return Err(Error::Format(format!("container holds `{}`, not a model", manifest.kind)));
    }
    let arch = manifest
        .arch
        .clone()
        .ok_or_else(|| Error::Format("model manifest has no architecture".into()))?;
    let stored = manifest.arch_hash.clone().unwrap_or_default();
    let actual = arch.hash();
    if stored != actual {
        return Err(Error::HashMismatch {
            expected: stored,
            found: actual,
        });
    }
    if let Some(exp) = expected {
        let want = exp.hash();
        if want != stored {
            return Err(Error::HashMismatch {
                expected: want,
                found: stored,
            });
        }
    }
    if manifest.taps != arch.taps {
        return Err(Error::Format("tap list disagrees with architecture".into()));
    }
    let mut backbone = ParameterSet::new();
    let mut head_params: Vec<ParameterSet<T>> = manifest.heads.iter().map(|_| ParameterSet::new()).collect();
    for (name, t) in tensors {
        if let Some(rest) = name.strip_prefix("backbone/") {
            backbone.insert(rest, t)?;
        } else if let Some(rest) = name.strip_prefix("head/") {
            let (id, pname) = rest
                .split_once('/')
                .ok_or_else(|| Error::Format(format!("bad tensor name `{name}`")))?;
            let id: u32 = id.parse().map_err(|_| Error::Format(format!("bad task id in `{name}`")))?;
            let slot = manifest
                .heads
                .iter()
                .position(|h| h.task_id == id)
                .ok_or_else(|| Error::Format(format!("tensor `{name}` for undeclared head {id}")))?;
            head_params[slot].insert(pname, t)?;
        } else {
            return Err(Error::Format(format!("unexpected tensor `{name}`")));
        }
    }
    let heads = manifest
        .heads
        .into_iter()
        .zip(head_params)
        .map(|(m, params)| Head {
            task_id: m.task_id,
            classes: m.classes,
            params,
        })
        .collect();
    MultiHeadModel::from_parts(arch, backbone, heads)
}

pub fn decode_sc_model<T: Float>(bytes: &[u8], expected: Option<&ArchSpec>) -> Result<SCModel<T>> {
    SCModel::from_multi_head(decode_model(bytes, expected)?)
}

pub fn save_model<T: Float>(m: &MultiHeadModel<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_model(m))?;
    Ok(())
}

pub fn load_model<T: Float>(path: impl AsRef<Path>, expected: Option<&ArchSpec>) -> Result<MultiHeadModel<T>> {
    decode_model(&std::fs::read(path)?, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_head;
    use crate::numerics::RngStream;

    fn sample() -> MultiHeadModel<f32> {
        let arch = ArchSpec::smallcnn([3, 8, 8], [4, 6], 10, 2);
        let mut m = MultiHeadModel::random(arch.clone(), 4).unwrap();
        m.attach_head(init_head(&arch, &RngStream::new(1, "h")), 1, vec![3, 7]).unwrap();
        m.attach_head(init_head(&arch, &RngStream::new(2, "h")), 2, vec![0, 1]).unwrap();
        m
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let m = sample();
        let p1 = dir.path().join("a.dacm");
        let p2 = dir.path().join("b.dacm");
        save_model(&m, &p1).unwrap();
        let back: MultiHeadModel<f32> = load_model(&p1, Some(m.arch())).unwrap();
        assert_eq!(back, m);
        save_model(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncation_is_a_parse_error() {
        let bytes = encode_model(&sample());
        for cut in [0, 5, 12, 40, bytes.len() - 3] {
            let err = decode_model::<f32>(&bytes[..cut], None).unwrap_err();
            assert!(matches!(err, Error::Format(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let mut bytes = encode_model(&sample());
        let n = bytes.len();
        bytes[n - 10] ^= 0x40;
        assert!(matches!(decode_model::<f32>(&bytes, None), Err(Error::Checksum { .. })));
    }

    #[test]
    fn mismatched_arch_reports_both_hashes() {
        let m = sample();
        let other = ArchSpec::smallcnn([3, 8, 8], [4, 6], 12, 2);
        let err = decode_model::<f32>(&encode_model(&m), Some(&other)).unwrap_err();
        match err {
            Error::HashMismatch { expected, found } => {
                assert_eq!(expected, other.hash());
                assert_eq!(found, m.arch().hash());
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn f64_models_keep_their_width() {
        let m = sample().cast::<f64>();
        let back: MultiHeadModel<f64> = decode_model(&encode_model(&m), None).unwrap();
        assert_eq!(back, m);
    }
}
