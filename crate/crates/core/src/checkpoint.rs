//! Binary container for named tensors.
//!
//! Layout: `D3POCKPT`, format version (u32 LE), header length (u32 LE), a
//! JSON header `{"meta": .., "tensors": [{"name", "shape"}, ..]}`, the
//! tensors as little-endian f32 in header order, then a CRC-32 (u32 LE) of
//! every preceding byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::diffusion::{Denoiser, DenoiserConfig, ScheduleSpec};
use crate::error::{Error, Result};
use crate::ndcore::{ParamSet, Role, Tensor};

pub const MAGIC: &[u8; 8] = b"D3POCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header<M> {
    meta: M,
    tensors: Vec<TensorEntry>,
}

/// Serializes `meta` and `tensors` into container bytes.
pub fn encode<'a, M: Serialize>(
    meta: &M,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<Vec<u8>> {
    let tensors: Vec<(&str, &Tensor)> = tensors.into_iter().collect();
    let header = Header {
        meta,
        tensors: tensors
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let header_len = u32::try_from(header.len()).map_err(|_| Error::Format("header too large".into()))?;
    let payload: usize = tensors.iter().map(|(_, t)| t.len() * 4).sum();
    let mut out = Vec::with_capacity(16 + header.len() + payload + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&header);
    for (name, t) in &tensors {
        for &v in t.data() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(Error::NonFinite(format!("tensor '{name}' in checkpoint")));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses container bytes; tensor values come back as the stored f32.
pub fn decode<M: DeserializeOwned>(bytes: &[u8]) -> Result<(M, Vec<(String, Tensor)>)> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::Format("missing magic".into()));
    }
    let body = bytes.len() - 4;
    if crc32fast::hash(&bytes[..body]) != u32_at(bytes, body) {
        return Err(Error::Format("checksum mismatch".into()));
    }
    let version = u32_at(bytes, 8);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let header_len = u32_at(bytes, 12) as usize;
    let header_end = 16 + header_len;
    if header_end > body {
        return Err(Error::Format("header overruns file".into()));
    }
    let header: Header<M> = serde_json::from_slice(&bytes[16..header_end])?;
    let mut at = header_end;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        if at + n * 4 > body {
            return Err(Error::Format(format!("payload short for '{}'", entry.name)));
        }
        let data = bytes[at..at + n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        at += n * 4;
        tensors.push((entry.name, Tensor::new(entry.shape, data)?));
    }
    if at != body {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok((header.meta, tensors))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Header metadata of a denoiser checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: DenoiserConfig,
    pub schedule: ScheduleSpec,
    pub epoch: u64,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub denoiser: Denoiser,
}

impl Checkpoint {
    pub fn new(denoiser: Denoiser, schedule: ScheduleSpec, epoch: u64) -> Self {
        let meta = CheckpointMeta {
            arch: denoiser.config.clone(),
            schedule,
            epoch,
            role: denoiser.role(),
        };
        Self { meta, denoiser }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode(&self.meta, self.denoiser.params.iter())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, tensors): (CheckpointMeta, _) = decode(bytes)?;
        let mut params = ParamSet::new(Role::Trainable);
        for (name, t) in tensors {
            params.insert(name, t)?;
        }
        let denoiser = Denoiser::from_parts(meta.arch.clone(), params.with_role(meta.role))?;
        Ok(Self { meta, denoiser })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flipped_byte_fails_checksum() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut bytes = encode(&"m", [("w", &t)]).unwrap();
        let (m, back): (String, _) = decode(&bytes).unwrap();
        assert_eq!(m, "m");
        assert_eq!(back[0].1, t);
        let n = bytes.len();
        bytes[n - 6] ^= 1;
        assert!(matches!(decode::<String>(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let t = Tensor::zeros(&[3]);
        let bytes = encode(&0u8, [("z", &t)]).unwrap();
        assert!(decode::<u8>(&bytes[..10]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode::<u8>(&wrong).is_err());
    }

    #[test]
    fn non_finite_refused() {
        let t = Tensor::new(vec![1], vec![1e300]).unwrap();
        assert!(matches!(encode(&0u8, [("big", &t)]), Err(Error::NonFinite(_))));
    }
}
