//! Binary container: magic, version, `key=value` header, named tensors,
//! trailing CRC-32 of everything before it. Integers and floats are
//! little-endian.

use std::fs;
use std::path::Path;

use super::network::CascnModel;
use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::kv;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CSCN";
pub const FORMAT_VERSION: u32 = 1;
/// Header keys and tensor names with this prefix are not model state.
pub const EXTRA_PREFIX: &str = "state.";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub config: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn len_u32(n: usize) -> u32 {
    u32::try_from(n).expect("length exceeds u32")
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("unexpected end of data at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        let text = kv::render(&self.config);
        put_u32(&mut out, len_u32(text.len()));
        out.extend_from_slice(text.as_bytes());
        put_u32(&mut out, len_u32(self.tensors.len()));
        for (name, t) in &self.tensors {
            put_u32(&mut out, len_u32(name.len()));
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, len_u32(t.ndim()));
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        put_u32(&mut out, crc);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint: bad magic bytes".into()));
        }
        if bytes.len() < 12 {
            return Err(Error::Checkpoint("checksum mismatch: file truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(Error::Checkpoint(format!(
                "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
            )));
        }
        let mut c = Cursor { bytes: body, pos: 4 };
        let version = c.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let config = kv::parse_lines(&c.string()?)?;
        let count = c.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = c.string()?;
            let ndim = c.u32()? as usize;
            let shape = (0..ndim).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = numel.ok_or_else(|| Error::Checkpoint(format!("tensor {name}: shape overflows")))?;
            let raw = c.take(numel.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
            let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if c.pos != body.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - c.pos)));
        }
        Ok(Self { config, tensors })
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

impl CascnModel {
    pub fn to_container(&self) -> Container {
        Container {
            config: self.config().entries(),
            tensors: self
                .store()
                .iter()
                .map(|(_, p)| (p.name.clone(), (*p.value).clone()))
                .collect(),
        }
    }

    /// Rebuilds the model from its header, then overwrites every parameter.
    pub fn from_container(c: &Container) -> Result<Self> {
        let model_keys: Vec<_> = c.config.iter().filter(|(k, _)| !k.starts_with(EXTRA_PREFIX)).cloned().collect();
        let config = ModelConfig::from_entries(&model_keys, ModelConfig::paper())?;
        let mut model = CascnModel::build(config)?;
        let ids: Vec<_> = model.store().iter().map(|(id, p)| (id, p.name.clone())).collect();
        for (id, name) in ids {
            let t = c
                .tensor(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            let slot = model.store_mut().get_mut(id);
            if slot.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: stored shape {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        let known = model.store().len();
        let model_tensors = c.tensors.iter().filter(|(n, _)| !n.starts_with(EXTRA_PREFIX)).count();
        if model_tensors != known {
            return Err(Error::Checkpoint(format!(
                "{model_tensors} model tensors stored, model has {known}"
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }

    /// Loads and checks that the stored input size is the expected one.
    pub fn load_expecting(path: &Path, input_size: (usize, usize)) -> Result<Self> {
        let model = Self::load(path)?;
        let (h, w) = model.config().input_size;
        if (h, w) != input_size {
            return Err(Error::config(
                "input_size",
                format!("checkpoint declares {h}x{w}, expected {}x{}", input_size.0, input_size.1),
            ));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        Container {
            config: vec![("a".into(), "1".into()), ("b".into(), "x,y".into())],
            tensors: vec![
                ("w".into(), Tensor::new([2, 1], vec![1.5, -0.0]).unwrap()),
                ("s".into(), Tensor::scalar(f64::MIN_POSITIVE)),
            ],
        }
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..4], b"CSCN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back.config, c.config);
        assert_eq!(back.tensors[0].1.data()[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(back, c);
    }

    #[test]
    fn corruption_detected() {
        let bytes = sample().to_bytes();
        for cut in [bytes.len() - 1, bytes.len() / 2, 9] {
            let err = Container::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(err.to_string().contains("checksum"), "{err}");
        }
        let mut flipped = bytes.clone();
        flipped[20] ^= 1;
        assert!(Container::from_bytes(&flipped).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(Container::from_bytes(&magic).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn version_checked() {
        let mut bytes = sample().to_bytes();
        bytes.truncate(bytes.len() - 4);
        bytes[4] = 9;
        let crc = crc32fast::hash(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        assert!(Container::from_bytes(&bytes).unwrap_err().to_string().contains("version 9"));
    }
}
