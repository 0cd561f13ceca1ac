//! Manifest bundles: a directory holding `manifest.json` plus one raw
//! little-endian row-major binary per array.
//!
//! ```text
//! {
//!   "format": "dzsl-bundle",
//!   "version": 1,
//!   "arrays": [
//!     {"name": "features", "shape": [480, 9, 64], "dtype": "f32le",
//!      "file": "features.bin", "byte_length": 1105920}
//!   ],
//!   "meta": {"kind": "dataset"}
//! }
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numcore::Tensor;
use crate::scalar::Scalar;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_TAG: &str = "dzsl-bundle";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    #[serde(rename = "f32le")]
    F32,
    #[serde(rename = "f64le")]
    F64,
    #[serde(rename = "u32le")]
    U32,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::U32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub file: String,
    pub byte_length: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub arrays: Vec<ArrayEntry>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U32(Vec<u32>),
}

impl ArrayData {
    fn dtype(&self) -> DType {
        match self {
            ArrayData::F32(_) => DType::F32,
            ArrayData::F64(_) => DType::F64,
            ArrayData::U32(_) => DType::U32,
        }
    }

    fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::U32(v) => v.len(),
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        match self {
            ArrayData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            ArrayData::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            ArrayData::U32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    fn from_bytes(dtype: DType, bytes: &[u8]) -> Self {
        match dtype {
            DType::F32 => ArrayData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => ArrayData::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U32 => ArrayData::U32(
                bytes
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        }
    }

    fn all_finite(&self) -> bool {
        match self {
            ArrayData::F32(v) => v.iter().all(|x| x.is_finite()),
            ArrayData::F64(v) => v.iter().all(|x| x.is_finite()),
            ArrayData::U32(_) => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

/// In-memory set of named arrays plus string metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bundle {
    arrays: BTreeMap<String, Array>,
    order: Vec<String>,
    pub meta: BTreeMap<String, String>,
}

impl Bundle {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, shape: Vec<usize>, data: ArrayData) -> Result<()> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err!(
                "array {name}: shape {shape:?} needs {n} values, got {}",
                data.len()
            ));
        }
        if self.arrays.insert(name.to_string(), Array { shape, data }).is_none() {
            self.order.push(name.to_string());
        }
        Ok(())
    }

    /// Stores a tensor narrowed to 32-bit floats.
    pub fn put_f32<T: Scalar>(&mut self, name: &str, t: &Tensor<T>) -> Result<()> {
        let data = t.data().iter().map(|x| x.to_f64_lossless() as f32).collect();
        self.insert(name, t.shape().to_vec(), ArrayData::F32(data))
    }

    /// Stores a tensor at full 64-bit precision.
    pub fn put_f64<T: Scalar>(&mut self, name: &str, t: &Tensor<T>) -> Result<()> {
        let data = t.data().iter().map(|x| x.to_f64_lossless()).collect();
        self.insert(name, t.shape().to_vec(), ArrayData::F64(data))
    }

    pub fn put_u32(&mut self, name: &str, shape: Vec<usize>, values: Vec<u32>) -> Result<()> {
        self.insert(name, shape, ArrayData::U32(values))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    pub fn array(&self, name: &str) -> Result<&Array> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing array `{name}`")))
    }

    /// Reads a float array as a tensor, widening stored `f32` values.
    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        let a = self.array(name)?;
        let data = match &a.data {
            ArrayData::F32(v) => v.iter().map(|&x| T::lit(x as f64)).collect(),
            ArrayData::F64(v) => v.iter().map(|&x| T::lit(x)).collect(),
            ArrayData::U32(_) => {
                return Err(Error::Format(format!("array `{name}` is not floating point")))
            }
        };
        Tensor::new(a.shape.clone(), data)
    }

    pub fn u32s(&self, name: &str) -> Result<(&[usize], &[u32])> {
        let a = self.array(name)?;
        match &a.data {
            ArrayData::U32(v) => Ok((&a.shape, v)),
            _ => Err(Error::Format(format!("array `{name}` is not u32"))),
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.order.len());
        for name in &self.order {
            let a = &self.arrays[name];
            let bytes = a.data.to_bytes();
            let file = format!("{name}.bin");
            let path = dir.join(&file);
            fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            entries.push(ArrayEntry {
                name: name.clone(),
                shape: a.shape.clone(),
                dtype: a.data.dtype(),
                file,
                byte_length: bytes.len(),
            });
        }
        let manifest = Manifest {
            format: FORMAT_TAG.to_string(),
            version: FORMAT_VERSION,
            arrays: entries,
            meta: self.meta.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Format(e.to_string()))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        if manifest.format != FORMAT_TAG {
            return Err(Error::Format(format!(
                "magic mismatch: expected `{FORMAT_TAG}`, found `{}`",
                manifest.format
            )));
        }
        if manifest.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "version mismatch: expected {FORMAT_VERSION}, found {}",
                manifest.version
            )));
        }
        let mut bundle = Bundle {
            meta: manifest.meta.clone(),
            ..Bundle::default()
        };
        for entry in &manifest.arrays {
            let path = dir.join(&entry.file);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if bytes.len() != entry.byte_length {
                return Err(Error::Format(format!(
                    "payload length of `{}`: manifest says {} bytes, file has {}",
                    entry.name,
                    entry.byte_length,
                    bytes.len()
                )));
            }
            if bytes.len() % entry.dtype.size() != 0 {
                return Err(Error::Format(format!(
                    "payload length of `{}` is not a multiple of the element size",
                    entry.name
                )));
            }
            let data = ArrayData::from_bytes(entry.dtype, &bytes);
            let n: usize = entry.shape.iter().product();
            if n != data.len() || entry.shape.contains(&0) {
                return Err(shape_err!(
                    "array `{}`: manifest shape {:?} disagrees with {} stored values",
                    entry.name,
                    entry.shape,
                    data.len()
                ));
            }
            if !data.all_finite() {
                return Err(Error::NonFinite(format!("payload of `{}`", entry.name)));
            }
            bundle.insert(&entry.name, entry.shape.clone(), data)?;
        }
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Bundle {
        let mut b = Bundle::new();
        let t = Tensor::<f64>::new([3, 4], (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        b.put_f32("x", &t).unwrap();
        b.put_u32("labels", vec![3], vec![1, 2, 3]).unwrap();
        b
    }

    #[test]
    fn round_trip_at_storage_precision() {
        let dir = tempfile::tempdir().unwrap();
        let b = sample();
        b.save(dir.path()).unwrap();
        let back = Bundle::load(dir.path()).unwrap();
        assert_eq!(back, b);
        let t: Tensor<f64> = back.tensor("x").unwrap();
        assert!((t.at(&[2, 3]) - 1.1).abs() < 1e-6);
    }

    #[test]
    fn truncated_payload_is_a_length_error() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        let p = dir.path().join("x.bin");
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        let err = Bundle::load(dir.path()).unwrap_err();
        assert!(matches!(&err, Error::Format(m) if m.contains("payload length")), "{err}");
    }

    #[test]
    fn shape_disagreement_is_a_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        // Rewrite the payload to hold 11 values and update byte_length to match.
        let p = dir.path().join("x.bin");
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..44]).unwrap();
        let mp = dir.path().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mp).unwrap().replace("\"byte_length\": 48", "\"byte_length\": 44");
        std::fs::write(&mp, text).unwrap();
        assert!(matches!(Bundle::load(dir.path()), Err(Error::Shape(_))));
    }

    #[test]
    fn magic_and_version_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        let mp = dir.path().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mp).unwrap();
        std::fs::write(&mp, text.replace(FORMAT_TAG, "other")).unwrap();
        assert!(matches!(Bundle::load(dir.path()), Err(Error::Format(m)) if m.contains("magic")));
        std::fs::write(&mp, text.replace("\"version\": 1", "\"version\": 9")).unwrap();
        assert!(matches!(Bundle::load(dir.path()), Err(Error::Format(m)) if m.contains("version")));
    }

    #[test]
    fn missing_files_and_non_finite_payloads() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Bundle::load(dir.path()), Err(Error::Io { .. })));
        let mut b = Bundle::new();
        b.put_f32("x", &Tensor::<f64>::vector(vec![1.0, f64::NAN]).unwrap()).unwrap();
        b.save(dir.path()).unwrap();
        assert!(matches!(Bundle::load(dir.path()), Err(Error::NonFinite(_))));
    }
}
