//! The LWT weight container.
//!
//! Byte layout, little-endian throughout:
//!
//! ```text
//! magic "LWTF"           4 bytes
//! format version (= 1)   u32
//! tensor count           u32
//! per tensor:
//!   name length          u16
//!   name                 UTF-8 bytes
//!   dtype                u8   (0 = f32, the only value in version 1)
//!   ndim                 u8
//!   extents              ndim × u32
//!   payload              product(extents) × f32
//! ```

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::arch::ModelGraph;
use crate::tensor::{Tensor, MAX_RANK};
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"LWTF";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
pub const HEADER_LEN: usize = 12;

/// Ordered, uniquely named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightContainer {
    entries: Vec<(String, Tensor)>,
}

impl WeightContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            return Err(Error::Format(format!(
                "name of {} bytes exceeds the u16 length field",
                name.len()
            )));
        }
        if self.get(&name).is_some() {
            return Err(Error::Duplicate(name));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// All parameters of `model`, in layer order.
    pub fn from_model(model: &ModelGraph) -> Self {
        let entries = model
            .param_names()
            .filter_map(|n| model.param(n).map(|t| (n.to_string(), t.clone())))
            .collect();
        Self { entries }
    }

    /// Size of the encoded container in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN
            + self
                .entries
                .iter()
                .map(|(n, t)| 2 + n.len() + 2 + 4 * t.rank() + 4 * t.len())
                .sum::<usize>()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.push(t.rank() as u8);
            for &d in t.dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {magic:02x?}, expected \"LWTF\""
            )));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported LWT version {version}")));
        }
        let count = r.u32()?;
        let mut container = Self::new();
        for i in 0..count {
            let name_len = r.u16()? as usize;
            let name_at = r.pos;
            let name = core::str::from_utf8(r.take(name_len)?)
                .map_err(|_| {
                    Error::Format(format!("tensor {i}: name at offset {name_at} is not UTF-8"))
                })?
                .to_string();
            let dtype = r.u8()?;
            if dtype != DTYPE_F32 {
                return Err(Error::Format(format!(
                    "tensor `{name}`: unsupported dtype {dtype}"
                )));
            }
            let ndim = r.u8()? as usize;
            if ndim == 0 || ndim > MAX_RANK {
                return Err(Error::Format(format!(
                    "tensor `{name}`: rank {ndim} outside 1..={MAX_RANK}"
                )));
            }
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u32()? as usize);
            }
            let len = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Format(format!("tensor `{name}`: bad extents {dims:?}")))?;
            let payload = r.take(len.checked_mul(4).ok_or_else(|| {
                Error::Format(format!("tensor `{name}`: payload size overflows"))
            })?)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            container.push(name, Tensor::new(&dims, data)?)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing byte(s) after offset {}",
                bytes.len() - r.pos,
                r.pos
            )));
        }
        Ok(container)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: n - remaining,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Outcome of a successful bind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BindReport {
    pub bound: usize,
    /// Container entries the model does not use.
    pub unused: Vec<String>,
}

/// Binds every model parameter from `container`. Names must match exactly
/// and shapes must agree; nothing is reshaped or transposed.
pub fn bind_weights(
    mut model: ModelGraph,
    container: &WeightContainer,
) -> Result<(ModelGraph, BindReport)> {
    let mut missing = Vec::new();
    let mut mismatch = None;
    let mut params = BTreeMap::new();
    let mut wanted = BTreeSet::new();
    for layer in model.layers() {
        for (name, dims) in layer.param_shapes() {
            wanted.insert(name.to_string());
            match container.get(name) {
                None => missing.push(name.to_string()),
                Some(t) if t.dims() != dims.as_slice() => {
                    mismatch.get_or_insert_with(|| Error::ParamShape {
                        name: name.to_string(),
                        expected: dims.clone(),
                        found: t.dims().to_vec(),
                    });
                }
                Some(t) => {
                    params.insert(name.to_string(), t.clone());
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingParams(missing));
    }
    if let Some(err) = mismatch {
        return Err(err);
    }
    let unused = container
        .iter()
        .filter(|(n, _)| !wanted.contains(*n))
        .map(|(n, _)| n.to_string())
        .collect();
    let bound = params.len();
    model.set_bound(params);
    Ok((model, BindReport { bound, unused }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_mobilenet_v2, HEAD_BIAS, HEAD_WEIGHT};
    use alloc::vec;

    #[test]
    fn empty_container_is_header_only() {
        let bytes = WeightContainer::new().encode();
        assert_eq!(bytes.len(), 12);
        assert_eq!(&bytes[..4], b"LWTF");
        assert_eq!(
            WeightContainer::decode(&bytes).unwrap(),
            WeightContainer::new()
        );
    }

    #[test]
    fn single_tensor_layout() {
        let mut c = WeightContainer::new();
        c.push("w", Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        let bytes = c.encode();
        assert_eq!(bytes.len(), 41);
        assert_eq!(c.encoded_len(), 41);
        assert_eq!(&bytes[12..14], &[1, 0]);
        assert_eq!(bytes[14], b'w');
        assert_eq!(&bytes[15..17], &[0, 2]);
        assert_eq!(&bytes[25..29], &1.0f32.to_le_bytes());
        assert_eq!(WeightContainer::decode(&bytes).unwrap(), c);
    }

    #[test]
    fn decode_errors() {
        let mut c = WeightContainer::new();
        c.push("w", Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        let mut bytes = c.encode();

        let cut = &bytes[..30];
        assert_eq!(
            WeightContainer::decode(cut),
            Err(Error::Truncated {
                offset: 25,
                needed: 11
            })
        );

        bytes[0] = b'X';
        assert!(matches!(
            WeightContainer::decode(&bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut c = WeightContainer::new();
        let t = Tensor::zeros(&[1]).unwrap();
        c.push("a", t.clone()).unwrap();
        assert_eq!(c.push("a", t.clone()), Err(Error::Duplicate("a".into())));

        // Hand-built file with the same name twice.
        let mut one = WeightContainer::new();
        one.push("a", t).unwrap();
        let enc = one.encode();
        let mut bytes = enc.clone();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&enc[12..]);
        assert_eq!(
            WeightContainer::decode(&bytes),
            Err(Error::Duplicate("a".into()))
        );
    }

    #[test]
    fn bind_complete_missing_and_mismatched() {
        let model = build_mobilenet_v2(3, 1.0).unwrap();
        let full = WeightContainer::from_model(&model);
        let (bound, report) = bind_weights(model.clone(), &full).unwrap();
        assert!(bound.is_bound());
        assert_eq!(report.bound, model.params().len());
        assert!(report.unused.is_empty());

        let mut partial = WeightContainer::new();
        for (n, t) in full.iter().filter(|(n, _)| *n != HEAD_BIAS) {
            partial.push(n, t.clone()).unwrap();
        }
        assert_eq!(
            bind_weights(model.clone(), &partial).unwrap_err(),
            Error::MissingParams(vec![HEAD_BIAS.into()])
        );

        let imagenet = WeightContainer::from_model(&build_mobilenet_v2(1000, 1.0).unwrap());
        match bind_weights(model.clone(), &imagenet).unwrap_err() {
            Error::ParamShape {
                name,
                expected,
                found,
            } => {
                assert_eq!(name, HEAD_WEIGHT);
                assert_eq!(expected, vec![3, 1280]);
                assert_eq!(found, vec![1000, 1280]);
            }
            other => panic!("{other:?}"),
        }

        let mut extra = full.clone();
        extra
            .push("aux.weight", Tensor::zeros(&[2]).unwrap())
            .unwrap();
        let (_, report) = bind_weights(model, &extra).unwrap();
        assert_eq!(report.unused, vec!["aux.weight".to_string()]);
    }
}
