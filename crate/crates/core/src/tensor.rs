//! Dense row-major `f64` tensors and their on-disk format.
//!
//! File layout (all integers little-endian):
//!
//! | bytes        | content                         |
//! |--------------|---------------------------------|
//! | 0..4         | magic `TSPK`                    |
//! | 4..8         | format version (`u32`)          |
//! | 8..12        | rank (`u32`)                    |
//! | 12..16       | reserved, zero (`u32`)          |
//! | 16..16+8r    | dimension sizes (`u64` each)    |
//! | rest         | payload, `f64` in row-major     |

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"TSPK";
pub const TENSOR_FORMAT_VERSION: u32 = 1;

/// A dense N-dimensional array. A rank-0 tensor (empty shape) holds one value.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Invalid(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a `[rows.len(), cols]` tensor; every row must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Invalid("ragged rows".into()));
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a rank-0 or single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::Invalid(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )))
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("reshape", &[&self.shape, shape]));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Slice `i` along the leading axis.
    pub fn index0(&self, i: usize) -> Result<Tensor> {
        let Some((&n, rest)) = self.shape.split_first() else {
            return Err(Error::Invalid("index0 on rank-0 tensor".into()));
        };
        if i >= n {
            return Err(Error::Invalid(format!("index {i} out of range for axis of {n}")));
        }
        let inner: usize = rest.iter().product();
        Ok(Tensor {
            shape: rest.to_vec(),
            data: self.data[i * inner..(i + 1) * inner].to_vec(),
        })
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let Some(first) = items.first() else {
            return Err(Error::Invalid("stack of zero tensors".into()));
        };
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::shape("stack", &[&first.shape, &t.shape]));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&TENSOR_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        w.write_all(&0u32.to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.shape.len() + 8 * self.data.len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Reads one tensor. Errors are plain strings so callers can attach a
    /// file name.
    pub fn read_from<R: Read>(r: &mut R) -> std::result::Result<Tensor, String> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)
            .map_err(|e| format!("truncated tensor header: {e}"))?;
        if &header[0..4] != TENSOR_MAGIC {
            return Err("bad tensor magic".into());
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != TENSOR_FORMAT_VERSION {
            return Err(format!(
                "unsupported tensor format version {version} (expected {TENSOR_FORMAT_VERSION})"
            ));
        }
        let rank = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        if rank > 16 {
            return Err(format!("implausible tensor rank {rank}"));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)
                .map_err(|e| format!("truncated tensor shape: {e}"))?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or("tensor size overflows")?;
        let bytes = n.checked_mul(8).ok_or("tensor size overflows")?;
        let mut payload = Vec::new();
        r.take(bytes as u64)
            .read_to_end(&mut payload)
            .map_err(|e| format!("reading tensor payload: {e}"))?;
        if payload.len() != bytes {
            return Err(format!(
                "truncated tensor payload: expected {bytes} bytes, found {}",
                payload.len()
            ));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor { shape, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Tensor> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cursor = bytes.as_slice();
        let t = Tensor::read_from(&mut cursor).map_err(|m| Error::format(path, m))?;
        if !cursor.is_empty() {
            return Err(Error::format(path, "trailing bytes after tensor payload"));
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 1], vec![1.5, -2.0]).unwrap();
        let b = t.to_bytes();
        assert_eq!(&b[0..4], b"TSPK");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 0);
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[24..32].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(b[32..40].try_into().unwrap()), 1.5);
        assert_eq!(b.len(), 48);
    }

    #[test]
    fn shape_product_is_checked() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::scalar(3.0).len(), 1);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let t = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let b = t.to_bytes();
        let mut short = &b[..b.len() - 3];
        let err = Tensor::read_from(&mut short).unwrap_err();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn stack_and_index_are_inverse() {
        let a = Tensor::from_vec(vec![1.0, 2.0]);
        let b = Tensor::from_vec(vec![3.0, 4.0]);
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.index0(1).unwrap(), b);
    }

    proptest::proptest! {
        #[test]
        fn bytes_round_trip(dims in proptest::collection::vec(1usize..4, 0..4), seed in 0u64..1000) {
            let n: usize = dims.iter().product();
            let data: Vec<f64> = (0..n).map(|i| (i as f64 + seed as f64) * 0.37 - 1.0).collect();
            let t = Tensor::new(dims, data).unwrap();
            let bytes = t.to_bytes();
            let back = Tensor::read_from(&mut bytes.as_slice()).unwrap();
            proptest::prop_assert_eq!(back, t);
        }
    }
}
