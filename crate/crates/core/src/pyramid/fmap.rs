//! Dense feature maps and their `FMAP` binary container.
//!
//! Layout: ASCII magic `FMAP`, then `rows`, `cols`, `channels` as
//! little-endian `u32`, then `rows * cols * channels` little-endian `f32`
//! values in row-major `(row, col, channel)` order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::DetRng;

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(rows: usize, cols: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if rows * cols * channels != data.len() {
            return Err(Error::FeatureMapFormat(format!(
                "{rows}x{cols}x{channels} needs {} values, got {}",
                rows * cols * channels,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::FeatureMapFormat(format!("non-finite value at index {pos}")));
        }
        Ok(Self { rows, cols, channels, data })
    }

    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        Self { rows, cols, channels, data: vec![0.0; rows * cols * channels] }
    }

    /// Values uniform in `[-1, 1)`.
    pub fn random(rng: &mut DetRng, rows: usize, cols: usize, channels: usize) -> Self {
        let data = (0..rows * cols * channels).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
        Self { rows, cols, channels, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.cols + col) * self.channels + channel
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[self.index(row, col, channel)]
    }

    /// Channel vector at one spatial position.
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = self.index(row, col, 0);
        &self.data[start..start + self.channels]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(FMAP_MAGIC);
        for dim in [self.rows, self.cols, self.channels] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != FMAP_MAGIC {
            return Err(Error::FeatureMapFormat("missing FMAP header".into()));
        }
        let dim = |k: usize| {
            let start = 4 + 4 * k;
            u32::from_le_bytes(bytes[start..start + 4].try_into().expect("4-byte slice")) as usize
        };
        let (rows, cols, channels) = (dim(0), dim(1), dim(2));
        let body = &bytes[HEADER_LEN..];
        let expected = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(channels))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::FeatureMapFormat("dimensions overflow".into()))?;
        if body.len() != expected {
            return Err(Error::FeatureMapFormat(format!(
                "{rows}x{cols}x{channels} needs {expected} payload bytes, found {}",
                body.len()
            )));
        }
        let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk"))).collect();
        Self::new(rows, cols, channels, data)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let m = FeatureMap::new(1, 2, 1, vec![1.0, -2.5]).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"FMAP");
        assert_eq!(&bytes[4..16], &[1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(FeatureMap::from_bytes(&bytes).unwrap(), m);
    }

    #[test]
    fn rejects_bad_payloads() {
        assert!(FeatureMap::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(FeatureMap::new(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(FeatureMap::from_bytes(b"FMAX").is_err());
        let mut bytes = FeatureMap::zeros(2, 2, 2).to_bytes();
        bytes.pop();
        assert!(FeatureMap::from_bytes(&bytes).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fmap");
        let m = FeatureMap::random(&mut DetRng::new(5), 3, 4, 2);
        m.write(&path).unwrap();
        assert_eq!(FeatureMap::read(&path).unwrap(), m);
        assert!(matches!(FeatureMap::read(dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn row_major_indexing() {
        let m = FeatureMap::new(2, 2, 2, (0..8).map(|v| v as f32).collect()).unwrap();
        assert_eq!(m.get(1, 0, 1), 5.0);
        assert_eq!(m.pixel(0, 1), &[2.0, 3.0]);
    }
}
