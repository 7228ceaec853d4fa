//! On-disk matrix container.
//!
//! ```text
//! offset  size  content
//! 0       8     magic b"CONNFPM1"
//! 8       8     header length H, u64 little-endian
//! 16      H     header, UTF-8 JSON (see `Header`)
//! 16+H    8·N   payload, N = rows·cols f64 values, row-major, little-endian
//! ```
//!
//! The header is always written compactly with fields in declaration order, so
//! a container read back and written again reproduces the original bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"CONNFPM1";
const PREFIX: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub shape: [usize; 2],
    /// Always `"f64"`.
    pub dtype: String,
    /// Always `"little"`.
    pub byte_order: String,
    /// What the matrix is: `timeseries`, `connectome`, `similarity`, ...
    pub role: String,
    pub subject: Option<String>,
    pub session: Option<String>,
    pub seed: u64,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl Header {
    pub fn new(shape: (usize, usize), role: &str, seed: u64) -> Self {
        Self {
            shape: [shape.0, shape.1],
            dtype: "f64".into(),
            byte_order: "little".into(),
            role: role.into(),
            subject: None,
            session: None,
            seed,
            meta: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixContainer {
    pub header: Header,
    pub data: Array2<f64>,
}

impl MatrixContainer {
    /// The header shape is taken from `data`.
    pub fn new(mut header: Header, data: Array2<f64>) -> Self {
        header.shape = [data.nrows(), data.ncols()];
        Self { header, data }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(PREFIX + header.len() + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.data.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let header = parse_header(bytes)?;
        let start = PREFIX + header_len(bytes)?;
        let [rows, cols] = header.shape;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| bad(format!("shape {rows}x{cols} overflows")))?;
        let payload = &bytes[start..];
        if payload.len() != n * 8 {
            return Err(bad(format!(
                "payload holds {} bytes, shape {rows}x{cols} needs {}",
                payload.len(),
                n * 8
            )));
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let data = Array2::from_shape_vec((rows, cols), values).expect("length checked");
        Ok(Self { header, data })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }
}

fn bad(msg: String) -> CliError {
    CliError::Runtime(format!("malformed container: {msg}"))
}

fn header_len(bytes: &[u8]) -> CliResult<usize> {
    if bytes.len() < PREFIX || &bytes[..8] != MAGIC {
        return Err(bad("missing magic".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if bytes.len() - PREFIX < len {
        return Err(bad(format!("header length {len} exceeds file size")));
    }
    Ok(len)
}

/// Parse only the header; the payload is not touched.
pub fn parse_header(bytes: &[u8]) -> CliResult<Header> {
    let len = header_len(bytes)?;
    let header: Header =
        serde_json::from_slice(&bytes[PREFIX..PREFIX + len]).map_err(|e| bad(format!("header: {e}")))?;
    if header.dtype != "f64" || header.byte_order != "little" {
        return Err(bad(format!(
            "unsupported dtype {:?} / byte order {:?}",
            header.dtype, header.byte_order
        )));
    }
    Ok(header)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MatrixContainer {
        let mut h = Header::new((0, 0), "connectome", 42);
        h.subject = Some("sub-001".into());
        h.meta.insert("note".into(), "x".into());
        let data = Array2::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f64 - 0.5);
        MatrixContainer::new(h, data)
    }

    #[test]
    fn layout_is_as_documented() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        let h = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 16 + h + 6 * 8);
        let first = f64::from_le_bytes(bytes[16 + h..24 + h].try_into().unwrap());
        assert_eq!(first, -0.5);
        assert_eq!(c.header.shape, [2, 3]);
    }

    #[test]
    fn round_trip_preserves_bits() {
        let mut c = sample();
        c.data[[0, 1]] = f64::NAN;
        c.data[[1, 2]] = -0.0;
        let bytes = c.to_bytes();
        let back = MatrixContainer::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.header, c.header);
    }

    #[test]
    fn rejects_malformed_input() {
        let bytes = sample().to_bytes();
        assert!(MatrixContainer::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(MatrixContainer::from_bytes(b"NOTMAGIC").is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(MatrixContainer::from_bytes(&wrong).is_err());
        let mut long = bytes.clone();
        long[8..16].copy_from_slice(&(1u64 << 40).to_le_bytes());
        assert!(MatrixContainer::from_bytes(&long).is_err());
    }

    #[test]
    fn header_parses_without_payload() {
        let bytes = sample().to_bytes();
        let h = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header = parse_header(&bytes[..16 + h]).unwrap();
        assert_eq!(header.role, "connectome");
    }
}
