//! Binary field snapshots.
//!
//! Layout, all little-endian:
//!
//! | offset | size | content                     |
//! |--------|------|-----------------------------|
//! | 0      | 4    | magic `SMCF`                |
//! | 4      | 4    | format version (u32) = 1    |
//! | 8      | 4    | d (u32)                     |
//! | 12     | 4    | n per axis (u32)            |
//! | 16     | 8    | length (f64)                |
//! | 24     | 8    | t (f64)                     |
//! | 32     | 16·nᵈ | re, im pairs (f64), row-major |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};

pub const MAGIC: &[u8; 4] = b"SMCF";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

pub fn encode_snapshot(field: &Field, t: f64) -> Vec<u8> {
    let spec = field.spec();
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * spec.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.d() as u32).to_le_bytes());
    out.extend_from_slice(&(spec.n() as u32).to_le_bytes());
    out.extend_from_slice(&spec.length().to_le_bytes());
    out.extend_from_slice(&t.to_le_bytes());
    for v in field.values() {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    out
}

pub fn write_snapshot(path: &Path, field: &Field, t: f64) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_snapshot(field, t))
        .map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn f64_at(bytes: &[u8], offset: usize) -> f64 {
    f64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap())
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

/// Parses a snapshot. Payload values are kept as stored, including
/// non-finite ones, so that validation can report them by position.
pub fn decode_snapshot(path: &Path, bytes: &[u8]) -> Result<(f64, Field)> {
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("missing SMCF magic".into()));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let d = u32_at(bytes, 8) as usize;
    let n = u32_at(bytes, 12) as usize;
    let length = f64_at(bytes, 16);
    let t = f64_at(bytes, 24);
    let spec = GridSpec::new(d, n, length).map_err(|e| bad(e.to_string()))?;
    let expected = HEADER_LEN + 16 * spec.len();
    if bytes.len() != expected {
        return Err(bad(format!(
            "expected {expected} bytes for d = {d}, n = {n}, found {}",
            bytes.len()
        )));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(16)
        .map(|c| Complex64::new(f64_at(c, 0), f64_at(c, 8)))
        .collect();
    Ok((t, Field::from_raw(spec, values)))
}

pub fn read_snapshot(path: &Path) -> Result<(f64, Field)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode_snapshot(path, &bytes)
}

/// `{prefix}_{t}.bin` with `t` zero-padded so names sort by time.
pub fn snapshot_name(prefix: &str, t: f64) -> String {
    format!("{prefix}_{t:012.6}.bin")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use proptest::prelude::*;

    fn sample(d: usize, n: usize) -> Field {
        let spec = make_grid(d, n, 7.5).unwrap();
        Field::from_fn(spec, |x| {
            Complex64::new(x[0].sin() / 3.0, x.iter().sum::<f64>().cos() * 1e-7)
        })
        .unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode_snapshot(&sample(2, 8), 1.25);
        assert_eq!(&bytes[..4], b"SMCF");
        assert_eq!(u32_at(&bytes, 4), 1);
        assert_eq!(u32_at(&bytes, 8), 2);
        assert_eq!(u32_at(&bytes, 12), 8);
        assert_eq!(f64_at(&bytes, 16), 7.5);
        assert_eq!(f64_at(&bytes, 24), 1.25);
        assert_eq!(bytes.len(), 32 + 2 * 64 * 8);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(snapshot_name("snap", 2.5));
        let f = sample(3, 8);
        write_snapshot(&path, &f, 2.5).unwrap();
        let (t, g) = read_snapshot(&path).unwrap();
        assert_eq!(t, 2.5);
        assert_eq!(g, f);
    }

    #[test]
    fn rejects_damage() {
        let p = Path::new("x.bin");
        let bytes = encode_snapshot(&sample(2, 8), 0.0);
        assert!(decode_snapshot(p, &bytes[..bytes.len() - 1]).is_err());
        assert!(decode_snapshot(p, &bytes[..10]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_snapshot(p, &wrong).is_err());
        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(decode_snapshot(p, &version), Err(Error::Format { .. })));
    }

    #[test]
    fn keeps_non_finite_payload() {
        let f = sample(2, 8);
        let mut values = f.values().to_vec();
        values[5].re = f64::NAN;
        let bad = Field::from_raw(*f.spec(), values);
        let (_, g) = decode_snapshot(Path::new("x"), &encode_snapshot(&bad, 0.0)).unwrap();
        assert!(g.values()[5].re.is_nan());
        assert!(!g.is_finite());
    }

    #[test]
    fn names_sort_by_time() {
        assert_eq!(snapshot_name("snap", 2.5), "snap_00002.500000.bin");
        assert!(snapshot_name("s", 9.0) < snapshot_name("s", 10.0));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(bits in proptest::collection::vec(any::<u64>(), 128), t in any::<f64>()) {
            let spec = make_grid(2, 8, 1.0).unwrap();
            let values = bits.chunks(2).map(|c| Complex64::new(f64::from_bits(c[0]), f64::from_bits(c[1]))).collect();
            let f = Field::from_raw(spec, values);
            let (t2, g) = decode_snapshot(Path::new("x"), &encode_snapshot(&f, t)).unwrap();
            prop_assert_eq!(t2.to_bits(), t.to_bits());
            for (a, b) in f.values().iter().zip(g.values()) {
                prop_assert_eq!(a.re.to_bits(), b.re.to_bits());
                prop_assert_eq!(a.im.to_bits(), b.im.to_bits());
            }
        }
    }
}
