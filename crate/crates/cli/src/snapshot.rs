//! Binary field snapshots.
//!
//! Layout: a 64-byte header, a JSON metadata block, the field arrays as little-endian
//! `f64` in the order listed in the metadata, and a SHA-256 of everything before it.
//!
//! | bytes  | content                                   |
//! |--------|-------------------------------------------|
//! | 0..8   | magic `PFSISNAP`                          |
//! | 8..12  | format version, `u32` LE                  |
//! | 12..16 | byte-order mark `0x01020304`, `u32` LE    |
//! | 16..24 | metadata length in bytes, `u64` LE        |
//! | 24..32 | number of `f64` values, `u64` LE          |
//! | 32..64 | zero                                      |

use std::path::Path;

use pfsi_core::solver::{FluidState, Marker};
use pfsi_core::{ScalarField, TorusGrid, VectorField};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error::CliError;

pub const MAGIC: &[u8; 8] = b"PFSISNAP";
pub const VERSION: u32 = 1;
const BYTE_ORDER: u32 = 0x0102_0304;
const HEADER: usize = 64;
const TRAILER: usize = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SnapshotError {
    #[error("not a snapshot (bad magic)")]
    BadMagic,
    #[error("snapshot format version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("file is truncated ({len} bytes)")]
    Truncated { len: usize },
    #[error("checksum mismatch (file corrupted or truncated)")]
    Checksum,
    #[error("unexpected byte-order mark {0:#010x}")]
    ByteOrder(u32),
    #[error("malformed metadata: {0}")]
    Metadata(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerEntry {
    pub id: u32,
    pub members: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub dim: usize,
    pub half_period: f64,
    pub cells: usize,
    pub t: f64,
    pub step: u64,
    pub fields: Vec<FieldEntry>,
    pub markers: Vec<MarkerEntry>,
    /// Echo of the run configuration, when written by a run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
}

fn fields_of(state: &FluidState) -> Vec<(String, &[f64])> {
    let mut out: Vec<(String, &[f64])> = vec![("rho".into(), &state.rho.data)];
    for (a, c) in state.u.comps.iter().enumerate() {
        out.push((format!("u{a}"), c));
    }
    out.push(("mu".into(), &state.mu.data));
    out.push(("pressure".into(), &state.pressure.data));
    for m in &state.markers {
        out.push((format!("marker{}", m.id), &m.field.data));
    }
    out
}

pub fn encode_snapshot(state: &FluidState, config: Option<&str>) -> Vec<u8> {
    let grid = state.grid();
    let fields = fields_of(state);
    let meta = SnapshotMeta {
        dim: grid.dim(),
        half_period: grid.half_period(),
        cells: grid.n(),
        t: state.t,
        step: state.step,
        fields: fields.iter().map(|(name, d)| FieldEntry { name: name.clone(), len: d.len() }).collect(),
        markers: state.markers.iter().map(|m| MarkerEntry { id: m.id, members: m.members.clone() }).collect(),
        config: config.map(str::to_owned),
    };
    let meta_bytes = serde_json::to_vec(&meta).expect("metadata serializes");
    let count: usize = fields.iter().map(|(_, d)| d.len()).sum();
    let mut buf = Vec::with_capacity(HEADER + meta_bytes.len() + 8 * count + TRAILER);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&BYTE_ORDER.to_le_bytes());
    buf.extend_from_slice(&(meta_bytes.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(count as u64).to_le_bytes());
    buf.resize(HEADER, 0);
    buf.extend_from_slice(&meta_bytes);
    for (_, d) in &fields {
        for v in d.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

/// Validate header and checksum and parse the metadata.
pub fn decode_meta(bytes: &[u8]) -> Result<(SnapshotMeta, &[u8]), SnapshotError> {
    if bytes.len() < 16 {
        return Err(SnapshotError::Truncated { len: bytes.len() });
    }
    if &bytes[..8] != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    let version = u32_at(bytes, 8);
    if version != VERSION {
        return Err(SnapshotError::VersionMismatch { found: version, expected: VERSION });
    }
    if bytes.len() < HEADER + TRAILER {
        return Err(SnapshotError::Truncated { len: bytes.len() });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - TRAILER);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(SnapshotError::Checksum);
    }
    let bom = u32_at(bytes, 12);
    if bom != BYTE_ORDER {
        return Err(SnapshotError::ByteOrder(bom));
    }
    let meta_len = u64_at(bytes, 16) as usize;
    let count = u64_at(bytes, 24) as usize;
    if body.len() != HEADER + meta_len + 8 * count {
        return Err(SnapshotError::Truncated { len: bytes.len() });
    }
    let meta: SnapshotMeta = serde_json::from_slice(&body[HEADER..HEADER + meta_len])
        .map_err(|e| SnapshotError::Metadata(e.to_string()))?;
    if meta.fields.iter().map(|f| f.len).sum::<usize>() != count {
        return Err(SnapshotError::Metadata("field lengths do not add up to the payload".into()));
    }
    Ok((meta, &body[HEADER + meta_len..]))
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<(FluidState, SnapshotMeta), SnapshotError> {
    let (meta, payload) = decode_meta(bytes)?;
    let bad = |m: String| SnapshotError::Metadata(m);
    let grid = TorusGrid::new(meta.dim, meta.half_period, meta.cells).map_err(|e| bad(e.to_string()))?;
    let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |name: &str, entry: &FieldEntry| -> Result<Vec<f64>, SnapshotError> {
        if entry.name != name || entry.len != grid.len() {
            return Err(bad(format!("expected field `{name}` of length {}, found `{}` ({})", grid.len(), entry.name, entry.len)));
        }
        Ok(values.by_ref().take(entry.len).collect())
    };
    let d = meta.dim;
    let expected = 3 + d + meta.markers.len();
    if meta.fields.len() != expected {
        return Err(bad(format!("{} fields listed, expected {expected}", meta.fields.len())));
    }
    let mut it = meta.fields.iter();
    let rho = take("rho", it.next().unwrap())?;
    let mut comps = Vec::with_capacity(d);
    for a in 0..d {
        comps.push(take(&format!("u{a}"), it.next().unwrap())?);
    }
    let mu = take("mu", it.next().unwrap())?;
    let pressure = take("pressure", it.next().unwrap())?;
    let mut markers = Vec::new();
    for m in &meta.markers {
        let field = take(&format!("marker{}", m.id), it.next().unwrap())?;
        markers.push(Marker { id: m.id, members: m.members.clone(), field: ScalarField::from_vec(&grid, field) });
    }
    let state = FluidState {
        t: meta.t,
        step: meta.step,
        rho: ScalarField::from_vec(&grid, rho),
        u: VectorField::from_comps(&grid, comps),
        mu: ScalarField::from_vec(&grid, mu),
        pressure: ScalarField::from_vec(&grid, pressure),
        markers,
    };
    Ok((state, meta))
}

pub fn write_snapshot(path: &Path, state: &FluidState, config: Option<&str>) -> Result<(), CliError> {
    std::fs::write(path, encode_snapshot(state, config)).map_err(CliError::io(path))
}

pub fn read_snapshot(path: &Path) -> Result<(FluidState, SnapshotMeta), CliError> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    decode_snapshot(&bytes).map_err(|source| CliError::Snapshot { path: path.to_owned(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_state() -> FluidState {
        let g = TorusGrid::new(2, 1.0, 8).unwrap();
        let f = |s: f64| ScalarField::from_fn(&g, |x| (s * x[0]).sin() + x[1] * 1e-300);
        FluidState {
            t: 0.1 + 0.2,
            step: 3,
            rho: f(1.0),
            u: VectorField::from_comps(&g, vec![f(2.0).data, f(3.0).data]),
            mu: f(4.0),
            pressure: f(5.0).map(|v| v * f64::MIN_POSITIVE),
            markers: vec![Marker { id: 4, members: vec![1, 2], field: f(6.0) }],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = sample_state();
        let bytes = encode_snapshot(&s, Some("seed = 1\n"));
        let (back, meta) = decode_snapshot(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.t.to_bits(), s.t.to_bits());
        assert_eq!(meta.config.as_deref(), Some("seed = 1\n"));
        assert_eq!(encode_snapshot(&back, meta.config.as_deref()), bytes);
    }

    #[test]
    fn truncation_fails_the_checksum() {
        let bytes = encode_snapshot(&sample_state(), None);
        for cut in [1, 8, 100] {
            assert_eq!(decode_snapshot(&bytes[..bytes.len() - cut]).unwrap_err(), SnapshotError::Checksum);
        }
        assert!(matches!(decode_snapshot(&bytes[..40]).unwrap_err(), SnapshotError::Truncated { .. }));
    }

    #[test]
    fn flipped_bit_fails_the_checksum() {
        let mut bytes = encode_snapshot(&sample_state(), None);
        let k = bytes.len() / 2;
        bytes[k] ^= 1;
        assert_eq!(decode_snapshot(&bytes).unwrap_err(), SnapshotError::Checksum);
    }

    #[test]
    fn other_versions_are_refused() {
        let mut bytes = encode_snapshot(&sample_state(), None);
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert_eq!(decode_snapshot(&bytes).unwrap_err(), SnapshotError::VersionMismatch { found: 2, expected: 1 });
        bytes[0] = b'X';
        assert_eq!(decode_snapshot(&bytes).unwrap_err(), SnapshotError::BadMagic);
    }

    #[test]
    fn payload_is_little_endian() {
        let s = sample_state();
        let bytes = encode_snapshot(&s, None);
        let (meta, payload) = decode_meta(&bytes).unwrap();
        assert_eq!(meta.fields[0].name, "rho");
        // decode by hand, independent of the host byte order
        let first: Vec<f64> = payload[..8 * 64]
            .chunks(8)
            .map(|c| {
                let mut bits = 0u64;
                for (k, b) in c.iter().enumerate() {
                    bits |= (*b as u64) << (8 * k);
                }
                f64::from_bits(bits)
            })
            .collect();
        assert_eq!(first, s.rho.data);
    }
}
