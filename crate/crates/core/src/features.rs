//! Feature sets and the `USDF` feature file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "USDF" | u32 version=1 | u32 n | u32 d | u32 R | u8 has_labels
//! (R+1) blocks of n*d f32 (reference block first, then rotations)
//! n u32 labels                     (only when has_labels = 1)
//! ```
//!
//! A plain-text sidecar manifest (`<file>.manifest`, `key=value` lines)
//! records rotation angles and provenance. It is optional.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::format::{self, Reader};

pub const FEATURE_MAGIC: [u8; 4] = *b"USDF";
pub const FEATURE_VERSION: u32 = 1;
/// Bytes before the first feature block.
pub const FEATURE_HEADER_LEN: usize = 4 + 4 * 4 + 1;

/// `n` items of dimension `d`, a reference block plus `R` rotated variant
/// blocks aligned by row index, and optional integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    n: usize,
    d: usize,
    blocks: Vec<Vec<f32>>,
    labels: Option<Vec<u32>>,
}

impl FeatureSet {
    /// Builds a feature set from `blocks[0]` (reference) and any rotation
    /// blocks, validating every invariant.
    pub fn new(n: usize, d: usize, blocks: Vec<Vec<f32>>, labels: Option<Vec<u32>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::invalid("a feature set needs at least the reference block"));
        }
        for (b, block) in blocks.iter().enumerate() {
            if block.len() != n * d {
                return Err(Error::DimensionMismatch {
                    context: "feature block length",
                    expected: n * d,
                    found: block.len(),
                });
            }
            if let Some(pos) = block.iter().position(|v| !v.is_finite()) {
                let offset = FEATURE_HEADER_LEN + 4 * (b * n * d + pos);
                return Err(Error::NonFinite {
                    block: b,
                    row: pos / d.max(1),
                    col: pos % d.max(1),
                    value: block[pos] as f64,
                    offset: offset as u64,
                });
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "label count",
                    expected: n,
                    found: l.len(),
                });
            }
        }
        Ok(FeatureSet { n, d, blocks, labels })
    }

    /// Reference-only feature set from row vectors.
    pub fn from_rows(rows: &[Vec<f32>], labels: Option<Vec<u32>>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut block = Vec::with_capacity(rows.len() * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "feature row",
                    expected: d,
                    found: row.len(),
                });
            }
            block.extend_from_slice(row);
        }
        Self::new(rows.len(), d, vec![block], labels)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of rotated variant blocks `R`.
    pub fn rotations(&self) -> usize {
        self.blocks.len() - 1
    }

    pub fn block(&self, block: usize) -> &[f32] {
        &self.blocks[block]
    }

    pub fn row(&self, block: usize, i: usize) -> &[f32] {
        &self.blocks[block][i * self.d..(i + 1) * self.d]
    }

    pub fn reference_row(&self, i: usize) -> &[f32] {
        self.row(0, i)
    }

    pub fn rows(&self, block: usize, indices: &[usize]) -> Vec<&[f32]> {
        indices.iter().map(|&i| self.row(block, i)).collect()
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    /// Replaces (or removes) the labels.
    pub fn with_labels(mut self, labels: Option<Vec<u32>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != self.n {
                return Err(Error::DimensionMismatch {
                    context: "label count",
                    expected: self.n,
                    found: l.len(),
                });
            }
        }
        self.labels = labels;
        Ok(self)
    }

    /// Appends a rotated variant block aligned with the reference rows.
    pub fn push_rotation(&mut self, block: Vec<f32>) -> Result<()> {
        let blocks = std::mem::take(&mut self.blocks);
        let mut all = blocks;
        all.push(block);
        let checked = FeatureSet::new(self.n, self.d, all, self.labels.take())?;
        *self = checked;
        Ok(())
    }

    /// Drops all rotation blocks.
    pub fn reference_only(&self) -> FeatureSet {
        FeatureSet {
            n: self.n,
            d: self.d,
            blocks: vec![self.blocks[0].clone()],
            labels: self.labels.clone(),
        }
    }

    /// Subset of rows (in the given order) across every block.
    pub fn select(&self, indices: &[usize]) -> Result<FeatureSet> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n) {
            return Err(Error::invalid(format!(
                "row index {bad} out of range for n = {}",
                self.n
            )));
        }
        let blocks = self
            .blocks
            .iter()
            .map(|block| {
                let mut out = Vec::with_capacity(indices.len() * self.d);
                for &i in indices {
                    out.extend_from_slice(&block[i * self.d..(i + 1) * self.d]);
                }
                out
            })
            .collect();
        let labels = self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect());
        Ok(FeatureSet {
            n: indices.len(),
            d: self.d,
            blocks,
            labels,
        })
    }

    /// Size in bytes of the encoded `USDF` file.
    pub fn encoded_len(&self) -> usize {
        FEATURE_HEADER_LEN
            + self.blocks.len() * self.n * self.d * 4
            + if self.labels.is_some() { self.n * 4 } else { 0 }
    }
}

pub fn encode_features(fs: &FeatureSet) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(fs.encoded_len());
    out.extend_from_slice(&FEATURE_MAGIC);
    format::put_u32(&mut out, FEATURE_VERSION);
    format::put_u32(&mut out, format::header_u32("n", 8, fs.n)?);
    format::put_u32(&mut out, format::header_u32("d", 12, fs.d)?);
    format::put_u32(&mut out, format::header_u32("R", 16, fs.rotations())?);
    out.push(u8::from(fs.labels.is_some()));
    for block in &fs.blocks {
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(labels) = &fs.labels {
        for l in labels {
            format::put_u32(&mut out, *l);
        }
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureSet> {
    let mut r = Reader::new(bytes);
    r.magic(&FEATURE_MAGIC)?;
    r.version(FEATURE_VERSION)?;
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let rotations = r.u32()? as usize;
    let has_labels = match r.u8()? {
        0 => false,
        1 => true,
        other => {
            return Err(Error::InvalidHeader {
                field: "has_labels",
                offset: 20,
                message: format!("expected 0 or 1, found {other}"),
            })
        }
    };
    let per_block = (n as u64) * (d as u64);
    let mut blocks = Vec::with_capacity(rotations + 1);
    for b in 0..=rotations {
        r.require(per_block * 4)?;
        let mut block = Vec::with_capacity(per_block as usize);
        for pos in 0..per_block as usize {
            let offset = r.offset();
            let v = r.f32()?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    block: b,
                    row: pos / d,
                    col: pos % d,
                    value: v as f64,
                    offset,
                });
            }
            block.push(v);
        }
        blocks.push(block);
    }
    let labels = if has_labels {
        r.require(n as u64 * 4)?;
        Some((0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    r.finish()?;
    FeatureSet::new(n, d, blocks, labels)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSet> {
    decode_features(&format::read_file(path.as_ref())?)
}

pub fn write_features(fs: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    format::write_file(path.as_ref(), &encode_features(fs)?)
}

/// Ordered `key=value` sidecar describing a feature file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.entries.insert(key.into(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set_rotation_angles(&mut self, angles: &[f64]) -> &mut Self {
        let joined = angles.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        self.set("rotation_angles", joined)
    }

    /// Rotation angles in block order (block 1 first). Empty when absent.
    pub fn rotation_angles(&self) -> Result<Vec<f64>> {
        match self.get("rotation_angles") {
            None => Ok(Vec::new()),
            Some(s) => parse_f64_list(s).map_err(|message| Error::Config { line: 0, message }),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                line: lineno + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }
}

pub fn manifest_path(features: impl AsRef<Path>) -> PathBuf {
    let mut os = features.as_ref().as_os_str().to_owned();
    os.push(".manifest");
    PathBuf::from(os)
}

/// Reads the sidecar manifest next to a feature file, if one exists.
pub fn read_manifest(features: impl AsRef<Path>) -> Result<Option<Manifest>> {
    let path = manifest_path(features);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Manifest::parse(&text).map(Some)
}

pub fn write_manifest(features: impl AsRef<Path>, manifest: &Manifest) -> Result<()> {
    let path = manifest_path(features);
    format::write_file(&path, manifest.to_text().as_bytes())
}

pub(crate) fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|e| format!("bad number {t:?}: {e}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_three() -> FeatureSet {
        FeatureSet::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]], None).unwrap()
    }

    #[test]
    fn round_trip_echoes_values() {
        let fs = two_by_three();
        let back = decode_features(&encode_features(&fs).unwrap()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.dim(), 3);
        assert_eq!(back.reference_row(0), &[1.0, 2.0, 3.0]);
        assert_eq!(back.reference_row(1), &[4.0, 5.0, 6.0]);
        assert_eq!(back, fs);
    }

    #[test]
    fn declared_rows_exceed_payload() {
        let rows: Vec<Vec<f32>> = (0..4).map(|i| vec![i as f32; 3]).collect();
        let mut bytes = encode_features(&FeatureSet::from_rows(&rows, None).unwrap()).unwrap();
        bytes[8..12].copy_from_slice(&5u32.to_le_bytes());
        match decode_features(&bytes) {
            Err(Error::Truncated {
                offset,
                needed,
                available,
            }) => {
                assert_eq!(offset, FEATURE_HEADER_LEN as u64);
                assert_eq!(needed, 5 * 3 * 4);
                assert_eq!(available, 4 * 3 * 4);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn nan_is_reported_with_row() {
        let mut bytes = encode_features(&two_by_three()).unwrap();
        let off = FEATURE_HEADER_LEN + 3 * 4;
        bytes[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        match decode_features(&bytes) {
            Err(Error::NonFinite {
                block,
                row,
                col,
                offset,
                ..
            }) => {
                assert_eq!((block, row, col), (0, 1, 0));
                assert_eq!(offset, off as u64);
            }
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_features(&two_by_three()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_features(&bytes), Err(Error::BadMagic { .. })));
        let mut bytes = encode_features(&two_by_three()).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            decode_features(&bytes),
            Err(Error::UnsupportedVersion { found: 2, .. })
        ));
        assert!(matches!(decode_features(b"US"), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode_features(&two_by_three()).unwrap();
        bytes.push(0);
        assert!(matches!(
            decode_features(&bytes),
            Err(Error::TrailingBytes { count: 1, .. })
        ));
    }

    #[test]
    fn rotation_blocks_and_labels_change_length() {
        let (n, d) = (3, 5);
        let block: Vec<f32> = (0..n * d).map(|v| v as f32).collect();
        let fs = FeatureSet::new(n, d, vec![block.clone(), block.clone(), block], Some(vec![0, 1, 2])).unwrap();
        let bytes = encode_features(&fs).unwrap();
        // header + (R+1)*n*d*4 + labels
        assert_eq!(bytes.len(), 21 + 3 * n * d * 4 + n * 4);
        assert_eq!(decode_features(&bytes).unwrap(), fs);
    }

    #[test]
    fn empty_set_round_trips() {
        let fs = FeatureSet::new(0, 4, vec![Vec::new()], None).unwrap();
        let bytes = encode_features(&fs).unwrap();
        assert_eq!(bytes.len(), FEATURE_HEADER_LEN);
        assert_eq!(decode_features(&bytes).unwrap(), fs);
    }

    #[test]
    fn constructor_rejects_mismatched_labels_and_blocks() {
        assert!(FeatureSet::new(2, 2, vec![vec![0.0; 4]], Some(vec![1])).is_err());
        assert!(FeatureSet::new(2, 2, vec![vec![0.0; 4], vec![0.0; 3]], None).is_err());
        assert!(FeatureSet::new(1, 2, vec![vec![0.0, f32::INFINITY]], None).is_err());
    }

    #[test]
    fn select_keeps_blocks_aligned() {
        let fs = FeatureSet::new(
            3,
            1,
            vec![vec![0.0, 1.0, 2.0], vec![10.0, 11.0, 12.0]],
            Some(vec![5, 6, 7]),
        )
        .unwrap();
        let sub = fs.select(&[2, 0]).unwrap();
        assert_eq!(sub.block(0), &[2.0, 0.0]);
        assert_eq!(sub.block(1), &[12.0, 10.0]);
        assert_eq!(sub.labels(), Some(&[7, 5][..]));
        assert!(fs.select(&[3]).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let mut m = Manifest::new();
        m.set("source", "synth").set_rotation_angles(&[90.0, -10.5]);
        let back = Manifest::parse(&m.to_text()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.rotation_angles().unwrap(), vec![90.0, -10.5]);
        assert!(Manifest::parse("novalue").is_err());
    }
}
