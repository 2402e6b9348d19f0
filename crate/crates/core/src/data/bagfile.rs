//! `FBAG` per-bag binary files and the CSV manifest that lists them.
//!
//! Layout, all little-endian:
//!
//! | offset | size  | field                                         |
//! |--------|-------|-----------------------------------------------|
//! | 0      | 4     | magic `FBAG`                                  |
//! | 4      | 2     | version (`1`); bit 15 set = `f32` payload     |
//! | 6      | 4     | `N` instances (u32)                           |
//! | 10     | 4     | `D` feature width (u32)                       |
//! | 14     | N·D·w | row-major features, `w` = 8 (f64) or 4 (f32)  |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::FeatureBag;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const FBAG_MAGIC: &[u8; 4] = b"FBAG";
pub const FBAG_VERSION: u16 = 1;
pub const FBAG_F32_FLAG: u16 = 0x8000;
const HEADER_LEN: u64 = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BagDtype {
    F64,
    F32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub bag_id: String,
    pub path: String,
    pub label: String,
}

pub fn write_bag_file(path: &Path, features: &Matrix, dtype: BagDtype) -> Result<()> {
    let (n, d) = features.shape();
    let width = if dtype == BagDtype::F64 { 8 } else { 4 };
    let mut buf = Vec::with_capacity(HEADER_LEN as usize + n * d * width);
    buf.extend_from_slice(FBAG_MAGIC);
    let version = match dtype {
        BagDtype::F64 => FBAG_VERSION,
        BagDtype::F32 => FBAG_VERSION | FBAG_F32_FLAG,
    };
    buf.extend_from_slice(&version.to_le_bytes());
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| Error::Config(format!("bag dimension {v} exceeds u32")))
    };
    buf.extend_from_slice(&to_u32(n)?.to_le_bytes());
    buf.extend_from_slice(&to_u32(d)?.to_le_bytes());
    for &v in features.as_slice() {
        match dtype {
            BagDtype::F64 => buf.extend_from_slice(&v.to_le_bytes()),
            BagDtype::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_bag_file(path: &Path) -> Result<Matrix> {
    if !path.is_file() {
        return Err(Error::MissingFile { path: path.into() });
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN as usize {
        return Err(Error::SizeMismatch {
            path: path.into(),
            expected: HEADER_LEN,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[0..4] != FBAG_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: "FBAG",
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    let (dtype, base) = if version & FBAG_F32_FLAG != 0 {
        (BagDtype::F32, version & !FBAG_F32_FLAG)
    } else {
        (BagDtype::F64, version)
    };
    if base != FBAG_VERSION {
        return Err(Error::BadVersion {
            path: path.into(),
            version,
        });
    }
    let n = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let width = if dtype == BagDtype::F64 { 8 } else { 4 };
    let expected = HEADER_LEN + (n as u64) * (d as u64) * width;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: path.into(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    let body = &bytes[HEADER_LEN as usize..];
    let data: Vec<f64> = match dtype {
        BagDtype::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        BagDtype::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    Matrix::from_vec(n, d, data)
}

/// Reads every bag listed in a `bag_id,path,label` manifest. Relative paths
/// resolve against the manifest's directory.
pub fn load_bags(manifest: &Path) -> Result<Vec<FeatureBag>> {
    if !manifest.is_file() {
        return Err(Error::MissingFile {
            path: manifest.into(),
        });
    }
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::Reader::from_path(manifest).map_err(|e| csv_err(manifest, e))?;
    let mut bags = Vec::new();
    let mut dim: Option<usize> = None;
    for row in reader.deserialize::<ManifestRow>() {
        let row = row.map_err(|e| csv_err(manifest, e))?;
        let path = resolve(&base, &row.path);
        let label: usize = row.label.trim().parse().map_err(|_| Error::BadLabel {
            path: manifest.into(),
            value: row.label.clone(),
        })?;
        let features = read_bag_file(&path)?;
        if features.rows() == 0 {
            return Err(Error::Malformed {
                path,
                what: "feature bag",
                detail: "bag has no instances".into(),
            });
        }
        match dim {
            None => dim = Some(features.cols()),
            Some(d) if d != features.cols() => {
                return Err(Error::Malformed {
                    path,
                    what: "feature bag",
                    detail: format!(
                        "feature width {} differs from dataset width {d}",
                        features.cols()
                    ),
                })
            }
            _ => {}
        }
        bags.push(FeatureBag::new(row.bag_id, label, features));
    }
    if bags.is_empty() {
        log::warn!("manifest {} lists no bags", manifest.display());
    }
    Ok(bags)
}

/// SHA-256 over the manifest bytes followed by every listed bag file, in
/// manifest order, as `sha256:<hex>`.
pub fn dataset_digest(manifest: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = fs::read(manifest).map_err(|e| Error::io(manifest, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    for row in reader.deserialize::<ManifestRow>() {
        let row = row.map_err(|e| csv_err(manifest, e))?;
        let path = resolve(&base, &row.path);
        hasher.update(fs::read(&path).map_err(|e| Error::io(&path, e))?);
    }
    let hex: String = hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    Ok(format!("sha256:{hex}"))
}

/// Writes `<dir>/<bag_id>.fbag` for every bag plus `<dir>/manifest.csv`, and
/// returns the manifest path.
pub fn save_bags(bags: &[FeatureBag], dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = dir.join("manifest.csv");
    let mut writer = csv::Writer::from_path(&manifest).map_err(|e| csv_err(&manifest, e))?;
    for bag in bags {
        let file = format!("{}.fbag", bag.bag_id);
        write_bag_file(&dir.join(&file), &bag.features, BagDtype::F64)?;
        writer
            .serialize(ManifestRow {
                bag_id: bag.bag_id.clone(),
                path: file,
                label: bag.label.to_string(),
            })
            .map_err(|e| csv_err(&manifest, e))?;
    }
    writer.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Malformed {
        path: path.into(),
        what: "manifest",
        detail: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<FeatureBag> {
        vec![
            FeatureBag::new(
                "a",
                0,
                Matrix::from_rows(&[[0.1, -2.5, 1e-300], [3.0, f64::MIN_POSITIVE, 7.25]]),
            ),
            FeatureBag::new("b", 1, Matrix::from_rows(&[[1.0 / 3.0, 2.0, -0.0]])),
        ]
    }

    #[test]
    fn two_bag_fixture_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_bags(&fixture(), dir.path()).unwrap();
        let loaded = load_bags(&manifest).unwrap();
        assert_eq!(loaded.len(), 2);
        for (a, b) in loaded.iter().zip(fixture()) {
            assert_eq!(a.bag_id, b.bag_id);
            assert_eq!(a.label, b.label);
            let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.features), bits(&b.features));
        }
    }

    #[test]
    fn resave_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_bags(&fixture(), dir.path()).unwrap();
        let again = tempfile::tempdir().unwrap();
        save_bags(&load_bags(&manifest).unwrap(), again.path()).unwrap();
        for name in ["a.fbag", "b.fbag", "manifest.csv"] {
            assert_eq!(
                fs::read(dir.path().join(name)).unwrap(),
                fs::read(again.path().join(name)).unwrap()
            );
        }
    }

    #[test]
    fn empty_manifest_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_bags(&[], dir.path()).unwrap();
        assert!(load_bags(&manifest).unwrap().is_empty());
    }

    #[test]
    fn truncated_file_reports_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_bags(&fixture(), dir.path()).unwrap();
        let path = dir.path().join("a.fbag");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        match load_bags(&manifest) {
            Err(Error::SizeMismatch { path: p, .. }) => assert_eq!(p, path),
            other => panic!("expected size mismatch, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_bags(&fixture(), dir.path()).unwrap();
        let path = dir.path().join("b.fbag");
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_bags(&manifest), Err(Error::BadMagic { .. })));
        fs::remove_file(&path).unwrap();
        assert!(matches!(
            load_bags(&manifest),
            Err(Error::MissingFile { .. })
        ));
    }

    #[test]
    fn non_integer_label_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_bags(&fixture(), dir.path()).unwrap();
        let manifest = dir.path().join("manifest.csv");
        fs::write(&manifest, "bag_id,path,label\na,a.fbag,tumor\n").unwrap();
        assert!(matches!(load_bags(&manifest), Err(Error::BadLabel { .. })));
    }

    #[test]
    fn f32_payload_is_upconverted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.fbag");
        let m = Matrix::from_rows(&[[0.5, -1.25], [3.0, 0.1]]);
        write_bag_file(&path, &m, BagDtype::F32).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 14 + 4 * 4);
        let back = read_bag_file(&path).unwrap();
        assert_eq!(back.as_slice()[..3], [0.5, -1.25, 3.0]);
        assert_eq!(back[(1, 1)], 0.1f32 as f64);
    }

    #[test]
    fn inconsistent_widths_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let bags = vec![
            FeatureBag::new("a", 0, Matrix::zeros(2, 3)),
            FeatureBag::new("b", 1, Matrix::zeros(2, 4)),
        ];
        let manifest = save_bags(&bags, dir.path()).unwrap();
        assert!(matches!(load_bags(&manifest), Err(Error::Malformed { .. })));
    }
}
