use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::LabeledDataset;
use crate::tensor::Matrix;
use crate::{FlError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Reads a whole file, transparently inflating gzip streams.
fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| FlError::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| FlError::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < self.pos + n {
            return Err(FlError::Truncated {
                path: self.path.to_path_buf(),
                offset: self.bytes.len(),
                needed: self.pos + n,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn expect_magic(cur: &mut Cursor<'_>, expected: u32) -> Result<()> {
    let found = cur.u32()?;
    if found != expected {
        return Err(FlError::Format {
            path: cur.path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Loads an IDX image/label file pair (plain or gzip). Pixels are scaled by 1/255.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();

    let image_bytes = read_bytes(images_path)?;
    let mut cur = Cursor {
        path: images_path,
        bytes: &image_bytes,
        pos: 0,
    };
    expect_magic(&mut cur, IMAGES_MAGIC)?;
    let count = cur.u32()? as usize;
    let rows = cur.u32()? as usize;
    let cols = cur.u32()? as usize;
    let dim = rows * cols;
    let pixels = cur.take(count * dim)?;
    let features: Vec<f64> = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();

    let label_bytes = read_bytes(labels_path)?;
    let mut cur = Cursor {
        path: labels_path,
        bytes: &label_bytes,
        pos: 0,
    };
    expect_magic(&mut cur, LABELS_MAGIC)?;
    let label_count = cur.u32()? as usize;
    if label_count != count {
        return Err(FlError::Input(format!(
            "{} holds {count} images but {} holds {label_count} labels",
            images_path.display(),
            labels_path.display()
        )));
    }
    let labels: Vec<usize> = cur.take(count)?.iter().map(|&b| usize::from(b)).collect();
    let num_classes = labels.iter().max().map_or(1, |m| m + 1);
    LabeledDataset::new(Matrix::new(count, dim, features)?, labels, num_classes)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let gz = path.extension().is_some_and(|e| e == "gz");
    let payload = if gz {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes).map_err(|e| FlError::io(path, e))?;
        enc.finish().map_err(|e| FlError::io(path, e))?
    } else {
        bytes.to_vec()
    };
    fs::write(path, payload).map_err(|e| FlError::io(path, e))
}

/// Writes `dataset` as an IDX pair with images of `image_shape` (rows, cols);
/// gzip-compressed when a path ends in `.gz`. Features are quantised to bytes.
pub fn write_idx(
    dataset: &LabeledDataset,
    image_shape: (usize, usize),
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let (rows, cols) = image_shape;
    if rows * cols != dataset.feature_dim() {
        return Err(FlError::config(format!(
            "image shape {rows}x{cols} does not match {} features",
            dataset.feature_dim()
        )));
    }
    if dataset.num_classes() > 256 {
        return Err(FlError::config("IDX labels are single bytes"));
    }
    let n = dataset.len() as u32;
    let mut img = Vec::with_capacity(16 + dataset.features().data().len());
    for v in [IMAGES_MAGIC, n, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(dataset.features().data().iter().map(|&v| (v * 255.0).round() as u8));
    write_bytes(images_path.as_ref(), &img)?;

    let mut lab = Vec::with_capacity(8 + dataset.len());
    for v in [LABELS_MAGIC, n] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend(dataset.labels().iter().map(|&y| y as u8));
    write_bytes(labels_path.as_ref(), &lab)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LabeledDataset {
        let features: Vec<f64> = (0..3 * 4).map(|i| f64::from((i * 37 % 256) as u8) / 255.0).collect();
        LabeledDataset::new(Matrix::new(3, 4, features).unwrap(), vec![2, 0, 1], 3).unwrap()
    }

    #[test]
    fn round_trip_plain_and_gzip() {
        let dir = tempfile::tempdir().unwrap();
        for ext in ["", ".gz"] {
            let img = dir.path().join(format!("img{ext}"));
            let lab = dir.path().join(format!("lab{ext}"));
            write_idx(&tiny(), (2, 2), &img, &lab).unwrap();
            assert_eq!(load_idx(&img, &lab).unwrap(), tiny());
        }
    }

    #[test]
    fn full_byte_scales_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        let mut bytes = Vec::new();
        for v in [IMAGES_MAGIC, 1, 1, 2] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        bytes.extend_from_slice(&[255, 0]);
        fs::write(&img, bytes).unwrap();
        let mut bytes = Vec::new();
        for v in [LABELS_MAGIC, 1] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        bytes.push(9);
        fs::write(&lab, bytes).unwrap();
        let ds = load_idx(&img, &lab).unwrap();
        assert_eq!(ds.features().data(), &[1.0, 0.0]);
        assert_eq!(ds.num_classes(), 10);
    }

    #[test]
    fn wrong_magic_names_expected_and_found() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        write_idx(&tiny(), (2, 2), &img, &lab).unwrap();
        // labels file passed as images
        let err = load_idx(&lab, &img).unwrap_err();
        match &err {
            FlError::Format { expected, found, .. } => {
                assert_eq!((*expected, *found), (IMAGES_MAGIC, LABELS_MAGIC));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("0x00000803"));
    }

    #[test]
    fn truncated_file_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        write_idx(&tiny(), (2, 2), &img, &lab).unwrap();
        let bytes = fs::read(&img).unwrap();
        fs::write(&img, &bytes[..20]).unwrap();
        match load_idx(&img, &lab).unwrap_err() {
            FlError::Truncated { offset, needed, .. } => {
                assert_eq!(offset, 20);
                assert_eq!(needed, 16 + 12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_idx("/nonexistent/a", "/nonexistent/b"),
            Err(FlError::Io { .. })
        ));
    }
}
