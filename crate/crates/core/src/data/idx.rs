use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Raw contents of an IDX image/label file pair.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxPart {
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` bytes, row-major per image.
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl IdxPart {
    pub fn count(&self) -> usize {
        self.labels.len()
    }
}

/// Reads a file, transparently inflating gzip content.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let word = bytes.get(offset..offset + 4).ok_or_else(|| Error::Truncated {
        path: path.to_path_buf(),
        offset: bytes.len(),
        expected: offset + 4,
        actual: bytes.len(),
    })?;
    Ok(u32::from_be_bytes([word[0], word[1], word[2], word[3]]))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

fn body<'a>(bytes: &'a [u8], header: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    let expected = header + len;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(&bytes[header..expected])
}

/// Parses an IDX3 image file: magic, count, rows, cols (big endian), then
/// one byte per pixel. Returns `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    check_magic(bytes, IMAGE_MAGIC, path)?;
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let pixels = body(bytes, 16, n * rows * cols, path)?;
    Ok((n, rows, cols, pixels.to_vec()))
}

/// Parses an IDX1 label file: magic, count, then one byte per label.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC, path)?;
    let n = be_u32(bytes, 4, path)? as usize;
    Ok(body(bytes, 8, n, path)?.to_vec())
}

/// Loads an image/label IDX pair (raw or gzip).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<IdxPart> {
    let (n, rows, cols, pixels) = parse_idx_images(&read_maybe_gz(images_path)?, images_path)?;
    let labels = parse_idx_labels(&read_maybe_gz(labels_path)?, labels_path)?;
    if labels.len() != n {
        return Err(Error::Data(format!(
            "{} holds {n} images but {} holds {} labels",
            images_path.display(),
            labels_path.display(),
            labels.len()
        )));
    }
    Ok(IdxPart {
        rows,
        cols,
        pixels,
        labels,
    })
}

/// Serialises an IDX3 image file.
pub fn write_idx_images(count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for word in [IMAGE_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

/// Serialises an IDX1 label file.
pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let pixels: Vec<u8> = (0..2 * 3 * 4).map(|i| i as u8).collect();
        let bytes = write_idx_images(2, 3, 4, &pixels);
        assert_eq!(parse_idx_images(&bytes, Path::new("x")).unwrap(), (2, 3, 4, pixels));
        let labels = write_idx_labels(&[7, 1]);
        assert_eq!(parse_idx_labels(&labels, Path::new("y")).unwrap(), vec![7, 1]);
    }

    #[test]
    fn truncation_reports_lengths() {
        let bytes = write_idx_images(2, 3, 4, &[0; 24]);
        let err = parse_idx_images(&bytes[..30], Path::new("imgs")).unwrap_err();
        match err {
            Error::Truncated { expected, actual, .. } => assert_eq!((expected, actual), (40, 30)),
            other => panic!("unexpected {other}"),
        }
        assert!(matches!(
            parse_idx_labels(&[0, 0, 8], Path::new("l")),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn wrong_magic() {
        let bytes = write_idx_labels(&[1]);
        let err = parse_idx_images(&bytes, Path::new("swapped")).unwrap_err();
        assert!(matches!(err, Error::BadMagic { expected: IMAGE_MAGIC, found: LABEL_MAGIC, .. }));
    }
}
