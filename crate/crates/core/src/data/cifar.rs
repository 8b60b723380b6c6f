use std::path::Path;

use crate::{Error, Result};

pub const CIFAR_PIXELS: usize = 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    pub fn classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }

    fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + CIFAR_PIXELS
    }
}

/// One binary record: label byte(s) then R, G and B planes of 32x32.
#[derive(Debug, Clone, PartialEq)]
pub struct CifarRecord {
    /// Coarse label, CIFAR-100 only.
    pub coarse: Option<u8>,
    pub label: u8,
    pub pixels: Vec<u8>,
}

impl CifarRecord {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 + CIFAR_PIXELS);
        out.extend(self.coarse);
        out.push(self.label);
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Splits a batch file into records. The length must be a whole number of
/// records.
pub fn parse_cifar(bytes: &[u8], variant: CifarVariant, path: &Path) -> Result<Vec<CifarRecord>> {
    let len = variant.record_len();
    if !bytes.len().is_multiple_of(len) {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len() / len * len,
            expected: bytes.len().div_ceil(len) * len,
            actual: bytes.len(),
        });
    }
    let classes = variant.classes();
    bytes
        .chunks_exact(len)
        .enumerate()
        .map(|(i, rec)| {
            let (coarse, label) = match variant {
                CifarVariant::Cifar10 => (None, rec[0]),
                CifarVariant::Cifar100 => (Some(rec[0]), rec[1]),
            };
            if label as usize >= classes {
                return Err(Error::Data(format!(
                    "{}: record {i} (byte {}) has label {label} for {classes} classes",
                    path.display(),
                    i * len
                )));
            }
            Ok(CifarRecord {
                coarse,
                label,
                pixels: rec[variant.label_bytes()..].to_vec(),
            })
        })
        .collect()
}
