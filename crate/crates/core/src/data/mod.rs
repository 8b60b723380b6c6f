//! Dataset ingestion (IDX and CIFAR binary), split construction and batch
//! iteration.

mod batch;
mod cifar;
mod idx;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sire_tensor::Tensor;

pub use batch::{batches, batches_from, hflip, Batch, Batches};
pub use cifar::{parse_cifar, CifarRecord, CifarVariant, CIFAR_PIXELS};
pub use idx::{
    load_idx, parse_idx_images, parse_idx_labels, read_maybe_gz, write_idx_images, write_idx_labels, IdxPart,
    IMAGE_MAGIC, LABEL_MAGIC,
};

use crate::{Error, Result};

/// Environment variable consulted when no data directory is given.
pub const DATA_DIR_ENV: &str = "SIRE_DATA_DIR";

/// Minimum side length IDX images are zero-padded to.
pub const PADDED_SIDE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}; expected train, val or test"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetMeta {
    pub name: String,
    pub classes: usize,
    pub class_names: Vec<String>,
}

/// Images in `[0, 1]` as `[N, C, H, W]` with labels and disjoint splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub splits: Splits,
    pub meta: DatasetMeta,
}

const FASHION_NAMES: [&str; 10] = [
    "t-shirt", "trouser", "pullover", "dress", "coat", "sandal", "shirt", "sneaker", "bag", "ankle-boot",
];
const CIFAR10_NAMES: [&str; 10] = [
    "airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck",
];

/// Known dataset names accepted by [`Dataset::load`].
pub const DATASETS: [&str; 4] = ["mnist", "fashion-mnist", "cifar10", "cifar100"];

impl Dataset {
    /// Assembles a dataset, checking labels, pixel range and split
    /// disjointness.
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, splits: Splits, meta: DatasetMeta) -> Result<Self> {
        let n = images.shape().first().copied().unwrap_or(0);
        if images.rank() != 4 || n != labels.len() {
            return Err(Error::Data(format!(
                "images {:?} do not pair with {} labels",
                images.shape(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= meta.classes) {
            return Err(Error::Data(format!("label {bad} out of range for {} classes", meta.classes)));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("pixel values must lie in [0, 1]".into()));
        }
        let mut seen = vec![false; n];
        for (split, idx) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
            for &i in idx {
                if i >= n {
                    return Err(Error::Data(format!("{split} index {i} out of range for {n} samples")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Data(format!("sample {i} appears in more than one split")));
                }
            }
        }
        Ok(Self {
            images,
            labels,
            splits,
            meta,
        })
    }

    /// Input shape and class count of the standard release of `name`,
    /// without reading any files.
    pub fn nominal_shape(name: &str) -> Result<((usize, usize, usize), usize)> {
        match name.to_ascii_lowercase().replace('_', "-").as_str() {
            "mnist" | "fashion-mnist" | "fmnist" | "fashion" => Ok(((1, PADDED_SIDE, PADDED_SIDE), 10)),
            "cifar10" | "cifar-10" => Ok(((3, 32, 32), 10)),
            "cifar100" | "cifar-100" => Ok(((3, 32, 32), 100)),
            other => Err(Error::Config(format!("unknown dataset {other:?}; expected one of {DATASETS:?}"))),
        }
    }

    /// Loads `name` (one of [`DATASETS`]) from `dir`.
    pub fn load(name: &str, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        match name.to_ascii_lowercase().replace('_', "-").as_str() {
            "mnist" => Self::load_mnist(dir),
            "fashion-mnist" | "fmnist" | "fashion" => Self::load_fashion_mnist(dir),
            "cifar10" | "cifar-10" => Self::load_cifar(dir, CifarVariant::Cifar10),
            "cifar100" | "cifar-100" => Self::load_cifar(dir, CifarVariant::Cifar100),
            other => Err(Error::Config(format!("unknown dataset {other:?}; expected one of {DATASETS:?}"))),
        }
    }

    pub fn load_mnist(dir: impl AsRef<Path>) -> Result<Self> {
        let names = (0..10).map(|d| d.to_string()).collect();
        load_idx_dataset(dir.as_ref(), "mnist", names)
    }

    pub fn load_fashion_mnist(dir: impl AsRef<Path>) -> Result<Self> {
        let names = FASHION_NAMES.iter().map(|s| s.to_string()).collect();
        load_idx_dataset(dir.as_ref(), "fashion-mnist", names)
    }

    pub fn load_cifar(dir: impl AsRef<Path>, variant: CifarVariant) -> Result<Self> {
        load_cifar_dataset(dir.as_ref(), variant)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample `(C, H, W)`.
    pub fn input_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn split(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.splits.train,
            Split::Val => &self.splits.val,
            Split::Test => &self.splits.test,
        }
    }

    /// Stacks the listed samples into `[k, C, H, W]`.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let (c, h, w) = self.input_shape();
        let plane = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * plane);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Data(format!("sample index {i} out of range for {} samples", self.len())));
            }
            data.extend_from_slice(&self.images.data()[i * plane..(i + 1) * plane]);
        }
        Ok(Tensor::from_vec(vec![indices.len(), c, h, w], data)?)
    }

    /// Per-class sample counts of a split.
    pub fn histogram(&self, split: Split) -> Vec<usize> {
        let mut h = vec![0; self.meta.classes];
        for &i in self.split(split) {
            h[self.labels[i]] += 1;
        }
        h
    }
}

/// Resolves a data directory from an explicit path or [`DATA_DIR_ENV`].
pub fn resolve_data_dir(explicit: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .ok_or_else(|| Error::Config(format!("no data directory given; pass --data-dir or set {DATA_DIR_ENV}")))
}

fn find_file(dir: &Path, stems: &[&str]) -> Option<PathBuf> {
    stems
        .iter()
        .flat_map(|s| [dir.join(s), dir.join(format!("{s}.gz"))])
        .find(|p| p.is_file())
}

/// Zero-pads an `h x w` plane to `side x side`, centred.
fn pad_plane(src: &[u8], h: usize, w: usize, side: usize, out: &mut Vec<f32>) {
    let (top, left) = ((side - h) / 2, (side - w) / 2);
    let start = out.len();
    out.resize(start + side * side, 0.0);
    for y in 0..h {
        for x in 0..w {
            out[start + (y + top) * side + x + left] = f32::from(src[y * w + x]) / 255.0;
        }
    }
}

fn load_idx_dataset(dir: &Path, name: &str, class_names: Vec<String>) -> Result<Dataset> {
    let files = [
        ["train-images-idx3-ubyte", "train-images.idx3-ubyte"],
        ["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"],
        ["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"],
        ["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"],
    ];
    let found: Vec<Option<PathBuf>> = files.iter().map(|f| find_file(dir, f)).collect();
    if found.iter().any(Option::is_none) {
        return Err(Error::MissingFiles {
            dir: dir.to_path_buf(),
            expected: files.iter().map(|f| format!("{}[.gz]", f[0])).collect(),
        });
    }
    let p: Vec<PathBuf> = found.into_iter().flatten().collect();
    let train = load_idx(&p[0], &p[1])?;
    let test = load_idx(&p[2], &p[3])?;
    if (train.rows, train.cols) != (test.rows, test.cols) {
        return Err(Error::Data(format!(
            "train images are {}x{} but test images are {}x{}",
            train.rows, train.cols, test.rows, test.cols
        )));
    }
    let (rows, cols) = (train.rows, train.cols);
    let side = (rows.max(cols).div_ceil(16) * 16).max(PADDED_SIDE);
    let total = train.count() + test.count();
    let mut data = Vec::with_capacity(total * side * side);
    for part in [&train, &test] {
        for img in part.pixels.chunks_exact(rows * cols) {
            pad_plane(img, rows, cols, side, &mut data);
        }
    }
    let labels: Vec<usize> = train.labels.iter().chain(&test.labels).map(|&l| l as usize).collect();
    let classes = class_names.len();
    // The last sixth of the training file is held out for validation
    // (10000 of 60000 for the official files).
    let n_train_file = train.count();
    let n_val = n_train_file / 6;
    let splits = Splits {
        train: (0..n_train_file - n_val).collect(),
        val: (n_train_file - n_val..n_train_file).collect(),
        test: (n_train_file..total).collect(),
    };
    let images = Tensor::from_vec(vec![total, 1, side, side], data)?;
    Dataset::new(
        images,
        labels,
        splits,
        DatasetMeta {
            name: name.into(),
            classes,
            class_names,
        },
    )
}

fn load_cifar_dataset(dir: &Path, variant: CifarVariant) -> Result<Dataset> {
    let (sub, train_files, test_file, per_class_val): (&str, Vec<String>, &str, usize) = match variant {
        CifarVariant::Cifar10 => (
            "cifar-10-batches-bin",
            (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
            "test_batch.bin",
            1000,
        ),
        CifarVariant::Cifar100 => ("cifar-100-binary", vec!["train.bin".into()], "test.bin", 50),
    };
    let root = if dir.join(sub).is_dir() { dir.join(sub) } else { dir.to_path_buf() };
    let mut expected: Vec<String> = train_files.clone();
    expected.push(test_file.into());
    if expected.iter().any(|f| !root.join(f).is_file()) {
        return Err(Error::MissingFiles { dir: root, expected });
    }
    let read = |f: &str| -> Result<Vec<CifarRecord>> {
        let path = root.join(f);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        parse_cifar(&bytes, variant, &path)
    };
    let mut train = Vec::new();
    for f in &train_files {
        train.extend(read(f)?);
    }
    let test = read(test_file)?;
    let classes = variant.classes();
    let total = train.len() + test.len();
    let mut data = Vec::with_capacity(total * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(total);
    for rec in train.iter().chain(&test) {
        data.extend(rec.pixels.iter().map(|&b| f32::from(b) / 255.0));
        labels.push(rec.label as usize);
    }
    let mut taken = vec![0usize; classes];
    let (mut tr, mut val) = (Vec::new(), Vec::new());
    for (i, &l) in labels[..train.len()].iter().enumerate() {
        if taken[l] < per_class_val {
            taken[l] += 1;
            val.push(i);
        } else {
            tr.push(i);
        }
    }
    let splits = Splits {
        train: tr,
        val,
        test: (train.len()..total).collect(),
    };
    let class_names = match variant {
        CifarVariant::Cifar10 => CIFAR10_NAMES.iter().map(|s| s.to_string()).collect(),
        CifarVariant::Cifar100 => std::fs::read_to_string(root.join("fine_label_names.txt"))
            .ok()
            .map(|t| t.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect::<Vec<_>>())
            .filter(|v| v.len() == classes)
            .unwrap_or_else(|| (0..classes).map(|i| format!("class{i}")).collect()),
    };
    let images = Tensor::from_vec(vec![total, 3, 32, 32], data)?;
    Dataset::new(
        images,
        labels,
        splits,
        DatasetMeta {
            name: match variant {
                CifarVariant::Cifar10 => "cifar10".into(),
                CifarVariant::Cifar100 => "cifar100".into(),
            },
            classes,
            class_names,
        },
    )
}
