//! IDX tensor files, the container format of the MNIST distribution.

use std::path::{Path, PathBuf};

use crate::data::{normalize_pixel, ClassificationSet, Samples};
use crate::error::{NdfError, Result};

/// Unsigned byte, the only element type MNIST uses.
pub const DTYPE_U8: u8 = 0x08;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxTensor {
    pub dtype: u8,
    pub dims: Vec<usize>,
    pub payload: Vec<u8>,
}

impl IdxTensor {
    /// The 32-bit magic field as it appears in the header.
    pub fn magic(&self) -> u32 {
        (u32::from(self.dtype) << 8) | self.dims.len() as u32
    }

    pub fn len(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn idx_err(offset: usize, message: impl Into<String>) -> NdfError {
    NdfError::Idx {
        offset,
        message: message.into(),
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(idx_err(
            bytes.len(),
            format!(
                "expected a 4-byte magic field, file has {} bytes",
                bytes.len()
            ),
        ));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(idx_err(
            0,
            format!("bad magic {:02x}{:02x}, expected 0000", bytes[0], bytes[1]),
        ));
    }
    let dtype = bytes[2];
    if dtype != DTYPE_U8 {
        return Err(idx_err(
            2,
            format!("unsupported element type 0x{dtype:02x}"),
        ));
    }
    let rank = usize::from(bytes[3]);
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(idx_err(
            bytes.len(),
            format!(
                "expected {header} header bytes for rank {rank}, file has {}",
                bytes.len()
            ),
        ));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| idx_err(4, "dimension product overflows"))?;
    let actual = bytes.len() - header;
    if actual != expected {
        return Err(idx_err(
            header,
            format!("expected {expected} payload bytes for dims {dims:?}, found {actual}"),
        ));
    }
    Ok(IdxTensor {
        dtype,
        dims,
        payload: bytes[header..].to_vec(),
    })
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxTensor> {
    parse_idx(&std::fs::read(path)?)
}

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

#[derive(Clone, Debug)]
pub struct Mnist {
    pub train: ClassificationSet,
    pub test: ClassificationSet,
}

/// Image tensor `[N, H, W]` to normalized `[1, H, W]` samples.
pub fn idx_images(t: &IdxTensor) -> Result<Samples> {
    let [_, h, w] = t.dims[..] else {
        return Err(idx_err(
            3,
            format!("image file must have rank 3, has {}", t.dims.len()),
        ));
    };
    Samples::new(
        vec![1, h, w],
        t.payload.iter().map(|&p| normalize_pixel(p)).collect(),
    )
}

pub fn idx_labels(t: &IdxTensor) -> Result<Vec<usize>> {
    if t.dims.len() != 1 {
        return Err(idx_err(
            3,
            format!("label file must have rank 1, has {}", t.dims.len()),
        ));
    }
    Ok(t.payload.iter().map(|&b| usize::from(b)).collect())
}

fn load_split(dir: &Path, images: &str, labels: &str) -> Result<ClassificationSet> {
    let x = idx_images(&read_idx(dir.join(images))?)?;
    let y = idx_labels(&read_idx(dir.join(labels))?)?;
    if x.len() != y.len() {
        return Err(NdfError::Config(format!(
            "{images} has {} images but {labels} has {} labels",
            x.len(),
            y.len()
        )));
    }
    ClassificationSet::new(x, y, 10)
}

/// Loads the four uncompressed MNIST files from `dir`.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<Mnist> {
    let dir = dir.as_ref();
    Ok(Mnist {
        train: load_split(dir, MNIST_FILES[0], MNIST_FILES[1])?,
        test: load_split(dir, MNIST_FILES[2], MNIST_FILES[3])?,
    })
}

/// Test split only.
pub fn load_mnist_test(dir: impl AsRef<Path>) -> Result<ClassificationSet> {
    load_split(dir.as_ref(), MNIST_FILES[2], MNIST_FILES[3])
}

/// `$NDF_MNIST_DIR`, else `data/mnist` under `root`.
pub fn default_mnist_dir(root: impl AsRef<Path>) -> PathBuf {
    std::env::var_os("NDF_MNIST_DIR")
        .map_or_else(|| root.as_ref().join("data").join("mnist"), PathBuf::from)
}
