//! MNIST in the uncompressed IDX format.
//!
//! Images: big-endian `0x00000803`, count, rows, cols, then `count·rows·cols` bytes.
//! Labels: big-endian `0x00000801`, count, then `count` bytes.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::function::{FunctionInstance, FunctionKind, FunctionSource, ImageFunction};
use crate::error::{Error, MnistError, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// One split of MNIST: raw bytes plus labels. Intensities are exposed as `byte / 255`.
#[derive(Debug, Clone)]
pub struct ImageSet {
    pub rows: usize,
    pub cols: usize,
    pixels: Arc<[u8]>,
    labels: Arc<[u8]>,
    /// Indices into the underlying buffers (identity unless subsampled).
    index: Arc<[usize]>,
}

#[derive(Debug, Clone)]
pub struct MnistDataset {
    pub train: ImageSet,
    pub test: ImageSet,
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => {
            Error::MissingArtifact(format!("MNIST file {} not found", path.display()))
        }
        _ => Error::io(path, e),
    })
}

fn check_len(path: &Path, bytes: &[u8], expected: usize) -> Result<(), MnistError> {
    if bytes.len() < expected {
        return Err(MnistError::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(())
}

/// Parses an image file; returns `(count, rows, cols, pixel bytes)`.
pub fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>), MnistError> {
    check_len(path, bytes, 16)?;
    let magic = read_u32(bytes, 0);
    if magic != IMAGE_MAGIC {
        return Err(MnistError::BadMagic {
            path: path.to_path_buf(),
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(bytes, 4) as usize;
    let rows = read_u32(bytes, 8) as usize;
    let cols = read_u32(bytes, 12) as usize;
    if rows == 0 || cols == 0 || rows != cols {
        return Err(MnistError::BadDimensions {
            path: path.to_path_buf(),
            rows,
            cols,
        });
    }
    let expected = 16 + count * rows * cols;
    check_len(path, bytes, expected)?;
    Ok((count, rows, cols, bytes[16..expected].to_vec()))
}

pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>, MnistError> {
    check_len(path, bytes, 8)?;
    let magic = read_u32(bytes, 0);
    if magic != LABEL_MAGIC {
        return Err(MnistError::BadMagic {
            path: path.to_path_buf(),
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(bytes, 4) as usize;
    check_len(path, bytes, 8 + count)?;
    let labels = bytes[8..8 + count].to_vec();
    if let Some(index) = labels.iter().position(|&l| l > 9) {
        return Err(MnistError::InvalidLabel {
            path: path.to_path_buf(),
            index,
            label: labels[index],
        });
    }
    Ok(labels)
}

/// Loads and validates one image/label file pair.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<ImageSet> {
    let image_bytes = read_file(images_path)?;
    let label_bytes = read_file(labels_path)?;
    let (count, rows, cols, pixels) = parse_idx_images(images_path, &image_bytes)?;
    let labels = parse_idx_labels(labels_path, &label_bytes)?;
    if labels.len() != count {
        return Err(MnistError::CountMismatch {
            images: count,
            labels: labels.len(),
        }
        .into());
    }
    Ok(ImageSet {
        rows,
        cols,
        pixels: pixels.into(),
        labels: labels.into(),
        index: (0..count).collect::<Vec<_>>().into(),
    })
}

impl MnistDataset {
    /// Loads the four standard files from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let p = |name: &str| -> PathBuf { dir.join(name) };
        Ok(Self {
            train: load_mnist_idx(&p("train-images-idx3-ubyte"), &p("train-labels-idx1-ubyte"))?,
            test: load_mnist_idx(&p("t10k-images-idx3-ubyte"), &p("t10k-labels-idx1-ubyte"))?,
        })
    }
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn pixels_per_image(&self) -> usize {
        self.rows * self.cols
    }

    pub fn raw_image(&self, i: usize) -> &[u8] {
        let n = self.pixels_per_image();
        let j = self.index[i];
        &self.pixels[j * n..(j + 1) * n]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[self.index[i]]
    }

    pub fn labels(&self) -> Vec<u8> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }

    /// Image `i` with intensities normalized to `[0, 1]`.
    pub fn image(&self, i: usize) -> ImageFunction {
        ImageFunction {
            pixels: self.raw_image(i).iter().map(|&b| b as f64 / 255.0).collect(),
            side: self.rows,
            label: self.label(i),
        }
    }

    /// The first `n` images (all of them when `n` is 0 or too large).
    pub fn take(&self, n: usize) -> ImageSet {
        let n = if n == 0 { self.len() } else { n.min(self.len()) };
        ImageSet {
            index: self.index[..n].to_vec().into(),
            ..self.clone()
        }
    }

    pub fn label_counts(&self) -> [usize; 10] {
        let mut counts = [0; 10];
        for i in 0..self.len() {
            counts[self.label(i) as usize] += 1;
        }
        counts
    }
}

impl FunctionSource for ImageSet {
    fn len(&self) -> usize {
        ImageSet::len(self)
    }

    fn instance(&self, index: usize) -> FunctionInstance {
        FunctionInstance {
            id: index,
            kind: FunctionKind::Image(self.image(index)),
        }
    }

    fn x_dim(&self) -> usize {
        2
    }
}
