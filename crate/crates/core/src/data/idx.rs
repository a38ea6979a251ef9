//! IDX container reader and writer (the MNIST file format).
//!
//! Big-endian throughout. Image files: magic `0x00000803`, then `N`, `H`, `W`
//! as u32, then `N * H * W` bytes. Label files: magic `0x00000801`, then `N`,
//! then `N` bytes.

use std::io::{self, ErrorKind};
use std::path::Path;

use super::dataset::Dataset;
use crate::error::{DflError, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
const CLASSES: usize = 10;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> io::Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(io::Error::new(
                ErrorKind::UnexpectedEof,
                format!("needed {n} bytes at offset {}, file has {}", self.pos, self.bytes.len()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> io::Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn check_magic(found: u32, expected: u32, what: &str) -> Result<()> {
    if found != expected {
        return Err(DflError::Format(format!(
            "{what} file has magic {found:#010x}, expected {expected:#010x}"
        )));
    }
    Ok(())
}

/// Decode an image file into `(count, height, width, pixels)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut c = Cursor { bytes, pos: 0 };
    check_magic(c.u32()?, IMAGE_MAGIC, "image")?;
    let n = c.u32()? as usize;
    let h = c.u32()? as usize;
    let w = c.u32()? as usize;
    let pixels = c.take(n * h * w)?.to_vec();
    Ok((n, h, w, pixels))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut c = Cursor { bytes, pos: 0 };
    check_magic(c.u32()?, LABEL_MAGIC, "label")?;
    let n = c.u32()? as usize;
    Ok(c.take(n)?.to_vec())
}

pub fn encode_images(height: usize, width: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (height * width);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, n as u32, height as u32, width as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Load a pair of IDX files, scaling pixels by `1/255`.
pub fn load_idx(image_path: impl AsRef<Path>, label_path: impl AsRef<Path>) -> Result<Dataset> {
    let image_bytes = std::fs::read(image_path)?;
    let label_bytes = std::fs::read(label_path)?;
    let (n, h, w, pixels) = parse_images(&image_bytes)?;
    let labels = parse_labels(&label_bytes)?;
    if labels.len() != n {
        return Err(DflError::data(format!(
            "image file holds {n} records, label file {}",
            labels.len()
        )));
    }
    let images = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    Dataset::new(images, labels, (1, h, w), CLASSES)
}

/// Standard file names inside a dataset directory.
pub const TRAIN_FILES: (&str, &str) = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte");
pub const TEST_FILES: (&str, &str) = ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte");

/// Load `(train, test)` from a directory holding the four standard files.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let train = load_idx(dir.join(TRAIN_FILES.0), dir.join(TRAIN_FILES.1))?;
    let test = load_idx(dir.join(TEST_FILES.0), dir.join(TEST_FILES.1))?;
    Ok((train, test))
}
