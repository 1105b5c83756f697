//! MNIST in IDX format.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder};
use sha2::{Digest, Sha256};

use crate::error::{McaError, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Images kept as raw bytes; pixel values are `byte / 255`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageSet {
    pub rows: usize,
    pub cols: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl ImageSet {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if pixels.len() != rows * cols * labels.len() {
            return Err(McaError::Data(format!(
                "{} pixel bytes do not hold {} images of {rows}x{cols}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(k) = labels.iter().position(|&l| l > 9) {
            return Err(McaError::Data(format!(
                "label {} at index {k} outside [0, 9]",
                labels[k]
            )));
        }
        Ok(Self {
            rows,
            cols,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels_per_image(&self) -> usize {
        self.rows * self.cols
    }

    pub fn label(&self, k: usize) -> usize {
        self.labels[k] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn raw_image(&self, k: usize) -> &[u8] {
        let n = self.pixels_per_image();
        &self.pixels[k * n..(k + 1) * n]
    }

    /// Image `k` scaled to [0, 1].
    pub fn image(&self, k: usize) -> Vec<f64> {
        self.raw_image(k).iter().map(|&b| b as f64 / 255.0).collect()
    }

    /// The first `n` examples (all of them if `n` exceeds the size).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels[..n * self.pixels_per_image()].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DatasetBundle {
    pub train: ImageSet,
    pub test: ImageSet,
    /// File name to SHA-256 hex digest.
    pub digests: BTreeMap<String, String>,
}

fn header_u32(path: &Path, bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(BigEndian::read_u32)
        .ok_or_else(|| McaError::Parse {
            path: path.to_path_buf(),
            offset: offset as u64,
            msg: "file truncated inside the header".into(),
        })
}

fn expect_magic(path: &Path, bytes: &[u8], want: u32) -> Result<()> {
    let got = header_u32(path, bytes, 0)?;
    if got != want {
        return Err(McaError::Parse {
            path: path.to_path_buf(),
            offset: 0,
            msg: format!("bad magic number {got:#010x}, expected {want:#010x}"),
        });
    }
    Ok(())
}

fn body<'a>(path: &Path, bytes: &'a [u8], offset: usize, len: usize) -> Result<&'a [u8]> {
    bytes.get(offset..offset + len).ok_or_else(|| McaError::Parse {
        path: path.to_path_buf(),
        offset: bytes.len() as u64,
        msg: format!("file truncated: expected {} bytes, found {}", offset + len, bytes.len()),
    })
}

/// `(rows, cols, pixels)` from an IDX3 image file.
pub fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    expect_magic(path, bytes, IMAGE_MAGIC)?;
    let count = header_u32(path, bytes, 4)? as usize;
    let rows = header_u32(path, bytes, 8)? as usize;
    let cols = header_u32(path, bytes, 12)? as usize;
    Ok((rows, cols, body(path, bytes, 16, count * rows * cols)?.to_vec()))
}

pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    expect_magic(path, bytes, LABEL_MAGIC)?;
    let count = header_u32(path, bytes, 4)? as usize;
    Ok(body(path, bytes, 8, count)?.to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| McaError::Data(format!("{}: {e}", path.display())))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Loads one image/label file pair.
pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<ImageSet> {
    let (set, _) = load_pair(images, labels)?;
    Ok(set)
}

fn load_pair(images: &Path, labels: &Path) -> Result<(ImageSet, [String; 2])> {
    let ib = read(images)?;
    let lb = read(labels)?;
    let (rows, cols, pixels) = parse_idx_images(images, &ib)?;
    let lab = parse_idx_labels(labels, &lb)?;
    let n_img = pixels.len() / (rows * cols).max(1);
    if n_img != lab.len() {
        return Err(McaError::Data(format!(
            "{} holds {n_img} images but {} holds {} labels",
            images.display(),
            labels.display(),
            lab.len()
        )));
    }
    Ok((
        ImageSet::new(rows, cols, pixels, lab)?,
        [sha256_hex(&ib), sha256_hex(&lb)],
    ))
}

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Loads the four standard MNIST files from `dir`.
pub fn load_mnist_dir(dir: &Path) -> Result<DatasetBundle> {
    let p = |name: &str| -> PathBuf { dir.join(name) };
    let (train, td) = load_pair(&p(TRAIN_IMAGES), &p(TRAIN_LABELS))?;
    let (test, sd) = load_pair(&p(TEST_IMAGES), &p(TEST_LABELS))?;
    let mut digests = BTreeMap::new();
    for (name, d) in [TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS]
        .into_iter()
        .zip(td.into_iter().chain(sd))
    {
        digests.insert(name.to_string(), d);
    }
    Ok(DatasetBundle { train, test, digests })
}

/// Serializes a set back to IDX bytes `(images, labels)`.
pub fn to_idx(set: &ImageSet) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + set.pixels.len());
    for v in [IMAGE_MAGIC, set.len() as u32, set.rows as u32, set.cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(&set.pixels);
    let mut lab = Vec::with_capacity(8 + set.len());
    for v in [LABEL_MAGIC, set.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(&set.labels);
    (img, lab)
}
