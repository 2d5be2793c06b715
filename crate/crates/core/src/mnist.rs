//! MNIST in the IDX format: loading, one-hot targets, and seeded batching.
//!
//! Plain and gzip-compressed files are both accepted; compression is
//! detected from the gzip magic bytes, not the file name.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const CLASSES: usize = 10;

/// Images scaled into `[0, 1]`, one flattened image per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<u8>,
    classes: usize,
}

impl Dataset {
    /// A ten-class dataset.
    pub fn new(images: Tensor, labels: Vec<u8>) -> Result<Self> {
        Self::with_classes(images, labels, CLASSES)
    }

    /// Labels must lie in `0..classes`; targets are one-hot over `classes`.
    pub fn with_classes(images: Tensor, labels: Vec<u8>, classes: usize) -> Result<Self> {
        let (count, _) = images.dims2()?;
        if count != labels.len() {
            return Err(Error::dim("Dataset::new", images.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| usize::from(l) >= classes) {
            return Err(Error::Usage(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// The first `n` samples.
    pub fn take(&self, n: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.gather(&idx).map(|b| Dataset {
            images: b.x,
            labels: b.labels,
            classes: self.classes,
        })
    }

    pub fn gather(&self, indices: &[usize]) -> Result<Batch> {
        let x = self.images.select_rows(indices)?;
        let labels: Vec<u8> = indices.iter().map(|&i| self.labels[i]).collect();
        let y = one_hot(&labels, self.classes);
        Ok(Batch { x, y, labels })
    }

    /// A reproducible random batch, used for gradient snapshots.
    pub fn fixed_batch(&self, size: usize, seed: u64) -> Result<Batch> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(size);
        self.gather(&idx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    /// One-hot targets, batch × classes.
    pub y: Tensor,
    pub labels: Vec<u8>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn one_hot(labels: &[u8], classes: usize) -> Tensor {
    let mut t = Tensor::zeros(vec![labels.len().max(1), classes]);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[i * classes + usize::from(l)] = 1.0;
    }
    t
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                msg: format!("bad gzip stream: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn header(bytes: &[u8], path: &Path, words: usize) -> Result<Vec<usize>> {
    if bytes.len() < 4 * words {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("header needs {} bytes, file has {}", 4 * words, bytes.len()),
        });
    }
    Ok(bytes[..4 * words]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect())
}

fn check_magic(found: usize, expected: u32, path: &Path) -> Result<()> {
    if found != expected as usize {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("bad magic number 0x{found:08x}, expected 0x{expected:08x}"),
        });
    }
    Ok(())
}

fn check_payload(bytes: &[u8], offset: usize, expected: usize, path: &Path) -> Result<()> {
    let actual = bytes.len() - offset;
    if actual < expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("truncated payload: expected {expected} bytes, found {actual}"),
        });
    }
    Ok(())
}

/// Reads an IDX image file and its label file.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());

    let img = read_maybe_gz(ip)?;
    let h = header(&img, ip, 4)?;
    check_magic(h[0], IMAGES_MAGIC, ip)?;
    let (count, rows, cols) = (h[1], h[2], h[3]);
    let features = rows * cols;
    check_payload(&img, 16, count * features, ip)?;

    let lab = read_maybe_gz(lp)?;
    let h = header(&lab, lp, 2)?;
    check_magic(h[0], LABELS_MAGIC, lp)?;
    let label_count = h[1];
    check_payload(&lab, 8, label_count, lp)?;
    if label_count != count {
        return Err(Error::Format {
            path: lp.to_path_buf(),
            msg: format!("{label_count} labels for {count} images"),
        });
    }

    if count == 0 || features == 0 {
        return Err(Error::Format {
            path: ip.to_path_buf(),
            msg: "empty image file".into(),
        });
    }
    let pixels: Vec<f64> = img[16..16 + count * features]
        .iter()
        .map(|&p| f64::from(p) / 255.0)
        .collect();
    let images = Tensor::new(vec![count, features], pixels)?;
    let labels = lab[8..8 + count].to_vec();
    Dataset::new(images, labels).map_err(|e| Error::Format {
        path: lp.to_path_buf(),
        msg: e.to_string(),
    })
}

fn find_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    let candidates = [
        stem.to_string(),
        format!("{stem}.gz"),
        stem.replacen("-idx", ".idx", 1),
        format!("{}.gz", stem.replacen("-idx", ".idx", 1)),
    ];
    candidates
        .iter()
        .map(|c| dir.join(c))
        .find(|p| p.is_file())
        .ok_or_else(|| {
            Error::io(
                dir.join(stem),
                std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST file not found"),
            )
        })
}

/// Loads the canonical `(train, test)` pair from a directory holding the
/// four standard MNIST files.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let train = load_idx(
        find_file(dir, "train-images-idx3-ubyte")?,
        find_file(dir, "train-labels-idx1-ubyte")?,
    )?;
    let test = load_idx(
        find_file(dir, "t10k-images-idx3-ubyte")?,
        find_file(dir, "t10k-labels-idx1-ubyte")?,
    )?;
    Ok((train, test))
}

/// Seeded mini-batch schedule. Each epoch is a fresh permutation drawn from
/// a stream derived from `(seed, epoch)`; the final short batch is kept.
#[derive(Debug, Clone)]
pub struct BatchIterator<'a> {
    dataset: &'a Dataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
}

impl<'a> BatchIterator<'a> {
    pub fn new(dataset: &'a Dataset, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(BatchIterator {
            dataset,
            batch_size,
            seed,
            epoch: 0,
        })
    }

    /// Epochs handed out so far.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Index batches for the next epoch.
    pub fn next_epoch_indices(&mut self) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.epoch);
        self.epoch += 1;
        let mut order: Vec<usize> = (0..self.dataset.len()).collect();
        order.shuffle(&mut rng);
        order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }

    /// Materialized batches for the next epoch, produced lazily.
    pub fn next_epoch(&mut self) -> impl Iterator<Item = Result<Batch>> + 'a {
        let dataset = self.dataset;
        self.next_epoch_indices()
            .into_iter()
            .map(move |idx| dataset.gather(&idx))
    }
}
