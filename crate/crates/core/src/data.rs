//! IDX (MNIST-format) ingestion, splits, batching and dataset transforms.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train90,
    Val10,
    Test,
    /// Full file contents before any split.
    Full,
}

/// Images `n×1×rows×cols` in `[0, 1]` with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor<f32>,
    labels: Vec<u8>,
    split: Split,
}

/// One mini-batch, converted to the model's scalar type.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub inputs: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Real> Batch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))
}

/// Parses an IDX3 image file; returns `(n, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let body = &bytes[16..];
    let need = n * rows * cols;
    if body.len() != need {
        return Err(Error::Format(format!("image payload is {} bytes, header implies {need}", body.len())));
    }
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::Format("empty image file".into()));
    }
    Ok((n, rows, cols, body))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Format(format!("label payload is {} bytes, header implies {n}", body.len())));
    }
    Ok(body)
}

/// Loads an IDX image/label file pair; pixels are divided by 255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_bytes = read_file(images_path)?;
    let lbl_bytes = read_file(labels_path)?;
    let (n, rows, cols, pixels) = parse_idx_images(&img_bytes)?;
    let labels = parse_idx_labels(&lbl_bytes)?;
    if labels.len() != n {
        return Err(Error::Format(format!("{n} images but {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(Error::Format(format!("label {bad} outside 0..{NUM_CLASSES}")));
    }
    let data = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    Ok(Dataset {
        images: Tensor::new(&[n, 1, rows, cols], data)?,
        labels: labels.to_vec(),
        split: Split::Full,
    })
}

/// Writes a dataset back out as an IDX file pair, quantizing to 8 bits.
pub fn write_idx(d: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let [n, _, rows, cols] = d.images.shape() else { unreachable!("dataset images are 4-D") };
    let mut img = Vec::with_capacity(16 + d.images.len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [*n, *rows, *cols] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    img.extend(d.images.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    fs::File::create(images_path)?.write_all(&img)?;

    let mut lbl = Vec::with_capacity(8 + d.labels.len());
    lbl.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(d.labels.len() as u32).to_be_bytes());
    lbl.extend_from_slice(&d.labels);
    fs::File::create(labels_path)?.write_all(&lbl)?;
    Ok(())
}

/// Standard MNIST file names inside a dataset directory.
#[derive(Debug, Clone)]
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistFiles {
    pub fn in_dir(dir: &Path) -> Self {
        MnistFiles {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
        }
    }
}

/// The three splits every experiment works with.
#[derive(Debug, Clone)]
pub struct DataSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl DataSplits {
    pub fn load(files: &MnistFiles, split_seed: u64) -> Result<Self> {
        let full = load_idx(&files.train_images, &files.train_labels)?;
        let mut test = load_idx(&files.test_images, &files.test_labels)?;
        test.split = Split::Test;
        let (train, val) = split_train_val(&full, split_seed);
        Ok(DataSplits { train, val, test })
    }
}

impl Dataset {
    pub fn from_parts(images: Tensor<f32>, labels: Vec<u8>) -> Result<Self> {
        if images.shape().len() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::Data(format!(
                "images {:?} do not match {} labels",
                images.shape(),
                labels.len()
            )));
        }
        Ok(Dataset { images, labels, split: Split::Full })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Pixels per example.
    pub fn example_len(&self) -> usize {
        self.images.len() / self.len()
    }

    pub fn example_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let e = self.example_len();
        &self.images.data()[i * e..(i + 1) * e]
    }

    /// Subset in the given index order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let e = self.example_len();
        let mut data = Vec::with_capacity(indices.len() * e);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        Dataset {
            images: Tensor::new(&shape, data).expect("subset shape"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            split: self.split,
        }
    }

    pub fn batch<T: Real>(&self, indices: &[usize]) -> Batch<T> {
        let e = self.example_len();
        let mut data = Vec::with_capacity(indices.len() * e);
        for &i in indices {
            data.extend(self.image(i).iter().map(|&v| T::of_f64(v as f64)));
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        Batch {
            inputs: Tensor::new(&shape, data).expect("batch shape"),
            labels: indices.iter().map(|&i| self.labels[i] as usize).collect(),
        }
    }

    pub fn to_batch<T: Real>(&self) -> Batch<T> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.batch(&all)
    }

    pub fn class_histogram(&self) -> [usize; NUM_CLASSES] {
        let mut h = [0; NUM_CLASSES];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// Per-pixel mean image of the examples of `class` (or of all examples).
    pub fn mean_image(&self, class: Option<u8>) -> Vec<f64> {
        let e = self.example_len();
        let mut acc = vec![0.0f64; e];
        let mut count = 0usize;
        for i in 0..self.len() {
            if class.is_some_and(|c| c != self.labels[i]) {
                continue;
            }
            for (a, &v) in acc.iter_mut().zip(self.image(i)) {
                *a += v as f64;
            }
            count += 1;
        }
        if count > 0 {
            acc.iter_mut().for_each(|a| *a /= count as f64);
        }
        acc
    }
}

/// Deterministic 90/10 partition of a training set.
pub fn split_train_val(d: &Dataset, seed: u64) -> (Dataset, Dataset) {
    let (train_idx, val_idx) = split_indices(d.len(), seed);
    let mut train = d.select(&train_idx);
    let mut val = d.select(&val_idx);
    train.split = Split::Train90;
    val.split = Split::Val10;
    (train, val)
}

/// Indices chosen by [`split_train_val`], exposed for partition checks.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let perm = Rng::new(seed).derive("train-val-split").permutation(n);
    let n_val = n / 10;
    let mut val = perm[..n_val].to_vec();
    let mut train = perm[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// `n` examples of a single class, drawn uniformly without replacement.
pub fn curate_class_batch<T: Real>(d: &Dataset, class: usize, n: usize, rng: &mut Rng) -> Result<Batch<T>> {
    if class >= NUM_CLASSES {
        return Err(Error::Data(format!("class {class} outside 0..{NUM_CLASSES}")));
    }
    let pool: Vec<usize> = (0..d.len()).filter(|&i| d.labels[i] as usize == class).collect();
    if pool.len() < n || n == 0 {
        return Err(Error::Data(format!(
            "class {class} has {} examples, {n} requested",
            pool.len()
        )));
    }
    let picks = rng.sample_indices(pool.len(), n)?;
    let idx: Vec<usize> = picks.into_iter().map(|p| pool[p]).collect();
    Ok(d.batch(&idx))
}

/// Uniform sample of `n` distinct examples.
pub fn sample_batch<T: Real>(d: &Dataset, n: usize, rng: &mut Rng) -> Result<Batch<T>> {
    if n == 0 {
        return Err(Error::Data("batch size must be positive".into()));
    }
    let idx = rng.sample_indices(d.len(), n)?;
    Ok(d.batch(&idx))
}

/// Labels replaced by a uniform permutation of the same multiset.
pub fn shuffle_labels(d: &Dataset, rng: &mut Rng) -> Dataset {
    let mut labels = d.labels.clone();
    rng.shuffle(&mut labels);
    Dataset { images: d.images.clone(), labels, split: d.split }
}

/// `x -> 1 - x` on every pixel.
pub fn invert_images(d: &Dataset) -> Dataset {
    Dataset { images: d.images.map(|v| 1.0 - v), labels: d.labels.clone(), split: d.split }
}

/// Epoch-permutation sampler: each run of `len` consecutive draws is a
/// permutation of the dataset indices.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: Rng,
    n: usize,
    batch_size: usize,
    perm: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch_size: usize, rng: Rng) -> Result<Self> {
        if n == 0 || batch_size == 0 {
            return Err(Error::Data(format!("sampler over {n} items with batch size {batch_size}")));
        }
        Ok(BatchSampler { rng, n, batch_size, perm: Vec::new(), pos: 0 })
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch_size);
        while out.len() < self.batch_size {
            if self.pos == self.perm.len() {
                self.perm = self.rng.permutation(self.n);
                self.pos = 0;
            }
            let take = (self.batch_size - out.len()).min(self.perm.len() - self.pos);
            out.extend_from_slice(&self.perm[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}
