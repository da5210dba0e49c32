use std::path::Path;

use snip::data::{write_idx, Dataset};
use snip::rng::Rng;
use snip::tensor::Tensor;

/// Sparse random "digits": each pixel is ink with probability 0.2.
pub fn fake_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = Rng::new(seed);
    let pixels: Vec<f32> = (0..n * 784).map(|_| if rng.uniform() < 0.2 { rng.uniform() as f32 } else { 0.0 }).collect();
    let labels = (0..n).map(|i| (i % 10) as u8).collect();
    Dataset::from_parts(Tensor::new(&[n, 1, 28, 28], pixels).unwrap(), labels).unwrap()
}

/// A directory laid out like MNIST, with `n_train` training and `n_test`
/// test examples.
pub fn fake_mnist(dir: &Path, n_train: usize, n_test: usize) {
    write_idx(&fake_dataset(n_train, 1), &dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte")).unwrap();
    write_idx(&fake_dataset(n_test, 2), &dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte")).unwrap();
}
