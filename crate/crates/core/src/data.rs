//! Dataset ingestion and batching.
//!
//! Handwritten-digit data arrives in the IDX binary format (big-endian
//! headers, u8 payload). Pixels are rescaled from [0, 255] to [-1, 1] by
//! v / 127.5 - 1. A synthetic blob dataset stands in when real data is
//! unavailable; its classes stay separable after global average pooling.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, IdxError, Result};
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

/// A labeled image set: `images` is N×C×H×W in [-1, 1], one label per
/// image.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub split: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }

    /// Extracts the rows named by `idx` into a contiguous batch.
    pub fn gather(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let shape = self.images.shape();
        let n = shape[0];
        let stride: usize = shape[1..].iter().product();
        let mut out = Tensor::zeros(
            std::iter::once(idx.len())
                .chain(shape[1..].iter().copied())
                .collect::<Vec<usize>>(),
        );
        let mut labels = Vec::with_capacity(idx.len());
        for (row, &i) in idx.iter().enumerate() {
            if i >= n {
                return Err(Error::Data(format!(
                    "batch index {i} out of range for {n} samples"
                )));
            }
            out.data_mut()[row * stride..(row + 1) * stride]
                .copy_from_slice(&self.images.data()[i * stride..(i + 1) * stride]);
            labels.push(self.labels[i]);
        }
        Ok((out, labels))
    }
}

fn read_u32_be(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn read_idx(path: &Path, expected_magic: u32, header_dims: usize) -> Result<(Vec<usize>, Vec<u8>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let name = path.display().to_string();
    let header_len = 4 * (1 + header_dims);
    if bytes.len() < header_len {
        return Err(IdxError::Truncated {
            path: name,
            expected_bytes: header_len as u64,
            found_bytes: bytes.len() as u64,
        }
        .into());
    }
    let magic = read_u32_be(&bytes, 0);
    if magic != expected_magic {
        return Err(IdxError::BadMagic {
            path: name,
            expected: expected_magic,
            found: magic,
        }
        .into());
    }
    let dims: Vec<usize> = (0..header_dims)
        .map(|d| read_u32_be(&bytes, 4 * (1 + d)) as usize)
        .collect();
    let payload = dims.iter().product::<usize>();
    if bytes.len() - header_len != payload {
        return Err(IdxError::Truncated {
            path: name,
            expected_bytes: payload as u64,
            found_bytes: (bytes.len() - header_len) as u64,
        }
        .into());
    }
    Ok((dims, bytes[header_len..].to_vec()))
}

/// Reads an IDX image file (magic 2051) into an N×1×H×W tensor in
/// [-1, 1].
pub fn load_idx_images(path: &Path) -> Result<Tensor> {
    let (dims, payload) = read_idx(path, IMAGE_MAGIC, 3)?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    let data: Vec<f64> = payload.iter().map(|&v| v as f64 / 127.5 - 1.0).collect();
    Tensor::new(vec![n, 1, h, w], data)
}

/// Reads an IDX label file (magic 2049).
pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let (_, payload) = read_idx(path, LABEL_MAGIC, 1)?;
    Ok(payload.into_iter().map(|v| v as usize).collect())
}

fn find_file(dir: &Path, names: &[&str]) -> Result<PathBuf> {
    for name in names {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Data(format!(
        "none of {names:?} found under {}",
        dir.display()
    )))
}

/// Loads the handwritten-digit split ("train" or "test") from a
/// directory holding the four standard uncompressed IDX files.
pub fn load_mnist(dir: &Path, split: &str) -> Result<Dataset> {
    let (image_names, label_names): (&[&str], &[&str]) = match split {
        "train" => (
            &["train-images-idx3-ubyte", "train-images.idx3-ubyte"],
            &["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"],
        ),
        "test" => (
            &["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"],
            &["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"],
        ),
        other => {
            return Err(Error::Config(format!(
                "unknown split {other:?}; expected \"train\" or \"test\""
            )))
        }
    };
    let images = load_idx_images(&find_file(dir, image_names)?)?;
    let labels = load_idx_labels(&find_file(dir, label_names)?)?;
    if images.shape()[0] != labels.len() {
        return Err(IdxError::CountMismatch {
            images: images.shape()[0],
            labels: labels.len(),
        }
        .into());
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Data(format!("label {bad} out of range 0..=9")));
    }
    Ok(Dataset {
        images,
        labels,
        split: split.to_string(),
    })
}

/// True when both splits of the digit data are present under `dir`.
pub fn mnist_available(dir: &Path) -> bool {
    load_mnist(dir, "train").is_ok() && load_mnist(dir, "test").is_ok()
}

/// Deterministic synthetic dataset: each class is a noisy intensity
/// blob with a class-specific mean level and a class-positioned bright
/// patch, so classes remain separable after global average pooling.
/// Up to 10 classes; images are 1×hw×hw.
pub fn synth_blobs(
    class_count: usize,
    per_class: usize,
    hw: usize,
    seed: u64,
) -> Result<Dataset> {
    if class_count == 0 || class_count > 10 {
        return Err(Error::Config(format!(
            "class_count must be in 1..=10, got {class_count}"
        )));
    }
    if per_class == 0 {
        return Err(Error::Config("per_class must be positive".to_string()));
    }
    if hw < 4 || !hw.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "image extent must be even and at least 4, got {hw}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = class_count * per_class;
    let mut images = Tensor::zeros(vec![n, 1, hw, hw]);
    let mut labels = Vec::with_capacity(n);
    let plane = hw * hw;
    for s in 0..n {
        let c = s % class_count;
        labels.push(c);
        let level = if class_count == 1 {
            0.0
        } else {
            -0.7 + 1.4 * c as f64 / (class_count - 1) as f64
        };
        // Class cues that survive convolution + global average pooling
        // (which is translation-invariant, so absolute positions carry
        // little signal): the mean level above, a grating whose
        // orientation and frequency identify the class, and a bright
        // patch for local texture. Orientations are assigned so classes
        // adjacent in mean level sit far apart in angle, keeping every
        // class pair separated in at least one strong cue; a small
        // network then separates the data within a few epochs of plain
        // SGD.
        let angle = std::f64::consts::TAU * c as f64 / class_count as f64;
        let r = hw as f64 / 3.0;
        let cy = hw as f64 / 2.0 + r * angle.sin();
        let cx = hw as f64 / 2.0 + r * angle.cos();
        let spread = (3 * c) % class_count;
        let theta = std::f64::consts::PI * spread as f64 / class_count as f64;
        let (dir_y, dir_x) = (theta.sin(), theta.cos());
        let cycles = 2.0 + (c % 2) as f64;
        let freq = std::f64::consts::TAU * cycles / hw as f64;
        let img = &mut images.data_mut()[s * plane..(s + 1) * plane];
        for y in 0..hw {
            for x in 0..hw {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                let bump = 0.9 * (-d2 / (hw as f64 / 8.0).powi(2)).exp();
                let wave = 0.4 * (freq * (y as f64 * dir_y + x as f64 * dir_x)).cos();
                let noise = rng.gen_range(-0.02..0.02);
                img[y * hw + x] = (level + bump + wave + noise).clamp(-1.0, 1.0);
            }
        }
    }
    Ok(Dataset {
        images,
        labels,
        split: format!("synth-{class_count}x{per_class}"),
    })
}

/// Index batches for one epoch: a seeded shuffle of 0..n cut into
/// `size`-sized runs. A trailing run of one sample is folded into the
/// previous batch so that batch statistics always see at least two
/// samples. The shuffle depends on (seed, epoch) only.
pub fn batches(n: usize, size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if size < 2 {
        return Err(Error::Config(format!(
            "batch size must be at least 2 (got {size}) so batch statistics are defined"
        )));
    }
    if n < 2 {
        return Err(Error::Config(format!(
            "need at least 2 samples to form a batch, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    order.shuffle(&mut rng);
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let tail = out.pop().unwrap();
        out.last_mut().unwrap().extend(tail);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_idx_images(path: &Path, magic: u32, images: &[[u8; 4]]) {
        let mut f = fs::File::create(path).unwrap();
        f.write_all(&magic.to_be_bytes()).unwrap();
        f.write_all(&(images.len() as u32).to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        for img in images {
            f.write_all(img).unwrap();
        }
    }

    fn write_idx_labels(path: &Path, magic: u32, labels: &[u8]) {
        let mut f = fs::File::create(path).unwrap();
        f.write_all(&magic.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
    }

    #[test]
    fn pixels_map_to_the_symmetric_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("train-images-idx3-ubyte");
        let lab = dir.path().join("train-labels-idx1-ubyte");
        write_idx_images(&img, IMAGE_MAGIC, &[[0, 255, 128, 64]]);
        write_idx_labels(&lab, LABEL_MAGIC, &[7]);
        let ds = load_mnist(dir.path(), "train").unwrap();
        assert_eq!(ds.images.shape(), &[1, 1, 2, 2]);
        let d = ds.images.data();
        assert_eq!(d[0], -1.0);
        assert_eq!(d[1], 1.0);
        assert!((d[2] - (128.0 / 127.5 - 1.0)).abs() < 1e-15);
        assert!((d[3] - (64.0 / 127.5 - 1.0)).abs() < 1e-15);
        assert_eq!(ds.labels, vec![7]);
        assert_eq!(ds.split, "train");
    }

    #[test]
    fn alternate_dotted_filenames_are_accepted() {
        let dir = tempfile::tempdir().unwrap();
        write_idx_images(
            &dir.path().join("t10k-images.idx3-ubyte"),
            IMAGE_MAGIC,
            &[[1, 2, 3, 4], [5, 6, 7, 8]],
        );
        write_idx_labels(&dir.path().join("t10k-labels.idx1-ubyte"), LABEL_MAGIC, &[0, 9]);
        let ds = load_mnist(dir.path(), "test").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.class_count(), 10);
    }

    #[test]
    fn bad_magic_is_reported_with_both_values() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("train-images-idx3-ubyte");
        write_idx_images(&img, 1234, &[[0, 0, 0, 0]]);
        match load_idx_images(&img) {
            Err(Error::Idx(IdxError::BadMagic {
                expected, found, ..
            })) => {
                assert_eq!(expected, 2051);
                assert_eq!(found, 1234);
            }
            other => panic!("expected bad-magic error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("x");
        let mut f = fs::File::create(&img).unwrap();
        f.write_all(&IMAGE_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&[9u8; 5]).unwrap(); // needs 8
        drop(f);
        match load_idx_images(&img) {
            Err(Error::Idx(IdxError::Truncated {
                expected_bytes,
                found_bytes,
                ..
            })) => {
                assert_eq!(expected_bytes, 8);
                assert_eq!(found_bytes, 5);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn image_label_count_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        write_idx_images(
            &dir.path().join("train-images-idx3-ubyte"),
            IMAGE_MAGIC,
            &[[0, 0, 0, 0], [1, 1, 1, 1]],
        );
        write_idx_labels(&dir.path().join("train-labels-idx1-ubyte"), LABEL_MAGIC, &[1, 2, 3]);
        match load_mnist(dir.path(), "train") {
            Err(Error::Idx(IdxError::CountMismatch { images, labels })) => {
                assert_eq!((images, labels), (2, 3));
            }
            other => panic!("expected count mismatch, got {other:?}"),
        }
    }

    #[test]
    fn missing_files_and_unknown_split_fail_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_mnist(dir.path(), "train"), Err(Error::Data(_))));
        assert!(matches!(load_mnist(dir.path(), "valid"), Err(Error::Config(_))));
        assert!(!mnist_available(dir.path()));
    }

    #[test]
    fn synthetic_blobs_are_deterministic_and_bounded() {
        let a = synth_blobs(4, 3, 8, 11).unwrap();
        let b = synth_blobs(4, 3, 8, 11).unwrap();
        let c = synth_blobs(4, 3, 8, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.images, c.images);
        assert_eq!(a.len(), 12);
        assert_eq!(a.class_count(), 4);
        assert!(a.images.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let mut counts = [0usize; 4];
        for &l in &a.labels {
            counts[l] += 1;
        }
        assert_eq!(counts, [3, 3, 3, 3]);
    }

    #[test]
    fn synthetic_blob_classes_differ_in_mean_intensity() {
        let ds = synth_blobs(3, 2, 8, 5).unwrap();
        let plane = 64;
        let mean = |s: usize| -> f64 {
            ds.images.data()[s * plane..(s + 1) * plane].iter().sum::<f64>() / plane as f64
        };
        // Per-class means are ordered and well separated.
        let m0 = (mean(0) + mean(3)) / 2.0;
        let m1 = (mean(1) + mean(4)) / 2.0;
        let m2 = (mean(2) + mean(5)) / 2.0;
        assert!(m0 + 0.3 < m1, "{m0} vs {m1}");
        assert!(m1 + 0.3 < m2, "{m1} vs {m2}");
    }

    #[test]
    fn synthetic_blob_config_is_validated() {
        assert!(matches!(synth_blobs(11, 1, 8, 0), Err(Error::Config(_))));
        assert!(matches!(synth_blobs(0, 1, 8, 0), Err(Error::Config(_))));
        assert!(matches!(synth_blobs(2, 0, 8, 0), Err(Error::Config(_))));
        assert!(matches!(synth_blobs(2, 1, 7, 0), Err(Error::Config(_))));
        assert!(matches!(synth_blobs(2, 1, 2, 0), Err(Error::Config(_))));
    }

    #[test]
    fn batches_cover_every_index_once() {
        for (n, size) in [(10, 3), (12, 4), (5, 8), (7, 2), (64, 64)] {
            let bs = batches(n, size, 9, 0).unwrap();
            let mut seen: Vec<usize> = bs.iter().flatten().copied().collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..n).collect::<Vec<_>>(), "n={n} size={size}");
            assert!(bs.iter().all(|b| b.len() >= 2), "n={n} size={size}");
        }
    }

    #[test]
    fn a_lonely_tail_joins_the_previous_batch() {
        let bs = batches(10, 3, 1, 0).unwrap();
        let sizes: Vec<usize> = bs.iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![3, 3, 4]);
    }

    #[test]
    fn batch_order_depends_on_seed_and_epoch_only() {
        let a = batches(32, 4, 7, 3).unwrap();
        let b = batches(32, 4, 7, 3).unwrap();
        let c = batches(32, 4, 7, 4).unwrap();
        let d = batches(32, 4, 8, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn degenerate_batching_requests_are_rejected() {
        assert!(matches!(batches(10, 1, 0, 0), Err(Error::Config(_))));
        assert!(matches!(batches(10, 0, 0, 0), Err(Error::Config(_))));
        assert!(matches!(batches(1, 4, 0, 0), Err(Error::Config(_))));
        assert!(matches!(batches(0, 4, 0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn gather_extracts_rows_in_request_order() {
        let ds = synth_blobs(2, 2, 4, 3).unwrap();
        let (img, lab) = ds.gather(&[2, 0]).unwrap();
        assert_eq!(img.shape(), &[2, 1, 4, 4]);
        assert_eq!(lab, vec![ds.labels[2], ds.labels[0]]);
        assert_eq!(
            &img.data()[0..16],
            &ds.images.data()[2 * 16..3 * 16]
        );
        assert!(matches!(ds.gather(&[9]), Err(Error::Data(_))));
    }
}
