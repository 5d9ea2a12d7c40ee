//! Datasets: MNIST IDX ingestion, seeded Gaussian blobs, train/validation
//! splits and per-epoch shuffled batches.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LeapError, Result};
use crate::models::Batch;
use crate::rng::{domain, RngStream};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// An in-memory labelled dataset, one example per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
    /// Hex SHA-256 of the source bytes (IDX) or of the generated values.
    pub checksum: String,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>, num_classes: usize, name: impl Into<String>) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(LeapError::Contract(format!("{} rows but {} labels", inputs.nrows(), labels.len())));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(LeapError::Contract(format!("label {y} outside [0, {num_classes})")));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(LeapError::numeric("dataset inputs", "non-finite feature"));
        }
        let checksum = values_checksum(&inputs, &labels);
        Ok(Dataset {
            inputs,
            labels,
            num_classes,
            name: name.into(),
            checksum,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Dataset {
        let inputs = self.inputs.select(Axis(0), indices);
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        let checksum = values_checksum(&inputs, &labels);
        Dataset {
            inputs,
            labels,
            num_classes: self.num_classes,
            name: name.into(),
            checksum,
        }
    }

    /// The whole dataset as one batch.
    pub fn as_batch(&self) -> Result<Batch> {
        Batch::new(self.inputs.clone(), self.labels.clone())
    }

    /// Per-feature mean and standard deviation (std floored at 1e-8).
    pub fn feature_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.len().max(1) as f64;
        let mean = self.inputs.sum_axis(Axis(0)) / n;
        let mut var = vec![0.0; self.dim()];
        for row in self.inputs.rows() {
            for (j, v) in row.iter().enumerate() {
                let d = v - mean[j];
                var[j] += d * d / n;
            }
        }
        (mean.to_vec(), var.iter().map(|v| v.sqrt().max(1e-8)).collect())
    }

    /// Standardize features with externally supplied moments.
    pub fn standardize_with(&mut self, mean: &[f64], std: &[f64]) {
        for mut row in self.inputs.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean[j]) / std[j];
            }
        }
        self.checksum = values_checksum(&self.inputs, &self.labels);
    }
}

fn values_checksum(inputs: &Array2<f64>, labels: &[usize]) -> String {
    let mut h = Sha256::new();
    for v in inputs.iter() {
        h.update(v.to_le_bytes());
    }
    for &y in labels {
        h.update((y as u64).to_le_bytes());
    }
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| LeapError::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(|e| LeapError::Parse {
            path: path.to_path_buf(),
            offset: 0,
            reason: format!("gzip stream: {e}"),
        })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| LeapError::Parse {
            path: path.to_path_buf(),
            offset: offset as u64,
            reason: "truncated header".into(),
        })
}

/// Decode an IDX image file: magic `0x00000803`, then `n, rows, cols`, then
/// `n * rows * cols` unsigned bytes. Returns `(n, rows * cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(LeapError::Parse {
            path: path.to_path_buf(),
            offset: 0,
            reason: format!("bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"),
        });
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let d = rows * cols;
    let need = 16 + n * d;
    if bytes.len() < need {
        return Err(LeapError::Parse {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            reason: format!("truncated payload: {n} images of {d} pixels need {need} bytes"),
        });
    }
    Ok((n, d, bytes[16..need].to_vec()))
}

/// Decode an IDX label file: magic `0x00000801`, then `n`, then `n` bytes.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(LeapError::Parse {
            path: path.to_path_buf(),
            offset: 0,
            reason: format!("bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"),
        });
    }
    let n = be_u32(bytes, 4, path)? as usize;
    if bytes.len() < 8 + n {
        return Err(LeapError::Parse {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            reason: format!("truncated payload: {n} labels need {} bytes", 8 + n),
        });
    }
    Ok(bytes[8..8 + n].to_vec())
}

/// Load an MNIST image/label pair. Gzip-compressed files are accepted.
/// Pixels are scaled by 1/255 into `[0, 1]`.
pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let image_bytes = read_maybe_gzip(ip)?;
    let label_bytes = read_maybe_gzip(lp)?;
    let (n, d, pixels) = parse_idx_images(&image_bytes, ip)?;
    let labels = parse_idx_labels(&label_bytes, lp)?;
    if labels.len() != n {
        return Err(LeapError::Parse {
            path: lp.to_path_buf(),
            offset: 4,
            reason: format!("{} labels but {n} images", labels.len()),
        });
    }
    if let Some(pos) = labels.iter().position(|&y| y > 9) {
        return Err(LeapError::Parse {
            path: lp.to_path_buf(),
            offset: 8 + pos as u64,
            reason: format!("label {} outside 0..=9", labels[pos]),
        });
    }
    let inputs = Array2::from_shape_vec((n, d), pixels.iter().map(|&p| f64::from(p) / 255.0).collect())
        .expect("shape computed from header");
    let mut h = Sha256::new();
    h.update(&image_bytes);
    h.update(&label_bytes);
    let name = ip.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Dataset {
        inputs,
        labels: labels.into_iter().map(usize::from).collect(),
        num_classes: 10,
        name,
        checksum: hex(&h.finalize()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_n: usize,
    pub val_n: usize,
    pub seed: u64,
}

/// Seeded permutation; the first `train_n` indices train, the next `val_n`
/// validate.
pub fn split_train_val(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if spec.train_n + spec.val_n > dataset.len() {
        return Err(LeapError::config(
            "data.split",
            format!("train_n + val_n = {} exceeds the {} available examples", spec.train_n + spec.val_n, dataset.len()),
        ));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    RngStream::for_domain(spec.seed, domain::SPLIT, 0).shuffle(&mut order);
    let train = dataset.subset(&order[..spec.train_n], format!("{}/train", dataset.name));
    let val = dataset.subset(&order[spec.train_n..spec.train_n + spec.val_n], format!("{}/val", dataset.name));
    Ok((train, val))
}

/// Gaussian blobs with unit-variance isotropic noise.
///
/// When `num_classes <= dim`, class `c` is centred at `separation * e_c`
/// (pairwise centre distance `separation * sqrt(2)`). Otherwise centres sit
/// on a circle in the first two coordinates with adjacent distance
/// `separation`. For `separation >= 8` the classes are linearly separable
/// with overwhelming probability.
pub fn synth_blobs(n_per_class: usize, num_classes: usize, dim: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 || num_classes == 0 || dim == 0 {
        return Err(LeapError::config("data.blobs", "n_per_class, num_classes and dim must all be >= 1"));
    }
    if num_classes > dim && dim < 2 {
        return Err(LeapError::config("data.blobs.dim", "more classes than dimensions requires dim >= 2"));
    }
    if !(separation.is_finite() && separation > 0.0) {
        return Err(LeapError::config("data.blobs.separation", format!("must be > 0, got {separation}")));
    }
    let center = |c: usize| -> Vec<f64> {
        let mut v = vec![0.0; dim];
        if num_classes <= dim {
            v[c] = separation;
        } else {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / num_classes as f64;
            let radius = separation / (2.0 * (std::f64::consts::PI / num_classes as f64).sin());
            v[0] = radius * angle.cos();
            v[1] = radius * angle.sin();
        }
        v
    };
    let mut rng = RngStream::for_domain(seed, domain::DATA, 0);
    let n = n_per_class * num_classes;
    let mut inputs = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for c in 0..num_classes {
        let mu = center(c);
        for k in 0..n_per_class {
            let row = c * n_per_class + k;
            for j in 0..dim {
                inputs[[row, j]] = mu[j] + rng.standard_normal();
            }
            labels.push(c);
        }
    }
    Dataset::new(inputs, labels, num_classes, format!("blobs-{num_classes}x{n_per_class}-d{dim}-s{separation}"))
}

/// Index partition of one epoch: a seeded shuffle cut into chunks of
/// `batch_size`, the last one possibly shorter.
pub fn epoch_batch_indices(n: usize, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(LeapError::config("data.batch_size", "must be >= 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    RngStream::for_domain(epoch_seed, domain::SHUFFLE, 0).shuffle(&mut order);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Batches of one epoch in seeded order.
pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    batches: std::vec::IntoIter<Vec<usize>>,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let idx = self.batches.next()?;
        Some(Batch {
            inputs: self.dataset.inputs.select(Axis(0), &idx),
            labels: idx.iter().map(|&i| self.dataset.labels[i]).collect(),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.batches.size_hint()
    }
}

impl ExactSizeIterator for BatchIter<'_> {}

pub fn batch_iterator(dataset: &Dataset, batch_size: usize, epoch_seed: u64) -> Result<BatchIter<'_>> {
    let batches = epoch_batch_indices(dataset.len(), batch_size, epoch_seed)?;
    Ok(BatchIter {
        dataset,
        batches: batches.into_iter(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8], magic: u32) -> Vec<u8> {
        let mut v = Vec::new();
        for w in [magic, n, rows, cols] {
            v.extend_from_slice(&w.to_be_bytes());
        }
        v.extend_from_slice(pixels);
        v
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn two_image_fixture_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let pixels = [0u8, 255, 128, 3, 255, 0, 0, 10];
        let ip = write(dir.path(), "img", &idx_images(2, 2, 2, &pixels, IDX_IMAGES_MAGIC));
        let lp = write(dir.path(), "lbl", &idx_labels(&[7, 0]));
        let ds = load_mnist_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.labels, vec![7, 0]);
        assert_eq!(ds.inputs[[0, 0]], 0.0);
        assert_eq!(ds.inputs[[0, 1]], 1.0);
        assert_eq!(ds.inputs[[0, 2]], 128.0 / 255.0);
        let again = load_mnist_idx(&ip, &lp).unwrap();
        assert_eq!(ds.checksum, again.checksum);
    }

    #[test]
    fn gzip_files_are_transparent() {
        let dir = tempfile::tempdir().unwrap();
        let raw = idx_images(1, 1, 3, &[1, 2, 3], IDX_IMAGES_MAGIC);
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&raw).unwrap();
        let ip = write(dir.path(), "img.gz", &enc.finish().unwrap());
        let lp = write(dir.path(), "lbl", &idx_labels(&[4]));
        let ds = load_mnist_idx(&ip, &lp).unwrap();
        assert_eq!(ds.inputs.row(0).to_vec(), vec![1.0 / 255.0, 2.0 / 255.0, 3.0 / 255.0]);
    }

    #[test]
    fn wrong_magic_reports_offset_zero() {
        let dir = tempfile::tempdir().unwrap();
        let ip = write(dir.path(), "img", &idx_images(1, 1, 1, &[0], 0x0000_0802));
        let lp = write(dir.path(), "lbl", &idx_labels(&[0]));
        match load_mnist_idx(&ip, &lp) {
            Err(LeapError::Parse { offset, reason, .. }) => {
                assert_eq!(offset, 0);
                assert!(reason.contains("0x00000802"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let ip = write(dir.path(), "img", &idx_images(2, 2, 2, &[0; 5], IDX_IMAGES_MAGIC));
        let lp = write(dir.path(), "lbl", &idx_labels(&[0, 1]));
        assert!(matches!(load_mnist_idx(&ip, &lp), Err(LeapError::Parse { offset: 21, .. })));
        let ip = write(dir.path(), "img2", &idx_images(2, 1, 1, &[0; 2], IDX_IMAGES_MAGIC));
        let lp = write(dir.path(), "lbl2", &idx_labels(&[0, 1, 2]));
        assert!(matches!(load_mnist_idx(&ip, &lp), Err(LeapError::Parse { .. })));
        let ip = write(dir.path(), "short", &[0, 0, 8]);
        assert!(matches!(load_mnist_idx(&ip, &lp), Err(LeapError::Parse { offset: 0, .. })));
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let ds = synth_blobs(50, 2, 3, 4.0, 1).unwrap();
        let spec = SplitSpec {
            train_n: 70,
            val_n: 30,
            seed: 9,
        };
        let (tr, va) = split_train_val(&ds, &spec).unwrap();
        assert_eq!((tr.len(), va.len()), (70, 30));
        let (tr2, va2) = split_train_val(&ds, &spec).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(va, va2);
        // Rows of blobs are distinct almost surely; compare as bit patterns.
        let key = |d: &Dataset, r: usize| d.inputs.row(r).iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        let train_rows: std::collections::HashSet<_> = (0..tr.len()).map(|r| key(&tr, r)).collect();
        assert!((0..va.len()).all(|r| !train_rows.contains(&key(&va, r))));
        let (full, empty) = split_train_val(&ds, &SplitSpec { train_n: 100, val_n: 0, seed: 9 }).unwrap();
        assert_eq!((full.len(), empty.len()), (100, 0));
        assert!(split_train_val(&ds, &SplitSpec { train_n: 90, val_n: 11, seed: 9 }).is_err());
    }

    #[test]
    fn blobs_are_seeded_and_sized() {
        let a = synth_blobs(5, 3, 4, 2.0, 3).unwrap();
        let b = synth_blobs(5, 3, 4, 2.0, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(synth_blobs(1, 4, 2, 2.0, 3).unwrap().len(), 4);
        assert_ne!(a.checksum, synth_blobs(5, 3, 4, 2.0, 4).unwrap().checksum);
    }

    #[test]
    fn batch_sizes_and_partition() {
        let b = epoch_batch_indices(10, 3, 1).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3, 1]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(b, epoch_batch_indices(10, 3, 1).unwrap());
        assert_ne!(b, epoch_batch_indices(10, 3, 2).unwrap());
        let ds = synth_blobs(5, 2, 2, 3.0, 0).unwrap();
        let sizes: Vec<usize> = batch_iterator(&ds, 4, 0).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }
}
