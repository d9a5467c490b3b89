//! Dataset construction and ingestion: seeded synthetic blob generators,
//! IDX-format image loading, CSV loading, normalization statistics, and
//! deterministic splits.
//!
//! Every generator and split is a pure function of its seed; loaders reject
//! malformed input with a diagnostic naming the offending byte or row and
//! never return a partially built dataset.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Per-feature standardization statistics, always computed from a training
/// split and then applied to the other splits.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Labeled feature matrix. Labels are dense class indices in `[0, K)`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    features: Tensor,
    labels: Vec<usize>,
    n_classes: usize,
    /// Statistics used to normalize these features, if any.
    pub normalization: Option<NormStats>,
    /// Original label values for CSV datasets whose classes were remapped.
    pub label_map: Option<Vec<i64>>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Tensor,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        if !features.is_matrix() {
            return Err(Error::dimension(format!(
                "features must be [n,dim], got {:?}",
                features.shape()
            )));
        }
        if features.rows() != labels.len() {
            return Err(Error::validation(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::validation(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        features.check_finite("features")?;
        Ok(Dataset {
            name: name.into(),
            features,
            labels,
            n_classes,
            normalization: None,
            label_map: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// One-hot label matrix `[n, K]`.
    pub fn one_hot_labels(&self) -> Tensor {
        let k = self.n_classes;
        let mut data = vec![0.0; self.len() * k];
        for (i, &l) in self.labels.iter().enumerate() {
            data[i * k + l] = 1.0;
        }
        Tensor::new(vec![self.len(), k], data).expect("shape is consistent by construction")
    }

    /// New dataset holding the given rows, in order.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Result<Dataset> {
        let dim = self.dim();
        let mut data = Vec::with_capacity(indices.len() * dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::validation(format!(
                    "subset index {i} out of range for {} samples",
                    self.len()
                )));
            }
            data.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        Ok(Dataset {
            name: name.into(),
            features: Tensor::new(vec![indices.len(), dim], data)?,
            labels,
            n_classes: self.n_classes,
            normalization: self.normalization.clone(),
            label_map: self.label_map.clone(),
        })
    }

    /// Standardize features with the given (training-split) statistics.
    pub fn normalized(&self, stats: &NormStats) -> Result<Dataset> {
        if stats.mean.len() != self.dim() || stats.std.len() != self.dim() {
            return Err(Error::dimension(format!(
                "normalization statistics of dim {} do not match data dim {}",
                stats.mean.len(),
                self.dim()
            )));
        }
        let dim = self.dim();
        let mut out = self.clone();
        let data = out.features.data_mut();
        for (i, v) in data.iter_mut().enumerate() {
            let d = i % dim;
            *v = (*v - stats.mean[d]) / stats.std[d];
        }
        out.normalization = Some(stats.clone());
        Ok(out)
    }
}

/// Seeded multiclass Gaussian blobs: K cluster centers drawn from
/// `N(0, centers_spread^2)` per coordinate, samples from
/// `N(center, within_std^2)`.
pub fn make_blobs(
    n_classes: usize,
    n_per_class: usize,
    dim: usize,
    centers_spread: f64,
    within_std: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_classes < 2 {
        return Err(Error::validation(format!(
            "need at least 2 classes, got {n_classes}"
        )));
    }
    if n_per_class < 1 || dim < 1 {
        return Err(Error::validation(format!(
            "need positive samples per class and dim, got {n_per_class} and {dim}"
        )));
    }
    if centers_spread < 0.0 || within_std < 0.0 {
        return Err(Error::validation(
            "centers_spread and within_std must be nonnegative",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![0.0; n_classes * dim];
    for c in centers.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *c = centers_spread * z;
    }
    let n = n_classes * n_per_class;
    let mut data = vec![0.0; n * dim];
    let mut labels = vec![0usize; n];
    for class in 0..n_classes {
        for s in 0..n_per_class {
            let row = class * n_per_class + s;
            labels[row] = class;
            for d in 0..dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                data[row * dim + d] = centers[class * dim + d] + within_std * z;
            }
        }
    }
    Dataset::new(
        format!("blobs-k{n_classes}-seed{seed}"),
        Tensor::new(vec![n, dim], data)?,
        labels,
        n_classes,
    )
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::format(format!(
            "{}: truncated at byte {offset}, expected 4 more bytes",
            path.display()
        )));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Load an IDX image/label file pair (big-endian, unsigned bytes).
///
/// Images need magic `0x00000803` with dims `count x rows x cols`; labels need
/// magic `0x00000801` with a single dim. Pixels are scaled to `[0,1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_bytes = fs::read(images_path)?;
    let lbl_bytes = fs::read(labels_path)?;

    let magic = read_be_u32(&img_bytes, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(format!(
            "{}: bad magic {magic:#010x} at byte 0, expected {IDX_IMAGES_MAGIC:#010x}",
            images_path.display()
        )));
    }
    let count = read_be_u32(&img_bytes, 4, images_path)? as usize;
    let rows = read_be_u32(&img_bytes, 8, images_path)? as usize;
    let cols = read_be_u32(&img_bytes, 12, images_path)? as usize;
    let pixels = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::format(format!("{}: dims overflow", images_path.display())))?;
    if img_bytes.len() != 16 + pixels {
        return Err(Error::format(format!(
            "{}: expected {} pixel bytes after the 16-byte header, found {}",
            images_path.display(),
            pixels,
            img_bytes.len().saturating_sub(16)
        )));
    }

    let magic = read_be_u32(&lbl_bytes, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(format!(
            "{}: bad magic {magic:#010x} at byte 0, expected {IDX_LABELS_MAGIC:#010x}",
            labels_path.display()
        )));
    }
    let lbl_count = read_be_u32(&lbl_bytes, 4, labels_path)? as usize;
    if lbl_bytes.len() != 8 + lbl_count {
        return Err(Error::format(format!(
            "{}: expected {} label bytes after the 8-byte header, found {}",
            labels_path.display(),
            lbl_count,
            lbl_bytes.len().saturating_sub(8)
        )));
    }
    if lbl_count != count {
        return Err(Error::validation(format!(
            "{} images but {} labels",
            count, lbl_count
        )));
    }

    let dim = rows * cols;
    let data: Vec<f64> = img_bytes[16..]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    let labels: Vec<usize> = lbl_bytes[8..].iter().map(|&b| b as usize).collect();
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1).max(2);
    Dataset::new(
        images_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "idx".to_string()),
        Tensor::new(vec![count, dim], data)?,
        labels,
        n_classes,
    )
}

/// Write raw image bytes as an IDX file (round-trip partner of [`load_idx`]).
pub fn write_idx_images(path: &Path, count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != count * rows * cols {
        return Err(Error::validation(format!(
            "expected {} pixel bytes, got {}",
            count * rows * cols,
            pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(count as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    fs::write(path, out)?;
    Ok(())
}

/// Write raw label bytes as an IDX file.
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out)?;
    Ok(())
}

/// Load a rectangular numeric CSV with a header row. The named label column
/// supplies integer class ids which are remapped densely to `0..K-1` (the
/// original ids are recorded in `label_map`).
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| {
            Error::validation(format!(
                "{}: no column named {label_column:?} in header {:?}",
                path.display(),
                headers.iter().collect::<Vec<_>>()
            ))
        })?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<i64> = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let mut features = Vec::with_capacity(record.len().saturating_sub(1));
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| {
                Error::format(format!(
                    "{}: row {}, column {:?}: non-numeric cell {field:?}",
                    path.display(),
                    row_no + 1,
                    headers.get(col).unwrap_or("?")
                ))
            })?;
            if col == label_idx {
                if value.fract() != 0.0 {
                    return Err(Error::format(format!(
                        "{}: row {}: label {value} is not an integer",
                        path.display(),
                        row_no + 1
                    )));
                }
                raw_labels.push(value as i64);
            } else {
                features.push(value);
            }
        }
        rows.push(features);
    }

    let mut distinct: Vec<i64> = raw_labels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::validation(format!(
            "{}: need at least 2 distinct classes, found {}",
            path.display(),
            distinct.len()
        )));
    }
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| distinct.binary_search(l).expect("label came from this set"))
        .collect();

    let mut ds = Dataset::new(
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "csv".to_string()),
        Tensor::from_rows(&rows)?,
        labels,
        distinct.len(),
    )?;
    ds.label_map = Some(distinct);
    Ok(ds)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::format(format!("{}: {e}", path.display()))
}

/// Per-feature mean and standard deviation of a training split, with the
/// standard deviation floored at 1e-8 so constant features normalize to zero.
pub fn normalize_stats(train: &Dataset) -> Result<NormStats> {
    if train.is_empty() {
        return Err(Error::validation(
            "cannot compute normalization statistics of an empty dataset",
        ));
    }
    let (n, dim) = (train.len(), train.dim());
    let mut mean = vec![0.0; dim];
    for i in 0..n {
        let row = train.features().row(i);
        for d in 0..dim {
            mean[d] += row[d];
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut var = vec![0.0; dim];
    for i in 0..n {
        let row = train.features().row(i);
        for d in 0..dim {
            let diff = row[d] - mean[d];
            var[d] += diff * diff;
        }
    }
    let std = var
        .iter()
        .map(|v| (v / n as f64).sqrt().max(1e-8))
        .collect();
    Ok(NormStats { mean, std })
}

/// Split fractions plus the shuffle seed. The partition is exact: every index
/// lands in exactly one split.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

/// Seeded shuffle followed by contiguous cuts.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let sum = spec.train + spec.val + spec.test;
    if (sum - 1.0).abs() > 1e-9 || spec.train < 0.0 || spec.val < 0.0 || spec.test < 0.0 {
        return Err(Error::validation(format!(
            "split fractions ({}, {}, {}) must be nonnegative and sum to 1",
            spec.train, spec.val, spec.test
        )));
    }
    let n = dataset.len();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Fisher-Yates.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
    let n_train = (spec.train * n as f64).floor() as usize;
    let n_val = (spec.val * n as f64).floor() as usize;
    let train = dataset.subset(&indices[..n_train], format!("{}-train", dataset.name))?;
    let val = dataset.subset(
        &indices[n_train..n_train + n_val],
        format!("{}-val", dataset.name),
    )?;
    let test = dataset.subset(&indices[n_train + n_val..], format!("{}-test", dataset.name))?;
    Ok((train, val, test))
}
