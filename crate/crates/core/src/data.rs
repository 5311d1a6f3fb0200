//! Datasets and view generation. Training consumes samples only; labels exist
//! for evaluation and never reach the trainer (its signature takes the sample
//! matrix, not a Dataset).

use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::CarpError;
use crate::numerics::{sample_without_replacement, Matrix, Rng};

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

/// Isotropic Gaussian blobs: `classes` centers drawn uniformly on the unit
/// hypersphere and scaled by 4, `per_class` samples per center with
/// coordinate noise of standard deviation `spread`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
}

/// Seed for the dataset-construction PRNG stream, decorrelated from the
/// training stream (which uses the run seed directly) by a fixed xor.
pub fn dataset_seed(run_seed: u64) -> u64 {
    run_seed ^ 0xDA7A_5EED
}

pub fn make_blobs(spec: &BlobSpec, rng: &mut Rng) -> Dataset {
    assert!(spec.classes > 0 && spec.per_class > 0 && spec.dim > 0, "make_blobs: empty spec");
    assert!(spec.spread >= 0.0, "make_blobs: negative spread");

    let mut centers = Matrix::zeros(spec.classes, spec.dim);
    for c in 0..spec.classes {
        let row = centers.row_mut(c);
        for v in row.iter_mut() {
            *v = rng.next_normal();
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        for v in row.iter_mut() {
            *v *= 4.0 / norm;
        }
    }

    let n = spec.classes * spec.per_class;
    let mut samples = Matrix::zeros(n, spec.dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..spec.classes {
        for i in 0..spec.per_class {
            let r = c * spec.per_class + i;
            let row = samples.row_mut(r);
            for (v, &center) in row.iter_mut().zip(centers.row(c)) {
                *v = center + spec.spread * rng.next_normal();
            }
            labels.push(c);
        }
    }
    Dataset { samples, labels, num_classes: spec.classes }
}

/// Stochastic view corruption: additive Gaussian coordinate noise followed by
/// zeroing a fixed number of randomly chosen coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewConfig {
    pub noise_sigma: f64,
    /// Fraction of coordinates to zero; the count is floor(fraction * dim).
    pub mask_fraction: f64,
}

impl ViewConfig {
    pub fn masked_count(&self, dim: usize) -> usize {
        (self.mask_fraction * dim as f64).floor() as usize
    }
}

/// Two independent corrupted views of every row. Draw order per sample:
/// view 1 noise then view 1 mask, view 2 noise then view 2 mask; this order
/// is part of the reproducibility contract.
pub fn make_views(batch: &Matrix, cfg: &ViewConfig, rng: &mut Rng) -> (Matrix, Matrix) {
    assert!(cfg.noise_sigma >= 0.0, "make_views: negative noise");
    assert!((0.0..=1.0).contains(&cfg.mask_fraction), "make_views: mask_fraction outside [0,1]");
    let dim = batch.cols();
    let masked = cfg.masked_count(dim);
    let mut v1 = batch.clone();
    let mut v2 = batch.clone();
    for i in 0..batch.rows() {
        for out in [&mut v1, &mut v2] {
            let row = out.row_mut(i);
            for v in row.iter_mut() {
                *v += cfg.noise_sigma * rng.next_normal();
            }
            for m in sample_without_replacement(rng, dim, masked) {
                row[m] = 0.0;
            }
        }
    }
    (v1, v2)
}

/// Big-endian IDX files (the classic image/label container): images carry
/// magic 0x00000803 and three dimensions, labels 0x00000801 and one. Pixel
/// bytes are scaled to [0,1].
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset, CarpError> {
    let image_bytes = read_file(images)?;
    let label_bytes = read_file(labels)?;

    let (img_dims, img_payload) = parse_idx(&image_bytes, 0x0000_0803, 3, "image file")?;
    let (lab_dims, lab_payload) = parse_idx(&label_bytes, 0x0000_0801, 1, "label file")?;

    let count = img_dims[0];
    if lab_dims[0] != count {
        return Err(CarpError::Idx(format!(
            "count mismatch: {count} images but {} labels",
            lab_dims[0]
        )));
    }
    let width = img_dims[1] * img_dims[2];
    if count == 0 || width == 0 {
        return Err(CarpError::Idx("empty image set".into()));
    }

    let data: Vec<f64> = img_payload.iter().map(|&b| b as f64 / 255.0).collect();
    let samples = Matrix::from_vec(count, width, data);
    let labels: Vec<usize> = lab_payload.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Ok(Dataset { samples, labels, num_classes })
}

fn read_file(path: &Path) -> Result<Vec<u8>, CarpError> {
    let mut buf = Vec::new();
    File::open(path)
        .map_err(|e| CarpError::Idx(format!("cannot open {}: {e}", path.display())))?
        .read_to_end(&mut buf)?;
    Ok(buf)
}

fn parse_idx<'a>(
    bytes: &'a [u8],
    magic: u32,
    ndims: usize,
    what: &str,
) -> Result<(Vec<usize>, &'a [u8]), CarpError> {
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(CarpError::Idx(format!("{what}: truncated header")));
    }
    let got = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    if got != magic {
        return Err(CarpError::Idx(format!(
            "{what}: bad magic 0x{got:08X}, expected 0x{magic:08X}"
        )));
    }
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        let off = 4 + 4 * d;
        dims.push(u32::from_be_bytes(bytes[off..off + 4].try_into().unwrap()) as usize);
    }
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(CarpError::Idx(format!(
            "{what}: payload holds {} bytes, header promises {expected}",
            payload.len()
        )));
    }
    Ok((dims, payload))
}
