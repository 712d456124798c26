//! Accuracy, prediction histograms, and the Frechet distance between
//! Gaussian summaries of embeddings.

use crate::dataset::DatasetBundle;
use crate::error::{DgError, Result};
use crate::linalg::{self, psd_sqrt};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mean and covariance of a set of embeddings.
#[derive(Debug, Clone)]
pub struct GaussianSummary<T> {
    pub mean: Vec<T>,
    /// Symmetric `[d, d]` covariance (unbiased, divisor `n - 1`).
    pub cov: Tensor<T>,
    pub count: usize,
}

impl<T: Scalar> GaussianSummary<T> {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Returns a copy with `eps` added to the covariance diagonal.
    pub fn regularized(&self, eps: T) -> GaussianSummary<T> {
        let d = self.dim();
        let mut cov = self.cov.clone();
        for i in 0..d {
            cov.data_mut()[i * d + i] += eps;
        }
        GaussianSummary {
            mean: self.mean.clone(),
            cov,
            count: self.count,
        }
    }
}

/// Column means and unbiased covariance of `count` rows of width `dim`.
/// The covariance is built from its upper triangle, so it is exactly
/// symmetric.
pub fn gaussian_summary<T: Scalar>(
    rows: &[T],
    count: usize,
    dim: usize,
) -> Result<GaussianSummary<T>> {
    if rows.len() != count * dim {
        return Err(DgError::Dimension(format!(
            "gaussian_summary got {} values for {count} x {dim}",
            rows.len()
        )));
    }
    if count < 2 {
        return Err(DgError::Contract(format!(
            "covariance needs at least 2 rows, got {count}"
        )));
    }
    let n = T::from_f64_const(count as f64);
    let mut mean = vec![T::zero(); dim];
    for r in 0..count {
        for j in 0..dim {
            mean[j] += rows[r * dim + j];
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }

    let denom = T::from_f64_const((count - 1) as f64);
    let mut cov = vec![T::zero(); dim * dim];
    for r in 0..count {
        let row = &rows[r * dim..(r + 1) * dim];
        for i in 0..dim {
            let di = row[i] - mean[i];
            for j in i..dim {
                cov[i * dim + j] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov[i * dim + j] / denom;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }
    Ok(GaussianSummary {
        mean,
        cov: Tensor::from_vec(vec![dim, dim], cov)?,
        count,
    })
}

/// Frechet distance between two Gaussians:
/// `sqrt(|m1 - m2|^2 + Tr(C1 + C2 - 2 (C1 C2)^(1/2)))`.
///
/// The cross term is computed in the stable symmetric form
/// `Tr(sqrt(S1 C2 S1))` with `S1 = sqrt(C1)`, which has the same trace as
/// `Tr((C1 C2)^(1/2))`; a slightly negative trace argument from roundoff is
/// clamped at zero before the outer square root.
pub fn frechet_distance<T: Scalar>(
    a: &GaussianSummary<T>,
    b: &GaussianSummary<T>,
) -> Result<T> {
    let d = a.dim();
    if b.dim() != d {
        return Err(DgError::Dimension(format!(
            "summary dims differ: {} vs {}",
            d,
            b.dim()
        )));
    }
    let mut mean_sq = T::zero();
    for i in 0..d {
        let diff = a.mean[i] - b.mean[i];
        mean_sq += diff * diff;
    }

    let s1 = psd_sqrt(&a.cov)?;
    let s1c2 = linalg::matmul_square(s1.data(), b.cov.data(), d);
    let mut inner = linalg::matmul_square(&s1c2, s1.data(), d);
    // symmetrize away roundoff before the second square root
    for i in 0..d {
        for j in (i + 1)..d {
            let v = (inner[i * d + j] + inner[j * d + i]) / T::from_f64_const(2.0);
            inner[i * d + j] = v;
            inner[j * d + i] = v;
        }
    }
    let cross = psd_sqrt(&Tensor::from_vec(vec![d, d], inner)?)?;

    let (tr_a, tr_b) = (linalg::trace(&a.cov), linalg::trace(&b.cov));
    let trace_term = tr_a + tr_b - T::from_f64_const(2.0) * linalg::trace(&cross);
    // anything below the roundoff floor of the traces is noise, and the
    // outer sqrt would amplify it; clamp so d(a, a) is exactly zero
    let floor = T::from_f64_const(1e-12) * (tr_a + tr_b).abs();
    let trace_term = if trace_term <= floor { T::zero() } else { trace_term };
    Ok((mean_sq + trace_term).sqrt())
}

/// Maps images to fixed-width embedding vectors.
pub trait Embedder: Sync {
    fn dim(&self) -> usize;
    fn embed(&self, bundle: &DatasetBundle, index: usize) -> Vec<f64>;
}

/// Grayscale downsample to an 8x8 grid, flattened to 64 values.
pub struct PixelEmbedder;

impl PixelEmbedder {
    pub const GRID: usize = 8;
}

impl Embedder for PixelEmbedder {
    fn dim(&self) -> usize {
        Self::GRID * Self::GRID
    }

    fn embed(&self, bundle: &DatasetBundle, index: usize) -> Vec<f64> {
        let (h, w) = (bundle.height(), bundle.width());
        let img = bundle.image_slice(index);
        let plane = h * w;
        let g = Self::GRID;
        let mut sums = vec![0.0f64; g * g];
        let mut counts = vec![0usize; g * g];
        for i in 0..h {
            let gi = (i * g) / h;
            for j in 0..w {
                let gj = (j * g) / w;
                let p = i * w + j;
                let lum =
                    0.299 * img[p] + 0.587 * img[plane + p] + 0.114 * img[2 * plane + p];
                sums[gi * g + gj] += lum;
                counts[gi * g + gj] += 1;
            }
        }
        for (s, &c) in sums.iter_mut().zip(&counts) {
            if c > 0 {
                *s /= c as f64;
            }
        }
        sums
    }
}

/// Covariance regularization added before the matrix square root.
pub const FID_COV_EPS: f64 = 1e-6;

/// Frechet distance between the embeddings of two index sets of a bundle.
/// Both covariances receive `+1e-6 I` before the square root.
pub fn fid_between_splits(
    bundle: &DatasetBundle,
    side_a: &[usize],
    side_b: &[usize],
    embedder: &dyn Embedder,
) -> Result<f64> {
    if side_a.len() < 2 || side_b.len() < 2 {
        return Err(DgError::Contract(format!(
            "each side needs at least 2 samples, got {} and {}",
            side_a.len(),
            side_b.len()
        )));
    }
    let dim = embedder.dim();
    let embed_side = |indices: &[usize]| -> Vec<f64> {
        let mut rows = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            rows.extend(embedder.embed(bundle, i));
        }
        rows
    };
    let a = gaussian_summary(&embed_side(side_a), side_a.len(), dim)?;
    let b = gaussian_summary(&embed_side(side_b), side_b.len(), dim)?;
    frechet_distance(&a.regularized(FID_COV_EPS), &b.regularized(FID_COV_EPS))
}

/// Fraction of correct predictions plus the histogram of predicted classes.
pub fn accuracy(
    predictions: &[usize],
    labels: &[usize],
    class_count: usize,
) -> Result<(f64, Vec<usize>)> {
    if predictions.is_empty() {
        return Err(DgError::Contract("accuracy of an empty prediction set".into()));
    }
    if predictions.len() != labels.len() {
        return Err(DgError::Dimension(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut histogram = vec![0usize; class_count];
    let mut correct = 0usize;
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= class_count {
            return Err(DgError::Contract(format!(
                "prediction {p} out of range for {class_count} classes"
            )));
        }
        histogram[p] += 1;
        if p == l {
            correct += 1;
        }
    }
    Ok((correct as f64 / predictions.len() as f64, histogram))
}
