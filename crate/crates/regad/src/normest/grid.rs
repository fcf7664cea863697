//! Per-position multivariate Gaussians fitted by streaming chunk merges.
//!
//! Scatter matrices and Cholesky factors are kept in packed lower-triangular
//! row-major form: entry `(r, c)` with `c <= r` lives at `r (r + 1) / 2 + c`.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array3, ArrayView3};
use rayon::prelude::*;

use crate::{RegadError, Result};

#[inline]
pub fn packed_len(c: usize) -> usize {
    c * (c + 1) / 2
}

#[inline]
fn packed_index(r: usize, c: usize) -> usize {
    r * (r + 1) / 2 + c
}

fn unpack_symmetric(packed: &[f64], c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(c, c, |r, col| {
        let (hi, lo) = if r >= col { (r, col) } else { (col, r) };
        packed[packed_index(hi, lo)]
    })
}

/// Running mean and scatter for every grid position.
pub struct GridAccumulator {
    height: usize,
    width: usize,
    channels: usize,
    count: usize,
    mean: Vec<f64>,
    scatter: Vec<f64>,
}

impl GridAccumulator {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        let positions = height * width;
        GridAccumulator {
            height,
            width,
            channels,
            count: 0,
            mean: vec![0.0; positions * channels],
            scatter: vec![0.0; positions * packed_len(channels)],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Merges a chunk of `H×W×C` feature maps.
    pub fn push(&mut self, chunk: &[ArrayView3<f64>]) -> Result<()> {
        let m = chunk.len();
        if m == 0 {
            return Ok(());
        }
        let (h, w, c) = (self.height, self.width, self.channels);
        for f in chunk {
            if f.dim() != (h, w, c) {
                return Err(RegadError::ShapeMismatch(format!(
                    "feature map {:?} does not match grid {:?}",
                    f.dim(),
                    (h, w, c)
                )));
            }
        }
        let n = self.count;
        let total = (n + m) as f64;
        let p = packed_len(c);

        self.mean
            .par_chunks_mut(c)
            .zip(self.scatter.par_chunks_mut(p))
            .enumerate()
            .for_each(|(pos, (mean, scatter))| {
                let (i, j) = (pos / w, pos % w);
                // Chunk mean and centred chunk matrix (m × c).
                let mut cm = vec![0.0; c];
                for f in chunk {
                    for (k, v) in cm.iter_mut().enumerate() {
                        *v += f[[i, j, k]];
                    }
                }
                cm.iter_mut().for_each(|v| *v /= m as f64);
                let x = DMatrix::from_fn(m, c, |r, k| chunk[r][[i, j, k]] - cm[k]);
                let s = x.transpose() * &x;

                let delta: Vec<f64> = (0..c).map(|k| cm[k] - mean[k]).collect();
                let cross = (n as f64) * (m as f64) / total;
                for r in 0..c {
                    for col in 0..=r {
                        scatter[packed_index(r, col)] += s[(r, col)] + cross * delta[r] * delta[col];
                    }
                }
                for k in 0..c {
                    mean[k] += delta[k] * (m as f64) / total;
                }
            });
        self.count += m;
        Ok(())
    }

    /// `Σ = S / (N − 1) + εI`, factorized per position.
    pub fn finish(self, epsilon: f64) -> Result<GaussianGrid> {
        if self.count < 2 {
            return Err(RegadError::TooFewFeatures(self.count));
        }
        if !(epsilon >= 0.0) {
            return Err(RegadError::InvalidInput(format!("epsilon {epsilon} must be >= 0")));
        }
        let (w, c) = (self.width, self.channels);
        let p = packed_len(c);
        let denom = (self.count - 1) as f64;
        let mut chol = self.scatter;
        chol.par_chunks_mut(p).enumerate().try_for_each(|(pos, buf)| {
            let mut cov = unpack_symmetric(buf, c) / denom;
            for k in 0..c {
                cov[(k, k)] += epsilon;
            }
            let l = cov
                .cholesky()
                .ok_or(RegadError::NotPositiveDefinite { i: pos / w, j: pos % w })?
                .unpack();
            for r in 0..c {
                for col in 0..=r {
                    buf[packed_index(r, col)] = l[(r, col)];
                }
            }
            Ok::<(), RegadError>(())
        })?;
        Ok(GaussianGrid {
            height: self.height,
            width: self.width,
            channels: c,
            mean: self.mean,
            chol,
            epsilon,
            n: self.count,
        })
    }
}

/// Per-position mean and Cholesky factor of the regularized covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// `H·W·C`, position-major.
    pub mean: Vec<f64>,
    /// `H·W·C(C+1)/2`, packed lower factors.
    pub chol: Vec<f64>,
    pub epsilon: f64,
    /// Number of pooled feature maps.
    pub n: usize,
}

impl GaussianGrid {
    fn pos(&self, i: usize, j: usize) -> usize {
        assert!(i < self.height && j < self.width, "position ({i}, {j}) outside grid");
        i * self.width + j
    }

    pub fn mean_at(&self, i: usize, j: usize) -> &[f64] {
        let c = self.channels;
        let p = self.pos(i, j);
        &self.mean[p * c..(p + 1) * c]
    }

    pub fn cholesky_at(&self, i: usize, j: usize) -> &[f64] {
        let q = packed_len(self.channels);
        let p = self.pos(i, j);
        &self.chol[p * q..(p + 1) * q]
    }

    /// Dense lower-triangular factor `L` with `Σ = L Lᵀ`.
    pub fn factor(&self, i: usize, j: usize) -> DMatrix<f64> {
        let c = self.channels;
        let packed = self.cholesky_at(i, j);
        DMatrix::from_fn(c, c, |r, col| if col <= r { packed[packed_index(r, col)] } else { 0.0 })
    }

    /// Reconstructed `Σ_ij` (including the `εI` term).
    pub fn covariance(&self, i: usize, j: usize) -> DMatrix<f64> {
        let l = self.factor(i, j);
        &l * l.transpose()
    }

    /// `√((f − μ)ᵀ Σ⁻¹ (f − μ))` by forward substitution on the packed factor.
    pub fn mahalanobis(&self, i: usize, j: usize, f: &[f64]) -> f64 {
        let c = self.channels;
        debug_assert_eq!(f.len(), c);
        let mu = self.mean_at(i, j);
        let l = self.cholesky_at(i, j);
        let mut y = vec![0.0; c];
        let mut norm = 0.0;
        for r in 0..c {
            let row = &l[packed_index(r, 0)..packed_index(r, 0) + r + 1];
            let mut acc = f[r] - mu[r];
            for k in 0..r {
                acc -= row[k] * y[k];
            }
            y[r] = acc / row[r];
            norm += y[r] * y[r];
        }
        norm.sqrt()
    }

    pub fn mean_map(&self) -> Array3<f64> {
        Array3::from_shape_vec((self.height, self.width, self.channels), self.mean.clone())
            .expect("mean length matches shape")
    }
}

/// Fits a grid from in-memory `H×W×C` maps in one chunk.
pub fn fit_gaussian_grid(features: &[Array3<f64>], epsilon: f64) -> Result<GaussianGrid> {
    let first = features.first().ok_or(RegadError::TooFewFeatures(0))?;
    let (h, w, c) = first.dim();
    let mut acc = GridAccumulator::new(h, w, c);
    let views: Vec<ArrayView3<f64>> = features.iter().map(|f| f.view()).collect();
    acc.push(&views)?;
    acc.finish(epsilon)
}

/// Explicit-inverse Mahalanobis distance, for cross-checking.
pub fn mahalanobis_dense(cov: &DMatrix<f64>, mean: &[f64], f: &[f64]) -> Option<f64> {
    let d = DVector::from_iterator(f.len(), f.iter().zip(mean).map(|(a, b)| a - b));
    let inv = cov.clone().try_inverse()?;
    Some((d.transpose() * inv * &d)[(0, 0)].max(0.0).sqrt())
}
