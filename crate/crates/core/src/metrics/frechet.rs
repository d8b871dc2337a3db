use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::codec::mel::MelSpectrogram;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Diagonal loading added to both fitted covariances.
pub const COV_REGULARIZER: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Generated,
    Reference,
}

/// `N × d` embedding vectors from one source.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub vectors: Matrix,
    pub source: Source,
}

impl EmbeddingSet {
    pub fn new(vectors: Matrix, source: Source) -> Self {
        Self { vectors, source }
    }

    pub fn from_rows(rows: &[Vec<f64>], source: Source) -> Result<Self> {
        Ok(Self { vectors: Matrix::from_rows(rows)?, source })
    }
}

/// Sample mean and unbiased covariance (plus the regularizer).
fn fit(set: &Matrix) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = set.shape();
    let x = DMatrix::from_row_slice(n, d, set.data());
    let mean = DVector::from_iterator(d, (0..d).map(|j| x.column(j).mean()));
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        for j in 0..d {
            row[j] -= mean[j];
        }
    }
    let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
    for i in 0..d {
        cov[(i, i)] += COV_REGULARIZER;
    }
    (mean, cov)
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `‖μ₁ − μ₂‖² + Tr(Σ₁ + Σ₂ − 2 (Σ₁Σ₂)^{1/2})`, with the trace of the cross
/// term taken as `Tr (Σ₁^{1/2} Σ₂ Σ₁^{1/2})^{1/2}` so both roots are of
/// symmetric matrices.
pub fn frechet_distance(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<f64> {
    let (na, da) = a.vectors.shape();
    let (nb, db) = b.vectors.shape();
    if na < 2 || nb < 2 {
        return Err(Error::Metric(format!("Fréchet fitting needs at least 2 vectors per set (got {na}, {nb})")));
    }
    if da != db {
        return Err(Error::Metric(format!("embedding widths differ ({da} vs {db})")));
    }
    if !a.vectors.is_finite() || !b.vectors.is_finite() {
        return Err(Error::Metric("embedding sets contain non-finite values".into()));
    }
    let (mu1, s1) = fit(&a.vectors);
    let (mu2, s2) = fit(&b.vectors);
    let r1 = psd_sqrt(&s1);
    let inner = &r1 * &s2 * &r1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner);
    if eig.eigenvalues.iter().any(|l| !l.is_finite()) {
        return Err(Error::Metric("covariance square root did not converge".into()));
    }
    let cross: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let diff = &mu1 - &mu2;
    let fd = diff.dot(&diff) + s1.trace() + s2.trace() - 2.0 * cross;
    if !fd.is_finite() {
        return Err(Error::Metric("Fréchet distance is not finite".into()));
    }
    Ok(fd.max(0.0))
}

/// Per-band mean and standard deviation of a log-mel spectrogram,
/// `2 · n_mels` values.
pub fn mel_statistics(mel: &MelSpectrogram) -> Vec<f64> {
    let v = &mel.values;
    let frames = v.cols().max(1) as f64;
    let mut means = Vec::with_capacity(v.rows());
    let mut stds = Vec::with_capacity(v.rows());
    for b in 0..v.rows() {
        let row = v.row(b);
        let m = row.iter().sum::<f64>() / frames;
        let var = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / frames;
        means.push(m);
        stds.push(var.sqrt());
    }
    means.extend(stds);
    means
}
