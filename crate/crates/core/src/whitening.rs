//! PCA and ICA transforms for descriptor spaces.
//!
//! ICA is symmetric FastICA with the log-cosh contrast (`g = tanh`) run on
//! PCA-whitened data. Both transforms map a row `x` to `W (x - mean)`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::io::{header_field, parse_header, read_container, write_container};
use crate::matrix::Matrix;

/// Eigenvalues below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    Pca,
    Ica,
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransformKind::Pca => "pca",
            TransformKind::Ica => "ica",
        })
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(TransformKind::Pca),
            "ica" => Ok(TransformKind::Ica),
            other => Err(Error::validation(format!(
                "unknown transform kind {other:?}; expected pca or ica"
            ))),
        }
    }
}

/// Affine map `x -> weights (x - mean)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTransform {
    pub mean: Vec<f64>,
    /// `D_out x D_in`.
    pub weights: Matrix,
    pub kind: TransformKind,
}

impl LinearTransform {
    pub fn d_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weights.rows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.weights.cols() {
            return Err(Error::shape("transform mean does not match its input width"));
        }
        if self.d_out() == 0 || self.d_out() > self.d_in() {
            return Err(Error::validation("transform output width must be in 1..=input width"));
        }
        if !self.weights.is_finite() || self.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("transform has non-finite entries"));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = format!(
            "{TRANSFORM_MAGIC} kind={} D_in={} D_out={}",
            self.kind,
            self.d_in(),
            self.d_out()
        );
        write_container(&header, &[&Matrix::row_vector(self.mean.clone()), &self.weights])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, mut blocks) = read_container(bytes, 2)?;
        let fields = parse_header(&header, TRANSFORM_MAGIC)?;
        let kind: TransformKind = header_field::<String>(&fields, "kind")?
            .parse()
            .map_err(|_| Error::format("unknown transform kind in header"))?;
        let d_in: usize = header_field(&fields, "D_in")?;
        let d_out: usize = header_field(&fields, "D_out")?;
        let weights = blocks.pop().expect("two blocks");
        let mean = blocks.pop().expect("two blocks");
        if mean.rows() != 1 || mean.cols() != d_in || weights.rows() != d_out || weights.cols() != d_in {
            return Err(Error::format("transform blocks do not match the header"));
        }
        let t = LinearTransform {
            mean: mean.into_vec(),
            weights,
            kind,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

const TRANSFORM_MAGIC: &str = "HGLMM-TRANSFORM v1";

/// `(X - mean) W^T`.
pub fn apply(t: &LinearTransform, x: &Matrix) -> Result<Matrix> {
    if x.cols() != t.d_in() {
        return Err(Error::shape(format!(
            "transform expects {} columns, got {}",
            t.d_in(),
            x.cols()
        )));
    }
    let mut out = Matrix::zeros(x.rows(), t.d_out());
    let mut centered = vec![0.0; t.d_in()];
    for i in 0..x.rows() {
        for ((c, &v), &m) in centered.iter_mut().zip(x.row(i)).zip(&t.mean) {
            *c = v - m;
        }
        for (o, w) in out.row_mut(i).iter_mut().zip(t.weights.iter_rows()) {
            *o = w.iter().zip(&centered).map(|(a, b)| a * b).sum();
        }
    }
    Ok(out)
}

struct Spectrum {
    mean: Vec<f64>,
    centered: DMatrix<f64>,
    /// Eigenvalues, descending.
    values: Vec<f64>,
    /// Matching unit eigenvectors as columns.
    vectors: DMatrix<f64>,
}

fn spectrum(x: &Matrix) -> Result<Spectrum> {
    x.validate_input("whitening input")?;
    if x.rows() < 2 {
        return Err(Error::validation("whitening needs at least two samples"));
    }
    let mean = x.column_means();
    let mut centered = x.to_dmatrix();
    for (j, m) in mean.iter().enumerate() {
        centered.column_mut(j).add_scalar_mut(-m);
    }
    let cov = centered.transpose() * &centered / (x.rows() as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(x.cols(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(Spectrum {
        mean,
        centered,
        values,
        vectors,
    })
}

fn check_rank(values: &[f64], out_dim: usize) -> Result<()> {
    if out_dim == 0 || out_dim > values.len() {
        return Err(Error::validation(format!(
            "output dimension must be in 1..={}, got {out_dim}",
            values.len()
        )));
    }
    let top = values.first().copied().unwrap_or(0.0);
    let rank = if top > 0.0 {
        values.iter().filter(|&&v| v > top * RANK_TOL).count()
    } else {
        0
    };
    if out_dim > rank {
        return Err(Error::RankDeficient {
            requested: out_dim,
            achievable: rank,
        });
    }
    Ok(())
}

/// Flips each row so that its largest-magnitude entry is positive.
fn fix_signs(w: &mut Matrix) {
    for i in 0..w.rows() {
        let row = w.row_mut(i);
        let pivot = row
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
    }
}

/// Principal components, eigenvalue-descending, as an orthonormal projection.
pub fn pca_fit(x: &Matrix, out_dim: usize) -> Result<LinearTransform> {
    let sp = spectrum(x)?;
    check_rank(&sp.values, out_dim)?;
    let mut weights = Matrix::from_dmatrix(&sp.vectors.columns(0, out_dim).transpose());
    fix_signs(&mut weights);
    Ok(LinearTransform {
        mean: sp.mean,
        weights,
        kind: TransformKind::Pca,
    })
}

/// FastICA settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcaConfig {
    pub max_iters: usize,
    /// Convergence threshold on `max_i | |<w_i, w_i_prev>| - 1 |`.
    pub tol: f64,
    pub seed: u64,
}

impl Default for IcaConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-6,
            seed: 0,
        }
    }
}

/// Result of [`ica_fit`]. When `converged` is false the last iterate is
/// returned.
#[derive(Debug, Clone, PartialEq)]
pub struct IcaFit {
    pub transform: LinearTransform,
    pub converged: bool,
    pub iterations: usize,
}

/// `(W W^T)^{-1/2} W`.
fn symmetric_decorrelation(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(w * w.transpose());
    if eig.eigenvalues.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::numerical("ICA unmixing matrix became singular"));
    }
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
    Ok(&eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose() * w)
}

/// Independent components of `x`, `out_dim` of them.
pub fn ica_fit(x: &Matrix, out_dim: usize, cfg: &IcaConfig) -> Result<IcaFit> {
    let sp = spectrum(x)?;
    check_rank(&sp.values, out_dim)?;
    let n = x.rows() as f64;
    // Whitening: rows are eigenvectors scaled by 1/sqrt(eigenvalue).
    let whitening = DMatrix::from_fn(out_dim, x.cols(), |r, c| {
        sp.vectors[(c, r)] / sp.values[r].sqrt()
    });
    let z = &sp.centered * whitening.transpose();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = DMatrix::from_fn(out_dim, out_dim, |_, _| StandardNormal.sample(&mut rng));
    let mut w = symmetric_decorrelation(&init)?;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let projected = &z * w.transpose();
        let g = projected.map(f64::tanh);
        let g_prime_mean: Vec<f64> = (0..out_dim)
            .map(|j| g.column(j).iter().map(|v| 1.0 - v * v).sum::<f64>() / n)
            .collect();
        let mut next = g.transpose() * &z / n;
        for (j, gp) in g_prime_mean.iter().enumerate() {
            let scaled = w.row(j) * *gp;
            let mut row = next.row_mut(j);
            row -= scaled;
        }
        let next = symmetric_decorrelation(&next)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("ICA iteration produced non-finite values"));
        }
        let change = (0..out_dim)
            .map(|j| (next.row(j).dot(&w.row(j)).abs() - 1.0).abs())
            .fold(0.0, f64::max);
        w = next;
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    let mut weights = Matrix::from_dmatrix(&(&w * whitening));
    fix_signs(&mut weights);
    Ok(IcaFit {
        transform: LinearTransform {
            mean: sp.mean,
            weights,
            kind: TransformKind::Ica,
        },
        converged,
        iterations,
    })
}
