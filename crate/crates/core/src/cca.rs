//! Regularized linear canonical correlation analysis.
//!
//! Both views are whitened with their ridge-regularized covariances,
//! `(C_xx + reg I)^{-1/2}` and `(C_yy + reg I)^{-1/2}`; the singular value
//! decomposition of the whitened cross-covariance then gives the canonical
//! correlations (singular values) and directions (singular vectors mapped
//! back through the whitening).

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::io::{header_field, parse_header, read_container, write_container};
use crate::matrix::Matrix;

/// Relative eigenvalue threshold below which a regularized covariance is
/// treated as singular.
const SINGULAR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcaConfig {
    /// Ridge added to both within-view covariances.
    pub reg: f64,
    /// Overrides `reg` for the X view.
    pub reg_x: Option<f64>,
    /// Overrides `reg` for the Y view.
    pub reg_y: Option<f64>,
    /// Output dimension; defaults to `min(p, q, n - 1)`.
    pub r: Option<usize>,
}

impl Default for CcaConfig {
    fn default() -> Self {
        Self {
            reg: 1e-4,
            reg_x: None,
            reg_y: None,
            r: None,
        }
    }
}

impl CcaConfig {
    pub fn with_reg(reg: f64) -> Self {
        Self {
            reg,
            ..Self::default()
        }
    }

    fn ridges(&self) -> Result<(f64, f64)> {
        let rx = self.reg_x.unwrap_or(self.reg);
        let ry = self.reg_y.unwrap_or(self.reg);
        if !(rx >= 0.0) || !(ry >= 0.0) || !rx.is_finite() || !ry.is_finite() {
            return Err(Error::validation("CCA regularization must be finite and non-negative"));
        }
        Ok((rx, ry))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    X,
    Y,
}

/// Paired projections into the shared space.
#[derive(Debug, Clone, PartialEq)]
pub struct CcaModel {
    pub mean_x: Vec<f64>,
    pub mean_y: Vec<f64>,
    /// `r x p`.
    pub proj_x: Matrix,
    /// `r x q`.
    pub proj_y: Matrix,
    /// Canonical correlations, descending.
    pub correlations: Vec<f64>,
}

impl CcaModel {
    pub fn r(&self) -> usize {
        self.correlations.len()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = format!(
            "{CCA_MAGIC} p={} q={} r={}",
            self.mean_x.len(),
            self.mean_y.len(),
            self.r()
        );
        write_container(
            &header,
            &[
                &Matrix::row_vector(self.mean_x.clone()),
                &Matrix::row_vector(self.mean_y.clone()),
                &self.proj_x,
                &self.proj_y,
                &Matrix::row_vector(self.correlations.clone()),
            ],
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, blocks) = read_container(bytes, 5)?;
        let fields = parse_header(&header, CCA_MAGIC)?;
        let p: usize = header_field(&fields, "p")?;
        let q: usize = header_field(&fields, "q")?;
        let r: usize = header_field(&fields, "r")?;
        let mut it = blocks.into_iter();
        let mean_x = it.next().expect("five blocks");
        let mean_y = it.next().expect("five blocks");
        let proj_x = it.next().expect("five blocks");
        let proj_y = it.next().expect("five blocks");
        let corr = it.next().expect("five blocks");
        let shapes_ok = mean_x.rows() == 1
            && mean_x.cols() == p
            && mean_y.rows() == 1
            && mean_y.cols() == q
            && proj_x.rows() == r
            && proj_x.cols() == p
            && proj_y.rows() == r
            && proj_y.cols() == q
            && corr.rows() == 1
            && corr.cols() == r;
        if !shapes_ok {
            return Err(Error::format("CCA blocks do not match the header"));
        }
        Ok(CcaModel {
            mean_x: mean_x.into_vec(),
            mean_y: mean_y.into_vec(),
            proj_x,
            proj_y,
            correlations: corr.into_vec(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

const CCA_MAGIC: &str = "HGLMM-CCA v1";

fn centered(m: &Matrix) -> (Vec<f64>, DMatrix<f64>) {
    let mean = m.column_means();
    let mut c = m.to_dmatrix();
    for (j, mu) in mean.iter().enumerate() {
        c.column_mut(j).add_scalar_mut(-mu);
    }
    (mean, c)
}

/// `(C + ridge I)^{-1/2}` for a symmetric positive semi-definite `C`.
fn inverse_sqrt(mut cov: DMatrix<f64>, ridge: f64, view: &str) -> Result<DMatrix<f64>> {
    for i in 0..cov.nrows() {
        cov[(i, i)] += ridge;
    }
    let eig = SymmetricEigen::new(cov);
    let top = eig.eigenvalues.max();
    if !(top > 0.0) || eig.eigenvalues.iter().any(|&v| !(v > top * SINGULAR_TOL)) {
        return Err(Error::numerical(format!(
            "{view} covariance is singular; increase the regularization"
        )));
    }
    let inv = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
    Ok(&eig.eigenvectors * inv * eig.eigenvectors.transpose())
}

/// Fits paired projections maximizing the correlation between `X a` and `Y b`.
pub fn cca_fit(x: &Matrix, y: &Matrix, cfg: &CcaConfig) -> Result<CcaModel> {
    x.validate_input("CCA X view")?;
    y.validate_input("CCA Y view")?;
    if x.rows() != y.rows() {
        return Err(Error::shape(format!(
            "views must be paired row by row: {} vs {} rows",
            x.rows(),
            y.rows()
        )));
    }
    let n = x.rows();
    if n < 2 {
        return Err(Error::validation("CCA needs at least two paired observations"));
    }
    let (p, q) = (x.cols(), y.cols());
    let r = cfg.r.unwrap_or_else(|| p.min(q).min(n - 1));
    if r == 0 || r > p.min(q) {
        return Err(Error::validation(format!(
            "CCA output dimension must be in 1..={}, got {r}",
            p.min(q)
        )));
    }
    let (rx, ry) = cfg.ridges()?;
    let (mean_x, xc) = centered(x);
    let (mean_y, yc) = centered(y);
    let denom = n as f64 - 1.0;
    let cxx = xc.transpose() * &xc / denom;
    let cyy = yc.transpose() * &yc / denom;
    let cxy = xc.transpose() * &yc / denom;
    let wx = inverse_sqrt(cxx, rx, "X")?;
    let wy = inverse_sqrt(cyy, ry, "Y")?;
    let whitened = &wx * cxy * &wy;
    let svd = whitened.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut proj_x = Matrix::zeros(r, p);
    let mut proj_y = Matrix::zeros(r, q);
    let mut correlations = Vec::with_capacity(r);
    for (j, &idx) in order.iter().take(r).enumerate() {
        let a = &wx * u.column(idx);
        let b = &wy * v_t.row(idx).transpose();
        // Pin the sign of each pair: largest-magnitude X coefficient positive.
        let pivot = a.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for (dst, v) in proj_x.row_mut(j).iter_mut().zip(a.iter()) {
            *dst = sign * v;
        }
        for (dst, v) in proj_y.row_mut(j).iter_mut().zip(b.iter()) {
            *dst = sign * v;
        }
        correlations.push(svd.singular_values[idx]);
    }
    Ok(CcaModel {
        mean_x,
        mean_y,
        proj_x,
        proj_y,
        correlations,
    })
}

/// `(M - mean) P^T` for the chosen view.
pub fn project(model: &CcaModel, side: Side, m: &Matrix) -> Result<Matrix> {
    let (mean, proj) = match side {
        Side::X => (&model.mean_x, &model.proj_x),
        Side::Y => (&model.mean_y, &model.proj_y),
    };
    if m.cols() != mean.len() {
        return Err(Error::shape(format!(
            "{side:?} view expects {} columns, got {}",
            mean.len(),
            m.cols()
        )));
    }
    let mut out = Matrix::zeros(m.rows(), proj.rows());
    let mut c = vec![0.0; mean.len()];
    for i in 0..m.rows() {
        for ((dst, &v), &mu) in c.iter_mut().zip(m.row(i)).zip(mean) {
            *dst = v - mu;
        }
        for (o, row) in out.row_mut(i).iter_mut().zip(proj.iter_rows()) {
            *o = row.iter().zip(&c).map(|(a, b)| a * b).sum();
        }
    }
    Ok(out)
}

/// Cosine similarity after weighting both vectors by
/// `correlations^weight_exp`. A zero vector scores `-inf`.
pub fn similarity(u: &[f64], v: &[f64], weight_exp: f64, correlations: &[f64]) -> f64 {
    let weight = |j: usize| {
        if weight_exp == 0.0 {
            1.0
        } else {
            correlations.get(j).copied().unwrap_or(1.0).max(0.0).powf(weight_exp)
        }
    };
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (j, (&a, &b)) in u.iter().zip(v).enumerate() {
        let w = weight(j);
        let (a, b) = (a * w, b * w);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return f64::NEG_INFINITY;
    }
    dot / (nu.sqrt() * nv.sqrt())
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..count)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
        .collect()
}

/// Default regularization grid: 13 points from 1e-4 to 1e2.
pub fn default_reg_grid() -> Vec<f64> {
    log_grid(1e-4, 1e2, 13)
}
