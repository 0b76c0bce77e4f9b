//! Fisher Vector encoders.
//!
//! A descriptor set is summarized by the gradient of its log-likelihood with
//! respect to the location and scale of every (component, dimension) pair,
//! giving `2 K D` coordinates for all three mixture families. Gaussian
//! dimensions contribute mean and standard-deviation gradients, Laplacian
//! dimensions location and scale gradients:
//!
//! | branch    | location gradient                    | scale gradient                               |
//! |-----------|--------------------------------------|----------------------------------------------|
//! | Gaussian  | `sum_i T_ki (x - mu) / sigma^2`      | `sum_i T_ki ((x - mu)^2 / sigma^3 - 1/sigma)` |
//! | Laplacian | `sum_i T_ki sgn(x - m) / s`          | `sum_i T_ki (|x - m| / s^2 - 1/s)`            |
//!
//! where `sgn` is `+1` for `x > m` and `-1` otherwise. The encoded vector is
//! the raw gradient rescaled by the inverse square root of the approximate
//! Fisher information diagonal, then power-normalized and L2-normalized.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::mixtures::{e_step, Mixture, Term, TermTable};

/// Gradient representation of one descriptor set.
///
/// Layout: for each component `k`, for each dimension `d`, the pair
/// `[location(k, d), scale(k, d)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherVector {
    k: usize,
    d: usize,
    values: Vec<f64>,
}

impl FisherVector {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn location(&self, k: usize, d: usize) -> f64 {
        self.values[2 * (k * self.d + d)]
    }

    pub fn scale(&self, k: usize, d: usize) -> f64 {
        self.values[2 * (k * self.d + d) + 1]
    }
}

/// Approximate Fisher information diagonal in the [`FisherVector`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FimDiagonal {
    pub values: Vec<f64>,
    /// Descriptor count used in the closed forms.
    pub n_ref: usize,
}

/// Post-processing applied by [`encode`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodeConfig {
    /// Exponent of the signed power normalization, in `[0, 1]`.
    pub alpha: f64,
    pub apply_fim: bool,
    pub apply_l2: bool,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            apply_fim: true,
            apply_l2: true,
        }
    }
}

impl EncodeConfig {
    /// The raw gradient, untouched.
    pub fn raw() -> Self {
        Self {
            alpha: 1.0,
            apply_fim: false,
            apply_l2: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::validation(format!(
                "power normalization exponent must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

fn check_set(x_set: &Matrix, model: &Mixture) -> Result<()> {
    if x_set.rows() == 0 {
        return Err(Error::validation("cannot encode an empty descriptor set"));
    }
    if x_set.cols() != model.d() {
        return Err(Error::shape(format!(
            "descriptors have {} columns, model dimension is {}",
            x_set.cols(),
            model.d()
        )));
    }
    if !x_set.is_finite() {
        return Err(Error::validation("descriptor set has non-finite values"));
    }
    Ok(())
}

/// Raw log-likelihood gradient of `x_set` with respect to every location and
/// scale parameter. Weights and selectors are not differentiated.
pub fn fv_raw(x_set: &Matrix, model: &Mixture) -> Result<FisherVector> {
    check_set(x_set, model)?;
    let resp = e_step(x_set, model)?.responsibilities;
    let table = TermTable::new(model);
    let (k, d) = (table.k, table.d);
    let mut values = vec![0.0; 2 * k * d];
    for c in 0..k {
        let terms = table.component(c);
        let out = &mut values[2 * c * d..2 * (c + 1) * d];
        for (i, row) in x_set.iter_rows().enumerate() {
            let t = resp.get(i, c);
            for ((pair, term), &x) in out.chunks_exact_mut(2).zip(terms).zip(row) {
                let (loc, scale) = gradient_terms(term, x);
                pair[0] += t * loc;
                pair[1] += t * scale;
            }
        }
    }
    Ok(FisherVector { k, d, values })
}

/// Per-sample gradient of `ln f(x)` for one term.
#[inline]
fn gradient_terms(term: &Term, x: f64) -> (f64, f64) {
    match *term {
        Term::Gaussian { mu, sigma, .. } => {
            let diff = x - mu;
            let var = sigma * sigma;
            (diff / var, diff * diff / (var * sigma) - 1.0 / sigma)
        }
        Term::Laplacian { m, s, .. } => {
            let sign = if x > m { 1.0 } else { -1.0 };
            (sign / s, (x - m).abs() / (s * s) - 1.0 / s)
        }
    }
}

/// Closed-form Fisher information diagonal for a set of `n` descriptors:
/// `N tau / sigma^2` and `2 N tau / sigma^2` on Gaussian dimensions,
/// `N tau / s^2` for both coordinates on Laplacian dimensions.
pub fn fim_diagonal(model: &Mixture, n: usize) -> Result<FimDiagonal> {
    if n == 0 {
        return Err(Error::validation("Fisher information needs at least one descriptor"));
    }
    model.validate()?;
    let table = TermTable::new(model);
    let tau = model.tau();
    let nf = n as f64;
    let mut values = Vec::with_capacity(2 * table.k * table.d);
    for c in 0..table.k {
        let weight = nf * tau[c];
        for term in table.component(c) {
            match *term {
                Term::Gaussian { sigma, .. } => {
                    let base = weight / (sigma * sigma);
                    values.push(base);
                    values.push(2.0 * weight / (sigma * sigma));
                }
                Term::Laplacian { s, .. } => {
                    let base = weight / (s * s);
                    values.push(base);
                    values.push(base);
                }
            }
        }
    }
    Ok(FimDiagonal { values, n_ref: n })
}

/// `sign(z) |z|^alpha` element-wise; zeros stay zero.
pub fn power_normalize(values: &mut [f64], alpha: f64) {
    if alpha == 1.0 {
        return;
    }
    for v in values.iter_mut() {
        if *v != 0.0 {
            *v = v.signum() * v.abs().powf(alpha);
        }
    }
}

/// Scales to unit Euclidean norm. An all-zero vector is left unchanged.
pub fn l2_normalize(values: &mut [f64]) {
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        values.iter_mut().for_each(|v| *v /= norm);
    }
}

/// Normalized Fisher Vector: information scaling, then power, then L2.
pub fn encode(x_set: &Matrix, model: &Mixture, cfg: &EncodeConfig) -> Result<FisherVector> {
    cfg.validate()?;
    let mut fv = fv_raw(x_set, model)?;
    if cfg.apply_fim {
        let fim = fim_diagonal(model, x_set.rows())?;
        for (v, f) in fv.values.iter_mut().zip(&fim.values) {
            *v /= f.sqrt();
        }
    }
    power_normalize(&mut fv.values, cfg.alpha);
    if cfg.apply_l2 {
        l2_normalize(&mut fv.values);
    }
    Ok(fv)
}

/// Encodes many sets in parallel, one output row per set.
pub fn encode_sets(sets: &[Matrix], model: &Mixture, cfg: &EncodeConfig) -> Result<Matrix> {
    let rows = sets
        .par_iter()
        .map(|s| encode(s, model, cfg).map(FisherVector::into_vec))
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(&rows)
}

/// Average descriptor of a set.
pub fn mean_pool(x_set: &Matrix) -> Result<Vec<f64>> {
    if x_set.rows() == 0 {
        return Err(Error::validation("cannot pool an empty descriptor set"));
    }
    Ok(x_set.column_means())
}

/// Mean vectors of many sets, one output row per set.
pub fn mean_pool_sets(sets: &[Matrix]) -> Result<Matrix> {
    let rows = sets.iter().map(mean_pool).collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(&rows)
}

/// `a` followed by `b`.
pub fn fuse_concat(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::validation("fused vectors must be finite"));
    }
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    Ok(out)
}
