//! Diagonal Gaussian, Laplacian and hybrid log-densities.

use crate::error::{Error, Result};

use super::{Branch, Mixture};

/// `-ln(sqrt(2 pi))`.
pub(crate) const NEG_HALF_LN_2PI: f64 = -0.918_938_533_204_672_7;

/// Log-density of a diagonal Laplacian:
/// `sum_d [ -ln(2 s_d) - |x_d - m_d| / s_d ]`.
pub fn log_pdf_laplacian(x: &[f64], m: &[f64], s: &[f64]) -> Result<f64> {
    check_dims(x, m, s)?;
    check_scales(s, "Laplacian scale")?;
    Ok(x.iter()
        .zip(m)
        .zip(s)
        .map(|((&x, &m), &s)| laplacian_term(x, m, s))
        .sum())
}

/// Log-density of a diagonal Gaussian:
/// `sum_d [ -ln(sqrt(2 pi) sigma_d) - (x_d - mu_d)^2 / (2 sigma_d^2) ]`.
pub fn log_pdf_gaussian(x: &[f64], mu: &[f64], sigma: &[f64]) -> Result<f64> {
    check_dims(x, mu, sigma)?;
    check_scales(sigma, "Gaussian standard deviation")?;
    Ok(x.iter()
        .zip(mu)
        .zip(sigma)
        .map(|((&x, &mu), &sigma)| gaussian_term(x, mu, sigma))
        .sum())
}

/// Parameters of one hybrid component, borrowed from a model or built ad hoc.
#[derive(Debug, Clone, Copy)]
pub struct HybridComponent<'a> {
    pub mu: &'a [f64],
    pub sigma: &'a [f64],
    pub m: &'a [f64],
    pub s: &'a [f64],
    /// Per-dimension selector, each entry exactly 0.0 (Gaussian) or 1.0 (Laplacian).
    pub b: &'a [f64],
}

/// Log-density of a hybrid component with binary selectors. Each dimension
/// contributes its Laplacian term when `b_d = 1` and its Gaussian term when
/// `b_d = 0`, which keeps the product normalized.
pub fn log_pdf_hybrid(x: &[f64], c: &HybridComponent<'_>) -> Result<f64> {
    check_dims(x, c.mu, c.sigma)?;
    check_dims(x, c.m, c.s)?;
    if c.b.len() != x.len() {
        return Err(Error::shape(format!(
            "selector has {} entries, expected {}",
            c.b.len(),
            x.len()
        )));
    }
    let mut total = 0.0;
    for d in 0..x.len() {
        let branch = Branch::from_selector(c.b[d])?;
        total += match branch {
            Branch::Laplacian => {
                check_scales(&c.s[d..=d], "Laplacian scale")?;
                laplacian_term(x[d], c.m[d], c.s[d])
            }
            Branch::Gaussian => {
                check_scales(&c.sigma[d..=d], "Gaussian standard deviation")?;
                gaussian_term(x[d], c.mu[d], c.sigma[d])
            }
        };
    }
    Ok(total)
}

#[inline]
pub(crate) fn laplacian_term(x: f64, m: f64, s: f64) -> f64 {
    -(2.0 * s).ln() - (x - m).abs() / s
}

#[inline]
pub(crate) fn gaussian_term(x: f64, mu: f64, sigma: f64) -> f64 {
    let diff = x - mu;
    NEG_HALF_LN_2PI - sigma.ln() - diff * diff / (2.0 * sigma * sigma)
}

/// Numerically stable `ln(sum exp(v))`. Returns `-inf` for an empty slice or
/// when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

fn check_dims(x: &[f64], loc: &[f64], scale: &[f64]) -> Result<()> {
    if x.len() != loc.len() || x.len() != scale.len() {
        return Err(Error::shape(format!(
            "point has {} dims, location {} and scale {}",
            x.len(),
            loc.len(),
            scale.len()
        )));
    }
    Ok(())
}

fn check_scales(scales: &[f64], what: &str) -> Result<()> {
    match scales.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        Some(s) => Err(Error::domain(format!("{what} must be positive and finite, got {s}"))),
        None => Ok(()),
    }
}

/// Per-(component, dimension) density term of a fitted mixture with its
/// normalizer and reciprocal scale precomputed.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Term {
    Gaussian {
        mu: f64,
        sigma: f64,
        log_norm: f64,
        half_precision: f64,
    },
    Laplacian {
        m: f64,
        s: f64,
        log_norm: f64,
        inv_scale: f64,
    },
}

impl Term {
    pub(crate) fn gaussian(mu: f64, sigma: f64) -> Self {
        Term::Gaussian {
            mu,
            sigma,
            log_norm: NEG_HALF_LN_2PI - sigma.ln(),
            half_precision: 0.5 / (sigma * sigma),
        }
    }

    pub(crate) fn laplacian(m: f64, s: f64) -> Self {
        Term::Laplacian {
            m,
            s,
            log_norm: -(2.0 * s).ln(),
            inv_scale: 1.0 / s,
        }
    }

    #[inline]
    pub(crate) fn log_density(&self, x: f64) -> f64 {
        match *self {
            Term::Gaussian {
                mu,
                log_norm,
                half_precision,
                ..
            } => {
                let diff = x - mu;
                log_norm - diff * diff * half_precision
            }
            Term::Laplacian {
                m,
                log_norm,
                inv_scale,
                ..
            } => log_norm - (x - m).abs() * inv_scale,
        }
    }
}

/// Flattened view of a mixture: `K` log-weights and a `K x D` grid of terms.
/// Every family goes through this table so that a hybrid model whose
/// selectors are all Gaussian (or all Laplacian) evaluates bit-for-bit like
/// the pure model.
#[derive(Debug, Clone)]
pub(crate) struct TermTable {
    pub k: usize,
    pub d: usize,
    pub log_tau: Vec<f64>,
    pub terms: Vec<Term>,
}

impl TermTable {
    pub(crate) fn new(model: &Mixture) -> Self {
        let (k, d) = (model.k(), model.d());
        let log_tau = model.tau().iter().map(|t| t.ln()).collect();
        let mut terms = Vec::with_capacity(k * d);
        for c in 0..k {
            for j in 0..d {
                terms.push(model.term(c, j));
            }
        }
        Self { k, d, log_tau, terms }
    }

    #[inline]
    pub(crate) fn component(&self, c: usize) -> &[Term] {
        &self.terms[c * self.d..(c + 1) * self.d]
    }

    /// `ln(tau_c) + ln f_c(x)` for every component.
    pub(crate) fn joint_log(&self, x: &[f64], out: &mut [f64]) {
        for (c, slot) in out.iter_mut().enumerate() {
            let comp_log: f64 = self
                .component(c)
                .iter()
                .zip(x)
                .map(|(t, &v)| t.log_density(v))
                .sum();
            *slot = self.log_tau[c] + comp_log;
        }
    }
}
