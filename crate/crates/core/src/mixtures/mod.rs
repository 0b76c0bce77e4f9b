//! Diagonal mixture models (Gaussian, Laplacian, hybrid) and their EM fit.
//!
//! A hybrid component models every dimension either with a Gaussian or with
//! a Laplacian factor. The choice is a binary selector per (component,
//! dimension) re-estimated in each M-step by comparing the expected
//! log-likelihood contribution of the two branches.

mod density;
mod em;
mod init;
mod median;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::{header_field, parse_header, read_container, write_container};
use crate::matrix::Matrix;

pub use density::{log_pdf_gaussian, log_pdf_hybrid, log_pdf_laplacian, log_sum_exp, HybridComponent};
pub(crate) use density::{Term, TermTable};
pub use em::{
    e_step, fit_em, m_step_gmm, m_step_hglmm, m_step_lmm, total_log_likelihood, EStep, MStep,
    MStepConfig, Responsibilities,
};
pub use init::init_model;
pub use median::weighted_median;
pub(crate) use median::median_in_order;

const TAU_SUM_TOL: f64 = 1e-12;

/// Mixture family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Gmm,
    Lmm,
    Hglmm,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Gmm, Family::Lmm, Family::Hglmm];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Gmm => "gmm",
            Family::Lmm => "lmm",
            Family::Hglmm => "hglmm",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmm" => Ok(Family::Gmm),
            "lmm" => Ok(Family::Lmm),
            "hglmm" => Ok(Family::Hglmm),
            other => Err(Error::validation(format!(
                "unknown mixture family {other:?}; expected gmm, lmm or hglmm"
            ))),
        }
    }
}

/// Which density a hybrid (component, dimension) uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Gaussian,
    Laplacian,
}

impl Branch {
    /// Decodes a stored selector. Only exactly 0.0 and 1.0 are accepted.
    pub fn from_selector(b: f64) -> Result<Self> {
        if b == 0.0 {
            Ok(Branch::Gaussian)
        } else if b == 1.0 {
            Ok(Branch::Laplacian)
        } else {
            Err(Error::domain(format!("selector must be 0 or 1, got {b}")))
        }
    }

    pub fn selector(self) -> f64 {
        match self {
            Branch::Gaussian => 0.0,
            Branch::Laplacian => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub tau: Vec<f64>,
    /// `K x D` means.
    pub mu: Matrix,
    /// `K x D` standard deviations.
    pub sigma: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmmModel {
    pub tau: Vec<f64>,
    /// `K x D` locations.
    pub m: Matrix,
    /// `K x D` scales.
    pub s: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HglmmModel {
    pub tau: Vec<f64>,
    pub mu: Matrix,
    pub sigma: Matrix,
    pub m: Matrix,
    pub s: Matrix,
    /// `K x D` selectors in row-major order.
    pub b: Vec<Branch>,
}

impl HglmmModel {
    pub fn branch(&self, k: usize, d: usize) -> Branch {
        self.b[k * self.mu.cols() + d]
    }

    /// Selectors as a `K x D` matrix of 0.0 / 1.0.
    pub fn selector_matrix(&self) -> Matrix {
        let data = self.b.iter().map(|b| b.selector()).collect();
        Matrix::from_vec(self.mu.rows(), self.mu.cols(), data).expect("selector shape")
    }

    /// Borrowed parameters of component `k`; `selectors` is the output of
    /// [`HglmmModel::selector_matrix`].
    pub fn component<'a>(&'a self, k: usize, selectors: &'a Matrix) -> HybridComponent<'a> {
        HybridComponent {
            mu: self.mu.row(k),
            sigma: self.sigma.row(k),
            m: self.m.row(k),
            s: self.s.row(k),
            b: selectors.row(k),
        }
    }
}

/// A fitted mixture of any family.
#[derive(Debug, Clone, PartialEq)]
pub enum Mixture {
    Gmm(GmmModel),
    Lmm(LmmModel),
    Hglmm(HglmmModel),
}

impl Mixture {
    pub fn family(&self) -> Family {
        match self {
            Mixture::Gmm(_) => Family::Gmm,
            Mixture::Lmm(_) => Family::Lmm,
            Mixture::Hglmm(_) => Family::Hglmm,
        }
    }

    pub fn tau(&self) -> &[f64] {
        match self {
            Mixture::Gmm(g) => &g.tau,
            Mixture::Lmm(l) => &l.tau,
            Mixture::Hglmm(h) => &h.tau,
        }
    }

    /// Number of components.
    pub fn k(&self) -> usize {
        self.tau().len()
    }

    /// Dimension of the modelled space.
    pub fn d(&self) -> usize {
        match self {
            Mixture::Gmm(g) => g.mu.cols(),
            Mixture::Lmm(l) => l.m.cols(),
            Mixture::Hglmm(h) => h.mu.cols(),
        }
    }

    /// Density branch used at (k, d).
    pub fn branch(&self, k: usize, d: usize) -> Branch {
        match self {
            Mixture::Gmm(_) => Branch::Gaussian,
            Mixture::Lmm(_) => Branch::Laplacian,
            Mixture::Hglmm(h) => h.branch(k, d),
        }
    }

    pub(crate) fn term(&self, k: usize, d: usize) -> Term {
        match self {
            Mixture::Gmm(g) => Term::gaussian(g.mu.get(k, d), g.sigma.get(k, d)),
            Mixture::Lmm(l) => Term::laplacian(l.m.get(k, d), l.s.get(k, d)),
            Mixture::Hglmm(h) => match h.branch(k, d) {
                Branch::Gaussian => Term::gaussian(h.mu.get(k, d), h.sigma.get(k, d)),
                Branch::Laplacian => Term::laplacian(h.m.get(k, d), h.s.get(k, d)),
            },
        }
    }

    /// Location and scale used at (k, d) by the active branch.
    pub fn location_scale(&self, k: usize, d: usize) -> (f64, f64) {
        match self.term(k, d) {
            Term::Gaussian { mu, sigma, .. } => (mu, sigma),
            Term::Laplacian { m, s, .. } => (m, s),
        }
    }

    /// Checks shapes, the weight simplex and positivity of every scale.
    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        let d = self.d();
        if k == 0 || d == 0 {
            return Err(Error::validation("mixture needs at least one component and dimension"));
        }
        let tau = self.tau();
        if tau.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::validation("mixture weights must be positive"));
        }
        let sum: f64 = tau.iter().sum();
        if (sum - 1.0).abs() > TAU_SUM_TOL * k as f64 {
            return Err(Error::validation(format!("mixture weights sum to {sum}, not 1")));
        }
        let check_block = |m: &Matrix, name: &str, positive: bool| -> Result<()> {
            if m.rows() != k || m.cols() != d {
                return Err(Error::shape(format!(
                    "{name} is {}x{}, expected {k}x{d}",
                    m.rows(),
                    m.cols()
                )));
            }
            if !m.is_finite() {
                return Err(Error::validation(format!("{name} has non-finite entries")));
            }
            if positive && m.as_slice().iter().any(|v| !(*v > 0.0)) {
                return Err(Error::validation(format!("{name} must be strictly positive")));
            }
            Ok(())
        };
        match self {
            Mixture::Gmm(g) => {
                check_block(&g.mu, "mu", false)?;
                check_block(&g.sigma, "sigma", true)
            }
            Mixture::Lmm(l) => {
                check_block(&l.m, "m", false)?;
                check_block(&l.s, "s", true)
            }
            Mixture::Hglmm(h) => {
                check_block(&h.mu, "mu", false)?;
                check_block(&h.sigma, "sigma", true)?;
                check_block(&h.m, "m", false)?;
                check_block(&h.s, "s", true)?;
                if h.b.len() != k * d {
                    return Err(Error::shape("selector count does not match K x D"));
                }
                Ok(())
            }
        }
    }

    /// Serializes into the `HGLMM-MODEL v1` container.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = format!(
            "{MODEL_MAGIC} family={} K={} D={}",
            self.family(),
            self.k(),
            self.d()
        );
        let tau = Matrix::row_vector(self.tau().to_vec());
        match self {
            Mixture::Gmm(g) => write_container(&header, &[&tau, &g.mu, &g.sigma]),
            Mixture::Lmm(l) => write_container(&header, &[&tau, &l.m, &l.s]),
            Mixture::Hglmm(h) => {
                let b = h.selector_matrix();
                write_container(&header, &[&tau, &h.mu, &h.sigma, &h.m, &h.s, &b])
            }
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&c| c == b'\n')
            .ok_or_else(|| Error::format("model file has no header line"))?;
        let header = std::str::from_utf8(&bytes[..newline])
            .map_err(|_| Error::format("model header is not UTF-8"))?;
        let fields = parse_header(header, MODEL_MAGIC)?;
        let family: Family = header_field::<String>(&fields, "family")?
            .parse()
            .map_err(|_| Error::format("unknown family in model header"))?;
        let k: usize = header_field(&fields, "K")?;
        let d: usize = header_field(&fields, "D")?;
        let count = match family {
            Family::Gmm | Family::Lmm => 3,
            Family::Hglmm => 6,
        };
        let (_, mut blocks) = read_container(bytes, count)?;
        let tau_block = blocks.remove(0);
        if tau_block.rows() != 1 || tau_block.cols() != k {
            return Err(Error::format("weight block does not match K"));
        }
        let tau = tau_block.into_vec();
        for b in &blocks {
            if b.rows() != k || b.cols() != d {
                return Err(Error::format(format!(
                    "parameter block is {}x{}, header says {k}x{d}",
                    b.rows(),
                    b.cols()
                )));
            }
        }
        let mut it = blocks.into_iter();
        let mut next = || it.next().expect("block count checked");
        let model = match family {
            Family::Gmm => Mixture::Gmm(GmmModel {
                tau,
                mu: next(),
                sigma: next(),
            }),
            Family::Lmm => Mixture::Lmm(LmmModel {
                tau,
                m: next(),
                s: next(),
            }),
            Family::Hglmm => {
                let (mu, sigma, m, s) = (next(), next(), next(), next());
                let b = next()
                    .as_slice()
                    .iter()
                    .map(|&v| Branch::from_selector(v))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::format(e.to_string()))?;
                Mixture::Hglmm(HglmmModel {
                    tau,
                    mu,
                    sigma,
                    m,
                    s,
                    b,
                })
            }
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

const MODEL_MAGIC: &str = "HGLMM-MODEL v1";

/// EM settings.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Number of components.
    pub k: usize,
    pub max_iters: usize,
    /// Stop once the relative log-likelihood gain falls below this.
    pub rel_tol: f64,
    pub seed: u64,
    /// Lower bound applied to every standard deviation and scale.
    pub scale_floor: f64,
    /// Independent initializations; the best final likelihood wins.
    pub restarts: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k: 30,
            max_iters: 100,
            rel_tol: 1e-6,
            seed: 0,
            scale_floor: 1e-6,
            restarts: 1,
        }
    }
}

impl FitConfig {
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::validation("K must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::validation("max_iters must be at least 1"));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::validation("rel_tol must be non-negative"));
        }
        if !(self.scale_floor > 0.0) || !self.scale_floor.is_finite() {
            return Err(Error::validation("scale_floor must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::validation("restarts must be at least 1"));
        }
        Ok(())
    }
}

/// Log-likelihood history of an EM run.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Total log-likelihood of the initial model followed by one entry per
    /// completed EM pass.
    pub log_likelihood_trace: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    /// Components re-initialized because they lost all responsibility.
    pub reseeded: usize,
}

impl FitReport {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihood_trace.last().expect("trace is never empty")
    }
}
