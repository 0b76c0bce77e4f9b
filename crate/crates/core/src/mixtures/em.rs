//! Expectation and maximization steps and the EM driver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::density::{gaussian_term, laplacian_term};
use super::init::init_model;
use super::{
    median_in_order, Branch, Family, FitConfig, FitReport, GmmModel, HglmmModel, LmmModel,
    Mixture, TermTable,
};

/// Rows handed to one worker in the E-step.
const ROW_CHUNK: usize = 256;

/// Total responsibility below which a component counts as dead.
pub(crate) const DEAD_COMPONENT_MASS: f64 = 1e-10;

/// Posterior component memberships, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    values: Matrix,
}

impl Responsibilities {
    /// Wraps an `N x K` matrix of non-negative finite weights.
    pub fn new(values: Matrix) -> Result<Self> {
        if values.as_slice().iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::validation("responsibilities must be finite and non-negative"));
        }
        Ok(Self { values })
    }

    /// One-hot memberships.
    pub fn hard(assignments: &[usize], k: usize) -> Result<Self> {
        let mut values = Matrix::zeros(assignments.len(), k);
        for (i, &c) in assignments.iter().enumerate() {
            if c >= k {
                return Err(Error::shape(format!("assignment {c} out of range for K={k}")));
            }
            values.set(i, c, 1.0);
        }
        Ok(Self { values })
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn k(&self) -> usize {
        self.values.cols()
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values.get(i, k)
    }

    /// Largest deviation of a row sum from one.
    pub fn max_row_sum_error(&self) -> f64 {
        self.values
            .iter_rows()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Output of the E-step.
#[derive(Debug, Clone)]
pub struct EStep {
    pub responsibilities: Responsibilities,
    /// `ln sum_k tau_k f_k(x_i)` per sample.
    pub sample_log_likelihoods: Vec<f64>,
    /// Sum of the per-sample values in sample order.
    pub total: f64,
}

fn check_shapes(x: &Matrix, model: &Mixture) -> Result<()> {
    model.validate()?;
    if x.cols() != model.d() {
        return Err(Error::shape(format!(
            "data has {} columns but the model has dimension {}",
            x.cols(),
            model.d()
        )));
    }
    Ok(())
}

/// Computes responsibilities in the log domain.
pub fn e_step(x: &Matrix, model: &Mixture) -> Result<EStep> {
    check_shapes(x, model)?;
    let table = TermTable::new(model);
    let (n, k) = (x.rows(), table.k);
    let mut resp = Matrix::zeros(n, k);
    let mut sample_ll = vec![0.0; n];

    let failed = resp
        .as_mut_slice()
        .par_chunks_mut(ROW_CHUNK * k)
        .zip(sample_ll.par_chunks_mut(ROW_CHUNK))
        .enumerate()
        .map(|(chunk, (resp_rows, ll_rows))| {
            let mut joint = vec![0.0; k];
            for (local, (t_row, ll)) in resp_rows.chunks_exact_mut(k).zip(ll_rows).enumerate() {
                table.joint_log(x.row(chunk * ROW_CHUNK + local), &mut joint);
                match normalize_row(&joint, t_row) {
                    Some(v) => *ll = v,
                    None => return true,
                }
            }
            false
        })
        .reduce(|| false, |a, b| a || b);
    if failed {
        return Err(Error::numerical("every component density underflowed for some sample"));
    }
    let total = sample_ll.iter().sum();
    Ok(EStep {
        responsibilities: Responsibilities { values: resp },
        sample_log_likelihoods: sample_ll,
        total,
    })
}

/// Writes `exp(joint - lse)` into `out` and returns the log-sum-exp.
fn normalize_row(joint: &[f64], out: &mut [f64]) -> Option<f64> {
    let max = joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut sum = 0.0;
    for (o, &j) in out.iter_mut().zip(joint) {
        *o = (j - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    Some(max + sum.ln())
}

/// `sum_i ln sum_k tau_k f_k(x_i)`.
pub fn total_log_likelihood(x: &Matrix, model: &Mixture) -> Result<f64> {
    check_shapes(x, model)?;
    let table = TermTable::new(model);
    let per_sample: Vec<Option<f64>> = (0..x.rows())
        .into_par_iter()
        .with_min_len(ROW_CHUNK)
        .map_init(
            || vec![0.0; table.k],
            |joint, i| {
                table.joint_log(x.row(i), joint);
                let max = joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if !max.is_finite() {
                    return None;
                }
                let sum: f64 = joint.iter().map(|j| (j - max).exp()).sum();
                Some(max + sum.ln())
            },
        )
        .collect();
    let mut total = 0.0;
    for v in per_sample {
        total += v.ok_or_else(|| Error::numerical("component densities underflowed"))?;
    }
    Ok(total)
}

/// M-step settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MStepConfig {
    pub scale_floor: f64,
    /// Seed of the generator that picks restart points for dead components.
    pub reseed_seed: u64,
}

impl Default for MStepConfig {
    fn default() -> Self {
        Self {
            scale_floor: 1e-6,
            reseed_seed: 0,
        }
    }
}

/// Updated parameters plus the components that had to be re-initialized.
#[derive(Debug, Clone)]
pub struct MStep<M> {
    pub model: M,
    pub reseeded: Vec<usize>,
}

/// Per-dimension sample values with their ascending order, shared by every
/// weighted-median update of one M-step.
pub(crate) struct SortedColumns {
    values: Vec<Vec<f64>>,
    orders: Vec<Vec<usize>>,
}

impl SortedColumns {
    pub(crate) fn new(x: &Matrix) -> Self {
        let values: Vec<Vec<f64>> = (0..x.cols()).map(|d| x.column(d)).collect();
        let orders = values
            .par_iter()
            .map(|col| {
                let mut order: Vec<usize> = (0..col.len()).collect();
                order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
                order
            })
            .collect();
        Self { values, orders }
    }
}

/// Weighted mean and standard deviation of one component.
pub(crate) fn gaussian_update(x: &Matrix, t: &[f64], nk: f64, floor: f64) -> (Vec<f64>, Vec<f64>) {
    let d = x.cols();
    let mut mu = vec![0.0; d];
    for (row, &w) in x.iter_rows().zip(t) {
        for (m, &v) in mu.iter_mut().zip(row) {
            *m += w * v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= nk);
    let mut var = vec![0.0; d];
    for (row, &w) in x.iter_rows().zip(t) {
        for ((acc, &v), &m) in var.iter_mut().zip(row).zip(&mu) {
            let diff = v - m;
            *acc += w * diff * diff;
        }
    }
    let sigma = var.iter().map(|v| (v / nk).sqrt().max(floor)).collect();
    (mu, sigma)
}

/// Weighted median location and mean absolute deviation of one component.
pub(crate) fn laplacian_update(
    cols: &SortedColumns,
    t: &[f64],
    nk: f64,
    floor: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut m = Vec::with_capacity(cols.values.len());
    let mut s = Vec::with_capacity(cols.values.len());
    for (col, order) in cols.values.iter().zip(&cols.orders) {
        let loc = median_in_order(col, t, order).expect("live component has positive mass");
        let dev: f64 = col.iter().zip(t).map(|(&v, &w)| w * (v - loc).abs()).sum();
        m.push(loc);
        s.push((dev / nk).max(floor));
    }
    (m, s)
}

/// Expected complete-data log-likelihood of the Laplacian and Gaussian
/// branches of one component, per dimension: `(L, G)`.
pub(crate) fn branch_scores(
    x: &Matrix,
    t: &[f64],
    mu: &[f64],
    sigma: &[f64],
    m: &[f64],
    s: &[f64],
) -> Vec<(f64, f64)> {
    let mut scores = vec![(0.0, 0.0); x.cols()];
    for (row, &w) in x.iter_rows().zip(t) {
        for (d, (l, g)) in scores.iter_mut().enumerate() {
            *l += w * laplacian_term(row[d], m[d], s[d]);
            *g += w * gaussian_term(row[d], mu[d], sigma[d]);
        }
    }
    scores
}

/// Laplacian wins only on a strict improvement; ties go to the Gaussian.
pub(crate) fn select_branches(scores: &[(f64, f64)]) -> Vec<Branch> {
    scores
        .iter()
        .map(|&(l, g)| if l > g { Branch::Laplacian } else { Branch::Gaussian })
        .collect()
}

/// Column-wise spread of the whole data set, used for re-initialized
/// components: population standard deviation and mean absolute deviation
/// around the median.
pub(crate) fn global_scales(x: &Matrix, cols: &SortedColumns, floor: f64) -> (Vec<f64>, Vec<f64>) {
    let ones = vec![1.0; x.rows()];
    let n = x.rows() as f64;
    let (_, sigma) = gaussian_update(x, &ones, n, floor);
    let (_, s) = laplacian_update(cols, &ones, n, floor);
    (sigma, s)
}

struct Shared {
    /// `K x N` responsibilities, one contiguous row per component.
    by_component: Matrix,
    mass: Vec<f64>,
    dead: Vec<usize>,
}

fn prepare(x: &Matrix, resp: &Responsibilities, cfg: &MStepConfig) -> Result<Shared> {
    if resp.n() != x.rows() {
        return Err(Error::shape(format!(
            "{} responsibility rows for {} samples",
            resp.n(),
            x.rows()
        )));
    }
    if resp.k() == 0 || x.cols() == 0 || x.rows() == 0 {
        return Err(Error::validation("M-step needs samples, dimensions and components"));
    }
    if !(cfg.scale_floor > 0.0) {
        return Err(Error::validation("scale floor must be positive"));
    }
    let by_component = resp.values.transpose();
    let mass: Vec<f64> = by_component.iter_rows().map(|r| r.iter().sum()).collect();
    let dead = mass
        .iter()
        .enumerate()
        .filter(|(_, &m)| !(m >= DEAD_COMPONENT_MASS))
        .map(|(k, _)| k)
        .collect();
    Ok(Shared {
        by_component,
        mass,
        dead,
    })
}

/// Mixture weights from component masses; dead components count as one
/// sample's worth of mass so every weight stays positive.
fn weights(mass: &[f64], dead: &[usize]) -> Vec<f64> {
    let mut mass = mass.to_vec();
    for &k in dead {
        mass[k] = 1.0;
    }
    let total: f64 = mass.iter().sum();
    mass.iter().map(|m| m / total).collect()
}

/// Restart points for dead components, drawn uniformly from the samples.
fn reseed_rows(x: &Matrix, dead: &[usize], seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dead.iter().map(|_| rng.random_range(0..x.rows())).collect()
}

fn gaussian_block(
    x: &Matrix,
    shared: &Shared,
    cfg: &MStepConfig,
    restart: &[(usize, usize)],
    global_sigma: &[f64],
) -> (Matrix, Matrix) {
    let k = shared.mass.len();
    let params: Vec<(Vec<f64>, Vec<f64>)> = (0..k)
        .into_par_iter()
        .map(|c| match restart.iter().find(|(dead, _)| *dead == c) {
            Some(&(_, row)) => (x.row(row).to_vec(), global_sigma.to_vec()),
            None => gaussian_update(x, shared.by_component.row(c), shared.mass[c], cfg.scale_floor),
        })
        .collect();
    stack(params, x.cols())
}

fn laplacian_block(
    x: &Matrix,
    cols: &SortedColumns,
    shared: &Shared,
    cfg: &MStepConfig,
    restart: &[(usize, usize)],
    global_s: &[f64],
) -> (Matrix, Matrix) {
    let k = shared.mass.len();
    let params: Vec<(Vec<f64>, Vec<f64>)> = (0..k)
        .into_par_iter()
        .map(|c| match restart.iter().find(|(dead, _)| *dead == c) {
            Some(&(_, row)) => (x.row(row).to_vec(), global_s.to_vec()),
            None => laplacian_update(cols, shared.by_component.row(c), shared.mass[c], cfg.scale_floor),
        })
        .collect();
    stack(params, x.cols())
}

fn stack(params: Vec<(Vec<f64>, Vec<f64>)>, d: usize) -> (Matrix, Matrix) {
    let k = params.len();
    let mut loc = Vec::with_capacity(k * d);
    let mut scale = Vec::with_capacity(k * d);
    for (l, s) in params {
        loc.extend(l);
        scale.extend(s);
    }
    (
        Matrix::from_vec(k, d, loc).expect("location block shape"),
        Matrix::from_vec(k, d, scale).expect("scale block shape"),
    )
}

struct Restarts {
    rows: Vec<(usize, usize)>,
    sigma: Vec<f64>,
    s: Vec<f64>,
}

fn restarts(x: &Matrix, cols: Option<&SortedColumns>, shared: &Shared, cfg: &MStepConfig) -> Restarts {
    if shared.dead.is_empty() {
        return Restarts {
            rows: Vec::new(),
            sigma: Vec::new(),
            s: Vec::new(),
        };
    }
    let picks = reseed_rows(x, &shared.dead, cfg.reseed_seed);
    let owned;
    let cols = match cols {
        Some(c) => c,
        None => {
            owned = SortedColumns::new(x);
            &owned
        }
    };
    let (sigma, s) = global_scales(x, cols, cfg.scale_floor);
    Restarts {
        rows: shared.dead.iter().copied().zip(picks).collect(),
        sigma,
        s,
    }
}

/// Gaussian M-step: weights, weighted means and standard deviations.
pub fn m_step_gmm(x: &Matrix, resp: &Responsibilities, cfg: &MStepConfig) -> Result<MStep<GmmModel>> {
    let shared = prepare(x, resp, cfg)?;
    let re = restarts(x, None, &shared, cfg);
    let (mu, sigma) = gaussian_block(x, &shared, cfg, &re.rows, &re.sigma);
    Ok(MStep {
        model: GmmModel {
            tau: weights(&shared.mass, &shared.dead),
            mu,
            sigma,
        },
        reseeded: shared.dead,
    })
}

/// Laplacian M-step: weights, weighted medians and mean absolute deviations.
pub fn m_step_lmm(x: &Matrix, resp: &Responsibilities, cfg: &MStepConfig) -> Result<MStep<LmmModel>> {
    let shared = prepare(x, resp, cfg)?;
    let cols = SortedColumns::new(x);
    let re = restarts(x, Some(&cols), &shared, cfg);
    let (m, s) = laplacian_block(x, &cols, &shared, cfg, &re.rows, &re.s);
    Ok(MStep {
        model: LmmModel {
            tau: weights(&shared.mass, &shared.dead),
            m,
            s,
        },
        reseeded: shared.dead,
    })
}

/// Hybrid M-step: both parameter sets, then each selector set to the branch
/// with the larger expected log-likelihood under the new parameters.
pub fn m_step_hglmm(
    x: &Matrix,
    resp: &Responsibilities,
    cfg: &MStepConfig,
) -> Result<MStep<HglmmModel>> {
    let shared = prepare(x, resp, cfg)?;
    let cols = SortedColumns::new(x);
    let re = restarts(x, Some(&cols), &shared, cfg);
    let (mu, sigma) = gaussian_block(x, &shared, cfg, &re.rows, &re.sigma);
    let (m, s) = laplacian_block(x, &cols, &shared, cfg, &re.rows, &re.s);
    let k = shared.mass.len();
    let b: Vec<Branch> = (0..k)
        .into_par_iter()
        .map(|c| {
            if shared.dead.contains(&c) {
                vec![Branch::Gaussian; x.cols()]
            } else {
                let scores = branch_scores(
                    x,
                    shared.by_component.row(c),
                    mu.row(c),
                    sigma.row(c),
                    m.row(c),
                    s.row(c),
                );
                select_branches(&scores)
            }
        })
        .flatten()
        .collect();
    Ok(MStep {
        model: HglmmModel {
            tau: weights(&shared.mass, &shared.dead),
            mu,
            sigma,
            m,
            s,
            b,
        },
        reseeded: shared.dead,
    })
}

fn m_step(family: Family, x: &Matrix, resp: &Responsibilities, cfg: &MStepConfig) -> Result<(Mixture, usize)> {
    Ok(match family {
        Family::Gmm => {
            let r = m_step_gmm(x, resp, cfg)?;
            (Mixture::Gmm(r.model), r.reseeded.len())
        }
        Family::Lmm => {
            let r = m_step_lmm(x, resp, cfg)?;
            (Mixture::Lmm(r.model), r.reseeded.len())
        }
        Family::Hglmm => {
            let r = m_step_hglmm(x, resp, cfg)?;
            (Mixture::Hglmm(r.model), r.reseeded.len())
        }
    })
}

/// Fits a mixture by EM from the seeded k-means++ initialization.
///
/// Each pass is one E-step followed by one M-step. The run stops after
/// `max_iters` passes or once the relative log-likelihood gain drops below
/// `rel_tol`. With `restarts > 1` the run with the highest final
/// log-likelihood is returned.
pub fn fit_em(x: &Matrix, config: &FitConfig, family: Family) -> Result<(Mixture, FitReport)> {
    config.validate()?;
    x.validate_input("training data")?;
    if x.rows() < config.k {
        return Err(Error::validation(format!(
            "{} samples cannot support {} components",
            x.rows(),
            config.k
        )));
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(Mixture, FitReport)> = None;
    for restart in 0..config.restarts {
        let seed = if restart == 0 { config.seed } else { seeds.random() };
        let run = fit_once(x, &FitConfig { seed, ..config.clone() }, family)?;
        let better = match &best {
            Some((_, report)) => run.1.final_log_likelihood() > report.final_log_likelihood(),
            None => true,
        };
        if better {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn fit_once(x: &Matrix, config: &FitConfig, family: Family) -> Result<(Mixture, FitReport)> {
    let mut model = init_model(x, config, family)?;
    let mut est = e_step(x, &model)?;
    let mut trace = vec![est.total];
    let mut reseeded = 0;
    let mut converged = false;
    let mut reseed_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed_5eed_5eed);
    for _ in 0..config.max_iters {
        let cfg = MStepConfig {
            scale_floor: config.scale_floor,
            reseed_seed: reseed_rng.random(),
        };
        let (next, dead) = m_step(family, x, &est.responsibilities, &cfg)?;
        model = next;
        reseeded += dead;
        est = e_step(x, &model)?;
        let previous = *trace.last().expect("trace starts non-empty");
        trace.push(est.total);
        let gain = (est.total - previous) / previous.abs().max(f64::MIN_POSITIVE);
        if dead == 0 && gain < config.rel_tol {
            converged = true;
            break;
        }
    }
    let iterations_run = trace.len() - 1;
    Ok((
        model,
        FitReport {
            log_likelihood_trace: trace,
            iterations_run,
            converged,
            reseeded,
        },
    ))
}
