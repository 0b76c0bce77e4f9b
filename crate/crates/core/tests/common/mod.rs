//! Independent reference computations and random instance generators shared
//! by the integration and acceptance tests. Nothing here calls into the
//! library's numerical code; formulas are written out directly.
#![allow(dead_code)]

use std::f64::consts::PI;

use hglmm::mixtures::{Branch, GmmModel, HglmmModel, LmmModel, Mixture};
use hglmm::Matrix;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn laplace(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    -u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| normal(rng)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Clustered data: `k` random centers, half the dimensions with Gaussian
/// noise and half with Laplacian noise.
pub fn clustered(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize) -> Matrix {
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| 3.0 * normal(rng)).collect())
        .collect();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let c = &centers[rng.random_range(0..k)];
        for (j, mu) in c.iter().enumerate() {
            let noise = if j % 2 == 0 { normal(rng) } else { laplace(rng) };
            data.push(mu + noise);
        }
    }
    Matrix::from_vec(n, d, data).unwrap()
}

fn block(rng: &mut ChaCha8Rng, k: usize, d: usize, lo: f64, hi: f64) -> Matrix {
    let data = (0..k * d).map(|_| rng.random_range(lo..hi)).collect();
    Matrix::from_vec(k, d, data).unwrap()
}

fn weights(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

pub fn random_gmm(rng: &mut ChaCha8Rng, k: usize, d: usize) -> GmmModel {
    GmmModel {
        tau: weights(rng, k),
        mu: block(rng, k, d, -2.0, 2.0),
        sigma: block(rng, k, d, 0.5, 2.0),
    }
}

pub fn random_lmm(rng: &mut ChaCha8Rng, k: usize, d: usize) -> LmmModel {
    LmmModel {
        tau: weights(rng, k),
        m: block(rng, k, d, -2.0, 2.0),
        s: block(rng, k, d, 0.5, 2.0),
    }
}

pub fn random_hglmm(rng: &mut ChaCha8Rng, k: usize, d: usize) -> HglmmModel {
    let b = (0..k * d)
        .map(|_| if rng.random::<bool>() { Branch::Laplacian } else { Branch::Gaussian })
        .collect();
    HglmmModel {
        tau: weights(rng, k),
        mu: block(rng, k, d, -2.0, 2.0),
        sigma: block(rng, k, d, 0.5, 2.0),
        m: block(rng, k, d, -2.0, 2.0),
        s: block(rng, k, d, 0.5, 2.0),
        b,
    }
}

pub fn random_mixture(rng: &mut ChaCha8Rng, family: hglmm::mixtures::Family, k: usize, d: usize) -> Mixture {
    use hglmm::mixtures::Family;
    match family {
        Family::Gmm => Mixture::Gmm(random_gmm(rng, k, d)),
        Family::Lmm => Mixture::Lmm(random_lmm(rng, k, d)),
        Family::Hglmm => Mixture::Hglmm(random_hglmm(rng, k, d)),
    }
}

/// Random responsibilities: each row a normalized vector of positive draws.
pub fn random_responsibilities(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Matrix {
    let mut data = Vec::with_capacity(n * k);
    for _ in 0..n {
        let row: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = row.iter().sum();
        data.extend(row.iter().map(|v| v / total));
    }
    Matrix::from_vec(n, k, data).unwrap()
}

// ---- densities ----------------------------------------------------------

pub fn gauss_1d(x: f64, mu: f64, sigma: f64) -> f64 {
    -(sigma * (2.0 * PI).sqrt()).ln() - (x - mu) * (x - mu) / (2.0 * sigma * sigma)
}

pub fn laplace_1d(x: f64, m: f64, s: f64) -> f64 {
    -(2.0 * s).ln() - (x - m).abs() / s
}

/// Flat parameter view of a mixture used by the oracles: per component and
/// dimension, whether the Laplacian branch is active plus (location, scale).
#[derive(Clone, Debug)]
pub struct Params {
    pub k: usize,
    pub d: usize,
    pub tau: Vec<f64>,
    pub laplacian: Vec<bool>,
    pub loc: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Params {
    pub fn of(model: &Mixture) -> Params {
        let (k, d) = (model.k(), model.d());
        let mut p = Params {
            k,
            d,
            tau: model.tau().to_vec(),
            laplacian: Vec::with_capacity(k * d),
            loc: Vec::with_capacity(k * d),
            scale: Vec::with_capacity(k * d),
        };
        for c in 0..k {
            for j in 0..d {
                let (lap, loc, scale) = match model {
                    Mixture::Gmm(g) => (false, g.mu.get(c, j), g.sigma.get(c, j)),
                    Mixture::Lmm(l) => (true, l.m.get(c, j), l.s.get(c, j)),
                    Mixture::Hglmm(h) => match h.branch(c, j) {
                        Branch::Gaussian => (false, h.mu.get(c, j), h.sigma.get(c, j)),
                        Branch::Laplacian => (true, h.m.get(c, j), h.s.get(c, j)),
                    },
                };
                p.laplacian.push(lap);
                p.loc.push(loc);
                p.scale.push(scale);
            }
        }
        p
    }

    pub fn component_log(&self, c: usize, x: &[f64]) -> f64 {
        let mut total = self.tau[c].ln();
        for (j, &xj) in x.iter().enumerate() {
            let i = c * self.d + j;
            total += if self.laplacian[i] {
                laplace_1d(xj, self.loc[i], self.scale[i])
            } else {
                gauss_1d(xj, self.loc[i], self.scale[i])
            };
        }
        total
    }

    pub fn sample_log(&self, x: &[f64]) -> f64 {
        let logs: Vec<f64> = (0..self.k).map(|c| self.component_log(c, x)).collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln()
    }

    pub fn total_log(&self, x: &Matrix) -> f64 {
        x.iter_rows().map(|r| self.sample_log(r)).sum()
    }

    /// Posterior over components for one sample.
    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        let total = self.sample_log(x);
        (0..self.k).map(|c| (self.component_log(c, x) - total).exp()).collect()
    }
}

/// Gradient of the total log-likelihood in (location, scale) order per
/// (component, dimension), by central differences.
pub fn finite_difference_gradient(params: &Params, x: &Matrix, h: f64) -> (Vec<f64>, Vec<f64>) {
    let n = params.k * params.d;
    let mut loc = vec![0.0; n];
    let mut scale = vec![0.0; n];
    for i in 0..n {
        let mut up = params.clone();
        let mut down = params.clone();
        up.loc[i] += h;
        down.loc[i] -= h;
        loc[i] = (up.total_log(x) - down.total_log(x)) / (2.0 * h);
        let mut up = params.clone();
        let mut down = params.clone();
        up.scale[i] += h;
        down.scale[i] -= h;
        scale[i] = (up.total_log(x) - down.total_log(x)) / (2.0 * h);
    }
    (loc, scale)
}

/// Expected complete-data log-likelihood of one dimension under each branch:
/// `(sum_i t_i log Lap(x_i; m, s), sum_i t_i log N(x_i; mu, sigma))`.
pub fn branch_objectives(xs: &[f64], t: &[f64], mu: f64, sigma: f64, m: f64, s: f64) -> (f64, f64) {
    let mut l = 0.0;
    let mut g = 0.0;
    for (&x, &w) in xs.iter().zip(t) {
        l += w * laplace_1d(x, m, s);
        g += w * gauss_1d(x, mu, sigma);
    }
    (l, g)
}

// ---- weighted median ----------------------------------------------------

/// Minimizer of `sum_i w_i |v_i - c|` found by evaluating every sample value
/// carrying positive weight; ties within rounding go to the smallest value.
pub fn median_by_scan(values: &[f64], weights: &[f64]) -> f64 {
    let objective = |c: f64| -> f64 {
        values.iter().zip(weights).map(|(v, w)| w * (v - c).abs()).sum()
    };
    let candidates: Vec<(f64, f64)> = values
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&v, _)| (v, objective(v)))
        .collect();
    let best = candidates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let scale: f64 = weights.iter().sum::<f64>() * values.iter().map(|v| v.abs()).fold(1.0, f64::max);
    candidates
        .iter()
        .filter(|c| c.1 <= best + 1e-12 * scale)
        .map(|c| c.0)
        .fold(f64::INFINITY, f64::min)
}

// ---- CCA ----------------------------------------------------------------

fn to_dm(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn covariances(x: &Matrix, y: &Matrix) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let center = |m: &Matrix| {
        let mut d = to_dm(m);
        for mut col in d.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        d
    };
    let (xc, yc) = (center(x), center(y));
    let n1 = x.rows() as f64 - 1.0;
    (
        xc.transpose() * &xc / n1,
        yc.transpose() * &yc / n1,
        xc.transpose() * &yc / n1,
    )
}

/// Canonical correlations as square roots of the eigenvalues of
/// `(Cxx + rI)^-1 Cxy (Cyy + rI)^-1 Cyx`, descending.
pub fn cca_correlations_by_eigen(x: &Matrix, y: &Matrix, reg: f64) -> Vec<f64> {
    let (mut cxx, mut cyy, cxy) = covariances(x, y);
    for i in 0..cxx.nrows() {
        cxx[(i, i)] += reg;
    }
    for i in 0..cyy.nrows() {
        cyy[(i, i)] += reg;
    }
    let a = cxx.lu().solve(&cxy).unwrap();
    let b = cyy.lu().solve(&cxy.transpose()).unwrap();
    let m = a * b;
    let mut eig: Vec<f64> = m
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re.max(0.0).sqrt())
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    dot / (nu * nv)
}

// ---- retrieval ----------------------------------------------------------

/// 1-based rank of the best truth, counting for each truth the candidates
/// that outscore it or tie with a lower index.
pub fn rank_by_counting(scores: &[f64], truths: &[usize]) -> usize {
    truths
        .iter()
        .map(|&t| {
            1 + scores
                .iter()
                .enumerate()
                .filter(|&(c, &s)| s > scores[t] || (s == scores[t] && c < t))
                .count()
        })
        .min()
        .unwrap()
}

/// (recall@1, recall@5, recall@10, lower median, mean) of 1-based ranks.
pub fn metrics_by_counting(ranks: &[usize]) -> (f64, f64, f64, f64, f64) {
    let n = ranks.len() as f64;
    let count = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    let mut sorted = ranks.to_vec();
    sorted.sort();
    // Lower median: the element with index floor((n - 1) / 2).
    let median = sorted[(ranks.len() - 1) / 2] as f64;
    let mean = ranks.iter().sum::<usize>() as f64 / n;
    (count(1), count(5), count(10), median, mean)
}
