//! Seeded k-means++ initialization shared by all families.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::em::{
    branch_scores, gaussian_update, global_scales, laplacian_update, select_branches,
    SortedColumns,
};
use super::{Branch, Family, FitConfig, GmmModel, HglmmModel, LmmModel, Mixture};

/// Builds the starting model for EM.
///
/// Centers come from k-means++ seeding; every sample is then assigned to its
/// nearest center (ties to the lower index) and each cluster's statistics
/// give the component parameters. Weights follow cluster sizes with a floor
/// of `1 / (N K)` before renormalization. Hybrid selectors are chosen from
/// these hard-assignment statistics with the same rule as the M-step.
pub fn init_model(x: &Matrix, config: &FitConfig, family: Family) -> Result<Mixture> {
    config.validate()?;
    x.validate_input("training data")?;
    let (n, d, k) = (x.rows(), x.cols(), config.k);
    if n < k {
        return Err(Error::validation(format!(
            "{n} samples cannot support {k} components"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let centers = kmeans_pp(x, k, &mut rng);
    let assignment: Vec<usize> = x.iter_rows().map(|row| nearest(x, &centers, row)).collect();

    let cols = SortedColumns::new(x);
    let (global_sigma, global_s) = global_scales(x, &cols, config.scale_floor);
    let floor = config.scale_floor;

    let mut counts = vec![0usize; k];
    for &c in &assignment {
        counts[c] += 1;
    }
    let tau_floor = 1.0 / (n as f64 * k as f64);
    let raw: Vec<f64> = counts
        .iter()
        .map(|&c| (c as f64 / n as f64).max(tau_floor))
        .collect();
    let total: f64 = raw.iter().sum();
    let tau: Vec<f64> = raw.iter().map(|t| t / total).collect();

    let mut mu = Vec::with_capacity(k * d);
    let mut sigma = Vec::with_capacity(k * d);
    let mut m = Vec::with_capacity(k * d);
    let mut s = Vec::with_capacity(k * d);
    let mut b = Vec::with_capacity(k * d);
    for (c, &center) in centers.iter().enumerate() {
        if counts[c] == 0 {
            let loc = x.row(center);
            mu.extend_from_slice(loc);
            sigma.extend_from_slice(&global_sigma);
            m.extend_from_slice(loc);
            s.extend_from_slice(&global_s);
            b.extend(std::iter::repeat_n(Branch::Gaussian, d));
            continue;
        }
        let t: Vec<f64> = assignment
            .iter()
            .map(|&a| if a == c { 1.0 } else { 0.0 })
            .collect();
        let nk = counts[c] as f64;
        let (cmu, csigma) = gaussian_update(x, &t, nk, floor);
        let (cm, cs) = laplacian_update(&cols, &t, nk, floor);
        if family == Family::Hglmm {
            b.extend(select_branches(&branch_scores(x, &t, &cmu, &csigma, &cm, &cs)));
        }
        mu.extend(cmu);
        sigma.extend(csigma);
        m.extend(cm);
        s.extend(cs);
    }
    let block = |v: Vec<f64>| Matrix::from_vec(k, d, v).expect("parameter block shape");
    Ok(match family {
        Family::Gmm => Mixture::Gmm(GmmModel {
            tau,
            mu: block(mu),
            sigma: block(sigma),
        }),
        Family::Lmm => Mixture::Lmm(LmmModel {
            tau,
            m: block(m),
            s: block(s),
        }),
        Family::Hglmm => Mixture::Hglmm(HglmmModel {
            tau,
            mu: block(mu),
            sigma: block(sigma),
            m: block(m),
            s: block(s),
            b,
        }),
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &Matrix, centers: &[usize], row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (c, &idx) in centers.iter().enumerate() {
        let dist = sq_dist(row, x.row(idx));
        if dist < best_dist {
            best = c;
            best_dist = dist;
        }
    }
    best
}

/// Row indices of `k` seeds chosen with squared-distance weighting.
fn kmeans_pp(x: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = x.rows();
    let mut centers = Vec::with_capacity(k);
    centers.push(rng.random_range(0..n));
    let mut dist: Vec<f64> = x.iter_rows().map(|r| sq_dist(r, x.row(centers[0]))).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 && total.is_finite() {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in dist.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` just above the final sum.
            pick.unwrap_or_else(|| dist.iter().rposition(|&w| w > 0.0).expect("positive total"))
        } else {
            // Every sample coincides with a chosen center.
            rng.random_range(0..n)
        };
        centers.push(next);
        for (i, row) in x.iter_rows().enumerate() {
            dist[i] = dist[i].min(sq_dist(row, x.row(next)));
        }
    }
    centers
}
