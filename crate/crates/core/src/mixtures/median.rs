//! Weighted median: the location update of a Laplacian component.

use crate::error::{Error, Result};

/// Smallest sample value minimizing `sum_i w_i |v_i - v|`.
///
/// After a stable sort by value this is the first position whose running
/// weight reaches half of the total, so the weight strictly below the result
/// is at most half and the weight at or below it is at least half.
pub fn weighted_median(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.len() != weights.len() {
        return Err(Error::shape(format!(
            "{} values but {} weights",
            values.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::domain(format!("weights must be finite and non-negative, got {w}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("values must be finite"));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    median_in_order(values, weights, &order)
        .ok_or_else(|| Error::domain("weighted median needs a positive total weight"))
}

/// Weighted median with `order` listing sample indices by ascending value.
/// Returns `None` when the total weight is not positive.
pub(crate) fn median_in_order(values: &[f64], weights: &[f64], order: &[usize]) -> Option<f64> {
    let total: f64 = order.iter().map(|&i| weights[i]).sum();
    if !(total > 0.0) {
        return None;
    }
    let mut running = 0.0;
    for &i in order {
        running += weights[i];
        if 2.0 * running >= total {
            return Some(values[i]);
        }
    }
    // Only reachable through rounding in the running sum.
    order.last().map(|&i| values[i])
}
