use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::compensated_sum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtwResult {
    pub distance: f64,
    /// Number of aligned pairs on the optimal warping path.
    pub path_length: usize,
}

/// Unconstrained dynamic time warping with point cost |a_i - b_j|.
///
/// When several optimal paths exist, the reported path length follows the
/// one that prefers diagonal steps while backtracking.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<DtwResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySeries);
    }
    let (n, m) = (a.len(), b.len());
    let mut cost = vec![f64::INFINITY; (n + 1) * (m + 1)];
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    cost[0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let best = cost[idx(i - 1, j - 1)]
                .min(cost[idx(i - 1, j)])
                .min(cost[idx(i, j - 1)]);
            cost[idx(i, j)] = (a[i - 1] - b[j - 1]).abs() + best;
        }
    }
    let (mut i, mut j, mut path_length) = (n, m, 1);
    while (i, j) != (1, 1) {
        let diag = if i > 1 && j > 1 { cost[idx(i - 1, j - 1)] } else { f64::INFINITY };
        let up = if i > 1 { cost[idx(i - 1, j)] } else { f64::INFINITY };
        let left = if j > 1 { cost[idx(i, j - 1)] } else { f64::INFINITY };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path_length += 1;
    }
    Ok(DtwResult {
        distance: cost[idx(n, m)],
        path_length,
    })
}

/// Maps values to (v - mean) / std with the population standard deviation.
pub fn z_normalize_slice(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::DegenerateSeries(format!(
            "{} values, need at least 2",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = compensated_sum(values.iter().copied()) / n;
    let var = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean))) / n;
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::DegenerateSeries("zero standard deviation".into()));
    }
    Ok(values.iter().map(|v| (v - mean) / std).collect())
}

/// [`z_normalize_slice`] over a keyed collection.
pub fn z_normalize<K: Ord + Clone>(values: &BTreeMap<K, f64>) -> Result<BTreeMap<K, f64>> {
    let raw: Vec<f64> = values.values().copied().collect();
    let z = z_normalize_slice(&raw)?;
    Ok(values.keys().cloned().zip(z).collect())
}

/// One cell of a pairwise DTW heatmap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub model_row: String,
    pub model_col: String,
    pub distance: f64,
    pub z_distance: f64,
}

/// DTW distances between every pair of series (row before column in input
/// order), z-normalized across the pairs.
pub fn dtw_heatmap(series: &[(String, Vec<f64>)]) -> Result<Vec<HeatmapCell>> {
    let mut cells = Vec::new();
    for (r, (row_id, row)) in series.iter().enumerate() {
        for (col_id, col) in &series[r + 1..] {
            cells.push((row_id.clone(), col_id.clone(), dtw_distance(row, col)?.distance));
        }
    }
    let distances: Vec<f64> = cells.iter().map(|c| c.2).collect();
    let z = z_normalize_slice(&distances)?;
    Ok(cells
        .into_iter()
        .zip(z)
        .map(|((model_row, model_col, distance), z_distance)| HeatmapCell {
            model_row,
            model_col,
            distance,
            z_distance,
        })
        .collect())
}
