//! Distance-based client selection.
//!
//! Uploads are compared by pairwise Euclidean distance; each client is scored
//! by the sum of its distances to everyone else and the `M%` lowest scores are
//! kept. Their min-max normalized scores form the agent's state.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::nn::FlatParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceScope {
    AllLayers,
    /// Only the weight+bias slice of the layer producing the final hidden
    /// representation. Falls back to all layers for models without hidden layers.
    LastHiddenLayer,
}

impl DistanceScope {
    pub fn name(self) -> &'static str {
        match self {
            DistanceScope::AllLayers => "all_layers",
            DistanceScope::LastHiddenLayer => "last_hidden_layer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "all_layers" => Some(DistanceScope::AllLayers),
            "last_hidden_layer" => Some(DistanceScope::LastHiddenLayer),
            _ => None,
        }
    }

    pub fn slice<'a>(&self, p: &'a FlatParams) -> &'a [f64] {
        match self {
            DistanceScope::AllLayers => p.values(),
            DistanceScope::LastHiddenLayer => &p.values()[p.arch().last_hidden_range()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Ascending client ids.
    pub selected_ids: Vec<usize>,
    /// Normalized row sums aligned with `selected_ids`.
    pub state: Vec<f64>,
    /// Raw row sums aligned with `selected_ids`.
    pub raw_row_sums: Vec<f64>,
    /// Full distance matrix in input order, only when requested.
    pub distance_matrix: Option<Vec<Vec<f64>>>,
}

/// `max(1, round_half_up(m_percent * n / 100))`, capped at `n`.
pub fn m_count(m_percent: f64, n: usize) -> usize {
    let raw = m_percent * n as f64 / 100.0;
    // nudge so 0.5 boundaries produced by decimal percentages round up
    let rounded = (raw + 0.5 + 1e-9).floor() as usize;
    rounded.clamp(1, n.max(1))
}

/// Min-max scaling to `[0, 1]`; a constant vector maps to zeros.
pub fn normalize_state(row_sums: &[f64]) -> Vec<f64> {
    let min = row_sums.iter().copied().fold(f64::INFINITY, f64::min);
    let max = row_sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range.is_nan() || range <= 0.0 || !range.is_finite() {
        return vec![0.0; row_sums.len()];
    }
    row_sums
        .iter()
        .map(|&x| ((x - min) / range).clamp(0.0, 1.0))
        .collect()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Symmetric pairwise distances with an exact zero diagonal. Rows of
/// non-finite vectors (and their columns) are `+inf`.
pub fn distance_matrix(vectors: &[&[f64]]) -> Vec<Vec<f64>> {
    let finite: Vec<bool> = vectors.iter().map(|v| v.iter().all(|x| x.is_finite())).collect();
    let n = vectors.len();
    // upper triangle, computed row by row in parallel, then mirrored
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| {
                    if finite[i] && finite[j] {
                        euclidean(vectors[i], vectors[j])
                    } else {
                        f64::INFINITY
                    }
                })
                .collect()
        })
        .collect();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for (k, &d) in upper[i].iter().enumerate() {
            let j = i + 1 + k;
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    m
}

/// Selects the `M%` uploads with the smallest summed distance to all others.
///
/// `uploads` pairs client ids with their parameter vectors. A client whose
/// upload contains NaN or infinity is scored `+inf` and excluded from other
/// clients' sums, so it is never selected. Ties break by ascending id.
pub fn select_clients(
    uploads: &[(usize, &FlatParams)],
    m_percent: f64,
    scope: DistanceScope,
    keep_matrix: bool,
) -> Result<SelectionResult> {
    if uploads.len() < 2 {
        return Err(FedError::Simulation(format!(
            "selection needs at least 2 uploads, got {}",
            uploads.len()
        )));
    }
    let vectors: Vec<&[f64]> = uploads.iter().map(|(_, p)| scope.slice(p)).collect();
    let len = vectors[0].len();
    if vectors.iter().any(|v| v.len() != len) {
        return Err(FedError::Simulation("uploads differ in length".into()));
    }
    let matrix = distance_matrix(&vectors);
    let finite: Vec<bool> = vectors.iter().map(|v| v.iter().all(|x| x.is_finite())).collect();
    let n_finite = finite.iter().filter(|&&f| f).count();
    if n_finite == 0 {
        return Err(FedError::Simulation("every upload is non-finite".into()));
    }
    let sums: Vec<f64> = (0..uploads.len())
        .map(|i| {
            if !finite[i] {
                return f64::INFINITY;
            }
            (0..uploads.len())
                .filter(|&j| finite[j])
                .map(|j| matrix[i][j])
                .sum()
        })
        .collect();

    let count = m_count(m_percent, uploads.len());
    if count > n_finite {
        return Err(FedError::Simulation(format!(
            "{count} clients to select but only {n_finite} finite uploads"
        )));
    }
    let mut order: Vec<usize> = (0..uploads.len()).collect();
    order.sort_by(|&a, &b| {
        sums[a]
            .partial_cmp(&sums[b])
            .unwrap_or(Ordering::Equal)
            .then(uploads[a].0.cmp(&uploads[b].0))
    });
    let mut chosen: Vec<usize> = order[..count].to_vec();
    chosen.sort_by_key(|&i| uploads[i].0);

    let raw_row_sums: Vec<f64> = chosen.iter().map(|&i| sums[i]).collect();
    Ok(SelectionResult {
        selected_ids: chosen.iter().map(|&i| uploads[i].0).collect(),
        state: normalize_state(&raw_row_sums),
        raw_row_sums,
        distance_matrix: keep_matrix.then_some(matrix),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ArchSpec, OutputHead};

    fn p(v: &[f64]) -> FlatParams {
        let arch = ArchSpec::new(v.len() - 1, vec![], 1, OutputHead::Logits).unwrap();
        FlatParams::new(arch, v.to_vec()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_state(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_state(&[5.0, 5.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn m_count_rounds_half_up() {
        assert_eq!(m_count(30.0, 20), 6);
        assert_eq!(m_count(67.0, 3), 2);
        assert_eq!(m_count(50.0, 5), 3);
        assert_eq!(m_count(1.0, 10), 1);
        assert_eq!(m_count(100.0, 7), 7);
    }

    #[test]
    fn identical_uploads_tie_break_by_id() {
        let a = p(&[1.0, 2.0]);
        let ups = [(0, &a), (1, &a), (2, &a)];
        let r = select_clients(&ups, 67.0, DistanceScope::AllLayers, false).unwrap();
        assert_eq!(r.selected_ids, vec![0, 1]);
        assert_eq!(r.state, vec![0.0, 0.0]);
    }

    #[test]
    fn hand_computed_example() {
        let (a, b, c) = (p(&[0.0, 0.0]), p(&[0.0, 1.0]), p(&[100.0, 100.0]));
        let ups = [(0, &a), (1, &b), (2, &c)];
        let r = select_clients(&ups, 67.0, DistanceScope::AllLayers, true).unwrap();
        assert_eq!(r.selected_ids, vec![0, 1]);
        let d02 = (2.0f64 * 100.0 * 100.0).sqrt();
        let d12 = (100.0f64 * 100.0 + 99.0 * 99.0).sqrt();
        assert!((r.raw_row_sums[0] - (1.0 + d02)).abs() < 1e-9);
        assert!((r.raw_row_sums[1] - (1.0 + d12)).abs() < 1e-9);
        let m = r.distance_matrix.unwrap();
        assert_eq!(m[0][0], 0.0);
        assert_eq!(m[0][2], m[2][0]);
    }

    #[test]
    fn nan_upload_is_never_selected() {
        let (a, b, c) = (p(&[0.0, 0.0]), p(&[f64::NAN, 1.0]), p(&[0.5, 0.5]));
        let ups = [(0, &a), (1, &b), (2, &c)];
        let r = select_clients(&ups, 67.0, DistanceScope::AllLayers, false).unwrap();
        assert_eq!(r.selected_ids, vec![0, 2]);
        let all_nan = [(0, &b), (1, &b)];
        assert!(select_clients(&all_nan, 50.0, DistanceScope::AllLayers, false).is_err());
    }

    #[test]
    fn last_hidden_degenerates_without_hidden_layers() {
        let (a, b, c) = (p(&[0.0, 3.0]), p(&[1.0, 1.0]), p(&[9.0, 0.0]));
        let ups = [(4, &a), (5, &b), (6, &c)];
        let all = select_clients(&ups, 67.0, DistanceScope::AllLayers, false).unwrap();
        let lhl = select_clients(&ups, 67.0, DistanceScope::LastHiddenLayer, false).unwrap();
        assert_eq!(all, lhl);
    }

    #[test]
    fn too_few_uploads() {
        let a = p(&[0.0, 0.0]);
        assert!(select_clients(&[(0, &a)], 50.0, DistanceScope::AllLayers, false).is_err());
    }
}
