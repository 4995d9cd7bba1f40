//! Spearman rank correlation between feature trajectories pooled over a corpus.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::track::{Feature, ParameterTrack, N_FEATURES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub rho: [[f64; N_FEATURES]; N_FEATURES],
    /// Features whose pooled column was constant; their off-diagonal entries are 0.
    pub constant_features: Vec<Feature>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: Feature, b: Feature) -> f64 {
        self.rho[a.index()][b.index()]
    }

    /// Feature pairs whose |ρ| exceeds `threshold`, strongest first.
    pub fn strongly_correlated(&self, threshold: f64) -> Vec<(Feature, Feature, f64)> {
        let mut pairs = Vec::new();
        for i in 0..N_FEATURES {
            for j in i + 1..N_FEATURES {
                if self.rho[i][j].abs() > threshold {
                    pairs.push((Feature::ALL[i], Feature::ALL[j], self.rho[i][j]));
                }
            }
        }
        pairs.sort_by(|a, b| b.2.abs().total_cmp(&a.2.abs()));
        pairs
    }
}

/// Fractional ranks (1-based), ties receive the average of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman_correlation(corpus: &[ParameterTrack]) -> Result<CorrelationMatrix> {
    let total: usize = corpus.iter().map(ParameterTrack::n_frames).sum();
    if total < 3 {
        return Err(Error::InvalidInput(format!(
            "Spearman correlation needs at least 3 pooled frames, got {total}"
        )));
    }
    let ranks: Vec<Vec<f64>> = Feature::ALL
        .iter()
        .map(|&f| {
            let pooled: Vec<f64> = corpus.iter().flat_map(|t| t.column(f).to_vec()).collect();
            average_ranks(&pooled)
        })
        .collect();

    let constant_features: Vec<Feature> = Feature::ALL
        .into_iter()
        .filter(|f| {
            let r = &ranks[f.index()];
            r.iter().all(|&v| v == r[0])
        })
        .collect();
    for f in &constant_features {
        log::warn!("feature {f} is constant over the corpus; its correlations are reported as 0");
    }

    let mut rho = [[0.0; N_FEATURES]; N_FEATURES];
    for i in 0..N_FEATURES {
        rho[i][i] = 1.0;
        for j in i + 1..N_FEATURES {
            let value = pearson(&ranks[i], &ranks[j]).unwrap_or(0.0);
            rho[i][j] = value;
            rho[j][i] = value;
        }
    }
    Ok(CorrelationMatrix {
        rho,
        constant_features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::TrackMeta;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};

    fn track(columns: [Vec<f64>; 5]) -> ParameterTrack {
        let t = columns[0].len();
        let values = Array2::from_shape_fn((t, 5), |(r, c)| columns[c][r]);
        ParameterTrack::new(values, vec![true; t], 86.0, false, TrackMeta::default()).unwrap()
    }

    /// Brute-force ranks: count smaller values and half the equal ones.
    fn brute_rank(values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .map(|&v| {
                let less = values.iter().filter(|&&w| w < v).count() as f64;
                let equal = values.iter().filter(|&&w| w == v).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn identical_and_reversed_columns() {
        let up: Vec<f64> = (0..10).map(f64::from).collect();
        let down: Vec<f64> = up.iter().map(|v| -v * 3.0).collect();
        let m = spearman_correlation(&[track([up.clone(), up.clone(), down, up.clone(), up.iter().map(|v| v * v).collect()])]).unwrap();
        assert_eq!(m.get(Feature::F1, Feature::F1), 1.0);
        assert!((m.get(Feature::F1, Feature::F2) - 1.0).abs() < 1e-15);
        assert!((m.get(Feature::F1, Feature::F0) + 1.0).abs() < 1e-15);
        // monotone transform leaves Spearman at 1
        assert!((m.get(Feature::F1, Feature::Slope) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force_rank_then_pearson() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let cols: [Vec<f64>; 5] = std::array::from_fn(|_| (0..20).map(|_| rng.gen_range(0..8) as f64).collect());
        let m = spearman_correlation(&[track(cols.clone())]).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let (ri, rj) = (brute_rank(&cols[i]), brute_rank(&cols[j]));
                let n = 20.0;
                let (mi, mj) = (ri.iter().sum::<f64>() / n, rj.iter().sum::<f64>() / n);
                let cov: f64 = ri.iter().zip(&rj).map(|(a, b)| (a - mi) * (b - mj)).sum();
                let vi: f64 = ri.iter().map(|a| (a - mi).powi(2)).sum();
                let vj: f64 = rj.iter().map(|b| (b - mj).powi(2)).sum();
                let expected = if i == j { 1.0 } else { cov / (vi * vj).sqrt() };
                assert!((m.rho[i][j] - expected).abs() < 1e-12, "{i},{j}");
                assert_eq!(m.rho[i][j], m.rho[j][i]);
            }
        }
    }

    #[test]
    fn constant_column_reports_zero() {
        let up: Vec<f64> = (0..5).map(f64::from).collect();
        let m = spearman_correlation(&[track([up.clone(), vec![1.0; 5], up.clone(), up.clone(), up])]).unwrap();
        assert_eq!(m.constant_features, vec![Feature::F2]);
        assert_eq!(m.get(Feature::F1, Feature::F2), 0.0);
        assert_eq!(m.get(Feature::F2, Feature::F2), 1.0);
    }

    #[test]
    fn too_few_frames() {
        let c: [Vec<f64>; 5] = std::array::from_fn(|_| vec![1.0, 2.0]);
        assert!(spearman_correlation(&[track(c)]).is_err());
    }
}
