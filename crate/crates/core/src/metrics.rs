//! Evaluation of inferred constraints and chain diagnostics.

use crate::error::{Error, Result};
use crate::model::{ConstraintHypothesis, NominalModel, PreferenceDataset};
use crate::sampler::PosteriorChain;

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Constraint mean squared error across seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cmse {
    /// Mean of the per-seed squared errors `(ϑ̂ − ϑ*)²`.
    pub mean: f64,
    /// Population std of the per-seed squared errors.
    pub std: f64,
}

pub fn cmse(theta_hats: &[f64], theta_star: f64) -> Result<Cmse> {
    if theta_hats.is_empty() {
        return Err(Error::invalid("CMSE needs at least one estimate"));
    }
    if !theta_star.is_finite() || theta_hats.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("CMSE needs finite locations"));
    }
    let errors: Vec<f64> = theta_hats.iter().map(|t| (t - theta_star).powi(2)).collect();
    let (mean, std) = mean_std(&errors);
    Ok(Cmse { mean, std })
}

/// Truth versus MAP for one feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureRecovery {
    pub c_true: bool,
    pub c_map: bool,
    pub w_true: f64,
    pub w_map: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    pub features: Vec<FeatureRecovery>,
    /// Fraction of features whose MAP indicator matches the truth.
    pub mask_accuracy: f64,
    /// RMSE of `c_map · w_map` against `w_true` over truly constrained
    /// features; 0 when there are none.
    pub active_weight_rmse: f64,
}

impl RecoveryReport {
    pub fn mask_exact(&self) -> bool {
        self.features.iter().all(|f| f.c_true == f.c_map)
    }
}

pub fn recovery_report(map: &ConstraintHypothesis, true_c: &[bool], true_w: &[f64]) -> Result<RecoveryReport> {
    if map.dim() != true_c.len() || true_c.len() != true_w.len() {
        return Err(Error::invalid(format!(
            "MAP has {} features, truth has {} indicators and {} weights",
            map.dim(),
            true_c.len(),
            true_w.len()
        )));
    }
    let features: Vec<FeatureRecovery> = (0..map.dim())
        .map(|j| FeatureRecovery {
            c_true: true_c[j],
            c_map: map.indicators[j],
            w_true: true_w[j],
            w_map: map.weights[j],
        })
        .collect();
    let hits = features.iter().filter(|f| f.c_true == f.c_map).count();
    let active: Vec<f64> = features
        .iter()
        .filter(|f| f.c_true)
        .map(|f| {
            let eff = if f.c_map { f.w_map } else { 0.0 };
            (eff - f.w_true).powi(2)
        })
        .collect();
    let rmse = if active.is_empty() {
        0.0
    } else {
        (active.iter().sum::<f64>() / active.len() as f64).sqrt()
    };
    Ok(RecoveryReport {
        mask_accuracy: if features.is_empty() { 1.0 } else { hits as f64 / features.len() as f64 },
        active_weight_rmse: rmse,
        features,
    })
}

/// Reward statistics of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupDistribution {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

/// Per-group mean rewards under `h`, in dataset order.
pub fn group_reward_distribution(
    h: &ConstraintHypothesis,
    nom: &NominalModel,
    ds: &PreferenceDataset,
) -> Result<Vec<GroupDistribution>> {
    let rewards = ds.rewards(h, nom)?;
    Ok((0..ds.num_groups())
        .map(|k| {
            let values = rewards[ds.group_range(k)].to_vec();
            let (mean, std) = mean_std(&values);
            GroupDistribution { mean, std, values }
        })
        .collect())
}

/// Post-burn-in diagnostics of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSummary {
    pub flip_acceptance: Option<f64>,
    pub weight_acceptance: Option<f64>,
    pub location_acceptance: Option<f64>,
    /// Fraction of kept samples with each indicator on.
    pub indicator_frequency: Vec<f64>,
    pub weight_mean: Vec<f64>,
    pub weight_std: Vec<f64>,
    pub location_mean: Vec<f64>,
    pub location_std: Vec<f64>,
    pub loglik_min: f64,
    pub loglik_max: f64,
    pub map_loglik: f64,
    pub kept_samples: usize,
}

fn rate(accepted: usize, proposed: usize) -> Option<f64> {
    (proposed > 0).then(|| accepted as f64 / proposed as f64)
}

pub fn chain_summary(chain: &PosteriorChain) -> ChainSummary {
    let kept = match chain.post_burn_in() {
        [] => &chain.samples[..],
        s => s,
    };
    let dim = chain.map.hypothesis.dim();
    let locs = chain.map.hypothesis.locations.len();
    let column = |f: &dyn Fn(&ConstraintHypothesis) -> f64| -> (f64, f64) {
        let v: Vec<f64> = kept.iter().map(|s| f(&s.hypothesis)).collect();
        mean_std(&v)
    };
    let indicator_frequency = (0..dim)
        .map(|j| column(&|h| if h.indicators[j] { 1.0 } else { 0.0 }).0)
        .collect();
    let (weight_mean, weight_std) = (0..dim).map(|j| column(&|h| h.weights[j])).unzip();
    let (location_mean, location_std) = (0..locs).map(|j| column(&|h| h.locations[j])).unzip();
    let c = chain.accept_counts;
    ChainSummary {
        flip_acceptance: rate(c.flip_accepted, c.flip_proposed),
        weight_acceptance: rate(c.weight_accepted, c.weight_proposed),
        location_acceptance: rate(c.location_accepted, c.location_proposed),
        indicator_frequency,
        weight_mean,
        weight_std,
        location_mean,
        location_std,
        loglik_min: kept.iter().map(|s| s.loglik).fold(f64::INFINITY, f64::min),
        loglik_max: kept.iter().map(|s| s.loglik).fold(f64::NEG_INFINITY, f64::max),
        map_loglik: chain.map.loglik,
        kept_samples: kept.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{AcceptCounts, ChainSample};
    use approx::assert_abs_diff_eq;

    #[test]
    fn cmse_examples() {
        assert_eq!(cmse(&[8.0, 8.0], 8.0).unwrap(), Cmse { mean: 0.0, std: 0.0 });
        assert_eq!(cmse(&[9.0, 7.0], 8.0).unwrap(), Cmse { mean: 1.0, std: 0.0 });
        let one = cmse(&[8.3], 8.0).unwrap();
        assert_abs_diff_eq!(one.mean, 0.09, epsilon = 1e-12);
        assert_eq!(one.std, 0.0);
        assert!(cmse(&[], 8.0).is_err());
    }

    #[test]
    fn recovery_examples() {
        let map = ConstraintHypothesis::fixed(vec![false, true, true, false], vec![-0.3, -10.0, -100.0, -2.0]).unwrap();
        let r = recovery_report(&map, &[false, true, true, false], &[0.0, -10.0, -100.0, 0.0]).unwrap();
        assert_eq!(r.mask_accuracy, 1.0);
        assert_eq!(r.active_weight_rmse, 0.0);
        assert!(r.mask_exact());

        let wrong = ConstraintHypothesis::fixed(vec![true, true, true, false], vec![-0.3, -10.0, -100.0, -2.0]).unwrap();
        let r = recovery_report(&wrong, &[false, true, true, false], &[0.0, -10.0, -100.0, 0.0]).unwrap();
        assert_eq!(r.mask_accuracy, 0.75);

        let missed = ConstraintHypothesis::fixed(vec![false, false], vec![0.0, -4.0]).unwrap();
        let r = recovery_report(&missed, &[false, true], &[0.0, -3.0]).unwrap();
        assert_abs_diff_eq!(r.active_weight_rmse, 3.0);
        assert!(recovery_report(&missed, &[true], &[0.0]).is_err());
    }

    #[test]
    fn singleton_groups_have_zero_std() {
        let s = crate::envs::grid3x3_scenario();
        let h = ConstraintHypothesis::fixed(vec![false, true, true], vec![0.0, -2.0, -1.0]).unwrap();
        let dist = group_reward_distribution(&h, &s.nominal, &s.dataset).unwrap();
        assert_eq!(dist.len(), 3);
        assert!(dist.iter().all(|g| g.std == 0.0 && g.values.len() == 1));
        assert_abs_diff_eq!(dist[1].mean, -0.4);
    }

    #[test]
    fn constant_chain_has_zero_spread() {
        let h = ConstraintHypothesis::fixed(vec![true, false], vec![-1.0, -2.0]).unwrap();
        let sample = |i| ChainSample {
            iteration: i,
            hypothesis: h.clone(),
            loglik: -3.0,
            accepted: false,
        };
        let chain = PosteriorChain {
            samples: (0..10).map(|i| sample(i * 10)).collect(),
            map: sample(0),
            last: sample(90),
            accept_counts: AcceptCounts::default(),
            iterations: 90,
            burn_in_fraction: 0.2,
        };
        let s = chain_summary(&chain);
        assert_eq!(s.weight_std, vec![0.0, 0.0]);
        assert_eq!(s.indicator_frequency, vec![1.0, 0.0]);
        assert_eq!(s.flip_acceptance, None);
        assert!(s.map_loglik >= s.loglik_max);
    }
}
