//! Choosing margins so that inferred group reward gaps follow a stated ratio.
//!
//! Each candidate margin set is scored by running a (shortened) chain,
//! taking its MAP hypothesis and comparing the ratios of consecutive group
//! reward gaps against the target in log space. The best candidate is then
//! re-run at full length.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::likelihood::MarginSpec;
use crate::metrics::mean_std;
use crate::model::{ConstraintHypothesis, NominalModel, PreferenceDataset};
use crate::sampler::{pbicrl, PosteriorChain, SamplerConfig};

/// Margin values combined by [`default_grid`].
pub const DEFAULT_GRID_VALUES: [f64; 9] = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 2.9, 4.0, 6.0];

/// Desired `gap(G_{k+1}, G_{k+2}) / gap(G_k, G_{k+1})` for each `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginTarget {
    ratios: Vec<f64>,
    tolerance: f64,
}

impl MarginTarget {
    pub fn new(ratios: Vec<f64>, tolerance: f64) -> Result<Self> {
        if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::invalid("target gap ratios must be positive"));
        }
        if !(tolerance.is_finite() && tolerance >= 0.0) {
            return Err(Error::invalid("tolerance must be non-negative"));
        }
        Ok(MarginTarget { ratios, tolerance })
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Sum of squared log-ratio errors; infinite when the gaps do not order
    /// the groups.
    pub fn error(&self, gaps: &[f64]) -> f64 {
        match gap_ratios(gaps) {
            Some(achieved) if achieved.len() == self.ratios.len() => achieved
                .iter()
                .zip(&self.ratios)
                .map(|(a, t)| (a.ln() - t.ln()).powi(2))
                .sum(),
            _ => f64::INFINITY,
        }
    }

    /// Every achieved ratio within `tolerance` (relative) of its target.
    pub fn satisfied(&self, gaps: &[f64]) -> bool {
        match gap_ratios(gaps) {
            Some(achieved) if achieved.len() == self.ratios.len() => achieved
                .iter()
                .zip(&self.ratios)
                .all(|(a, t)| (a / t - 1.0).abs() <= self.tolerance),
            _ => false,
        }
    }
}

/// Consecutive gap ratios, or `None` if some gap is not positive.
pub fn gap_ratios(gaps: &[f64]) -> Option<Vec<f64>> {
    if gaps.iter().any(|&g| g.is_nan() || g <= 0.0) {
        return None;
    }
    Some(gaps.windows(2).map(|w| w[1] / w[0]).collect())
}

/// `gap[k]` = mean reward over `G_k` minus mean reward over `G_{k+1}`.
pub fn group_reward_gaps(h: &ConstraintHypothesis, nom: &NominalModel, ds: &PreferenceDataset) -> Result<Vec<f64>> {
    if ds.num_groups() < 2 {
        return Err(Error::invalid("reward gaps need at least 2 groups"));
    }
    let rewards = ds.rewards(h, nom)?;
    let means: Vec<f64> = (0..ds.num_groups())
        .map(|k| mean_std(&rewards[ds.group_range(k)]).0)
        .collect();
    Ok(means.windows(2).map(|w| w[0] - w[1]).collect())
}

/// Candidate margin sets for `groups` groups.
///
/// Two groups: every value of [`DEFAULT_GRID_VALUES`]. Three groups: the
/// product over `m_12`, `m_23`, `m_13` restricted to additive sets,
/// `m_13 ≥ m_12 + m_23`. Larger problems need an explicit grid.
pub fn default_grid(groups: usize) -> Result<Vec<MarginSpec>> {
    let v = DEFAULT_GRID_VALUES;
    match groups {
        2 => v.iter().map(|&m| MarginSpec::from_pairs(2, &[((0, 1), m)])).collect(),
        3 => {
            let mut out = Vec::new();
            for &m12 in &v {
                for &m23 in &v {
                    for &m13 in v.iter().filter(|&&m| m >= m12 + m23) {
                        out.push(MarginSpec::from_pairs(3, &[((0, 1), m12), ((1, 2), m23), ((0, 2), m13)])?);
                    }
                }
            }
            Ok(out)
        }
        _ => Err(Error::config(format!(
            "no default margin grid for {groups} groups; list candidates explicitly"
        ))),
    }
}

/// Score of one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub margins: MarginSpec,
    pub gaps: Vec<f64>,
    pub error: f64,
}

#[derive(Debug, Clone)]
pub struct TuningResult {
    pub margins: MarginSpec,
    /// MAP of the full-length chain run with the selected margins.
    pub hypothesis: ConstraintHypothesis,
    pub chain: PosteriorChain,
    /// Scores from the shortened screening chains, in candidate order.
    pub candidates: Vec<CandidateScore>,
    pub selected: usize,
}

/// Screens every candidate with a chain of `k/4` iterations, picks the one
/// whose MAP gap ratios are closest to `target` (ties go to the smaller
/// margin total) and re-runs it with the full `cfg`.
pub fn tune_margins(
    ds: &PreferenceDataset,
    nom: &NominalModel,
    target: &MarginTarget,
    candidates: &[MarginSpec],
    cfg: &SamplerConfig,
) -> Result<TuningResult> {
    if candidates.is_empty() {
        return Err(Error::invalid("margin candidate grid is empty"));
    }
    if target.ratios.len() + 2 != ds.num_groups() {
        return Err(Error::invalid(format!(
            "{} target ratios for {} groups (need {})",
            target.ratios.len(),
            ds.num_groups(),
            ds.num_groups().saturating_sub(2)
        )));
    }
    let screen = SamplerConfig {
        iterations: (cfg.iterations / 4).max(1),
        ..cfg.clone()
    };
    let scores = candidates
        .par_iter()
        .map(|m| {
            let chain = pbicrl(ds, nom, m, &screen)?;
            let gaps = group_reward_gaps(&chain.map.hypothesis, nom, ds)?;
            Ok(CandidateScore {
                margins: m.clone(),
                error: target.error(&gaps),
                gaps,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let selected = select(&scores).ok_or_else(|| {
        Error::TuningFailed("no candidate margin set produced a MAP that orders the groups".into())
    })?;
    let margins = scores[selected].margins.clone();
    let chain = pbicrl(ds, nom, &margins, cfg)?;
    Ok(TuningResult {
        margins,
        hypothesis: chain.map.hypothesis.clone(),
        chain,
        candidates: scores,
        selected,
    })
}

fn select(scores: &[CandidateScore]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if !s.error.is_finite() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let cur = &scores[b];
                let better = s.error < cur.error || (s.error == cur.error && s.margins.total() < cur.margins.total());
                Some(if better { i } else { b })
            }
        };
    }
    best
}
