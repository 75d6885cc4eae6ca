//! Trajectories, constraint hypotheses and the masked linear reward.
//!
//! The reward of a state is linear in its features,
//!
//! ```text
//! r(s) = (w_n + c ∘ w_p)ᵀ φ(s)
//! ```
//!
//! where `w_n` is the known nominal weight vector, `c` a binary mask marking
//! which features are constraints and `w_p` the (non-positive) penalty
//! weights. Because the reward is linear, the per-demonstration mean reward
//! only needs the trajectory's mean feature vector, which
//! [`PreferenceDataset`] computes once at construction.

use std::ops::{Deref, Range};

use crate::error::{Error, Result};

/// Feature activations `φ(s)` of a single state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        FeatureVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        FeatureVector(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(values: Vec<f64>) -> Self {
        FeatureVector(values)
    }
}

impl From<&[f64]> for FeatureVector {
    fn from(values: &[f64]) -> Self {
        FeatureVector(values.to_vec())
    }
}

/// A demonstration: one feature vector per visited state, plus an optional
/// scalar progress coordinate per state used by parametric features.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    steps: Vec<FeatureVector>,
    progress: Vec<f64>,
}

impl Trajectory {
    /// Builds a trajectory. `progress` must be empty or have one entry per step.
    pub fn new(steps: Vec<FeatureVector>, progress: Vec<f64>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::invalid("trajectory must contain at least one step"));
        }
        let dim = steps[0].len();
        if let Some(t) = steps.iter().position(|s| s.len() != dim) {
            return Err(Error::invalid(format!(
                "step {t} has {} features, expected {dim}",
                steps[t].len()
            )));
        }
        if !progress.is_empty() && progress.len() != steps.len() {
            return Err(Error::invalid(format!(
                "progress has {} entries for {} steps",
                progress.len(),
                steps.len()
            )));
        }
        if steps.iter().flat_map(|s| s.iter()).chain(progress.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("trajectory contains non-finite values"));
        }
        Ok(Trajectory { steps, progress })
    }

    pub fn without_progress(steps: Vec<FeatureVector>) -> Result<Self> {
        Self::new(steps, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    /// Always false: trajectories hold at least one step.
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.steps[0].len()
    }

    pub fn steps(&self) -> &[FeatureVector] {
        &self.steps
    }

    pub fn progress(&self) -> &[f64] {
        &self.progress
    }

    pub fn has_progress(&self) -> bool {
        !self.progress.is_empty()
    }
}

/// Componentwise mean of a trajectory's per-step features.
pub fn trajectory_mean_features(traj: &Trajectory) -> Result<FeatureVector> {
    if traj.steps.is_empty() {
        return Err(Error::invalid("cannot average an empty trajectory"));
    }
    let mut mean = vec![0.0; traj.feature_dim()];
    for step in &traj.steps {
        for (m, v) in mean.iter_mut().zip(step.iter()) {
            *m += v;
        }
    }
    let t = traj.len() as f64;
    mean.iter_mut().for_each(|m| *m /= t);
    Ok(FeatureVector(mean))
}

/// Fraction of `sorted` progress values that are `>= theta`.
///
/// `sorted` must be in ascending order. This is the mean activation of the
/// halfspace indicator `1[z >= theta]` over a trajectory.
pub fn halfspace_fraction(sorted: &[f64], theta: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let below = sorted.partition_point(|&z| z < theta);
    (sorted.len() - below) as f64 / sorted.len() as f64
}

pub(crate) fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
}

/// Mean activations of one halfspace feature `1[z >= theta_j]` per location.
pub fn parametric_mean_features(traj: &Trajectory, theta: &[f64]) -> Result<FeatureVector> {
    if !traj.has_progress() {
        return Err(Error::invalid(
            "parametric features need per-step progress values",
        ));
    }
    let sorted = sorted_copy(&traj.progress);
    Ok(theta.iter().map(|&t| halfspace_fraction(&sorted, t)).collect::<Vec<_>>().into())
}

/// Which features the constraint mask and penalty weights act on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintFeatures {
    /// The candidates are the trajectory features themselves (`M = N_phi`).
    Fixed,
    /// One halfspace indicator `1[z >= theta_j]` per location `theta_j`.
    Halfspace,
}

/// A joint setting of constraint indicators, penalty weights and, for the
/// parametric case, constraint locations.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintHypothesis {
    pub indicators: Vec<bool>,
    pub weights: Vec<f64>,
    pub locations: Vec<f64>,
}

impl ConstraintHypothesis {
    pub fn new(indicators: Vec<bool>, weights: Vec<f64>, locations: Vec<f64>) -> Result<Self> {
        if indicators.len() != weights.len() {
            return Err(Error::invalid(format!(
                "{} indicators but {} penalty weights",
                indicators.len(),
                weights.len()
            )));
        }
        if weights.iter().chain(locations.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("hypothesis contains non-finite values"));
        }
        Ok(ConstraintHypothesis {
            indicators,
            weights,
            locations,
        })
    }

    /// Fixed-feature hypothesis.
    pub fn fixed(indicators: Vec<bool>, weights: Vec<f64>) -> Result<Self> {
        Self::new(indicators, weights, Vec::new())
    }

    /// No constraint active, all weights zero.
    pub fn unconstrained(dim: usize) -> Self {
        ConstraintHypothesis {
            indicators: vec![false; dim],
            weights: vec![0.0; dim],
            locations: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn features(&self) -> ConstraintFeatures {
        if self.locations.is_empty() {
            ConstraintFeatures::Fixed
        } else {
            ConstraintFeatures::Halfspace
        }
    }

    /// `c_j · w_j`
    pub fn effective_weight(&self, j: usize) -> f64 {
        if self.indicators[j] {
            self.weights[j]
        } else {
            0.0
        }
    }

    pub fn effective_weights(&self) -> Vec<f64> {
        (0..self.dim()).map(|j| self.effective_weight(j)).collect()
    }
}

/// The known part of the reward and the Bradley-Terry inverse temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalModel {
    weights: Vec<f64>,
    beta: f64,
}

impl NominalModel {
    pub const DEFAULT_BETA: f64 = 1.0;

    pub fn new(weights: Vec<f64>, beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::invalid(format!("beta must be positive, got {beta}")));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("nominal weights must be finite"));
        }
        Ok(NominalModel { weights, beta })
    }

    pub fn with_default_beta(weights: Vec<f64>) -> Result<Self> {
        Self::new(weights, Self::DEFAULT_BETA)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `β · w_nᵀ φ̄`
    pub fn nominal_reward(&self, mean_phi: &[f64]) -> Result<f64> {
        if mean_phi.len() != self.weights.len() {
            return Err(Error::invalid(format!(
                "{} features but {} nominal weights",
                mean_phi.len(),
                self.weights.len()
            )));
        }
        Ok(self.beta * dot(&self.weights, mean_phi))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `β · (w_n + c ∘ w_p)ᵀ φ̄` for a fixed-feature hypothesis.
pub fn mean_reward(h: &ConstraintHypothesis, nom: &NominalModel, mean_phi: &[f64]) -> Result<f64> {
    if h.dim() != mean_phi.len() {
        return Err(Error::invalid(format!(
            "hypothesis has {} weights for {} features",
            h.dim(),
            mean_phi.len()
        )));
    }
    let nominal = nom.nominal_reward(mean_phi)?;
    Ok(nominal + nom.beta * penalty_dot(h, mean_phi))
}

/// `β · (w_nᵀ φ̄_n + (c ∘ w_p)ᵀ ψ̄)` where `ψ̄` holds the mean activations of
/// the candidate constraint features.
pub fn parametric_mean_reward(
    h: &ConstraintHypothesis,
    nom: &NominalModel,
    mean_phi: &[f64],
    candidate_phi: &[f64],
) -> Result<f64> {
    if h.dim() != candidate_phi.len() {
        return Err(Error::invalid(format!(
            "hypothesis has {} weights for {} candidate features",
            h.dim(),
            candidate_phi.len()
        )));
    }
    Ok(nom.nominal_reward(mean_phi)? + nom.beta * penalty_dot(h, candidate_phi))
}

fn penalty_dot(h: &ConstraintHypothesis, phi: &[f64]) -> f64 {
    (0..h.dim()).map(|j| h.effective_weight(j) * phi[j]).sum()
}

/// Demonstrations partitioned into ranked groups `G_1 ≻ G_2 ≻ … ≻ G_K`.
///
/// Trajectories are stored contiguously by group so that group `k` is the
/// index range [`group_range(k)`](Self::group_range).
#[derive(Debug, Clone)]
pub struct PreferenceDataset {
    trajectories: Vec<Trajectory>,
    bounds: Vec<usize>,
    feature_means: Vec<FeatureVector>,
    sorted_progress: Vec<Vec<f64>>,
}

impl PreferenceDataset {
    /// `groups[0]` is the most preferred group.
    pub fn new(groups: Vec<Vec<Trajectory>>) -> Result<Self> {
        if groups.len() < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 groups, got {}",
                groups.len()
            )));
        }
        if let Some(k) = groups.iter().position(Vec::is_empty) {
            return Err(Error::invalid(format!("group {} is empty", k + 1)));
        }
        let dim = groups[0][0].feature_dim();
        let mut bounds = vec![0];
        let mut trajectories = Vec::new();
        for group in groups {
            for traj in group {
                if traj.feature_dim() != dim {
                    return Err(Error::invalid(format!(
                        "trajectory {} has {} features, expected {dim}",
                        trajectories.len(),
                        traj.feature_dim()
                    )));
                }
                trajectories.push(traj);
            }
            bounds.push(trajectories.len());
        }
        let feature_means = trajectories
            .iter()
            .map(trajectory_mean_features)
            .collect::<Result<Vec<_>>>()?;
        let sorted_progress = trajectories.iter().map(|t| sorted_copy(&t.progress)).collect();
        Ok(PreferenceDataset {
            trajectories,
            bounds,
            feature_means,
            sorted_progress,
        })
    }

    pub fn num_groups(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_means[0].len()
    }

    pub fn group_range(&self, k: usize) -> Range<usize> {
        self.bounds[k]..self.bounds[k + 1]
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.bounds.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn group_of(&self, i: usize) -> usize {
        self.bounds.partition_point(|&b| b <= i) - 1
    }

    pub fn trajectory(&self, i: usize) -> &Trajectory {
        &self.trajectories[i]
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    /// Trajectories of group `k`.
    pub fn group(&self, k: usize) -> &[Trajectory] {
        &self.trajectories[self.group_range(k)]
    }

    pub fn feature_mean(&self, i: usize) -> &FeatureVector {
        &self.feature_means[i]
    }

    pub fn feature_means(&self) -> &[FeatureVector] {
        &self.feature_means
    }

    /// Ascending copy of trajectory `i`'s progress values.
    pub fn sorted_progress(&self, i: usize) -> &[f64] {
        &self.sorted_progress[i]
    }

    pub fn has_progress(&self) -> bool {
        self.trajectories.iter().all(Trajectory::has_progress)
    }

    /// Smallest and largest progress value across the dataset.
    pub fn progress_bounds(&self) -> Option<(f64, f64)> {
        if !self.has_progress() {
            return None;
        }
        let lo = self.sorted_progress.iter().map(|s| s[0]).fold(f64::INFINITY, f64::min);
        let hi = self.sorted_progress.iter().map(|s| s[s.len() - 1]).fold(f64::NEG_INFINITY, f64::max);
        Some((lo, hi))
    }

    /// Recomputes every cached mean and compares it against the cache.
    pub fn verify_feature_means(&self, tol: f64) -> bool {
        self.trajectories.iter().zip(&self.feature_means).all(|(t, cached)| {
            trajectory_mean_features(t)
                .map(|m| m.iter().zip(cached.iter()).all(|(a, b)| (a - b).abs() <= tol))
                .unwrap_or(false)
        })
    }

    /// Mean activations of the candidate constraint features of trajectory `i`.
    pub fn candidate_means(&self, i: usize, h: &ConstraintHypothesis, features: ConstraintFeatures) -> Vec<f64> {
        match features {
            ConstraintFeatures::Fixed => self.feature_means[i].as_slice().to_vec(),
            ConstraintFeatures::Halfspace => h
                .locations
                .iter()
                .map(|&theta| halfspace_fraction(&self.sorted_progress[i], theta))
                .collect(),
        }
    }

    /// β-scaled mean reward of trajectory `i` under `h`.
    pub fn reward(&self, i: usize, h: &ConstraintHypothesis, nom: &NominalModel) -> Result<f64> {
        match h.features() {
            ConstraintFeatures::Fixed => mean_reward(h, nom, &self.feature_means[i]),
            ConstraintFeatures::Halfspace => {
                if !self.trajectories[i].has_progress() {
                    return Err(Error::invalid(format!("trajectory {i} has no progress values")));
                }
                let psi = self.candidate_means(i, h, ConstraintFeatures::Halfspace);
                parametric_mean_reward(h, nom, &self.feature_means[i], &psi)
            }
        }
    }

    /// Mean rewards of every trajectory under `h`.
    pub fn rewards(&self, h: &ConstraintHypothesis, nom: &NominalModel) -> Result<Vec<f64>> {
        (0..self.len()).map(|i| self.reward(i, h, nom)).collect()
    }
}
