//! Grouped, margin-augmented Bradley-Terry log-likelihood.
//!
//! For groups `G_1 ≻ … ≻ G_K`, every trajectory `τ_i ∈ G_k` is preferred to
//! every `τ_j ∈ G_ℓ` with `k < ℓ`, and each such pair contributes
//!
//! ```text
//! log P(τ_i ≻ τ_j) = log e^(r_i − m_kℓ) / (e^(r_i − m_kℓ) + e^(r_j))
//!                  = −softplus(r_j − r_i + m_kℓ)
//! ```
//!
//! where `r` is the β-scaled mean reward of a trajectory and `m_kℓ ≥ 0` the
//! margin between the two groups.
//!
//! [`LikelihoodCache`] keeps the nominal and penalty parts of every
//! trajectory's reward so that a single-coordinate change of the hypothesis
//! costs `O(N)` to apply. The sampler additionally keeps per-row partial sums
//! (see `GroupedEvaluator`) so a proposal only re-evaluates the pairs it can
//! change, and stops early once rejection is certain.

use std::fmt;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::model::{halfspace_fraction, ConstraintFeatures, ConstraintHypothesis, NominalModel, PreferenceDataset};

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Margins `m_kℓ` for every ordered group pair `k < ℓ` (0-based indices).
#[derive(Debug, Clone, PartialEq)]
pub struct MarginSpec {
    groups: usize,
    values: Vec<f64>,
}

impl MarginSpec {
    pub fn zeros(groups: usize) -> Self {
        MarginSpec {
            groups,
            values: vec![0.0; groups * groups],
        }
    }

    /// Builds a spec from `((k, ℓ), m)` entries; unlisted pairs are zero.
    pub fn from_pairs(groups: usize, entries: &[((usize, usize), f64)]) -> Result<Self> {
        let mut spec = Self::zeros(groups);
        for &((k, l), m) in entries {
            spec.set(k, l, m)?;
        }
        Ok(spec)
    }

    pub fn num_groups(&self) -> usize {
        self.groups
    }

    /// Margin between groups `k < ℓ`; zero for any other index pair.
    pub fn get(&self, k: usize, l: usize) -> f64 {
        if k < l && l < self.groups {
            self.values[k * self.groups + l]
        } else {
            0.0
        }
    }

    pub fn set(&mut self, k: usize, l: usize, m: f64) -> Result<()> {
        if !(k < l && l < self.groups) {
            return Err(Error::invalid(format!(
                "margin index ({}, {}) invalid for {} groups",
                k + 1,
                l + 1,
                self.groups
            )));
        }
        if !(m.is_finite() && m >= 0.0) {
            return Err(Error::invalid(format!("margin m_{}{} must be >= 0, got {m}", k + 1, l + 1)));
        }
        self.values[k * self.groups + l] = m;
        Ok(())
    }

    /// `(k, ℓ, m_kℓ)` for all `k < ℓ`, row-major.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.groups).flat_map(move |k| (k + 1..self.groups).map(move |l| (k, l, self.get(k, l))))
    }

    pub fn total(&self) -> f64 {
        self.pairs().map(|(_, _, m)| m).sum()
    }

    /// Triples `(k, j, ℓ)` with `m_kℓ < m_kj + m_jℓ`.
    ///
    /// Margins are free parameters; this is only reported as a warning.
    pub fn additivity_violations(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for k in 0..self.groups {
            for j in k + 1..self.groups {
                for l in j + 1..self.groups {
                    if self.get(k, l) + 1e-12 < self.get(k, j) + self.get(j, l) {
                        out.push((k, j, l));
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for MarginSpec {
    /// `1-2=0;1-3=6;2-3=2.9`, 1-based.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .pairs()
            .map(|(k, l, m)| format!("{}-{}={}", k + 1, l + 1, m))
            .collect();
        f.write_str(&parts.join(";"))
    }
}

/// `log P(i ≻ j)` with margin `m` subtracted from the preferred exponent.
pub fn pair_logprob(r_i: f64, r_j: f64, margin: f64) -> Result<f64> {
    if !(r_i.is_finite() && r_j.is_finite() && margin.is_finite()) {
        return Err(Error::invalid("pair_logprob needs finite rewards and margin"));
    }
    Ok(-softplus(r_j - r_i + margin))
}

/// One induced preference `τ_i ≻ τ_j` with `τ_i ∈ G_k`, `τ_j ∈ G_ℓ`, `k < ℓ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub preferred: usize,
    pub dispreferred: usize,
    pub preferred_group: usize,
    pub dispreferred_group: usize,
}

/// Every cross-group pair of a dataset, enumerated once.
#[derive(Debug, Clone)]
pub struct PairIndex {
    pairs: Vec<Pair>,
}

impl PairIndex {
    pub fn new(ds: &PreferenceDataset) -> Self {
        let k = ds.num_groups();
        let mut pairs = Vec::new();
        for gk in 0..k {
            for gl in gk + 1..k {
                for i in ds.group_range(gk) {
                    for j in ds.group_range(gl) {
                        pairs.push(Pair {
                            preferred: i,
                            dispreferred: j,
                            preferred_group: gk,
                            dispreferred_group: gl,
                        });
                    }
                }
            }
        }
        PairIndex { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }
}

/// Per-trajectory reward parts for the hypothesis the cache was last
/// updated for.
#[derive(Debug, Clone)]
pub struct LikelihoodCache {
    features: ConstraintFeatures,
    beta: f64,
    nominal_part: Vec<f64>,
    penalty_part: Vec<f64>,
    /// Row-major `N × M` mean activations of the candidate features.
    candidate_phi: Vec<f64>,
    dim: usize,
    /// Fixed-feature case only: trajectories with a nonzero activation per candidate.
    active: Vec<Vec<usize>>,
    hypothesis: ConstraintHypothesis,
    pairs: PairIndex,
}

/// Values overwritten by an update, so a rejected proposal can be undone
/// exactly.
#[derive(Debug, Default)]
pub struct Undo {
    penalty: Vec<(usize, f64)>,
    phi: Vec<(usize, f64)>,
    hypothesis: Option<ConstraintHypothesis>,
}

impl Undo {
    /// Trajectories whose reward moved.
    pub(crate) fn changed(&self) -> impl Iterator<Item = usize> + '_ {
        self.penalty.iter().map(|&(i, _)| i)
    }
}

impl LikelihoodCache {
    pub fn build(ds: &PreferenceDataset, h: &ConstraintHypothesis, nom: &NominalModel) -> Result<Self> {
        let features = h.features();
        let n = ds.len();
        if nom.weights().len() != ds.feature_dim() {
            return Err(Error::invalid(format!(
                "{} nominal weights for {} features",
                nom.weights().len(),
                ds.feature_dim()
            )));
        }
        match features {
            ConstraintFeatures::Fixed => {
                if h.dim() != ds.feature_dim() {
                    return Err(Error::invalid(format!(
                        "hypothesis has {} weights for {} features",
                        h.dim(),
                        ds.feature_dim()
                    )));
                }
            }
            ConstraintFeatures::Halfspace => {
                if !ds.has_progress() {
                    return Err(Error::invalid("parametric constraints need progress values"));
                }
                if h.locations.len() != h.dim() {
                    return Err(Error::invalid(format!(
                        "{} locations for {} parametric features",
                        h.locations.len(),
                        h.dim()
                    )));
                }
            }
        }
        let dim = h.dim();
        let mut candidate_phi = Vec::with_capacity(n * dim);
        for i in 0..n {
            candidate_phi.extend(ds.candidate_means(i, h, features));
        }
        let active = match features {
            ConstraintFeatures::Fixed => (0..dim)
                .map(|j| (0..n).filter(|&i| candidate_phi[i * dim + j] != 0.0).collect())
                .collect(),
            ConstraintFeatures::Halfspace => Vec::new(),
        };
        let beta = nom.beta();
        let nominal_part = (0..n)
            .map(|i| nom.nominal_reward(ds.feature_mean(i)))
            .collect::<Result<Vec<_>>>()?;
        let penalty_part = (0..n)
            .map(|i| {
                let phi = &candidate_phi[i * dim..(i + 1) * dim];
                beta * (0..dim).map(|j| h.effective_weight(j) * phi[j]).sum::<f64>()
            })
            .collect();
        Ok(LikelihoodCache {
            features,
            beta,
            nominal_part,
            penalty_part,
            candidate_phi,
            dim,
            active,
            hypothesis: h.clone(),
            pairs: PairIndex::new(ds),
        })
    }

    pub fn features(&self) -> ConstraintFeatures {
        self.features
    }

    pub fn nominal_part(&self) -> &[f64] {
        &self.nominal_part
    }

    pub fn penalty_part(&self) -> &[f64] {
        &self.penalty_part
    }

    pub fn reward(&self, i: usize) -> f64 {
        self.nominal_part[i] + self.penalty_part[i]
    }

    pub fn rewards(&self) -> Vec<f64> {
        (0..self.nominal_part.len()).map(|i| self.reward(i)).collect()
    }

    pub fn pair_index(&self) -> &PairIndex {
        &self.pairs
    }

    /// The hypothesis the cache is consistent with.
    pub fn hypothesis(&self) -> &ConstraintHypothesis {
        &self.hypothesis
    }

    /// Mean activation of candidate `j` for trajectory `i`.
    pub fn candidate_phi(&self, i: usize, j: usize) -> f64 {
        self.candidate_phi[i * self.dim + j]
    }

    /// Sum of `log P(τ_i ≻ τ_j)` over every cross-group pair.
    pub fn loglik(&self, margins: &MarginSpec) -> Result<f64> {
        let groups = self.pairs.pairs.last().map_or(0, |p| p.dispreferred_group + 1);
        if margins.num_groups() < groups {
            return Err(Error::invalid(format!(
                "margins cover {} groups, dataset has {groups}",
                margins.num_groups()
            )));
        }
        Ok(self
            .pairs
            .pairs
            .iter()
            .map(|p| {
                let m = margins.get(p.preferred_group, p.dispreferred_group);
                -softplus(self.reward(p.dispreferred) - self.reward(p.preferred) + m)
            })
            .sum())
    }

    /// Moves the cache to `h`, which must differ from the cached hypothesis
    /// only in `indicators[j]` or `weights[j]`.
    pub fn update_coordinate(&mut self, h: &ConstraintHypothesis, j: usize) {
        self.apply_coordinate(h, j);
    }

    /// Like [`update_coordinate`](Self::update_coordinate), returning what
    /// [`restore`](Self::restore) needs to undo it.
    pub fn apply_coordinate(&mut self, h: &ConstraintHypothesis, j: usize) -> Undo {
        debug_assert_eq!(h.locations, self.hypothesis.locations);
        let delta = h.effective_weight(j) - self.hypothesis.effective_weight(j);
        let mut undo = Undo {
            hypothesis: Some(self.hypothesis.clone()),
            ..Undo::default()
        };
        self.hypothesis.indicators[j] = h.indicators[j];
        self.hypothesis.weights[j] = h.weights[j];
        if delta == 0.0 {
            return undo;
        }
        let step = self.beta * delta;
        let dim = self.dim;
        match self.features {
            ConstraintFeatures::Fixed => {
                for &i in &self.active[j] {
                    undo.penalty.push((i, self.penalty_part[i]));
                    self.penalty_part[i] += step * self.candidate_phi[i * dim + j];
                }
            }
            ConstraintFeatures::Halfspace => {
                for i in 0..self.penalty_part.len() {
                    let phi = self.candidate_phi[i * dim + j];
                    if phi != 0.0 {
                        undo.penalty.push((i, self.penalty_part[i]));
                        self.penalty_part[i] += step * phi;
                    }
                }
            }
        }
        undo
    }

    /// Recomputes the halfspace activations for every location that differs
    /// from the cached hypothesis. A no-op when the locations are unchanged.
    pub fn refresh_parametric(&mut self, ds: &PreferenceDataset, h: &ConstraintHypothesis) {
        self.apply_locations(ds, h);
    }

    /// Like [`refresh_parametric`](Self::refresh_parametric), returning what
    /// [`restore`](Self::restore) needs to undo it.
    pub fn apply_locations(&mut self, ds: &PreferenceDataset, h: &ConstraintHypothesis) -> Undo {
        let mut undo = Undo {
            hypothesis: Some(self.hypothesis.clone()),
            ..Undo::default()
        };
        if self.features != ConstraintFeatures::Halfspace {
            return undo;
        }
        let dim = self.dim;
        for j in 0..dim {
            let theta = h.locations[j];
            if theta == self.hypothesis.locations[j] {
                continue;
            }
            let w = self.hypothesis.effective_weight(j);
            for i in 0..self.penalty_part.len() {
                let slot = i * dim + j;
                let old = self.candidate_phi[slot];
                let new = halfspace_fraction(ds.sorted_progress(i), theta);
                if new != old {
                    undo.phi.push((slot, old));
                    self.candidate_phi[slot] = new;
                    if w != 0.0 {
                        undo.penalty.push((i, self.penalty_part[i]));
                        self.penalty_part[i] += self.beta * w * (new - old);
                    }
                }
            }
            self.hypothesis.locations[j] = theta;
        }
        undo
    }

    /// Reverts the update that produced `undo`. Updates must be undone in
    /// reverse order.
    pub fn restore(&mut self, undo: Undo) {
        for (i, v) in undo.penalty.into_iter().rev() {
            self.penalty_part[i] = v;
        }
        for (slot, v) in undo.phi.into_iter().rev() {
            self.candidate_phi[slot] = v;
        }
        if let Some(h) = undo.hypothesis {
            self.hypothesis = h;
        }
    }
}

/// Builds a fresh cache for `h` (fixed or parametric, decided by whether `h`
/// carries locations).
pub fn build_cache(ds: &PreferenceDataset, h: &ConstraintHypothesis, nom: &NominalModel) -> Result<LikelihoodCache> {
    LikelihoodCache::build(ds, h, nom)
}

/// See [`LikelihoodCache::update_coordinate`].
pub fn update_cache_coordinate(cache: &mut LikelihoodCache, h: &ConstraintHypothesis, j: usize) {
    cache.update_coordinate(h, j);
}

/// See [`LikelihoodCache::refresh_parametric`].
pub fn refresh_parametric(cache: &mut LikelihoodCache, ds: &PreferenceDataset, h: &ConstraintHypothesis) {
    cache.refresh_parametric(ds, h);
}

/// Grouped margin log-likelihood of `h` on `ds`.
pub fn dataset_loglik(
    h: &ConstraintHypothesis,
    nom: &NominalModel,
    ds: &PreferenceDataset,
    margins: &MarginSpec,
) -> Result<f64> {
    if ds.num_groups() < 2 {
        return Err(Error::invalid("likelihood needs at least 2 groups"));
    }
    LikelihoodCache::build(ds, h, nom)?.loglik(margins)
}

#[derive(Debug, Clone)]
struct Block {
    preferred_group: usize,
    dispreferred_group: usize,
    preferred: Range<usize>,
    margin: f64,
    row_offset: usize,
}

/// Below this argument `softplus(x)` and `e^x` agree to well under one ulp.
const TAIL_ARG: f64 = -40.0;

/// One group's rewards in ascending order, with prefix log-sum-exps
/// `lse[k] = log Σ_{t<k} e^(sorted[t])`.
#[derive(Debug, Clone, Default)]
struct SortedGroup {
    sorted: Vec<f64>,
    lse: Vec<f64>,
}

impl SortedGroup {
    fn fill(&mut self, rewards: &[f64]) {
        self.sorted.clear();
        self.sorted.extend_from_slice(rewards);
        self.sorted.sort_by(f64::total_cmp);
        self.lse.clear();
        self.lse.push(f64::NEG_INFINITY);
        let mut acc = f64::NEG_INFINITY;
        for &v in &self.sorted {
            // v is the running maximum, so the exponent is at most ln(n)
            acc = if acc == f64::NEG_INFINITY { v } else { v + (acc - v).exp().ln_1p() };
            self.lse.push(acc);
        }
    }

    /// `Σ_j softplus(r_j + base)`. Terms with a very negative argument are
    /// summed in closed form as `e^(base + lse[k])`, the rest one by one.
    fn row_loss(&self, base: f64) -> f64 {
        let cut = TAIL_ARG - base;
        let k = self.sorted.partition_point(|&v| v < cut);
        let tail = if k > 0 { (base + self.lse[k]).exp() } else { 0.0 };
        tail + self.sorted[k..].iter().map(|&v| softplus(v + base)).sum::<f64>()
    }
}

/// Row-level partial sums of the grouped likelihood.
///
/// A row is one preferred trajectory `τ_i` against every trajectory of one
/// dispreferred group; its loss is `Σ_j softplus(r_j − r_i + m)`. Since every
/// loss is non-negative, the log-likelihood gain from re-evaluating a row is
/// bounded by its current loss, which lets [`propose`](Self::propose) reject
/// without finishing the sum.
///
/// Once penalties grow large most pairs are far in the softplus tail, so
/// each dispreferred group is kept sorted and a row only evaluates the pairs
/// near its own reward.
#[derive(Debug, Clone)]
pub(crate) struct GroupedEvaluator {
    blocks: Vec<Block>,
    row_loss: Vec<f64>,
    pending: Vec<(usize, f64)>,
    total_loss: f64,
    groups: Vec<Range<usize>>,
    sorted: Vec<SortedGroup>,
    /// Sorted rewards of the proposal for the groups in `refilled`.
    proposed: Vec<SortedGroup>,
    refilled: Vec<usize>,
}

impl GroupedEvaluator {
    pub(crate) fn new(ds: &PreferenceDataset, margins: &MarginSpec, rewards: &[f64]) -> Self {
        let k = ds.num_groups();
        let mut blocks = Vec::new();
        let mut offset = 0;
        for gk in 0..k {
            for gl in gk + 1..k {
                let preferred = ds.group_range(gk);
                blocks.push(Block {
                    preferred_group: gk,
                    dispreferred_group: gl,
                    preferred: preferred.clone(),
                    margin: margins.get(gk, gl),
                    row_offset: offset,
                });
                offset += preferred.len();
            }
        }
        let mut ev = GroupedEvaluator {
            blocks,
            row_loss: vec![0.0; offset],
            pending: Vec::new(),
            total_loss: 0.0,
            groups: (0..k).map(|g| ds.group_range(g)).collect(),
            sorted: vec![SortedGroup::default(); k],
            proposed: vec![SortedGroup::default(); k],
            refilled: Vec::new(),
        };
        ev.rebuild(rewards);
        ev
    }

    pub(crate) fn rebuild(&mut self, rewards: &[f64]) {
        // the best group is never dispreferred
        for g in 1..self.groups.len() {
            self.sorted[g].fill(&rewards[self.groups[g].clone()]);
        }
        for b in &self.blocks {
            let group = &self.sorted[b.dispreferred_group];
            for (r, i) in b.preferred.clone().enumerate() {
                self.row_loss[b.row_offset + r] = group.row_loss(b.margin - rewards[i]);
            }
        }
        self.total_loss = self.row_loss.iter().sum();
        self.pending.clear();
        self.refilled.clear();
    }

    pub(crate) fn loglik(&self) -> f64 {
        -self.total_loss
    }

    /// Log-likelihood change for new `rewards`, where only trajectories
    /// flagged in `changed` (and the groups flagged in `group_changed`)
    /// moved. Returns `None` once the change is certain to be below `log_u`.
    pub(crate) fn propose(
        &mut self,
        rewards: &[f64],
        changed: &[bool],
        group_changed: &[bool],
        log_u: f64,
    ) -> Option<f64> {
        self.pending.clear();
        self.refilled.clear();
        let mut bound = 0.0;
        for b in &self.blocks {
            let whole = group_changed[b.dispreferred_group];
            if !whole && !group_changed[b.preferred_group] {
                continue;
            }
            for (r, i) in b.preferred.clone().enumerate() {
                if whole || changed[i] {
                    bound += self.row_loss[b.row_offset + r];
                }
            }
        }
        let mut delta = 0.0;
        for b in &self.blocks {
            let whole = group_changed[b.dispreferred_group];
            if !whole && !group_changed[b.preferred_group] {
                continue;
            }
            // sorted lazily, since early rejection often stops before
            if whole && !self.refilled.contains(&b.dispreferred_group) {
                self.proposed[b.dispreferred_group].fill(&rewards[self.groups[b.dispreferred_group].clone()]);
                self.refilled.push(b.dispreferred_group);
            }
            for (r, i) in b.preferred.clone().enumerate() {
                if !(whole || changed[i]) {
                    continue;
                }
                let slot = b.row_offset + r;
                let old = self.row_loss[slot];
                let group = if whole { &self.proposed[b.dispreferred_group] } else { &self.sorted[b.dispreferred_group] };
                let new = group.row_loss(b.margin - rewards[i]);
                delta += old - new;
                bound -= old;
                self.pending.push((slot, new));
                if delta + bound.max(0.0) < log_u {
                    self.pending.clear();
                    return None;
                }
            }
        }
        Some(delta)
    }

    pub(crate) fn commit(&mut self) {
        for &(slot, v) in &self.pending {
            self.row_loss[slot] = v;
        }
        self.pending.clear();
        for &g in &self.refilled {
            std::mem::swap(&mut self.sorted[g], &mut self.proposed[g]);
        }
        self.refilled.clear();
        self.total_loss = self.row_loss.iter().sum();
    }

    #[cfg(test)]
    fn block_groups(&self) -> Vec<(usize, usize)> {
        self.blocks.iter().map(|b| (b.preferred_group, b.dispreferred_group)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeatureVector, Trajectory};
    use approx::assert_abs_diff_eq;

    fn single(phi: &[f64]) -> Trajectory {
        Trajectory::without_progress(vec![FeatureVector::from(phi)]).unwrap()
    }

    #[test]
    fn sorted_row_loss_matches_direct_sum() {
        // rewards spread so each base splits them across the tail cut
        let rewards: Vec<f64> = (0..40).map(|t| -300.0 + 7.3 * t as f64 + (t % 3) as f64 * 0.4).collect();
        let mut group = SortedGroup::default();
        group.fill(&rewards);
        for base in [-400.0, -120.0, -35.0, 0.0, 60.0, 250.0] {
            let direct: f64 = rewards.iter().map(|&r| softplus(r + base)).sum();
            let fast = group.row_loss(base);
            assert!((fast - direct).abs() <= 1e-12 * direct.abs(), "base {base}: {fast} vs {direct}");
        }
        // a row entirely in the tail keeps full relative precision
        let direct: f64 = rewards.iter().map(|&r| (r - 500.0).exp()).sum();
        assert!((group.row_loss(-500.0) / direct - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pair_logprob_examples() {
        assert_abs_diff_eq!(pair_logprob(0.3, 0.3, 0.0).unwrap(), (0.5f64).ln(), epsilon = 1e-15);
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(pair_logprob(1.0, 0.0, 0.0).unwrap(), (e / (e + 1.0)).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(pair_logprob(1.0, 0.0, 0.0).unwrap(), -0.31326168751822286, epsilon = 1e-12);
        let extreme = pair_logprob(1e6, -1e6, 0.0).unwrap();
        assert!(extreme.is_finite() && extreme <= 0.0 && extreme > -1e-300);
        assert!(pair_logprob(f64::NAN, 0.0, 0.0).is_err());
        assert!(pair_logprob(0.0, f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn margin_spec_rules() {
        let mut m = MarginSpec::zeros(3);
        assert!(m.set(0, 1, -0.1).is_err());
        assert!(m.set(1, 0, 1.0).is_err());
        assert!(m.set(0, 3, 1.0).is_err());
        m.set(0, 1, 0.0).unwrap();
        m.set(1, 2, 2.9).unwrap();
        m.set(0, 2, 6.0).unwrap();
        assert_eq!(m.get(2, 1), 0.0);
        assert_eq!(m.to_string(), "1-2=0;1-3=6;2-3=2.9");
        assert!(m.additivity_violations().is_empty());
        let fetch = MarginSpec::from_pairs(3, &[((0, 1), 1.0), ((1, 2), 1.5), ((0, 2), 2.0)]).unwrap();
        assert_eq!(fetch.additivity_violations(), vec![(0, 1, 2)]);
        assert_abs_diff_eq!(fetch.total(), 4.5);
    }

    #[test]
    fn symmetric_single_pair() {
        let ds = PreferenceDataset::new(vec![vec![single(&[1.0])], vec![single(&[1.0])]]).unwrap();
        let nom = NominalModel::with_default_beta(vec![0.7]).unwrap();
        let h = ConstraintHypothesis::unconstrained(1);
        let ll = dataset_loglik(&h, &nom, &ds, &MarginSpec::zeros(2)).unwrap();
        assert_abs_diff_eq!(ll, (0.5f64).ln(), epsilon = 1e-15);
    }

    #[test]
    fn singleton_groups_pair_count() {
        for k in 2..7 {
            let groups = (0..k).map(|_| vec![single(&[0.5, 0.5])]).collect();
            let ds = PreferenceDataset::new(groups).unwrap();
            let nom = NominalModel::with_default_beta(vec![1.0, -1.0]).unwrap();
            let h = ConstraintHypothesis::unconstrained(2);
            let ll = dataset_loglik(&h, &nom, &ds, &MarginSpec::zeros(k)).unwrap();
            let expected = (k * (k - 1) / 2) as f64 * (0.5f64).ln();
            assert_abs_diff_eq!(ll, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn pair_index_size() {
        let t = || single(&[0.0]);
        let groups = (0..3).map(|_| (0..60).map(|_| t()).collect()).collect();
        let ds = PreferenceDataset::new(groups).unwrap();
        assert_eq!(PairIndex::new(&ds).len(), 10800);
    }

    #[test]
    fn rebuilt_cache_is_bit_identical() {
        let ds = PreferenceDataset::new(vec![
            vec![single(&[0.1, 0.9]), single(&[0.3, 0.2])],
            vec![single(&[0.5, 0.5])],
        ])
        .unwrap();
        let nom = NominalModel::new(vec![1.0, 0.5], 1.3).unwrap();
        let h = ConstraintHypothesis::fixed(vec![true, false], vec![-2.0, -1.0]).unwrap();
        let a = build_cache(&ds, &h, &nom).unwrap();
        let b = build_cache(&ds, &h, &nom).unwrap();
        assert_eq!(a.nominal_part(), b.nominal_part());
        assert_eq!(a.penalty_part(), b.penalty_part());
    }

    #[test]
    fn zero_delta_update_is_noop() {
        let ds = PreferenceDataset::new(vec![vec![single(&[0.4])], vec![single(&[0.9])]]).unwrap();
        let nom = NominalModel::with_default_beta(vec![0.0]).unwrap();
        let h = ConstraintHypothesis::fixed(vec![false], vec![0.0]).unwrap();
        let mut cache = build_cache(&ds, &h, &nom).unwrap();
        let before = cache.penalty_part().to_vec();
        let flipped = ConstraintHypothesis::fixed(vec![true], vec![0.0]).unwrap();
        update_cache_coordinate(&mut cache, &flipped, 0);
        assert_eq!(cache.penalty_part(), &before[..]);
        assert_eq!(cache.hypothesis(), &flipped);
    }

    #[test]
    fn flip_on_decreases_penalty_by_weight() {
        let ds = PreferenceDataset::new(vec![
            vec![single(&[0.0, 0.2]), single(&[1.0, 0.0])],
            vec![single(&[0.5, 0.7])],
        ])
        .unwrap();
        let nom = NominalModel::new(vec![1.0, 0.0], 0.5).unwrap();
        let h = ConstraintHypothesis::fixed(vec![false, false], vec![0.0, -10.0]).unwrap();
        let mut cache = build_cache(&ds, &h, &nom).unwrap();
        let before = cache.penalty_part().to_vec();
        let on = ConstraintHypothesis::fixed(vec![false, true], vec![0.0, -10.0]).unwrap();
        update_cache_coordinate(&mut cache, &on, 1);
        for i in 0..ds.len() {
            let phi = ds.feature_mean(i)[1];
            assert_abs_diff_eq!(cache.penalty_part()[i], before[i] - 10.0 * 0.5 * phi, epsilon = 1e-12);
        }
        let fresh = build_cache(&ds, &on, &nom).unwrap();
        assert_abs_diff_eq!(
            cache.loglik(&MarginSpec::zeros(2)).unwrap(),
            fresh.loglik(&MarginSpec::zeros(2)).unwrap(),
            epsilon = 1e-12
        );
    }

    fn progress_traj(z: &[f64]) -> Trajectory {
        Trajectory::new(z.iter().map(|_| FeatureVector::from(&[0.01][..])).collect(), z.to_vec()).unwrap()
    }

    #[test]
    fn parametric_refresh_matches_rebuild() {
        let ds = PreferenceDataset::new(vec![
            vec![progress_traj(&[0.0, 1.0, 2.0]), progress_traj(&[0.5, 1.5])],
            vec![progress_traj(&[1.0, 3.0, 5.0, 7.0]), progress_traj(&[2.0, 6.0])],
        ])
        .unwrap();
        let nom = NominalModel::with_default_beta(vec![20.0]).unwrap();
        let margins = MarginSpec::zeros(2);
        let h = ConstraintHypothesis::new(vec![true], vec![-5.0], vec![4.0]).unwrap();
        let mut cache = build_cache(&ds, &h, &nom).unwrap();

        let same = cache.loglik(&margins).unwrap();
        refresh_parametric(&mut cache, &ds, &h);
        assert_eq!(cache.loglik(&margins).unwrap(), same);

        let high = ConstraintHypothesis::new(vec![true], vec![-5.0], vec![100.0]).unwrap();
        refresh_parametric(&mut cache, &ds, &high);
        for i in 0..ds.len() {
            assert_abs_diff_eq!(cache.penalty_part()[i], 0.0, epsilon = 1e-12);
        }
        let low = ConstraintHypothesis::new(vec![true], vec![-5.0], vec![1.2]).unwrap();
        refresh_parametric(&mut cache, &ds, &low);
        let fresh = build_cache(&ds, &low, &nom).unwrap();
        assert_abs_diff_eq!(cache.loglik(&margins).unwrap(), fresh.loglik(&margins).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn undo_restores_exactly() {
        let ds = PreferenceDataset::new(vec![
            vec![single(&[0.3, 0.1]), single(&[0.7, 0.0])],
            vec![single(&[0.2, 0.9])],
        ])
        .unwrap();
        let nom = NominalModel::with_default_beta(vec![1.0, 0.0]).unwrap();
        let h = ConstraintHypothesis::fixed(vec![true, true], vec![-1.0, -3.3]).unwrap();
        let mut cache = build_cache(&ds, &h, &nom).unwrap();
        let before = cache.penalty_part().to_vec();
        let mut moved = h.clone();
        moved.weights[1] = -7.1;
        let undo = cache.apply_coordinate(&moved, 1);
        assert_ne!(cache.penalty_part(), &before[..]);
        cache.restore(undo);
        assert_eq!(cache.penalty_part(), &before[..]);
        assert_eq!(cache.hypothesis(), &h);
    }

    #[test]
    fn evaluator_matches_pairwise_sum() {
        let ds = PreferenceDataset::new(vec![
            vec![single(&[0.3]), single(&[0.7])],
            vec![single(&[0.2]), single(&[0.1]), single(&[0.9])],
            vec![single(&[0.5])],
        ])
        .unwrap();
        let nom = NominalModel::with_default_beta(vec![2.0]).unwrap();
        let margins = MarginSpec::from_pairs(3, &[((0, 1), 0.5), ((1, 2), 1.0), ((0, 2), 2.0)]).unwrap();
        let cache = build_cache(&ds, &ConstraintHypothesis::unconstrained(1), &nom).unwrap();
        let ev = GroupedEvaluator::new(&ds, &margins, &cache.rewards());
        assert_eq!(ev.block_groups(), vec![(0, 1), (0, 2), (1, 2)]);
        assert_abs_diff_eq!(ev.loglik(), cache.loglik(&margins).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn evaluator_early_rejection_is_sound() {
        let ds = PreferenceDataset::new(vec![
            vec![single(&[0.0]), single(&[0.1])],
            vec![single(&[0.8]), single(&[0.9])],
        ])
        .unwrap();
        let nom = NominalModel::with_default_beta(vec![0.0]).unwrap();
        let margins = MarginSpec::zeros(2);
        let good = ConstraintHypothesis::fixed(vec![true], vec![-20.0]).unwrap();
        let mut cache = build_cache(&ds, &good, &nom).unwrap();
        let mut ev = GroupedEvaluator::new(&ds, &margins, &cache.rewards());
        let bad = ConstraintHypothesis::fixed(vec![true], vec![20.0]).unwrap();
        let undo = cache.apply_coordinate(&bad, 0);
        let mut changed = vec![false; ds.len()];
        for i in undo.changed() {
            changed[i] = true;
        }
        let exact = build_cache(&ds, &bad, &nom).unwrap().loglik(&margins).unwrap() - ev.loglik();
        // certain rejection for any u once the change is far below log u
        assert!(ev.propose(&cache.rewards(), &changed, &[true, true], -1.0).is_none());
        let full = ev.propose(&cache.rewards(), &changed, &[true, true], f64::NEG_INFINITY).unwrap();
        assert_abs_diff_eq!(full, exact, epsilon = 1e-9);
    }
}
