//! Synthetic worlds and scripted demonstrators.
//!
//! The inference code only sees per-step feature vectors and group labels, so
//! demonstrations come from simple noisy controllers instead of trained
//! policies. Each quality class carries a construction guarantee (for
//! example, a good navigation demo never enters a constraint region) that is
//! enforced by rejection: a draw that breaks it is discarded and redrawn.

mod grid;
mod locomotion;
mod navigation;

pub use grid::{grid3x3_scenario, GridScenario};
pub use locomotion::LocomotionWorld;
pub use navigation::{pointmass_features, NavigationWorld, Rect, Route};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::margins::group_reward_gaps;
use crate::model::{ConstraintHypothesis, NominalModel, PreferenceDataset, Trajectory};

/// Redraws allowed per demonstration before giving up.
const MAX_ATTEMPTS: usize = 1000;

/// Quality class of a scripted demonstration, best first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quality {
    Good,
    Bad,
    VeryBad,
}

impl Quality {
    pub fn name(self) -> &'static str {
        match self {
            Quality::Good => "good",
            Quality::Bad => "bad",
            Quality::VeryBad => "very_bad",
        }
    }
}

/// A world that can produce labelled demonstrations.
pub trait DemoWorld {
    /// Quality classes in preference order; one group each.
    fn qualities(&self) -> &[Quality];

    /// One draw of the scripted controller. May violate the class guarantee.
    fn rollout(&self, quality: Quality, rng: &mut ChaCha8Rng) -> Result<Trajectory>;

    /// Whether `traj` satisfies the guarantee of `quality`.
    fn satisfies(&self, quality: Quality, traj: &Trajectory) -> bool;

    fn nominal(&self) -> NominalModel;

    /// The constraint that generated the preferences.
    fn true_hypothesis(&self) -> ConstraintHypothesis;
}

/// Draws one demonstration of `quality`, redrawing until the class guarantee
/// holds.
pub fn generate_demo<W: DemoWorld + ?Sized>(world: &W, quality: Quality, rng: &mut ChaCha8Rng) -> Result<Trajectory> {
    for _ in 0..MAX_ATTEMPTS {
        let traj = world.rollout(quality, rng)?;
        if world.satisfies(quality, &traj) {
            return Ok(traj);
        }
    }
    Err(Error::invalid(format!(
        "could not draw a {} demonstration in {MAX_ATTEMPTS} attempts; check the world geometry",
        quality.name()
    )))
}

/// RNG for demo `index` of group `group`: independent streams of one seed, so
/// adding demos to one group does not change the others.
pub fn demo_rng(seed: u64, group: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((group as u64) << 32) | index as u64);
    rng
}

/// Generates `counts[k]` demos for the `k`-th quality class of `world` and
/// groups them by class, best first.
///
/// Fails if the true reward does not strictly order the group means, since
/// such a dataset contradicts its own labels.
pub fn build_dataset<W: DemoWorld + ?Sized>(world: &W, counts: &[usize], seed: u64) -> Result<PreferenceDataset> {
    let qualities = world.qualities();
    if counts.len() != qualities.len() {
        return Err(Error::invalid(format!(
            "{} group counts for {} quality classes",
            counts.len(),
            qualities.len()
        )));
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("group {} would be empty", k + 1)));
    }
    let mut groups = Vec::with_capacity(counts.len());
    for (k, (&quality, &count)) in qualities.iter().zip(counts).enumerate() {
        let group = (0..count)
            .map(|i| generate_demo(world, quality, &mut demo_rng(seed, k, i)))
            .collect::<Result<Vec<_>>>()?;
        groups.push(group);
    }
    let ds = PreferenceDataset::new(groups)?;
    let gaps = group_reward_gaps(&world.true_hypothesis(), &world.nominal(), &ds)?;
    if let Some(k) = gaps.iter().position(|&g| g <= 0.0) {
        return Err(Error::invalid(format!(
            "true reward does not rank group {} above group {} (gap {:.4})",
            k + 1,
            k + 2,
            gaps[k]
        )));
    }
    Ok(ds)
}
