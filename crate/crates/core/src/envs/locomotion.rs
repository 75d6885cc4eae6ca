//! Forward-progress traces standing in for locomotion rollouts.
//!
//! Each step carries two features, the progress increment `Δz` and the
//! squared action `a²` with `a = 10 Δz + noise`, plus the progress value `z`
//! itself for halfspace constraints `1[z ≥ ϑ]`.
//!
//! Good demos approach a ceiling strictly below `ϑ* − gap`; bad demos end
//! beyond `ϑ*`. The likelihood is therefore flat in `ϑ` over the gap, which
//! bounds how closely `ϑ*` can be recovered.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DemoWorld, Quality};
use crate::error::{Error, Result};
use crate::model::{ConstraintHypothesis, FeatureVector, NominalModel, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct LocomotionWorld {
    pub theta_star: f64,
    pub penalty: f64,
    pub w_n: Vec<f64>,
    pub episode_length: usize,
    /// Distance between `ϑ*` and the highest possible good-demo progress.
    pub gap: f64,
    /// Good ceilings are drawn from `[ϑ* − gap − spread, ϑ* − gap)`.
    pub spread: f64,
    /// Bad demos end `ϑ*` plus a draw from this range.
    pub overshoot: (f64, f64),
    /// Std of the per-step progress noise.
    pub noise: f64,
    /// Std of the action noise.
    pub action_noise: f64,
}

impl LocomotionWorld {
    pub fn new(theta_star: f64, penalty: f64) -> Self {
        LocomotionWorld {
            theta_star,
            penalty,
            w_n: vec![20.0, -0.1],
            episode_length: 500,
            gap: 0.5,
            spread: 1.5,
            overshoot: (0.5, 3.0),
            noise: 0.01,
            action_noise: 0.1,
        }
    }

    /// `ϑ* = 8`, penalty −50.
    pub fn half_cheetah() -> Self {
        Self::new(8.0, -50.0)
    }

    /// `ϑ* = 10`, penalty −100.
    pub fn ant() -> Self {
        Self::new(10.0, -100.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta_star > 0.0 && self.theta_star.is_finite()) {
            return Err(Error::config(format!("theta_star must be positive, got {}", self.theta_star)));
        }
        if !(self.penalty < 0.0 && self.penalty.is_finite()) {
            return Err(Error::config(format!("penalty must be negative, got {}", self.penalty)));
        }
        if self.w_n.len() != 2 {
            return Err(Error::config("locomotion worlds have 2 nominal weights"));
        }
        if self.episode_length < 2 {
            return Err(Error::config("episode length must be at least 2"));
        }
        if !(self.gap >= 0.0 && self.spread > 0.0 && self.theta_star - self.gap - self.spread > 0.0) {
            return Err(Error::config("gap and spread must leave a positive good-demo ceiling"));
        }
        let (lo, hi) = self.overshoot;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::config("overshoot range must be positive"));
        }
        if !(self.noise >= 0.0 && self.action_noise >= 0.0) {
            return Err(Error::config("noise levels must be non-negative"));
        }
        Ok(())
    }

    fn max_good(&self) -> f64 {
        self.theta_star - self.gap
    }
}

impl DemoWorld for LocomotionWorld {
    fn qualities(&self) -> &[Quality] {
        &[Quality::Good, Quality::Bad]
    }

    fn rollout(&self, quality: Quality, rng: &mut ChaCha8Rng) -> Result<Trajectory> {
        self.validate()?;
        let step_noise = Normal::new(0.0, self.noise.max(f64::MIN_POSITIVE)).map_err(|e| Error::config(e.to_string()))?;
        let act_noise =
            Normal::new(0.0, self.action_noise.max(f64::MIN_POSITIVE)).map_err(|e| Error::config(e.to_string()))?;
        let t_len = self.episode_length;
        let target = match quality {
            Quality::Good => self.max_good() - rng.random_range(f64::EPSILON..=self.spread),
            _ => {
                let (lo, hi) = self.overshoot;
                self.theta_star + if hi > lo { rng.random_range(lo..=hi) } else { lo }
            }
        };
        // exponential approach to the target with a per-demo time constant
        let tau = rng.random_range(0.1..0.3) * t_len as f64;
        let ceiling = match quality {
            Quality::Good => target,
            _ => f64::INFINITY,
        };
        let mut z_prev = 0.0;
        let mut steps = Vec::with_capacity(t_len);
        let mut progress = Vec::with_capacity(t_len);
        for t in 1..=t_len {
            let mean = target * (1.0 - (-(t as f64) / tau).exp());
            let z = (mean + step_noise.sample(rng)).min(ceiling);
            let dz = z - z_prev;
            let a = 10.0 * dz + act_noise.sample(rng);
            steps.push(FeatureVector::new(vec![dz, a * a]));
            progress.push(z);
            z_prev = z;
        }
        Trajectory::new(steps, progress)
    }

    fn satisfies(&self, quality: Quality, traj: &Trajectory) -> bool {
        let max = traj.progress().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        match quality {
            Quality::Good => max < self.max_good(),
            _ => max > self.theta_star,
        }
    }

    fn nominal(&self) -> NominalModel {
        NominalModel::with_default_beta(self.w_n.clone()).expect("beta is positive")
    }

    fn true_hypothesis(&self) -> ConstraintHypothesis {
        ConstraintHypothesis::new(vec![true], vec![self.penalty], vec![self.theta_star]).expect("finite values")
    }
}
