//! Goal-reaching with two forbidden regions, in 2D (point mass) or 3D (reach).
//!
//! Features per visited state:
//!
//! 1. inverse distance to the goal center, capped,
//! 2. inside the orange region,
//! 3. inside the red region,
//! 4. outside the goal.
//!
//! Good demos go straight to the goal and slow down on the approach. Bad and
//! very bad demos are hurried and take a detour through the orange or red
//! region respectively.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DemoWorld, Quality};
use crate::error::{Error, Result};
use crate::model::{ConstraintHypothesis, FeatureVector, NominalModel, Trajectory};

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct Rect {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Rect {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Rect { lo, hi }
    }

    pub fn unit(dim: usize) -> Self {
        Rect::new(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter().zip(&self.lo).zip(&self.hi).all(|((x, lo), hi)| lo <= x && x <= hi)
    }

    fn within(&self, outer: &Rect) -> bool {
        self.lo.iter().zip(&outer.lo).all(|(a, b)| a >= b) && self.hi.iter().zip(&outer.hi).all(|(a, b)| a <= b)
    }

    fn clamp(&self, p: &mut [f64]) {
        for ((x, lo), hi) in p.iter_mut().zip(&self.lo).zip(&self.hi) {
            *x = x.clamp(*lo, *hi);
        }
    }

    /// Squared distance from `p` to the box (0 inside).
    fn dist2(&self, p: &[f64]) -> f64 {
        p.iter()
            .zip(&self.lo)
            .zip(&self.hi)
            .map(|((x, lo), hi)| {
                let d = if x < lo { lo - x } else if x > hi { x - hi } else { 0.0 };
                d * d
            })
            .sum()
    }
}

/// Scripted controller for one quality class.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    /// Intermediate targets visited before heading to the goal.
    pub waypoints: Vec<Vec<f64>>,
    /// Uniform jitter applied to each waypoint coordinate per demo.
    pub waypoint_jitter: f64,
    /// Distance at which a waypoint counts as reached.
    pub waypoint_tolerance: f64,
    /// Cruise speed range (distance per step), drawn per demo.
    pub speed: (f64, f64),
    /// When set, speed toward the goal is capped at this fraction of the
    /// remaining distance (but never below `min_speed`).
    pub approach_gain: Option<f64>,
    pub min_speed: f64,
    /// With probability `variant_probability` a demo follows
    /// `variant_waypoints` instead of `waypoints`.
    pub variant_waypoints: Vec<Vec<f64>>,
    pub variant_probability: f64,
}

/// A goal-reaching world with an orange and a red region.
#[derive(Debug, Clone, PartialEq)]
pub struct NavigationWorld {
    pub workspace: Rect,
    pub start: Vec<f64>,
    pub start_jitter: f64,
    pub goal_center: Vec<f64>,
    pub goal_radius: f64,
    pub orange_region: Rect,
    pub red_region: Rect,
    pub inverse_distance_cap: f64,
    /// Per-axis std of the action noise.
    pub noise: f64,
    pub max_steps: usize,
    pub true_w: Vec<f64>,
    pub w_n: Vec<f64>,
    pub good: Route,
    pub bad: Route,
    pub very_bad: Route,
}

/// Features of one position; see the module docs for their order.
pub fn pointmass_features(position: &[f64], world: &NavigationWorld) -> FeatureVector {
    let dist = position
        .iter()
        .zip(&world.goal_center)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let inverse = if dist > 0.0 {
        (1.0 / dist).min(world.inverse_distance_cap)
    } else {
        world.inverse_distance_cap
    };
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    FeatureVector::new(vec![
        inverse,
        flag(world.orange_region.contains(position)),
        flag(world.red_region.contains(position)),
        flag(dist > world.goal_radius),
    ])
}

impl NavigationWorld {
    /// 2D point mass in the unit square.
    pub fn point_mass() -> Self {
        NavigationWorld {
            workspace: Rect::unit(2),
            start: vec![0.1, 0.1],
            start_jitter: 0.05,
            goal_center: vec![0.85, 0.85],
            goal_radius: 0.08,
            orange_region: Rect::new(vec![0.05, 0.5], vec![0.35, 0.85]),
            red_region: Rect::new(vec![0.55, 0.05], vec![0.9, 0.3]),
            inverse_distance_cap: 10.0,
            noise: 0.004,
            max_steps: 500,
            true_w: vec![1.0, -10.0, -100.0, -1.0],
            w_n: vec![1.0, 0.0, 0.0, -1.0],
            good: Route {
                waypoints: Vec::new(),
                waypoint_jitter: 0.0,
                waypoint_tolerance: 0.03,
                speed: (0.012, 0.018),
                approach_gain: Some(0.05),
                min_speed: 0.003,
                variant_waypoints: Vec::new(),
                variant_probability: 0.0,
            },
            bad: Route {
                waypoints: vec![vec![0.2, 0.68]],
                waypoint_jitter: 0.04,
                waypoint_tolerance: 0.04,
                speed: (0.045, 0.06),
                approach_gain: None,
                min_speed: 0.0,
                variant_waypoints: Vec::new(),
                variant_probability: 0.0,
            },
            very_bad: Route {
                waypoints: vec![vec![0.72, 0.25]],
                waypoint_jitter: 0.04,
                waypoint_tolerance: 0.04,
                speed: (0.07, 0.09),
                approach_gain: None,
                min_speed: 0.0,
                variant_waypoints: Vec::new(),
                variant_probability: 0.0,
            },
        }
    }

    /// 3D reaching task in the unit cube.
    /// A 3D reaching task. The red region is the core of a larger orange
    /// zone, so very bad demos also pass through orange. Bad demos sweep
    /// along the top of the orange zone; an occasional one only clips its
    /// corner, which spreads the bad group's rewards upward.
    pub fn reach() -> Self {
        NavigationWorld {
            workspace: Rect::unit(3),
            start: vec![0.1, 0.1, 0.1],
            start_jitter: 0.05,
            goal_center: vec![0.8, 0.8, 0.8],
            goal_radius: 0.1,
            orange_region: Rect::new(vec![0.5, 0.05, 0.0], vec![0.95, 0.45, 1.0]),
            red_region: Rect::new(vec![0.62, 0.12, 0.0], vec![0.83, 0.33, 1.0]),
            inverse_distance_cap: 10.0,
            noise: 0.004,
            max_steps: 500,
            true_w: vec![0.1, -20.0, -100.0, -5.0],
            w_n: vec![0.1, 0.0, 0.0, -5.0],
            good: Route {
                waypoints: Vec::new(),
                waypoint_jitter: 0.0,
                waypoint_tolerance: 0.03,
                speed: (0.012, 0.018),
                approach_gain: Some(0.05),
                min_speed: 0.003,
                variant_waypoints: Vec::new(),
                variant_probability: 0.0,
            },
            bad: Route {
                waypoints: vec![vec![0.55, 0.4, 0.5], vec![0.92, 0.4, 0.5], vec![0.92, 0.08, 0.5]],
                waypoint_jitter: 0.02,
                waypoint_tolerance: 0.04,
                speed: (0.045, 0.06),
                approach_gain: None,
                min_speed: 0.0,
                variant_waypoints: vec![vec![0.53, 0.44, 0.5]],
                variant_probability: 0.1,
            },
            very_bad: Route {
                waypoints: vec![vec![0.72, 0.22, 0.5]],
                waypoint_jitter: 0.04,
                waypoint_tolerance: 0.04,
                speed: (0.07, 0.09),
                approach_gain: None,
                min_speed: 0.0,
                variant_waypoints: Vec::new(),
                variant_probability: 0.0,
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }

    /// Checks the geometric invariants: everything inside the workspace and
    /// the goal disjoint from both regions.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let dims_ok = [
            self.workspace.lo.len(),
            self.workspace.hi.len(),
            self.goal_center.len(),
            self.orange_region.lo.len(),
            self.orange_region.hi.len(),
            self.red_region.lo.len(),
            self.red_region.hi.len(),
        ]
        .iter()
        .all(|&n| n == d);
        if !dims_ok {
            return Err(Error::config("world coordinates disagree on dimension"));
        }
        if self.true_w.len() != 4 || self.w_n.len() != 4 {
            return Err(Error::config("navigation worlds have 4 features"));
        }
        if !(self.orange_region.within(&self.workspace) && self.red_region.within(&self.workspace)) {
            return Err(Error::config("constraint regions must lie inside the workspace"));
        }
        if !self.workspace.contains(&self.goal_center) || !self.workspace.contains(&self.start) {
            return Err(Error::config("start and goal must lie inside the workspace"));
        }
        let r2 = self.goal_radius * self.goal_radius;
        if self.orange_region.dist2(&self.goal_center) <= r2 || self.red_region.dist2(&self.goal_center) <= r2 {
            return Err(Error::config("goal overlaps a constraint region"));
        }
        let routes = [&self.good, &self.bad, &self.very_bad];
        if routes.iter().any(|r| !(0.0..=1.0).contains(&r.variant_probability)) {
            return Err(Error::config("route variant probability must lie in [0, 1]"));
        }
        if !(self.goal_radius > 0.0 && self.inverse_distance_cap > 0.0 && self.noise >= 0.0 && self.max_steps > 0) {
            return Err(Error::config("goal radius, cap and step limit must be positive"));
        }
        Ok(())
    }

    fn route(&self, quality: Quality) -> &Route {
        match quality {
            Quality::Good => &self.good,
            Quality::Bad => &self.bad,
            Quality::VeryBad => &self.very_bad,
        }
    }

    fn at_goal(&self, p: &[f64]) -> bool {
        distance(p, &self.goal_center) <= self.goal_radius
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl DemoWorld for NavigationWorld {
    fn qualities(&self) -> &[Quality] {
        &[Quality::Good, Quality::Bad, Quality::VeryBad]
    }

    fn rollout(&self, quality: Quality, rng: &mut ChaCha8Rng) -> Result<Trajectory> {
        self.validate()?;
        let route = self.route(quality);
        let noise = Normal::new(0.0, self.noise.max(f64::MIN_POSITIVE)).map_err(|e| Error::config(e.to_string()))?;
        let jitter = |rng: &mut ChaCha8Rng, amp: f64| if amp > 0.0 { rng.random_range(-amp..=amp) } else { 0.0 };

        let mut p: Vec<f64> = self.start.iter().map(|&x| x + jitter(rng, self.start_jitter)).collect();
        self.workspace.clamp(&mut p);
        let use_variant = route.variant_probability > 0.0 && rng.random::<f64>() < route.variant_probability;
        let waypoints = if use_variant { &route.variant_waypoints } else { &route.waypoints };
        let mut targets: Vec<Vec<f64>> = waypoints
            .iter()
            .map(|w| w.iter().map(|&x| x + jitter(rng, route.waypoint_jitter)).collect())
            .collect();
        targets.push(self.goal_center.clone());
        let (lo, hi) = route.speed;
        let cruise = if hi > lo { rng.random_range(lo..=hi) } else { lo };

        let mut leg = 0;
        let mut steps = Vec::new();
        while steps.len() < self.max_steps {
            let target = &targets[leg];
            let dist = distance(&p, target);
            let final_leg = leg + 1 == targets.len();
            let mut speed = cruise;
            if final_leg {
                if let Some(gain) = route.approach_gain {
                    speed = speed.min((gain * dist).max(route.min_speed));
                }
            }
            let advance = speed.min(dist);
            for (x, t) in p.iter_mut().zip(target) {
                let dir = if dist > 0.0 { (t - *x) / dist } else { 0.0 };
                *x += dir * advance + noise.sample(rng);
            }
            self.workspace.clamp(&mut p);
            steps.push(pointmass_features(&p, self));
            if self.at_goal(&p) {
                break;
            }
            if !final_leg && distance(&p, &targets[leg]) <= route.waypoint_tolerance {
                leg += 1;
            }
        }
        Trajectory::without_progress(steps)
    }

    fn satisfies(&self, quality: Quality, traj: &Trajectory) -> bool {
        let orange = traj.steps().iter().filter(|s| s[1] > 0.0).count();
        let red = traj.steps().iter().filter(|s| s[2] > 0.0).count();
        let reached = traj.steps().last().is_some_and(|s| s[3] == 0.0);
        reached
            && match quality {
                Quality::Good => orange == 0 && red == 0,
                Quality::Bad => orange > 0 && red == 0,
                Quality::VeryBad => red > 0,
            }
    }

    fn nominal(&self) -> NominalModel {
        NominalModel::with_default_beta(self.w_n.clone()).expect("beta is positive")
    }

    fn true_hypothesis(&self) -> ConstraintHypothesis {
        let indicators = self.true_w.iter().zip(&self.w_n).map(|(t, n)| t != n).collect();
        let weights = self.true_w.iter().zip(&self.w_n).map(|(t, n)| t - n).collect();
        ConstraintHypothesis::fixed(indicators, weights).expect("finite weights")
    }
}

#[cfg(test)]
mod tests {
    use super::super::{build_dataset, generate_demo, demo_rng};
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn feature_examples() {
        let world = NavigationWorld::point_mass();
        let at_goal = pointmass_features(&[0.85, 0.84], &world);
        assert_eq!(at_goal[3], 0.0);
        assert_eq!(at_goal[0], 10.0);
        let red = pointmass_features(&[0.7, 0.1], &world);
        assert_eq!((red[1], red[2]), (0.0, 1.0));
        let orange = pointmass_features(&[0.2, 0.7], &world);
        assert_eq!((orange[1], orange[2]), (1.0, 0.0));

        // a larger workspace, probed at distance 2 from the goal center
        let mut wide = NavigationWorld::point_mass();
        wide.workspace = Rect::new(vec![-3.0, -3.0], vec![3.0, 3.0]);
        let far = pointmass_features(&[0.85, -1.15], &wide);
        assert_abs_diff_eq!(far[0], 0.5, epsilon = 1e-12);
        assert_eq!(far.as_slice()[1..], [0.0, 0.0, 1.0]);
    }

    #[test]
    fn worlds_validate() {
        NavigationWorld::point_mass().validate().unwrap();
        NavigationWorld::reach().validate().unwrap();
        let mut overlap = NavigationWorld::point_mass();
        overlap.red_region = Rect::new(vec![0.7, 0.7], vec![0.9, 0.9]);
        assert!(overlap.validate().is_err());
        let mut outside = NavigationWorld::point_mass();
        outside.orange_region = Rect::new(vec![0.5, 0.5], vec![1.2, 0.6]);
        assert!(outside.validate().is_err());
    }

    #[test]
    fn class_guarantees_hold() {
        for world in [NavigationWorld::point_mass(), NavigationWorld::reach()] {
            for (k, q) in [Quality::Good, Quality::Bad, Quality::VeryBad].into_iter().enumerate() {
                for i in 0..10 {
                    let t = generate_demo(&world, q, &mut demo_rng(5, k, i)).unwrap();
                    let orange = t.steps().iter().any(|s| s[1] > 0.0);
                    let red = t.steps().iter().any(|s| s[2] > 0.0);
                    match q {
                        Quality::Good => assert!(!orange && !red),
                        Quality::Bad => assert!(orange && !red),
                        Quality::VeryBad => assert!(red),
                    }
                    assert!(t.len() <= world.max_steps);
                }
            }
        }
    }

    #[test]
    fn true_hypothesis_masks_nominal_features() {
        let h = NavigationWorld::point_mass().true_hypothesis();
        assert_eq!(h.indicators, vec![false, true, true, false]);
        assert_eq!(h.effective_weights(), vec![0.0, -10.0, -100.0, 0.0]);
    }

    #[test]
    fn true_reward_orders_groups() {
        for world in [NavigationWorld::point_mass(), NavigationWorld::reach()] {
            for seed in 0..3 {
                build_dataset(&world, &[60, 60, 60], seed).unwrap();
            }
        }
    }
}
