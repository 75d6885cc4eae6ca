//! Shared helpers for the integration tests: random problems, brute-force
//! reference computations and the property suite.
#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prefcon::likelihood::{dataset_loglik, pair_logprob, LikelihoodCache, MarginSpec};
use prefcon::model::{halfspace_fraction, ConstraintHypothesis, FeatureVector, NominalModel, PreferenceDataset, Trajectory};
use prefcon::sampler::{pbicrl, pbicrl_parametric, SamplerConfig};

/// A dataset with a reward model and a hypothesis to evaluate on it.
pub struct Problem {
    pub ds: PreferenceDataset,
    pub nom: NominalModel,
    pub h: ConstraintHypothesis,
    pub margins: MarginSpec,
}

/// Random grouped dataset with at most `max_traj` trajectories. With
/// `parametric`, steps carry progress values and `h` has locations.
pub fn random_problem(rng: &mut ChaCha8Rng, max_traj: usize, max_steps: usize, parametric: bool) -> Problem {
    let groups = rng.random_range(2..=3usize);
    let mut sizes = vec![1usize; groups];
    let mut left = max_traj.saturating_sub(groups);
    for s in sizes.iter_mut() {
        let extra = rng.random_range(0..=left.min(3));
        *s += extra;
        left -= extra;
    }
    let dim = rng.random_range(1..=3usize);
    let data: Vec<Vec<Trajectory>> = sizes
        .iter()
        .map(|&n| {
            (0..n)
                .map(|_| {
                    let len = rng.random_range(1..=max_steps);
                    let steps = (0..len)
                        .map(|_| {
                            let v: Vec<f64> = (0..dim)
                                .map(|_| if rng.random_bool(0.5) { rng.random_range(-2.0..2.0) } else { f64::from(rng.random_range(0..2u8)) })
                                .collect();
                            FeatureVector::new(v)
                        })
                        .collect();
                    let progress = if parametric {
                        (0..len).map(|_| rng.random_range(0.0..10.0)).collect()
                    } else {
                        Vec::new()
                    };
                    Trajectory::new(steps, progress).unwrap()
                })
                .collect()
        })
        .collect();
    let ds = PreferenceDataset::new(data).unwrap();
    let nom = NominalModel::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(), rng.random_range(0.5..2.0)).unwrap();
    let constraints = if parametric { rng.random_range(1..=2usize) } else { dim };
    let indicators = (0..constraints).map(|_| rng.random_bool(0.5)).collect();
    let weights = (0..constraints).map(|_| -rng.random_range(0.0..5.0)).collect();
    let locations = if parametric {
        (0..constraints).map(|_| rng.random_range(0.0..10.0)).collect()
    } else {
        Vec::new()
    };
    let h = ConstraintHypothesis::new(indicators, weights, locations).unwrap();
    let mut margins = MarginSpec::zeros(groups);
    for k in 0..groups {
        for l in k + 1..groups {
            if rng.random_bool(0.5) {
                margins.set(k, l, rng.random_range(0.0..3.0)).unwrap();
            }
        }
    }
    Problem { ds, nom, h, margins }
}

/// Reward of trajectory `i` straight from its steps.
pub fn brute_reward(p: &Problem, i: usize) -> f64 {
    let t = p.ds.trajectory(i);
    let n = t.len() as f64;
    let w_n = p.nom.weights();
    let mut total = 0.0;
    for (s, step) in t.steps().iter().enumerate() {
        let mut r: f64 = step.iter().zip(w_n).map(|(x, w)| x * w).sum();
        for j in 0..p.h.dim() {
            if !p.h.indicators[j] {
                continue;
            }
            let phi = if p.h.locations.is_empty() {
                step[j]
            } else if t.progress()[s] >= p.h.locations[j] {
                1.0
            } else {
                0.0
            };
            r += p.h.weights[j] * phi;
        }
        total += r;
    }
    p.nom.beta() * total / n
}

/// Sum over every cross-group pair of `ln(e^{r_i} / (e^{r_i} + e^{r_j + m}))`,
/// evaluated directly.
pub fn brute_loglik(p: &Problem, margins: &MarginSpec) -> f64 {
    let rewards: Vec<f64> = (0..p.ds.len()).map(|i| brute_reward(p, i)).collect();
    let mut total = 0.0;
    for i in 0..p.ds.len() {
        for j in 0..p.ds.len() {
            let (k, l) = (p.ds.group_of(i), p.ds.group_of(j));
            if k < l {
                let m = margins.get(k, l);
                total += (rewards[i].exp() / (rewards[i].exp() + (rewards[j] + m).exp())).ln();
            }
        }
    }
    total
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn problem(seed: u64, parametric: bool) -> Problem {
    random_problem(&mut ChaCha8Rng::seed_from_u64(seed), 9, 6, parametric)
}

fn check<V: std::fmt::Debug>(name: &str, r: Result<(), proptest::test_runner::TestError<V>>) -> Result<(), String> {
    r.map_err(|e| format!("{name}: {e}"))
}

/// Adding the same constant to every reward leaves each pair term, and a
/// feature that is constant across all trajectories leaves the dataset
/// likelihood, unchanged.
pub fn shift_invariance() -> Result<(), String> {
    let pairs = (-50.0..50.0f64, -50.0..50.0f64, 0.0..5.0f64, -100.0..100.0f64);
    check(
        "pair shift",
        runner(512).run(&pairs, |(ri, rj, m, c)| {
            let a = pair_logprob(ri, rj, m).unwrap();
            let b = pair_logprob(ri + c, rj + c, m).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
            Ok(())
        }),
    )?;
    check(
        "constant feature",
        runner(128).run(&(any::<u64>(), -3.0..3.0f64, -2.0..2.0f64), |(seed, value, weight)| {
            let p = problem(seed, false);
            let base = dataset_loglik(&p.h, &p.nom, &p.ds, &p.margins).unwrap();
            let groups: Vec<Vec<Trajectory>> = (0..p.ds.num_groups())
                .map(|k| {
                    p.ds.group(k)
                        .iter()
                        .map(|t| {
                            let steps = t
                                .steps()
                                .iter()
                                .map(|s| {
                                    let mut v = s.as_slice().to_vec();
                                    v.push(value);
                                    FeatureVector::new(v)
                                })
                                .collect();
                            Trajectory::without_progress(steps).unwrap()
                        })
                        .collect()
                })
                .collect();
            let ds = PreferenceDataset::new(groups).unwrap();
            let mut w_n = p.nom.weights().to_vec();
            w_n.push(weight);
            let nom = NominalModel::new(w_n, p.nom.beta()).unwrap();
            let mut c = p.h.indicators.clone();
            c.push(false);
            let mut w = p.h.weights.clone();
            w.push(0.0);
            let h = ConstraintHypothesis::fixed(c, w).unwrap();
            let shifted = dataset_loglik(&h, &nom, &ds, &p.margins).unwrap();
            prop_assert!((base - shifted).abs() <= 1e-9 * (1.0 + base.abs()), "{base} vs {shifted}");
            Ok(())
        }),
    )
}

/// With zero margin the two orders of a pair have probabilities summing to
/// one; a positive margin only takes mass away.
pub fn complementarity() -> Result<(), String> {
    check(
        "complementarity",
        runner(512).run(&(-40.0..40.0f64, -40.0..40.0f64, 0.0..5.0f64), |(ri, rj, m)| {
            let sum = pair_logprob(ri, rj, 0.0).unwrap().exp() + pair_logprob(rj, ri, 0.0).unwrap().exp();
            prop_assert!((sum - 1.0).abs() < 1e-12, "sum {sum}");
            let with_margin = pair_logprob(ri, rj, m).unwrap().exp() + pair_logprob(rj, ri, m).unwrap().exp();
            prop_assert!(with_margin <= 1.0 + 1e-12);
            Ok(())
        }),
    )
}

/// Raising any margin never raises the likelihood.
pub fn margin_monotonicity() -> Result<(), String> {
    check(
        "pair margin",
        runner(512).run(&(-40.0..40.0f64, -40.0..40.0f64, 0.0..5.0f64, 0.0..5.0f64), |(ri, rj, m, extra)| {
            prop_assert!(pair_logprob(ri, rj, m + extra).unwrap() <= pair_logprob(ri, rj, m).unwrap());
            Ok(())
        }),
    )?;
    check(
        "dataset margin",
        runner(128).run(&(any::<u64>(), 0.0..3.0f64, any::<prop::sample::Index>()), |(seed, extra, which)| {
            let p = problem(seed, false);
            let pairs: Vec<(usize, usize)> = (0..p.ds.num_groups())
                .flat_map(|k| (k + 1..p.ds.num_groups()).map(move |l| (k, l)))
                .collect();
            let (k, l) = pairs[which.index(pairs.len())];
            let mut raised = p.margins.clone();
            raised.set(k, l, p.margins.get(k, l) + extra).unwrap();
            let before = dataset_loglik(&p.h, &p.nom, &p.ds, &p.margins).unwrap();
            let after = dataset_loglik(&p.h, &p.nom, &p.ds, &raised).unwrap();
            prop_assert!(after <= before + 1e-12, "{after} > {before}");
            Ok(())
        }),
    )
}

/// A masked-out feature's weight does not matter, and flipping an indicator
/// twice (through the incremental cache) gives back the same likelihood.
pub fn mask_idempotence() -> Result<(), String> {
    check(
        "mask",
        runner(128).run(&(any::<u64>(), any::<prop::sample::Index>(), -10.0..0.0f64), |(seed, which, w)| {
            let p = problem(seed, false);
            let j = which.index(p.h.dim());
            let mut off = p.h.clone();
            off.indicators[j] = false;
            let mut off_other = off.clone();
            off_other.weights[j] = w;
            let a = dataset_loglik(&off, &p.nom, &p.ds, &p.margins).unwrap();
            let b = dataset_loglik(&off_other, &p.nom, &p.ds, &p.margins).unwrap();
            prop_assert_eq!(a, b);

            let mut cache = LikelihoodCache::build(&p.ds, &p.h, &p.nom).unwrap();
            let start = cache.loglik(&p.margins).unwrap();
            let mut flipped = p.h.clone();
            flipped.indicators[j] = !flipped.indicators[j];
            cache.update_coordinate(&flipped, j);
            cache.update_coordinate(&p.h, j);
            let back = cache.loglik(&p.margins).unwrap();
            prop_assert!((start - back).abs() <= 1e-10 * (1.0 + start.abs()), "{start} vs {back}");
            prop_assert_eq!(cache.hypothesis(), &p.h);
            Ok(())
        }),
    )
}

/// The halfspace activation falls as the location rises and agrees with a
/// linear scan over the unsorted progress values.
pub fn parametric_monotonicity() -> Result<(), String> {
    let values = prop::collection::vec(-20.0..20.0f64, 1..60);
    check(
        "halfspace",
        runner(512).run(&(values, -25.0..25.0f64, 0.0..10.0f64), |(z, theta, up)| {
            let mut sorted = z.clone();
            sorted.sort_by(f64::total_cmp);
            let lo = halfspace_fraction(&sorted, theta);
            let hi = halfspace_fraction(&sorted, theta + up);
            prop_assert!(hi <= lo);
            let scan = z.iter().filter(|&&x| x >= theta).count() as f64 / z.len() as f64;
            prop_assert_eq!(lo, scan);
            // exactly at a sample value, the sample counts as crossed
            let at = halfspace_fraction(&sorted, z[0]);
            prop_assert_eq!(at, z.iter().filter(|&&x| x >= z[0]).count() as f64 / z.len() as f64);
            Ok(())
        }),
    )
}

/// Same data, config and seed give identical chains; another seed differs.
pub fn determinism() -> Result<(), String> {
    check(
        "determinism",
        runner(24).run(&(any::<u64>(), any::<bool>()), |(seed, parametric)| {
            let p = problem(seed, parametric);
            let cfg = SamplerConfig {
                iterations: 300,
                thin: 10,
                seed,
                ..if parametric { SamplerConfig::parametric() } else { SamplerConfig::default() }
            };
            let run = |c: &SamplerConfig| {
                if parametric {
                    let mut c = c.clone();
                    c.halfspace_features = p.h.dim();
                    pbicrl_parametric(&p.ds, &p.nom, &p.margins, &c).unwrap()
                } else {
                    pbicrl(&p.ds, &p.nom, &p.margins, c).unwrap()
                }
            };
            let a = run(&cfg);
            let b = run(&cfg);
            prop_assert_eq!(&a.samples, &b.samples);
            prop_assert_eq!(&a.map, &b.map);
            prop_assert_eq!(a.accept_counts, b.accept_counts);
            let other = run(&SamplerConfig { seed: seed.wrapping_add(1), ..cfg.clone() });
            prop_assert!(other.samples != a.samples || a.samples.iter().all(|s| s.loglik == a.samples[0].loglik));
            Ok(())
        }),
    )
}

/// The whole suite, in order, as `(name, outcome)`.
pub fn property_suite() -> Vec<(&'static str, Result<(), String>)> {
    vec![
        ("shift invariance", shift_invariance()),
        ("complementarity", complementarity()),
        ("margin monotonicity", margin_monotonicity()),
        ("mask idempotence", mask_idempotence()),
        ("parametric monotonicity + linear scan", parametric_monotonicity()),
        ("determinism", determinism()),
    ]
}
