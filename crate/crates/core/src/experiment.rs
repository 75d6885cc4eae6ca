//! Config-driven experiments: generate demos, run chains, tune margins and
//! write reports, for several seeds in parallel.
//!
//! Output layout under `<out>/<name>/`:
//!
//! ```text
//! [n<count>/]seed<s>/data/manifest.csv     gen-demos
//! [n<count>/]seed<s>/<run>/chain.csv       infer, tune-margins
//! [n<count>/]seed<s>/<run>/candidates.csv  tune-margins
//! [n<count>/]seed<s>/<run>/recovery.csv    evaluate
//! [n<count>/]seed<s>/<run>/groups.csv      evaluate
//! [n<count>/]seed<s>/<run>/diagnostics.csv evaluate
//! results.csv, summary.csv                 evaluate
//! ```
//!
//! The `n<count>` level only exists for demo-count sweeps. Nothing
//! time-dependent is written, so re-running a config reproduces every file
//! byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Deserialize;

use crate::envs::{build_dataset, grid3x3_scenario, DemoWorld, LocomotionWorld, NavigationWorld};
use crate::error::{Error, Result};
use crate::io;
use crate::likelihood::MarginSpec;
use crate::margins::{default_grid, gap_ratios, group_reward_gaps, tune_margins, MarginTarget};
use crate::metrics::{chain_summary, cmse, group_reward_distribution, mean_std, recovery_report, RecoveryReport};
use crate::model::{ConstraintHypothesis, NominalModel, PreferenceDataset};
use crate::sampler::{bpl, pbicrl, pbicrl_parametric, ChainSample, PosteriorChain, SamplerConfig, WeightDomain};

pub const RESULTS_SCHEMA: &str = "prefcon-results v1";
pub const SUMMARY_SCHEMA: &str = "prefcon-summary v1 cmse=mean/std of squared location error over seeds";
pub const RECOVERY_SCHEMA: &str = "prefcon-recovery v1";
pub const GROUPS_SCHEMA: &str = "prefcon-groups v1";
pub const DIAGNOSTICS_SCHEMA: &str = "prefcon-diagnostics v1";
pub const CANDIDATES_SCHEMA: &str = "prefcon-candidates v1";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub world: WorldConfig,
    #[serde(default)]
    pub demos: DemosConfig,
    #[serde(default)]
    pub sampler: SamplerOverrides,
    pub runs: Vec<RunConfig>,
    /// Directory of the config file; relative dataset paths resolve here.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WorldConfig {
    PointMass {},
    Reach {},
    HalfCheetah {},
    Ant {},
    Locomotion {
        theta_star: f64,
        penalty: f64,
        gap: Option<f64>,
    },
    Grid3x3 {},
    /// Loaded datasets: only the reward model is known, plus an optional
    /// ground truth for the recovery metrics.
    Custom {
        nominal: Vec<f64>,
        beta: Option<f64>,
        true_indicators: Option<Vec<bool>>,
        true_weights: Option<Vec<f64>>,
        theta_star: Option<f64>,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemosConfig {
    /// Demos per group, best group first.
    pub counts: Option<Vec<usize>>,
    /// Same count for every group, one dataset per entry.
    pub per_group_sweep: Option<Vec<usize>>,
    /// Manifest to load instead of generating; `{seed}` is substituted.
    pub dataset: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerOverrides {
    pub iterations: Option<usize>,
    pub sampling_frequency: Option<usize>,
    pub sigma: Option<f64>,
    pub sigma_weight: Option<f64>,
    pub sigma_location: Option<f64>,
    pub burn_in: Option<f64>,
    pub thin: Option<usize>,
    pub weight_domain: Option<DomainChoice>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainChoice {
    NonPositive,
    Unbounded,
}

impl SamplerOverrides {
    fn apply(&self, mut cfg: SamplerConfig) -> SamplerConfig {
        if let Some(v) = self.iterations {
            cfg.iterations = v;
        }
        if let Some(v) = self.sampling_frequency {
            cfg.sampling_frequency = v;
        }
        if let Some(v) = self.sigma {
            cfg.sigma = v;
        }
        if let Some(v) = self.sigma_weight {
            cfg.sigma_weight = v;
        }
        if let Some(v) = self.sigma_location {
            cfg.sigma_location = v;
        }
        if let Some(v) = self.burn_in {
            cfg.burn_in_fraction = v;
        }
        if let Some(v) = self.thin {
            cfg.thin = v;
        }
        match self.weight_domain {
            Some(DomainChoice::NonPositive) => cfg.weight_domain = WeightDomain::NonPositive,
            Some(DomainChoice::Unbounded) => cfg.weight_domain = WeightDomain::Unbounded,
            None => {}
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Pbicrl,
    PbicrlParametric,
    Bpl,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Pbicrl => "pbicrl",
            Algorithm::PbicrlParametric => "pbicrl-parametric",
            Algorithm::Bpl => "bpl",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub algorithm: Algorithm,
    /// Keys `"k-l"` with 1-based groups, `k < l`; missing pairs are 0.
    pub margins: Option<BTreeMap<String, f64>>,
    pub tune: Option<TuneConfig>,
    /// Per-run sampler settings, applied after the experiment-wide ones.
    #[serde(default)]
    pub sampler: SamplerOverrides,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    /// Target `gap(G_{k+1}, G_{k+2}) / gap(G_k, G_{k+1})` for each `k`.
    pub ratios: Vec<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Candidate margin sets; the default grid when absent.
    pub grid: Option<Vec<BTreeMap<String, f64>>>,
}

fn default_tolerance() -> f64 {
    0.25
}

/// Parses `"k-l"` margin tables into a [`MarginSpec`] over `groups` groups.
pub fn margin_spec(groups: usize, table: &BTreeMap<String, f64>) -> Result<MarginSpec> {
    let mut spec = MarginSpec::zeros(groups);
    for (key, &value) in table {
        let parsed = key
            .split_once('-')
            .and_then(|(a, b)| Some((a.trim().parse::<usize>().ok()?, b.trim().parse::<usize>().ok()?)));
        let (k, l) = match parsed {
            Some((k, l)) if k >= 1 && l >= 1 && k < l => (k, l),
            _ => {
                return Err(Error::config(format!(
                    "margin key `{key}` must look like \"k-l\" with 1 ≤ k < l"
                )))
            }
        };
        if l > groups {
            return Err(Error::config(format!("margin `{key}` names group {l}, but there are {groups} groups")));
        }
        spec.set(k - 1, l - 1, value).map_err(|e| Error::config(format!("margin `{key}`: {e}")))?;
    }
    Ok(spec)
}

/// Parses a config; `base_dir` anchors relative paths.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    cfg.base_dir = base_dir.to_path_buf();
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    cfg.base_dir = base;
    cfg.validate().map_err(|e| Error::parse(path, e.to_string()))?;
    Ok(cfg)
}

/// Ground truth and reward model of a world.
#[derive(Debug, Clone)]
pub struct WorldInfo {
    pub nominal: NominalModel,
    pub truth: Option<ConstraintHypothesis>,
}

enum Source {
    World(Box<dyn DemoWorld + Send + Sync>),
    Grid,
    Custom,
}

impl WorldConfig {
    fn source(&self) -> Result<Source> {
        Ok(match self {
            WorldConfig::PointMass {} => Source::World(Box::new(NavigationWorld::point_mass())),
            WorldConfig::Reach {} => Source::World(Box::new(NavigationWorld::reach())),
            WorldConfig::HalfCheetah {} => Source::World(Box::new(LocomotionWorld::half_cheetah())),
            WorldConfig::Ant {} => Source::World(Box::new(LocomotionWorld::ant())),
            WorldConfig::Locomotion { theta_star, penalty, gap } => {
                let mut w = LocomotionWorld::new(*theta_star, *penalty);
                if let Some(g) = gap {
                    w.gap = *g;
                }
                w.validate()?;
                Source::World(Box::new(w))
            }
            WorldConfig::Grid3x3 {} => Source::Grid,
            WorldConfig::Custom { .. } => Source::Custom,
        })
    }

    pub fn info(&self) -> Result<WorldInfo> {
        match (self, self.source()?) {
            (_, Source::World(w)) => Ok(WorldInfo {
                nominal: w.nominal(),
                truth: Some(w.true_hypothesis()),
            }),
            (_, Source::Grid) => Ok(WorldInfo {
                nominal: grid3x3_scenario().nominal,
                truth: None,
            }),
            (
                WorldConfig::Custom {
                    nominal,
                    beta,
                    true_indicators,
                    true_weights,
                    theta_star,
                },
                _,
            ) => {
                let nominal = NominalModel::new(nominal.clone(), beta.unwrap_or(1.0))?;
                let truth = match (true_indicators, true_weights) {
                    (Some(c), Some(w)) => Some(ConstraintHypothesis::new(
                        c.clone(),
                        w.clone(),
                        theta_star.map(|t| vec![t]).unwrap_or_default(),
                    )?),
                    (None, None) => None,
                    _ => return Err(Error::config("give both true_indicators and true_weights, or neither")),
                };
                Ok(WorldInfo { nominal, truth })
            }
            _ => unreachable!("custom worlds map to Source::Custom"),
        }
    }

    fn groups(&self) -> Option<usize> {
        match self {
            WorldConfig::PointMass {} | WorldConfig::Reach {} | WorldConfig::Grid3x3 {} => Some(3),
            WorldConfig::HalfCheetah {} | WorldConfig::Ant {} | WorldConfig::Locomotion { .. } => Some(2),
            WorldConfig::Custom { .. } => None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::config("name must be a non-empty file name"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must not be empty"));
        }
        if self.runs.is_empty() {
            return Err(Error::config("at least one [[runs]] entry is needed"));
        }
        self.world.info()?;
        let d = &self.demos;
        let sources = [d.counts.is_some(), d.per_group_sweep.is_some(), d.dataset.is_some()]
            .iter()
            .filter(|&&b| b)
            .count();
        match (&self.world, sources) {
            (WorldConfig::Grid3x3 {}, 0) => {}
            (WorldConfig::Grid3x3 {}, _) => return Err(Error::config("the grid3x3 world has a fixed dataset; drop [demos]")),
            (WorldConfig::Custom { .. }, _) if d.dataset.is_none() || sources != 1 => {
                return Err(Error::config("custom worlds need demos.dataset (and nothing else)"))
            }
            (_, 1) => {}
            _ => return Err(Error::config("[demos] needs exactly one of counts, per_group_sweep, dataset")),
        }
        if let (Some(groups), Some(counts)) = (self.world.groups(), &d.counts) {
            if counts.len() != groups {
                return Err(Error::config(format!("demos.counts needs {groups} entries")));
            }
        }
        let all_counts = d.counts.iter().flatten().chain(d.per_group_sweep.iter().flatten());
        if all_counts.clone().any(|&c| c == 0) {
            return Err(Error::config("demo counts must be positive"));
        }
        let mut names = std::collections::BTreeSet::new();
        for run in &self.runs {
            if run.name.is_empty() || run.name.contains(['/', '\\']) || run.name == "data" {
                return Err(Error::config(format!("run name `{}` is not a usable directory name", run.name)));
            }
            if !names.insert(&run.name) {
                return Err(Error::config(format!("duplicate run name `{}`", run.name)));
            }
            if run.margins.is_some() && run.tune.is_some() {
                return Err(Error::config(format!("run `{}`: margins and tune are exclusive", run.name)));
            }
            if run.tune.is_some() && run.algorithm != Algorithm::Pbicrl {
                return Err(Error::config(format!("run `{}`: margin tuning uses the pbicrl sampler", run.name)));
            }
            let cfg = self.sampler_config(run, 0);
            cfg.validate().map_err(|e| Error::config(format!("run `{}`: {e}", run.name)))?;
            if let Some(groups) = self.world.groups() {
                if let Some(m) = &run.margins {
                    margin_spec(groups, m)?;
                }
                if let Some(t) = &run.tune {
                    MarginTarget::new(t.ratios.clone(), t.tolerance)?;
                    if t.ratios.len() + 2 != groups {
                        return Err(Error::config(format!(
                            "run `{}`: {groups} groups need {} target ratios",
                            run.name,
                            groups - 2
                        )));
                    }
                    for m in t.grid.iter().flatten() {
                        margin_spec(groups, m)?;
                    }
                }
            }
            if run.algorithm == Algorithm::PbicrlParametric {
                let parametric_world = matches!(
                    self.world,
                    WorldConfig::HalfCheetah {} | WorldConfig::Ant {} | WorldConfig::Locomotion { .. } | WorldConfig::Custom { .. }
                );
                if !parametric_world {
                    return Err(Error::config(format!(
                        "run `{}`: pbicrl-parametric needs progress values (locomotion or custom worlds)",
                        run.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Sampler settings of `run` for `seed`.
    pub fn sampler_config(&self, run: &RunConfig, seed: u64) -> SamplerConfig {
        let base = match run.algorithm {
            Algorithm::PbicrlParametric => SamplerConfig::parametric(),
            _ => SamplerConfig::default(),
        };
        run.sampler.apply(self.sampler.apply(base)).with_seed(seed)
    }

    /// Dataset variants: `None` for a single dataset, otherwise the sweep's
    /// per-group counts.
    fn variants(&self) -> Vec<Option<usize>> {
        match &self.demos.per_group_sweep {
            Some(sweep) => sweep.iter().map(|&n| Some(n)).collect(),
            None => vec![None],
        }
    }

    fn dataset(&self, variant: Option<usize>, seed: u64) -> Result<PreferenceDataset> {
        if let Some(pattern) = &self.demos.dataset {
            let path = self.base_dir.join(pattern.replace("{seed}", &seed.to_string()));
            return io::read_dataset(&path);
        }
        match self.world.source()? {
            Source::Grid => Ok(grid3x3_scenario().dataset),
            Source::World(w) => {
                let counts = match (variant, &self.demos.counts) {
                    (Some(n), _) => vec![n; w.qualities().len()],
                    (None, Some(c)) => c.clone(),
                    (None, None) => return Err(Error::config("no demo counts given")),
                };
                build_dataset(w.as_ref(), &counts, seed)
            }
            Source::Custom => Err(Error::config("custom worlds need demos.dataset")),
        }
    }
}

/// Which part of the pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenDemos,
    Infer,
    TuneMargins,
    Evaluate,
    /// Everything above, in one pass.
    Recipe,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub threads: usize,
}

/// Everything known about one chain after evaluation.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub run: String,
    pub algorithm: Algorithm,
    /// Per-group count of the sweep entry, if any.
    pub per_group: Option<usize>,
    pub seed: u64,
    pub margins: MarginSpec,
    pub map: ChainSample,
    /// Group reward gaps under the MAP hypothesis.
    pub gaps: Vec<f64>,
    pub recovery: Option<RecoveryReport>,
    /// `(ϑ̂ − ϑ*)²` per location, when the truth has locations.
    pub location_sq_errors: Vec<f64>,
    /// Wall-clock time of the chain (tuning included) when it ran in this
    /// process. Never written to disk.
    pub seconds: Option<f64>,
}

impl RunRecord {
    pub fn gap_ratios(&self) -> Option<Vec<f64>> {
        gap_ratios(&self.gaps)
    }
}

/// Results of one experiment, in deterministic order (variant, seed, run).
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub name: String,
    pub records: Vec<RunRecord>,
    pub dir: PathBuf,
}

impl ExperimentReport {
    pub fn records_for<'a>(&'a self, run: &'a str) -> impl Iterator<Item = &'a RunRecord> + 'a {
        self.records.iter().filter(move |r| r.run == run)
    }
}

fn job_dir(root: &Path, variant: Option<usize>, seed: u64) -> PathBuf {
    match variant {
        Some(n) => root.join(format!("n{n}")).join(format!("seed{seed}")),
        None => root.join(format!("seed{seed}")),
    }
}

/// Runs `stage` of `cfg` for every seed and dataset variant.
///
/// Returns the evaluated records for `Evaluate` and `Recipe`, and an empty
/// record list otherwise.
pub fn run_experiment(cfg: &ExperimentConfig, stage: Stage, opts: &RunOptions) -> Result<ExperimentReport> {
    let root = opts.out.join(&cfg.name);
    let info = cfg.world.info()?;
    let jobs: Vec<(Option<usize>, u64)> = cfg
        .variants()
        .into_iter()
        .flat_map(|v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.max(1))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let per_job = pool.install(|| {
        jobs.par_iter()
            .map(|&(variant, seed)| run_job(cfg, &info, stage, &job_dir(&root, variant, seed), variant, seed))
            .collect::<Result<Vec<_>>>()
    })?;
    let records: Vec<RunRecord> = per_job.into_iter().flatten().collect();
    if matches!(stage, Stage::Evaluate | Stage::Recipe) {
        write_results(&root, &records)?;
        write_summary(&root, cfg, &records, info.truth.as_ref())?;
    }
    Ok(ExperimentReport {
        name: cfg.name.clone(),
        records,
        dir: root,
    })
}

fn run_job(
    cfg: &ExperimentConfig,
    info: &WorldInfo,
    stage: Stage,
    dir: &Path,
    variant: Option<usize>,
    seed: u64,
) -> Result<Vec<RunRecord>> {
    let ds = cfg.dataset(variant, seed)?;
    if let Some(t) = &info.truth {
        if t.dim() != ds.feature_dim() && t.locations.is_empty() {
            return Err(Error::config(format!(
                "ground truth has {} features, dataset has {}",
                t.dim(),
                ds.feature_dim()
            )));
        }
    }
    if matches!(stage, Stage::GenDemos | Stage::Recipe) {
        io::write_dataset(&dir.join("data"), &ds)?;
        if stage == Stage::GenDemos {
            return Ok(Vec::new());
        }
    }
    let mut records = Vec::new();
    for run in &cfg.runs {
        let run_dir = dir.join(&run.name);
        let chain_path = run_dir.join("chain.csv");
        let wants_chain = match stage {
            Stage::Infer => run.tune.is_none(),
            Stage::TuneMargins => run.tune.is_some(),
            Stage::Recipe => true,
            _ => false,
        };
        let mut seconds = None;
        let (chain, margins) = if wants_chain {
            let started = Instant::now();
            let (chain, margins) = run_chain(cfg, run, &ds, &info.nominal, seed, &run_dir)?;
            log::info!(
                "{} {}seed {} run {}: {:.1}s, MAP loglik {:.4}",
                cfg.name,
                variant.map(|n| format!("n{n} ")).unwrap_or_default(),
                seed,
                run.name,
                started.elapsed().as_secs_f64(),
                chain.map.loglik
            );
            seconds = Some(started.elapsed().as_secs_f64());
            io::write_chain(&chain_path, &chain)?;
            (chain, margins)
        } else if stage == Stage::Evaluate {
            let margins = match (&run.margins, &run.tune) {
                (_, Some(_)) => read_selected_margins(&run_dir, ds.num_groups())?,
                (Some(m), None) => margin_spec(ds.num_groups(), m)?,
                (None, None) => MarginSpec::zeros(ds.num_groups()),
            };
            (io::read_chain(&chain_path)?, margins)
        } else {
            continue;
        };
        if matches!(stage, Stage::Evaluate | Stage::Recipe) {
            let mut record = evaluate_chain(run, variant, seed, &ds, info, &chain, margins, &run_dir)?;
            record.seconds = seconds;
            records.push(record);
        }
    }
    Ok(records)
}

fn run_chain(
    cfg: &ExperimentConfig,
    run: &RunConfig,
    ds: &PreferenceDataset,
    nom: &NominalModel,
    seed: u64,
    run_dir: &Path,
) -> Result<(PosteriorChain, MarginSpec)> {
    let scfg = cfg.sampler_config(run, seed);
    let groups = ds.num_groups();
    if let Some(t) = &run.tune {
        let target = MarginTarget::new(t.ratios.clone(), t.tolerance)?;
        let grid = match &t.grid {
            Some(g) => g.iter().map(|m| margin_spec(groups, m)).collect::<Result<Vec<_>>>()?,
            None => default_grid(groups)?,
        };
        let result = tune_margins(ds, nom, &target, &grid, &scfg)?;
        let header: Vec<String> = ["margins", "gaps", "error", "selected"].iter().map(|s| s.to_string()).collect();
        let rows: Vec<Vec<String>> = result
            .candidates
            .iter()
            .enumerate()
            .map(|(i, c)| {
                vec![
                    c.margins.to_string(),
                    join(&c.gaps),
                    c.error.to_string(),
                    u8::from(i == result.selected).to_string(),
                ]
            })
            .collect();
        io::write_csv(&run_dir.join("candidates.csv"), CANDIDATES_SCHEMA, &header, &rows)?;
        return Ok((result.chain, result.margins));
    }
    let margins = match &run.margins {
        Some(m) => margin_spec(groups, m)?,
        None => MarginSpec::zeros(groups),
    };
    let chain = match run.algorithm {
        Algorithm::Pbicrl => pbicrl(ds, nom, &margins, &scfg)?,
        Algorithm::PbicrlParametric => pbicrl_parametric(ds, nom, &margins, &scfg)?,
        Algorithm::Bpl => bpl(ds, nom, &margins, &scfg)?,
    };
    Ok((chain, margins))
}

fn read_selected_margins(run_dir: &Path, groups: usize) -> Result<MarginSpec> {
    let path = run_dir.join("candidates.csv");
    let (_, rows) = io::read_csv(&path, CANDIDATES_SCHEMA)?;
    let row = rows
        .iter()
        .find(|r| r.get(3).map(String::as_str) == Some("1"))
        .ok_or_else(|| Error::parse(&path, "no selected candidate"))?;
    let mut table = BTreeMap::new();
    for part in row[0].split(';').filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| Error::parse(&path, "bad margin entry"))?;
        let v: f64 = v.parse().map_err(|_| Error::parse(&path, "bad margin value"))?;
        table.insert(k.to_string(), v);
    }
    margin_spec(groups, &table)
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

#[allow(clippy::too_many_arguments)]
fn evaluate_chain(
    run: &RunConfig,
    variant: Option<usize>,
    seed: u64,
    ds: &PreferenceDataset,
    info: &WorldInfo,
    chain: &PosteriorChain,
    margins: MarginSpec,
    run_dir: &Path,
) -> Result<RunRecord> {
    let map = &chain.map.hypothesis;
    let gaps = group_reward_gaps(map, &info.nominal, ds)?;
    let recovery = match &info.truth {
        Some(t) if t.dim() == map.dim() => Some(recovery_report(map, &t.indicators, &t.effective_weights())?),
        _ => None,
    };
    let location_sq_errors = match &info.truth {
        Some(t) if !t.locations.is_empty() && t.locations.len() == map.locations.len() => {
            t.locations.iter().zip(&map.locations).map(|(a, b)| (a - b).powi(2)).collect()
        }
        _ => Vec::new(),
    };

    let s = |items: &[&str]| items.iter().map(|x| x.to_string()).collect::<Vec<String>>();
    if let Some(r) = &recovery {
        let rows: Vec<Vec<String>> = r
            .features
            .iter()
            .enumerate()
            .map(|(j, f)| {
                vec![
                    (j + 1).to_string(),
                    u8::from(f.c_true).to_string(),
                    u8::from(f.c_map).to_string(),
                    f.w_true.to_string(),
                    f.w_map.to_string(),
                ]
            })
            .collect();
        io::write_csv(
            &run_dir.join("recovery.csv"),
            RECOVERY_SCHEMA,
            &s(&["feature", "c_true", "c_map", "w_true", "w_map"]),
            &rows,
        )?;
    }

    let under_map = group_reward_distribution(map, &info.nominal, ds)?;
    let under_truth = match &info.truth {
        Some(t) if t.dim() == map.dim() && t.locations.len() == map.locations.len() => {
            Some(group_reward_distribution(t, &info.nominal, ds)?)
        }
        _ => None,
    };
    let mut rows = Vec::with_capacity(ds.len());
    for (k, g) in under_map.iter().enumerate() {
        for (i, v) in g.values.iter().enumerate() {
            let truth = under_truth.as_ref().map(|d| d[k].values[i].to_string()).unwrap_or_default();
            rows.push(vec![(k + 1).to_string(), i.to_string(), v.to_string(), truth]);
        }
    }
    io::write_csv(
        &run_dir.join("groups.csv"),
        GROUPS_SCHEMA,
        &s(&["group", "index", "reward_map", "reward_true"]),
        &rows,
    )?;

    let summary = chain_summary(chain);
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut rows = vec![
        vec!["flip_acceptance".into(), opt(summary.flip_acceptance)],
        vec!["weight_acceptance".into(), opt(summary.weight_acceptance)],
        vec!["location_acceptance".into(), opt(summary.location_acceptance)],
        vec!["kept_samples".into(), summary.kept_samples.to_string()],
        vec!["loglik_min".into(), summary.loglik_min.to_string()],
        vec!["loglik_max".into(), summary.loglik_max.to_string()],
        vec!["map_loglik".into(), summary.map_loglik.to_string()],
        vec!["margins".into(), margins.to_string()],
    ];
    for (j, f) in summary.indicator_frequency.iter().enumerate() {
        rows.push(vec![format!("c{}_frequency", j + 1), f.to_string()]);
        rows.push(vec![format!("w{}_mean", j + 1), summary.weight_mean[j].to_string()]);
        rows.push(vec![format!("w{}_std", j + 1), summary.weight_std[j].to_string()]);
    }
    for (j, m) in summary.location_mean.iter().enumerate() {
        rows.push(vec![format!("theta{}_mean", j + 1), m.to_string()]);
        rows.push(vec![format!("theta{}_std", j + 1), summary.location_std[j].to_string()]);
    }
    io::write_csv(&run_dir.join("diagnostics.csv"), DIAGNOSTICS_SCHEMA, &s(&["statistic", "value"]), &rows)?;

    Ok(RunRecord {
        run: run.name.clone(),
        algorithm: run.algorithm,
        per_group: variant,
        seed,
        margins,
        map: chain.map.clone(),
        gaps,
        recovery,
        location_sq_errors,
        seconds: None,
    })
}

fn write_results(root: &Path, records: &[RunRecord]) -> Result<()> {
    let dim = records.iter().map(|r| r.map.hypothesis.dim()).max().unwrap_or(0);
    let locs = records.iter().map(|r| r.map.hypothesis.locations.len()).max().unwrap_or(0);
    let gaps = records.iter().map(|r| r.gaps.len()).max().unwrap_or(0);
    let mut header: Vec<String> = ["run", "algorithm", "per_group", "seed", "margins", "map_loglik", "mask", "mask_accuracy", "weight_rmse"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=dim).map(|j| format!("w{j}_effective")));
    header.extend((1..=locs).map(|j| format!("theta{j}")));
    header.extend((1..=locs).map(|j| format!("theta{j}_sq_error")));
    header.extend((1..=gaps).map(|j| format!("gap{j}")));
    header.extend((1..gaps).map(|j| format!("gap_ratio{j}")));

    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            let h = &r.map.hypothesis;
            let mut row = vec![
                r.run.clone(),
                r.algorithm.name().to_string(),
                r.per_group.map(|n| n.to_string()).unwrap_or_default(),
                r.seed.to_string(),
                r.margins.to_string(),
                r.map.loglik.to_string(),
                h.indicators.iter().map(|&c| if c { '1' } else { '0' }).collect(),
                r.recovery.as_ref().map(|x| x.mask_accuracy.to_string()).unwrap_or_default(),
                r.recovery.as_ref().map(|x| x.active_weight_rmse.to_string()).unwrap_or_default(),
            ];
            let pad = |v: Vec<String>, n: usize| {
                let mut v = v;
                v.resize(n, String::new());
                v
            };
            row.extend(pad(h.effective_weights().iter().map(f64::to_string).collect(), dim));
            row.extend(pad(h.locations.iter().map(f64::to_string).collect(), locs));
            row.extend(pad(r.location_sq_errors.iter().map(f64::to_string).collect(), locs));
            row.extend(pad(r.gaps.iter().map(f64::to_string).collect(), gaps));
            let ratios = r.gap_ratios().unwrap_or_default();
            row.extend(pad(ratios.iter().map(f64::to_string).collect(), gaps.saturating_sub(1)));
            row
        })
        .collect();
    io::write_csv(&root.join("results.csv"), RESULTS_SCHEMA, &header, &rows)
}

/// Per (run, sweep entry) means and stds over seeds.
fn write_summary(root: &Path, cfg: &ExperimentConfig, records: &[RunRecord], truth: Option<&ConstraintHypothesis>) -> Result<()> {
    let dim = records.iter().map(|r| r.map.hypothesis.dim()).max().unwrap_or(0);
    let locs = records.iter().map(|r| r.map.hypothesis.locations.len()).max().unwrap_or(0);
    let gaps = records.iter().map(|r| r.gaps.len()).max().unwrap_or(0);
    let mut header: Vec<String> = ["run", "algorithm", "per_group", "seeds", "mask_exact", "mask_accuracy_mean"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for j in 1..=dim {
        header.extend([format!("c{j}_frequency"), format!("w{j}_mean"), format!("w{j}_std")]);
    }
    for j in 1..=locs {
        header.extend([format!("theta{j}_mean"), format!("theta{j}_std"), format!("cmse{j}_mean"), format!("cmse{j}_std")]);
    }
    for j in 1..gaps {
        header.extend([format!("gap_ratio{j}_mean"), format!("gap_ratio{j}_std")]);
    }

    let mut rows = Vec::new();
    for variant in cfg.variants() {
        for run in &cfg.runs {
            let group: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.run == run.name && r.per_group == variant)
                .collect();
            if group.is_empty() {
                continue;
            }
            let stat = |f: &dyn Fn(&RunRecord) -> Option<f64>| -> (String, String) {
                let v: Vec<f64> = group.iter().filter_map(|r| f(r)).collect();
                if v.is_empty() {
                    return (String::new(), String::new());
                }
                let (m, s) = mean_std(&v);
                (m.to_string(), s.to_string())
            };
            let mut row = vec![
                run.name.clone(),
                run.algorithm.name().to_string(),
                variant.map(|n| n.to_string()).unwrap_or_default(),
                group.len().to_string(),
                group
                    .iter()
                    .filter_map(|r| r.recovery.as_ref())
                    .filter(|x| x.mask_exact())
                    .count()
                    .to_string(),
                stat(&|r| r.recovery.as_ref().map(|x| x.mask_accuracy)).0,
            ];
            for j in 0..dim {
                let c = stat(&|r| r.map.hypothesis.indicators.get(j).map(|&c| if c { 1.0 } else { 0.0 }));
                let w = stat(&|r| (j < r.map.hypothesis.dim()).then(|| r.map.hypothesis.effective_weight(j)));
                row.extend([c.0, w.0, w.1]);
            }
            for j in 0..locs {
                let t = stat(&|r| r.map.hypothesis.locations.get(j).copied());
                let theta_hats: Vec<f64> = group.iter().filter_map(|r| r.map.hypothesis.locations.get(j).copied()).collect();
                let star = truth.and_then(|t| t.locations.get(j).copied());
                let (cm, cs) = match star {
                    Some(star) if !theta_hats.is_empty() => {
                        let c = cmse(&theta_hats, star)?;
                        (c.mean.to_string(), c.std.to_string())
                    }
                    _ => (String::new(), String::new()),
                };
                row.extend([t.0, t.1, cm, cs]);
            }
            for j in 0..gaps.saturating_sub(1) {
                let g = stat(&|r| r.gap_ratios().and_then(|v| v.get(j).copied()));
                row.extend([g.0, g.1]);
            }
            rows.push(row);
        }
    }
    io::write_csv(&root.join("summary.csv"), SUMMARY_SCHEMA, &header, &rows)
}
