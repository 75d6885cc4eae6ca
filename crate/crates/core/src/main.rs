use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prefcon::experiment::{load_config, parse_config, run_experiment, ExperimentConfig, ExperimentReport, RunOptions, Stage};
use prefcon::{recipes, Error};

/// Bayesian constraint inference from grouped preferences.
#[derive(Parser)]
#[command(name = "prefcon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the demo datasets of a config.
    GenDemos(Common),
    /// Run every run of a config that has no tuning target.
    Infer(Common),
    /// Run the margin-tuning runs of a config.
    TuneMargins(Common),
    /// Recompute reports from existing chain dumps.
    Evaluate(Common),
    /// Run a whole config (or a bundled recipe) end to end.
    Recipe {
        /// Bundled recipe name; omit when passing --config.
        name: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this seed instead of the config's seed list.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Output root.
    #[arg(long, env = "PREFCON_OUT", default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, env = "PREFCON_THREADS")]
    threads: Option<usize>,
    /// Only print warnings and errors.
    #[arg(long)]
    quiet: bool,
}

fn load(common: &Common, recipe: Option<&str>) -> Result<ExperimentConfig, Error> {
    let mut cfg = match (recipe, &common.config) {
        (Some(_), Some(_)) => return Err(Error::Config("give a recipe name or --config, not both".into())),
        (Some(name), None) => {
            let text = recipes::bundled(name).ok_or_else(|| {
                let names: Vec<&str> = recipes::BUNDLED.iter().map(|(n, _)| *n).collect();
                Error::Config(format!("unknown recipe `{name}`; bundled: {}", names.join(", ")))
            })?;
            parse_config(text, Path::new("."))?
        }
        (None, Some(path)) => load_config(path)?,
        (None, None) => return Err(Error::Config("--config is required".into())),
    };
    if let Some(seed) = common.seed_override {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn print_report(report: &ExperimentReport) {
    let mut keys: Vec<(String, Option<usize>)> = Vec::new();
    for r in &report.records {
        let key = (r.run.clone(), r.per_group);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    for (run, per_group) in keys {
        let rs: Vec<_> = report
            .records
            .iter()
            .filter(|r| r.run == run && r.per_group == per_group)
            .collect();
        let mut line = run.clone();
        if let Some(n) = per_group {
            line.push_str(&format!(" n={n}"));
        }
        let exact = rs.iter().filter(|r| r.recovery.as_ref().is_some_and(|x| x.mask_exact())).count();
        if rs.iter().any(|r| r.recovery.is_some()) {
            line.push_str(&format!(" mask_exact={exact}/{}", rs.len()));
        }
        let errs: Vec<f64> = rs.iter().filter_map(|r| r.location_sq_errors.first().copied()).collect();
        if !errs.is_empty() {
            let (m, s) = prefcon::metrics::mean_std(&errs);
            line.push_str(&format!(" cmse={m:.4}±{s:.4}"));
        }
        let ratios: Vec<f64> = rs.iter().filter_map(|r| r.gap_ratios()?.first().copied()).collect();
        if !ratios.is_empty() {
            let (m, _) = prefcon::metrics::mean_std(&ratios);
            line.push_str(&format!(" gap_ratio={m:.3}"));
        }
        println!("{line}");
    }
    println!("reports in {}", report.dir.display());
}

fn run(cli: Cli) -> Result<(), Error> {
    let (stage, common, recipe) = match &cli.command {
        Command::GenDemos(c) => (Stage::GenDemos, c, None),
        Command::Infer(c) => (Stage::Infer, c, None),
        Command::TuneMargins(c) => (Stage::TuneMargins, c, None),
        Command::Evaluate(c) => (Stage::Evaluate, c, None),
        Command::Recipe { name, common } => (Stage::Recipe, common, name.as_deref()),
    };
    let level = if common.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let cfg = load(common, recipe)?;
    let threads = common
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let report = run_experiment(&cfg, stage, &RunOptions { out: common.out.clone(), threads })?;
    if matches!(stage, Stage::Evaluate | Stage::Recipe) && !common.quiet {
        print_report(&report);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}
