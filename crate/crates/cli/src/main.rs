//! `xcrc`: batch front end for cross-view matching experiments.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numerical
//! failure, 3 I/O failure.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use xcrc::data::{load_manifest, synth_generate, write_dataset, CrossViewDataset, SynthConfig};
use xcrc::error::ErrorClass;
use xcrc::eval::{
    lambda_tune, run_trial, run_trials, trial_seeds, write_cmc_csv, write_run_manifest, write_trials_json,
    RunManifest, TuneReport,
};

use config::{apply_set, parse_document, read_document, set_path, DatasetSource, RunConfig, DEFAULT_TUNING_SEED};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Core(xcrc::Error),
}

impl From<xcrc::Error> for CliError {
    fn from(e: xcrc::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 3,
            CliError::Core(e) => match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Numerical => 2,
                ErrorClass::Io => 3,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "xcrc", version, about = "Cross-view collaborative representation matching")]
struct Cli {
    /// Worker threads for trial-level parallelism (default: XCRC_THREADS,
    /// else all available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cross-view dataset (two CSVs and a manifest).
    Synth(SynthArgs),
    /// Pick λ from a grid on a single tuning partition.
    Tune(RunArgs),
    /// Run repeated trials and write the CMC table and run manifest.
    Eval(EvalArgs),
    /// Print the ranked gallery for one test probe.
    Rank(RankArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// SynthConfig JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_identities: Option<usize>,
    #[arg(long)]
    m_dim: Option<usize>,
    /// identity, linear or tanh_nonlinear.
    #[arg(long)]
    transition: Option<String>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    n_distractors: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override a config key, e.g. `--set noise_sigma=0.1`.
    #[arg(long = "set", value_name = "KEY=JSON")]
    sets: Vec<String>,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// RunConfig JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest (replaces the config's dataset).
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Comma-separated λ values.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    base_seed: Option<u64>,
    #[arg(long)]
    tuning_seed: Option<u64>,
    /// Rank with the per-pair double loop instead of the batched scheme.
    #[arg(long)]
    naive: bool,
    /// Override a config key, e.g. `--set kernel.kind=rbf`.
    #[arg(long = "set", value_name = "KEY=JSON")]
    sets: Vec<String>,
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// tune.json whose chosen λ and tuning seed are used.
    #[arg(long)]
    tuned: Option<PathBuf>,
}

#[derive(Args)]
struct RankArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Probe identity.
    #[arg(long, conflicts_with = "probe_index", required_unless_present = "probe_index")]
    probe: Option<String>,
    /// Row of the probe in the (id-sorted) test probe set.
    #[arg(long)]
    probe_index: Option<usize>,
    /// Trial whose partition is used.
    #[arg(long, default_value_t = 0)]
    trial: usize,
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
            ExitCode::from(e.exit_code())
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<usize, CliError> {
    let n = match (flag, std::env::var("XCRC_THREADS")) {
        (Some(n), _) => n,
        (None, Ok(v)) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("XCRC_THREADS={v:?} is not a thread count")))?,
        (None, Err(_)) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    if n == 0 {
        return Err(CliError::Usage("thread count must be positive".into()));
    }
    Ok(n)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = thread_count(cli.threads)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Eval(a) => cmd_eval(a, threads),
        Command::Rank(a) => cmd_rank(a),
    })
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    let mut doc = json!({
        "n_identities": 100,
        "m_dim": 20,
        "transition": "tanh_nonlinear",
        "noise_sigma": 0.3,
        "n_distractors": 0,
        "seed": 0
    });
    if let Value::Object(file) = read_document(a.config.as_deref())? {
        for (k, v) in file {
            doc[k] = v;
        }
    }
    let flags = [
        ("n_identities", a.n_identities.map(Value::from)),
        ("m_dim", a.m_dim.map(Value::from)),
        ("transition", a.transition.map(Value::from)),
        ("noise_sigma", a.noise_sigma.map(Value::from)),
        ("n_distractors", a.n_distractors.map(Value::from)),
        ("seed", a.seed.map(Value::from)),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            doc[k] = v;
        }
    }
    for s in &a.sets {
        apply_set(&mut doc, s)?;
    }
    let cfg: SynthConfig = parse_document(doc)?;
    let ds = synth_generate(&cfg)?;
    let manifest = write_dataset(&a.out, &ds)?;
    let cfg_path = a.out.join("synth.json");
    let text = serde_json::to_string_pretty(&cfg).expect("plain struct") + "\n";
    fs::write(&cfg_path, text).map_err(|e| io_err(&cfg_path, e))?;
    eprintln!(
        "wrote {} paired identities, {} distractors to {}",
        ds.view_a.len(),
        manifest.distractor_ids.len(),
        a.out.display()
    );
    Ok(())
}

fn load_run_config(a: &RunArgs) -> Result<RunConfig, CliError> {
    let mut doc = read_document(a.config.as_deref())?;
    if let Some(m) = &a.manifest {
        set_path(&mut doc, "dataset", json!({ "manifest": m }))?;
    }
    let flags = [
        ("method", a.method.clone().map(Value::from)),
        ("lambda", a.lambda.map(Value::from)),
        ("lambda_grid", a.lambda_grid.clone().map(Value::from)),
        ("trials", a.trials.map(Value::from)),
        ("base_seed", a.base_seed.map(Value::from)),
        ("tuning_seed", a.tuning_seed.map(Value::from)),
        ("output_dir", a.out.as_ref().map(|p| Value::from(p.to_string_lossy().into_owned()))),
        ("naive", a.naive.then_some(Value::Bool(true))),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            set_path(&mut doc, k, v)?;
        }
    }
    for s in &a.sets {
        apply_set(&mut doc, s)?;
    }
    let cfg: RunConfig = parse_document(doc)?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_dataset(src: &DatasetSource) -> Result<CrossViewDataset, CliError> {
    Ok(match src {
        DatasetSource::Manifest(p) => load_manifest(p)?,
        DatasetSource::Synth(cfg) => synth_generate(cfg)?,
    })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn cmd_tune(a: RunArgs) -> Result<(), CliError> {
    let cfg = load_run_config(&a)?;
    let grid = cfg
        .lambda_grid
        .clone()
        .ok_or_else(|| CliError::Usage("tune needs lambda_grid".into()))?;
    let ds = load_dataset(&cfg.dataset)?;
    let seed = cfg.tuning_seed.unwrap_or(DEFAULT_TUNING_SEED);
    let report = lambda_tune(&ds, &cfg.split.with_seed(seed), &cfg.method, &grid)?;
    create_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join("tune.json");
    let text = serde_json::to_string_pretty(&report).expect("plain struct") + "\n";
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    println!("chosen lambda {} (tuning seed {seed})", report.chosen_lambda);
    Ok(())
}

fn cmd_eval(a: EvalArgs, threads: usize) -> Result<(), CliError> {
    let mut cfg = load_run_config(&a.run)?;
    if let Some(path) = &a.tuned {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let tuned: TuneReport =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        cfg.method.lambda = tuned.chosen_lambda;
        cfg.tuning_seed = Some(tuned.tuning_seed);
    }
    let ds = load_dataset(&cfg.dataset)?;
    let split = cfg.split.with_seed(cfg.base_seed);
    let start = Instant::now();
    let report = run_trials(&ds, &split, &cfg.method, cfg.trials, cfg.base_seed, cfg.tuning_seed)?;
    let total_seconds = start.elapsed().as_secs_f64();

    create_dir(&cfg.output_dir)?;
    write_cmc_csv(cfg.output_dir.join("cmc.csv"), &report)?;
    write_trials_json(cfg.output_dir.join("trials.json"), &report)?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        dataset: serde_json::to_value(&cfg.dataset).expect("plain enum"),
        method: cfg.method.clone(),
        split,
        n_trials: cfg.trials,
        base_seed: cfg.base_seed,
        excluded_seed: cfg.tuning_seed,
        seeds: report.seeds.clone(),
        threads,
        timings: report.timings.clone(),
        total_seconds,
        rank1_mean: report.mean.rank1(),
        rank1_std: report.std_rates[0],
    };
    write_run_manifest(cfg.output_dir.join("manifest.json"), &manifest)?;
    println!(
        "{}: rank-1 {:.4} ± {:.4} over {} trials",
        cfg.method.method.name(),
        report.mean.rank1(),
        report.std_rates[0],
        cfg.trials
    );
    Ok(())
}

fn cmd_rank(a: RankArgs) -> Result<(), CliError> {
    let cfg = load_run_config(&a.run)?;
    let ds = load_dataset(&cfg.dataset)?;
    let seed = trial_seeds(cfg.base_seed, a.trial + 1, cfg.tuning_seed)[a.trial];
    let outcome = run_trial(&ds, &cfg.split.with_seed(seed), &cfg.method, seed)?;
    let probes = &outcome.test.view_a.ids;
    let j = match (&a.probe, a.probe_index) {
        (Some(id), _) => probes.iter().position(|p| p == id).ok_or_else(|| {
            xcrc::Error::UnknownId(format!("{id:?} is not a test probe of trial {} (seed {seed})", a.trial))
        })?,
        (None, Some(i)) if i < probes.len() => i,
        (None, Some(i)) => {
            return Err(CliError::Usage(format!(
                "probe index {i} out of range ({} test probes)",
                probes.len()
            )))
        }
        (None, None) => unreachable!("clap requires one of --probe and --probe-index"),
    };
    let gallery = &outcome.test.view_b.ids;
    for (rank, &i) in outcome.ranking.order[j].iter().enumerate() {
        println!("{}\t{}\t{:.6}", rank + 1, gallery[i], outcome.ranking.scores[(j, i)]);
    }
    Ok(())
}
