//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when a check or run fails, 2 for usage and
//! configuration errors.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::bandit::BanditSpec;
use crate::data::{generate_dataset, LabelMode, PairDataset};
use crate::error::Error;
use crate::losses::BaselineKind;
use crate::policy::fmt_f64;
use crate::train::{
    fit_reward_model, train_offline, train_onpolicy, Algorithm, MetricsRecord, TrainConfig,
    TrainRun,
};
use crate::verify::{run_suite, CheckReport};

pub const CSV_HEADER: &str = "step,algorithm,beta,seed,regret,J,expected_reward,kl";
pub const SUMMARY_HEADER: &str = "beta,algorithm,final_regret,final_J";

#[derive(Debug, Parser)]
#[command(name = "copg", version, about = "Contrastive policy gradient on tabular bandits")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a pair dataset from a spec.
    GenData(GenDataArgs),
    /// Train one algorithm and write metrics, final policy and manifest.
    Train(TrainArgs),
    /// Run the three-arm comparison of copg, pg-none, pg-value and ipo.
    ReproduceFig1(Fig1Args),
    /// Run the numerical verification suite.
    Verify(VerifyArgs),
    /// Train over a list of temperatures.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Spec file (TOML); defaults to the built-in three-arm spec.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "none")]
    pub label_mode: LabelMode,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Spec file (TOML); defaults to the built-in three-arm spec.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Pair dataset; when absent one is sampled from the spec with `--seed`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value = "copg")]
    pub algorithm: Algorithm,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 512)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub eval_every: usize,
    /// Labels for a sampled dataset.
    #[arg(long, default_value = "bt")]
    pub label_mode: LabelMode,
    /// Size of a sampled dataset.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    /// Samples per context for rloo.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub baseline: Option<BaselineKind>,
    /// Updates for on-policy runs.
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    /// Train pg-none / pg-value on fresh samples from the current policy.
    #[arg(long)]
    pub on_policy: bool,
    #[arg(long)]
    pub allow_fingerprint_mismatch: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Fig1Args {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Spec to check; by default the built-in spec plus 20 random ones.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated temperatures.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub betas: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub spec_path: Option<PathBuf>,
    pub dataset_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub build: String,
}

impl RunManifest {
    pub fn new(
        config: TrainConfig,
        spec_path: Option<&Path>,
        dataset_path: Option<&Path>,
        out_dir: &Path,
        spec: &BanditSpec,
    ) -> Result<Self> {
        for p in [spec_path, dataset_path].into_iter().flatten() {
            if !p.exists() {
                anyhow::bail!(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        fs::create_dir_all(out_dir)
            .with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Self {
            config,
            spec_path: spec_path.map(Path::to_path_buf),
            dataset_path: dataset_path.map(Path::to_path_buf),
            out_dir: out_dir.to_path_buf(),
            build: format!(
                "{} {} spec={}",
                env!("CARGO_PKG_NAME"),
                env!("CARGO_PKG_VERSION"),
                spec.fingerprint()
            ),
        })
    }
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    ChecksFailed,
}

pub fn csv_rows(algorithm: Algorithm, beta: f64, seed: u64, metrics: &[MetricsRecord]) -> String {
    let mut out = String::new();
    for m in metrics {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            m.step,
            algorithm,
            fmt_f64(beta),
            seed,
            fmt_f64(m.regret),
            fmt_f64(m.j),
            fmt_f64(m.expected_reward),
            fmt_f64(m.kl)
        ));
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(contents.as_bytes())
        .with_context(|| format!("writing {}", path.display()))
}

fn write_csv(path: &Path, body: &str) -> Result<()> {
    write_file(path, &format!("{CSV_HEADER}\n{body}"))
}

fn load_spec(path: Option<&Path>) -> Result<BanditSpec> {
    match path {
        Some(p) => BanditSpec::load(p).with_context(|| format!("loading spec {}", p.display())),
        None => Ok(BanditSpec::toy_three_arm()),
    }
}

impl RunArgs {
    fn config(&self, beta: f64) -> TrainConfig {
        let mut cfg = TrainConfig::new(self.algorithm);
        cfg.beta = beta;
        cfg.lr = self.lr;
        cfg.batch_size = self.batch_size;
        cfg.epochs = self.epochs;
        cfg.seed = self.seed;
        cfg.eval_every = self.eval_every;
        cfg.k = self.k;
        cfg.baseline = self.baseline;
        cfg.allow_fingerprint_mismatch = self.allow_fingerprint_mismatch;
        if self.uses_onpolicy() {
            cfg.steps = Some(self.steps);
        }
        cfg
    }

    fn uses_onpolicy(&self) -> bool {
        self.algorithm == Algorithm::Rloo || (self.on_policy && self.algorithm.is_onpolicy())
    }

    fn check(&self) -> Result<()> {
        if self.on_policy && !self.algorithm.is_onpolicy() {
            anyhow::bail!(Error::Config(format!(
                "{} has no on-policy variant",
                self.algorithm
            )));
        }
        Ok(())
    }

    fn dataset(&self, spec: &BanditSpec) -> Result<Option<PairDataset>> {
        if self.uses_onpolicy() {
            return Ok(None);
        }
        Ok(Some(match &self.dataset {
            Some(p) => {
                PairDataset::load(p).with_context(|| format!("loading dataset {}", p.display()))?
            }
            None => generate_dataset(spec, self.n, self.seed, self.label_mode)?,
        }))
    }
}

enum RunOutput {
    Policy(TrainRun),
    Reward(crate::losses::RewardTable),
}

fn execute(spec: &BanditSpec, ds: Option<&PairDataset>, cfg: &TrainConfig) -> Result<RunOutput> {
    let out = match (cfg.algorithm, ds) {
        (Algorithm::RmFit, Some(ds)) => RunOutput::Reward(fit_reward_model(spec, ds, cfg)?),
        (_, Some(ds)) => RunOutput::Policy(train_offline(spec, ds, cfg)?),
        (_, None) => RunOutput::Policy(train_onpolicy(spec, cfg)?),
    };
    Ok(out)
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<Status> {
    let spec = load_spec(args.spec.as_deref())?;
    let ds = generate_dataset(&spec, args.n, args.seed, args.label_mode)?;
    ds.save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    log::info!("wrote {} pairs to {}", ds.len(), args.out.display());
    Ok(Status::Ok)
}

pub fn cmd_train(args: &TrainArgs) -> Result<Status> {
    args.run.check()?;
    let cfg = args.run.config(args.beta);
    cfg.validate()?;
    let spec = load_spec(args.run.spec.as_deref())?;
    let manifest = RunManifest::new(
        cfg.clone(),
        args.run.spec.as_deref(),
        args.run.dataset.as_deref(),
        &args.out,
        &spec,
    )?;
    let ds = args.run.dataset(&spec)?;
    match execute(&spec, ds.as_ref(), &cfg)? {
        RunOutput::Policy(run) => {
            write_csv(
                &args.out.join("metrics.csv"),
                &csv_rows(cfg.algorithm, cfg.beta, cfg.seed, &run.metrics),
            )?;
            write_file(&args.out.join("policy.txt"), &run.policy.to_text())?;
            let last = run.final_metrics();
            println!(
                "{} beta={} final step {}: regret={:.6e} J={:.6}",
                cfg.algorithm, cfg.beta, last.step, last.regret, last.j
            );
        }
        RunOutput::Reward(table) => {
            write_file(&args.out.join("reward.txt"), &table.to_text())?;
            println!("rm-fit: wrote {}", args.out.join("reward.txt").display());
        }
    }
    write_file(
        &args.out.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(Status::Ok)
}

/// The four runs of the three-arm comparison, on one shared BT-labeled
/// dataset of 10⁴ pairs sampled with `seed`.
pub fn fig1_runs(seed: u64) -> crate::error::Result<Vec<(Algorithm, TrainRun)>> {
    let spec = BanditSpec::toy_three_arm();
    let ds = generate_dataset(&spec, 10_000, seed, LabelMode::Bt)?;
    [
        Algorithm::Copg,
        Algorithm::PgNone,
        Algorithm::PgValue,
        Algorithm::Ipo,
    ]
    .into_iter()
    .map(|a| {
        let mut cfg = TrainConfig::new(a);
        cfg.seed = seed;
        Ok((a, train_offline(&spec, &ds, &cfg)?))
    })
    .collect()
}

/// Qualitative ordering of the comparison as named pass/fail lines.
pub fn fig1_checks(runs: &[(Algorithm, TrainRun)]) -> Vec<(String, bool)> {
    let get = |a: Algorithm| runs.iter().find(|(b, _)| *b == a).map(|(_, r)| r);
    let last = |a: Algorithm| get(a).map(|r| r.final_metrics().regret).unwrap_or(f64::NAN);
    let first = |a: Algorithm| get(a).map(|r| r.metrics[0].regret).unwrap_or(f64::NAN);
    let copg = last(Algorithm::Copg);
    let biased = |r: f64| r > 0.01 && r < 0.3 && r > copg;
    vec![
        (format!("copg final regret {copg:.3e} < 1e-2"), copg < 0.01),
        (
            format!(
                "pg-none final regret {:.4} > initial {:.4}",
                last(Algorithm::PgNone),
                first(Algorithm::PgNone)
            ),
            last(Algorithm::PgNone) > first(Algorithm::PgNone),
        ),
        (
            format!("pg-value final regret {:.4} in (0.01, 0.3), above copg", last(Algorithm::PgValue)),
            biased(last(Algorithm::PgValue)),
        ),
        (
            format!("ipo final regret {:.4} in (0.01, 0.3), above copg", last(Algorithm::Ipo)),
            biased(last(Algorithm::Ipo)),
        ),
    ]
}

pub fn cmd_reproduce_fig1(args: &Fig1Args) -> Result<Status> {
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let runs = fig1_runs(args.seed)?;
    let mut merged = String::new();
    for (a, run) in &runs {
        let rows = csv_rows(*a, 0.5, args.seed, &run.metrics);
        write_csv(&args.out.join(format!("{a}.csv")), &rows)?;
        merged.push_str(&rows);
    }
    write_csv(&args.out.join("fig1.csv"), &merged)?;
    let checks = fig1_checks(&runs);
    for (line, ok) in &checks {
        println!("{} {line}", if *ok { "PASS" } else { "FAIL" });
    }
    Ok(if checks.iter().all(|(_, ok)| *ok) {
        Status::Ok
    } else {
        Status::ChecksFailed
    })
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<Status> {
    let spec = match &args.spec {
        Some(p) => Some(load_spec(Some(p))?),
        None => None,
    };
    let reports: Vec<CheckReport> = run_suite(spec.as_ref(), args.seed)?;
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    println!("{} checks, {} failed", reports.len(), failed);
    Ok(if failed == 0 {
        Status::Ok
    } else {
        Status::ChecksFailed
    })
}

/// Distinct temperatures in first-seen order.
pub fn dedup_betas(betas: &[f64]) -> Vec<f64> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for &b in betas {
        if seen.insert(b.to_bits()) {
            out.push(b);
        } else {
            log::warn!("duplicate beta {b} ignored");
        }
    }
    out
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<Status> {
    args.run.check()?;
    let betas = dedup_betas(&args.betas);
    if betas.is_empty() {
        anyhow::bail!(Error::Config("no beta values given".into()));
    }
    for &b in &betas {
        args.run.config(b).validate()?;
    }
    if args.run.algorithm == Algorithm::RmFit {
        anyhow::bail!(Error::Config("rm-fit does not depend on beta".into()));
    }
    let spec = load_spec(args.run.spec.as_deref())?;
    let ds = args.run.dataset(&spec)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let runs: Vec<(f64, TrainRun)> = betas
        .par_iter()
        .map(|&b| match execute(&spec, ds.as_ref(), &args.run.config(b))? {
            RunOutput::Policy(run) => Ok((b, run)),
            RunOutput::Reward(_) => unreachable!("rm-fit rejected above"),
        })
        .collect::<Result<_>>()?;
    let mut summary = format!("{SUMMARY_HEADER}\n");
    let a = args.run.algorithm;
    for (b, run) in &runs {
        write_csv(
            &args.out.join(format!("beta-{b}.csv")),
            &csv_rows(a, *b, args.run.seed, &run.metrics),
        )?;
        let last = run.final_metrics();
        summary.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(*b),
            a,
            fmt_f64(last.regret),
            fmt_f64(last.j)
        ));
        println!("{a} beta={b}: final regret {:.6e}", last.regret);
    }
    write_file(&args.out.join("summary.csv"), &summary)?;
    Ok(Status::Ok)
}

pub fn run(cli: &Cli) -> Result<Status> {
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::ReproduceFig1(a) => cmd_reproduce_fig1(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::NonFinite(_)) => 1,
        _ => 2,
    }
}

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match run(&cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::ChecksFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
