//! Training loops.
//!
//! Offline runs make mini-batch passes over a fixed [`PairDataset`]: the
//! pair order is reshuffled every epoch from `seed ^ epoch`, each batch's
//! per-pair gradients are averaged, and one Adam step is taken per batch.
//! On-policy runs draw fresh contexts from `ρ` and arms from the current
//! policy at every step. Policies start at the reference policy and are
//! evaluated exactly (no Monte Carlo) at step 0, every `eval_every` steps,
//! and once more after the last step.

use serde::{Deserialize, Serialize};

use crate::bandit::BanditSpec;
use crate::data::PairDataset;
use crate::error::{Error, Result};
use crate::exact::{expected_reward, kl_to_ref, objective_j, optimal_policy};
use crate::losses::{
    copg_pair_grad, dpo_pair_grad, ipo_pair_grad, is_pg_grad, pg_pair_grad, rloo_grad,
    rm_bt_grad, BaselineKind, RewardTable, ScoredPair,
};
use crate::optim::AdamState;
use crate::policy::{GradientEstimate, TabularPolicy};
use crate::rng::SampleRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Copg,
    PgNone,
    PgValue,
    PgIs,
    Ipo,
    Dpo,
    Rloo,
    RmFit,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Self::Copg,
        Self::PgNone,
        Self::PgValue,
        Self::PgIs,
        Self::Ipo,
        Self::Dpo,
        Self::Rloo,
        Self::RmFit,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Copg => "copg",
            Self::PgNone => "pg-none",
            Self::PgValue => "pg-value",
            Self::PgIs => "pg-is",
            Self::Ipo => "ipo",
            Self::Dpo => "dpo",
            Self::Rloo => "rloo",
            Self::RmFit => "rm-fit",
        }
    }

    pub fn is_offline(&self) -> bool {
        matches!(
            self,
            Self::Copg | Self::PgNone | Self::PgValue | Self::PgIs | Self::Ipo | Self::Dpo
        )
    }

    pub fn is_onpolicy(&self) -> bool {
        matches!(self, Self::Rloo | Self::PgNone | Self::PgValue)
    }

    fn needs_labels(&self) -> bool {
        matches!(self, Self::Ipo | Self::Dpo | Self::RmFit)
    }

    /// Whether the optimizer ascends the estimator (policy gradients and
    /// the contrastive objective) or descends it (preference losses).
    fn ascends(&self) -> bool {
        !matches!(self, Self::Ipo | Self::Dpo | Self::RmFit)
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    /// Temperature used by the losses and by evaluation; it replaces the
    /// spec's β for the run.
    pub beta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub eval_every: usize,
    /// Policy-gradient baseline; only meaningful for `pg-*`.
    pub baseline: Option<BaselineKind>,
    /// Samples per context for `rloo` (default 2).
    pub k: Option<usize>,
    /// Number of updates for on-policy runs.
    pub steps: Option<usize>,
    pub allow_fingerprint_mismatch: bool,
}

impl TrainConfig {
    /// β = 0.5, Adam lr 1e-3, batches of 512, 100 epochs.
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            beta: 0.5,
            batch_size: 512,
            epochs: 100,
            lr: 1e-3,
            seed: 0,
            eval_every: 20,
            baseline: None,
            k: None,
            steps: None,
            allow_fingerprint_mismatch: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return bad("batch_size and eval_every must be at least 1".into());
        }
        match (self.algorithm, self.k) {
            (Algorithm::Rloo, Some(k)) if k < 2 => return Err(Error::Arity(k)),
            (Algorithm::Rloo, _) | (_, None) => {}
            (a, Some(_)) => return bad(format!("k only applies to rloo, not {a}")),
        }
        match (self.algorithm, self.baseline) {
            (_, None) | (Algorithm::PgIs, Some(_)) => {}
            (Algorithm::PgNone, Some(BaselineKind::None)) => {}
            (Algorithm::PgValue, Some(BaselineKind::Value | BaselineKind::RegularizedValue)) => {}
            (a, Some(b)) => return bad(format!("baseline {b} is not compatible with {a}")),
        }
        Ok(())
    }

    fn pg_baseline(&self) -> BaselineKind {
        match self.algorithm {
            Algorithm::PgValue => self.baseline.unwrap_or(BaselineKind::Value),
            _ => self.baseline.unwrap_or(BaselineKind::None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub regret: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub expected_reward: f64,
    pub kl: f64,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub policy: TabularPolicy,
    pub metrics: Vec<MetricsRecord>,
}

impl TrainRun {
    pub fn final_metrics(&self) -> &MetricsRecord {
        self.metrics.last().expect("runs always record step 0")
    }
}

pub fn evaluate(spec: &BanditSpec, policy: &TabularPolicy, step: usize) -> Result<MetricsRecord> {
    let j_star = objective_j(spec, &optimal_policy(spec))?;
    let j = objective_j(spec, policy)?;
    let rec = MetricsRecord {
        step,
        regret: j_star - j,
        j,
        expected_reward: expected_reward(spec, policy)?,
        kl: kl_to_ref(policy, spec)?,
    };
    if ![rec.regret, rec.j, rec.expected_reward, rec.kl]
        .iter()
        .all(|v| v.is_finite())
    {
        return Err(Error::NonFinite(format!("metrics at step {step}: {rec:?}")));
    }
    Ok(rec)
}

fn offline_pair_grad(
    spec: &BanditSpec,
    policy: &TabularPolicy,
    pair: &ScoredPair,
    cfg: &TrainConfig,
) -> Result<GradientEstimate> {
    match cfg.algorithm {
        Algorithm::Copg => copg_pair_grad(spec, policy, pair),
        Algorithm::PgNone | Algorithm::PgValue => {
            pg_pair_grad(spec, policy, pair, cfg.pg_baseline())
        }
        Algorithm::PgIs => is_pg_grad(
            spec,
            policy,
            pair,
            cfg.pg_baseline(),
            spec.mu1_table(),
            spec.mu2_table(),
        ),
        Algorithm::Ipo => ipo_pair_grad(spec, policy, pair),
        Algorithm::Dpo => dpo_pair_grad(spec, policy, pair),
        a => Err(Error::Config(format!("{a} is not an offline policy algorithm"))),
    }
}

/// Drives one optimizer step and the evaluation schedule.
struct Stepper<'a> {
    spec: &'a BanditSpec,
    adam: AdamState,
    maximize: bool,
    eval_every: usize,
    step: usize,
    metrics: Vec<MetricsRecord>,
}

impl<'a> Stepper<'a> {
    fn new(spec: &'a BanditSpec, policy: &TabularPolicy, cfg: &TrainConfig) -> Result<Self> {
        Ok(Self {
            spec,
            adam: AdamState::new(spec.cells(), cfg.lr),
            maximize: cfg.algorithm.ascends(),
            eval_every: cfg.eval_every,
            step: 0,
            metrics: vec![evaluate(spec, policy, 0)?],
        })
    }

    fn apply(&mut self, policy: &mut TabularPolicy, grad: GradientEstimate, where_: &str) -> Result<()> {
        if !grad.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient at step {} ({where_})",
                self.step
            )));
        }
        let adam = &mut self.adam;
        let maximize = self.maximize;
        policy.update_logits(|logits| adam.step(logits, &grad.values, maximize))?;
        self.step += 1;
        if self.step.is_multiple_of(self.eval_every) {
            self.metrics.push(evaluate(self.spec, policy, self.step)?);
        }
        Ok(())
    }

    fn finish(mut self, policy: TabularPolicy) -> Result<TrainRun> {
        self.metrics.push(evaluate(self.spec, &policy, self.step)?);
        Ok(TrainRun {
            policy,
            metrics: self.metrics,
        })
    }
}

fn mean_of(grads: impl Iterator<Item = Result<GradientEstimate>>, len: usize) -> Result<GradientEstimate> {
    let mut acc = GradientEstimate::zeros(len);
    let mut n = 0usize;
    for g in grads {
        acc.add_scaled(&g?, 1.0);
        n += 1;
    }
    Ok(acc.scaled(1.0 / n.max(1) as f64))
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    SampleRng::new(seed ^ epoch as u64).shuffle(&mut order);
    order
}

/// Mini-batch training on a fixed dataset, starting from the reference
/// policy.
pub fn train_offline(spec: &BanditSpec, ds: &PairDataset, cfg: &TrainConfig) -> Result<TrainRun> {
    let spec = spec.with_beta(cfg.beta)?;
    train_offline_from(&spec, ds, cfg, TabularPolicy::reference(&spec))
}

pub fn train_offline_from(
    spec: &BanditSpec,
    ds: &PairDataset,
    cfg: &TrainConfig,
    init: TabularPolicy,
) -> Result<TrainRun> {
    cfg.validate()?;
    if !cfg.algorithm.is_offline() {
        return Err(Error::Config(format!(
            "{} cannot be trained from a pair dataset",
            cfg.algorithm
        )));
    }
    let spec = spec.with_beta(cfg.beta)?;
    init.matches(&spec)?;
    ds.check_against(&spec, cfg.allow_fingerprint_mismatch)?;
    if ds.is_empty() {
        return Err(Error::Config("dataset has no pairs".into()));
    }
    if cfg.algorithm.needs_labels() && !ds.is_labeled() {
        return Err(Error::MissingPreference);
    }
    let mut policy = init;
    let mut stepper = Stepper::new(&spec, &policy, cfg)?;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(ds.len(), cfg.seed, epoch);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let grad = mean_of(
                chunk
                    .iter()
                    .map(|&i| offline_pair_grad(&spec, &policy, &ds.pairs[i], cfg)),
                spec.cells(),
            )?;
            stepper.apply(&mut policy, grad, &format!("epoch {epoch}, batch {b}"))?;
        }
    }
    stepper.finish(policy)
}

/// On-policy training: every step draws `batch_size` contexts from `ρ` and
/// `k` arms per context from the current policy.
pub fn train_onpolicy(spec: &BanditSpec, cfg: &TrainConfig) -> Result<TrainRun> {
    let spec = spec.with_beta(cfg.beta)?;
    train_onpolicy_from(&spec, cfg, TabularPolicy::reference(&spec))
}

pub fn train_onpolicy_from(
    spec: &BanditSpec,
    cfg: &TrainConfig,
    init: TabularPolicy,
) -> Result<TrainRun> {
    cfg.validate()?;
    if !cfg.algorithm.is_onpolicy() {
        return Err(Error::Config(format!(
            "{} is not an on-policy algorithm",
            cfg.algorithm
        )));
    }
    let steps = cfg
        .steps
        .ok_or_else(|| Error::Config("on-policy training needs a step count".into()))?;
    let spec = spec.with_beta(cfg.beta)?;
    init.matches(&spec)?;
    let k = match cfg.algorithm {
        Algorithm::Rloo => cfg.k.unwrap_or(2),
        _ => 2,
    };
    let mut rng = SampleRng::new(cfg.seed);
    let mut policy = init;
    let mut stepper = Stepper::new(&spec, &policy, cfg)?;
    for s in 0..steps {
        let mut draws = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let x = rng.categorical(spec.rho());
            let row = policy.probs_row(x);
            let arms: Vec<usize> = (0..k).map(|_| rng.categorical(&row)).collect();
            draws.push((x, arms));
        }
        let grad = mean_of(
            draws.iter().map(|(x, arms)| match cfg.algorithm {
                Algorithm::Rloo => rloo_grad(&spec, &policy, *x, arms),
                _ => {
                    let pair = ScoredPair::scored(&spec, *x, arms[0], arms[1])?;
                    pg_pair_grad(&spec, &policy, &pair, cfg.pg_baseline())
                }
            }),
            spec.cells(),
        )?;
        stepper.apply(&mut policy, grad, &format!("update {s}"))?;
    }
    stepper.finish(policy)
}

/// Fits a tabular Bradley-Terry reward model `R̂` (initialized at zero) by
/// Adam descent on the mean `-ln σ(R̂(y⁺) - R̂(y⁻))`, using the config's
/// lr, batch size, epochs and seed.
pub fn fit_reward_model(spec: &BanditSpec, ds: &PairDataset, cfg: &TrainConfig) -> Result<RewardTable> {
    cfg.validate()?;
    if !ds.is_labeled() {
        return Err(Error::MissingPreference);
    }
    let mut table = RewardTable::zeros(spec.contexts(), spec.arms());
    if ds.is_empty() {
        return Ok(table);
    }
    let mut adam = AdamState::new(table.values.len(), cfg.lr);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(ds.len(), cfg.seed, epoch);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let grad = mean_of(
                chunk.iter().map(|&i| rm_bt_grad(&table, &ds.pairs[i])),
                table.values.len(),
            )?;
            adam.step(&mut table.values, &grad.values, false).map_err(|e| {
                Error::NonFinite(format!("reward fit, epoch {epoch}, batch {b}: {e}"))
            })?;
        }
    }
    Ok(table)
}
