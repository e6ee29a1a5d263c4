//! Per-pair losses and gradient estimators.
//!
//! Sign conventions: the contrastive loss and the policy-gradient
//! estimators are ascent directions (they point towards a better policy);
//! IPO, DPO and the Bradley-Terry reward-model loss are minimized, and
//! their gradients are plain loss gradients.
//!
//! All gradients are with respect to the policy logits (or, for the reward
//! model, the reward table) and use the flat row-major layout.

use serde::{Deserialize, Serialize};

use crate::bandit::BanditSpec;
use crate::error::{Error, Result};
use crate::exact::log_ratio;
use crate::policy::{GradientEstimate, TabularPolicy};

/// Two arms drawn for the same context, with their rewards and an optional
/// preference label (`Some(true)` when `y` is preferred to `y_prime`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub x: usize,
    pub y: usize,
    pub y_prime: usize,
    pub r_y: f64,
    pub r_yprime: f64,
    pub pref: Option<bool>,
}

impl ScoredPair {
    /// Pair scored with the spec's reward table, unlabeled.
    pub fn scored(spec: &BanditSpec, x: usize, y: usize, y_prime: usize) -> Result<Self> {
        spec.check_index(x, y)?;
        spec.check_index(x, y_prime)?;
        Ok(Self {
            x,
            y,
            y_prime,
            r_y: spec.reward(x, y),
            r_yprime: spec.reward(x, y_prime),
            pref: None,
        })
    }

    /// `(preferred, dispreferred)` arms.
    pub fn ranked(&self) -> Result<(usize, usize)> {
        match self.pref {
            Some(true) => Ok((self.y, self.y_prime)),
            Some(false) => Ok((self.y_prime, self.y)),
            None => Err(Error::MissingPreference),
        }
    }

    /// The same pair with the two slots exchanged (label follows its arm).
    pub fn swapped(&self) -> Self {
        Self {
            x: self.x,
            y: self.y_prime,
            y_prime: self.y,
            r_y: self.r_yprime,
            r_yprime: self.r_y,
            pref: self.pref.map(|p| !p),
        }
    }

    /// Rewards replaced by +1/4 for the preferred arm and -1/4 for the other.
    pub fn binarized(&self) -> Result<Self> {
        let pref = self.pref.ok_or(Error::MissingPreference)?;
        let (r_y, r_yprime) = if pref { (0.25, -0.25) } else { (-0.25, 0.25) };
        Ok(Self {
            r_y,
            r_yprime,
            ..*self
        })
    }

    fn check(&self, spec: &BanditSpec, policy: &TabularPolicy) -> Result<()> {
        policy.matches(spec)?;
        spec.check_index(self.x, self.y)?;
        spec.check_index(self.x, self.y_prime)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    /// `b = 0`.
    None,
    /// `b = E_{y∼π}[R(x,y)]`, unregularized, recomputed from the current policy.
    Value,
    /// `b = E_{y∼π}[R_β^π(x,y)]`.
    RegularizedValue,
    /// Each arm is baselined by the regularized reward of the other arm of
    /// its pair.
    ContrastivePair,
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "value" => Ok(Self::Value),
            "regularized-value" => Ok(Self::RegularizedValue),
            "contrastive-pair" => Ok(Self::ContrastivePair),
            other => Err(Error::Config(format!("unknown baseline `{other}`"))),
        }
    }
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Value => "value",
            Self::RegularizedValue => "regularized-value",
            Self::ContrastivePair => "contrastive-pair",
        })
    }
}

/// Log-ratios and β-regularized rewards of both arms of a pair.
struct PairTerms {
    lr_y: f64,
    lr_yp: f64,
}

impl PairTerms {
    fn new(spec: &BanditSpec, policy: &TabularPolicy, pair: &ScoredPair) -> Result<Self> {
        pair.check(spec, policy)?;
        Ok(Self {
            lr_y: log_ratio(spec, policy, pair.x, pair.y)?,
            lr_yp: log_ratio(spec, policy, pair.x, pair.y_prime)?,
        })
    }

    fn reg(&self, pair: &ScoredPair, beta_eff: f64) -> (f64, f64) {
        (
            pair.r_y - beta_eff * self.lr_y,
            pair.r_yprime - beta_eff * self.lr_yp,
        )
    }
}

/// Contrastive pair loss, to be maximized:
/// `(R_{β/2}(y) - R_{β/2}(y')) ln(π(y)/π_ref(y)) + (R_{β/2}(y') - R_{β/2}(y)) ln(π(y')/π_ref(y'))`.
pub fn copg_pair_loss(spec: &BanditSpec, policy: &TabularPolicy, pair: &ScoredPair) -> Result<f64> {
    let t = PairTerms::new(spec, policy, pair)?;
    let (a, b) = t.reg(pair, spec.beta() / 2.0);
    Ok((a - b) * t.lr_y + (b - a) * t.lr_yp)
}

/// Exact gradient of [`copg_pair_loss`]. The β/2 inside the loss becomes a
/// full β here because the regularized rewards depend on the policy too.
pub fn copg_pair_grad(
    spec: &BanditSpec,
    policy: &TabularPolicy,
    pair: &ScoredPair,
) -> Result<GradientEstimate> {
    let t = PairTerms::new(spec, policy, pair)?;
    let (a, b) = t.reg(pair, spec.beta());
    let mut g = GradientEstimate::zeros(spec.cells());
    g.add_score(policy, pair.x, pair.y, a - b);
    g.add_score(policy, pair.x, pair.y_prime, b - a);
    Ok(g)
}

fn baselines(
    spec: &BanditSpec,
    policy: &TabularPolicy,
    pair: &ScoredPair,
    baseline: BaselineKind,
    reg: (f64, f64),
) -> Result<(f64, f64)> {
    let x = pair.x;
    Ok(match baseline {
        BaselineKind::None => (0.0, 0.0),
        BaselineKind::Value => {
            let v: f64 = (0..spec.arms())
                .map(|y| policy.prob(x, y) * spec.reward(x, y))
                .sum();
            (v, v)
        }
        BaselineKind::RegularizedValue => {
            let mut v = 0.0;
            for y in 0..spec.arms() {
                let p = policy.prob(x, y);
                if p > 0.0 {
                    v += p * (spec.reward(x, y) - spec.beta() * log_ratio(spec, policy, x, y)?);
                }
            }
            (v, v)
        }
        BaselineKind::ContrastivePair => (reg.1, reg.0),
    })
}

/// Naive pair policy gradient `(R_β(y) - b) ∇ln π(y) + (R_β(y') - b) ∇ln π(y')`,
/// which is only unbiased when both arms come from the current policy.
pub fn pg_pair_grad(
    spec: &BanditSpec,
    policy: &TabularPolicy,
    pair: &ScoredPair,
    baseline: BaselineKind,
) -> Result<GradientEstimate> {
    let t = PairTerms::new(spec, policy, pair)?;
    let reg = t.reg(pair, spec.beta());
    let (b_y, b_yp) = baselines(spec, policy, pair, baseline, reg)?;
    let mut g = GradientEstimate::zeros(spec.cells());
    g.add_score(policy, pair.x, pair.y, reg.0 - b_y);
    g.add_score(policy, pair.x, pair.y_prime, reg.1 - b_yp);
    Ok(g)
}

/// Importance-weighted pair gradient: each arm's term is scaled by
/// `π(arm|x) / μ(arm|x)`, with `mu_first` the density that drew `y` and
/// `mu_second` the one that drew `y'` (flat tables in spec layout).
pub fn is_pg_grad(
    spec: &BanditSpec,
    policy: &TabularPolicy,
    pair: &ScoredPair,
    baseline: BaselineKind,
    mu_first: &[f64],
    mu_second: &[f64],
) -> Result<GradientEstimate> {
    for table in [mu_first, mu_second] {
        if table.len() != spec.cells() {
            return Err(Error::Shape {
                expected: spec.cells(),
                got: table.len(),
            });
        }
    }
    let t = PairTerms::new(spec, policy, pair)?;
    let reg = t.reg(pair, spec.beta());
    let (b_y, b_yp) = baselines(spec, policy, pair, baseline, reg)?;
    let density = |table: &[f64], y: usize| -> Result<f64> {
        let m = table[spec.cell(pair.x, y)];
        if m > 0.0 {
            Ok(m)
        } else {
            Err(Error::ZeroDensity {
                context: pair.x,
                arm: y,
            })
        }
    };
    let w_y = policy.prob(pair.x, pair.y) / density(mu_first, pair.y)?;
    let w_yp = policy.prob(pair.x, pair.y_prime) / density(mu_second, pair.y_prime)?;
    let mut g = GradientEstimate::zeros(spec.cells());
    g.add_score(policy, pair.x, pair.y, w_y * (reg.0 - b_y));
    g.add_score(policy, pair.x, pair.y_prime, w_yp * (reg.1 - b_yp));
    Ok(g)
}

/// REINFORCE leave-one-out over `k ≥ 2` arms drawn for context `x`: each
/// sample is baselined by the mean regularized reward of the other `k - 1`.
/// Rewards come from the spec.
pub fn rloo_grad(
    spec: &BanditSpec,
    policy: &TabularPolicy,
    x: usize,
    samples: &[usize],
) -> Result<GradientEstimate> {
    let k = samples.len();
    if k < 2 {
        return Err(Error::Arity(k));
    }
    policy.matches(spec)?;
    let beta = spec.beta();
    let reg = samples
        .iter()
        .map(|&y| {
            spec.check_index(x, y)?;
            Ok(spec.reward(x, y) - beta * log_ratio(spec, policy, x, y)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut g = GradientEstimate::zeros(spec.cells());
    for (j, &y) in samples.iter().enumerate() {
        let others: f64 = reg
            .iter()
            .enumerate()
            .filter(|(l, _)| *l != j)
            .map(|(_, r)| r)
            .sum();
        g.add_score(policy, x, y, reg[j] - others / (k - 1) as f64);
    }
    Ok(g)
}

/// `ln(π(y⁺)/π_ref(y⁺)) - ln(π(y⁻)/π_ref(y⁻))` and the ranked arms.
fn preference_margin(
    spec: &BanditSpec,
    policy: &TabularPolicy,
    pair: &ScoredPair,
) -> Result<(f64, usize, usize)> {
    pair.check(spec, policy)?;
    let (win, lose) = pair.ranked()?;
    let margin = log_ratio(spec, policy, pair.x, win)? - log_ratio(spec, policy, pair.x, lose)?;
    Ok((margin, win, lose))
}

/// IPO loss `(1/2 - β Δ)²` with `Δ` the log-ratio margin of the preferred
/// arm. This is β² times the more common `(Δ - 1/(2β))²`: same minimizer,
/// gradients scaled by β².
pub fn ipo_pair_loss(spec: &BanditSpec, policy: &TabularPolicy, pair: &ScoredPair) -> Result<f64> {
    let (m, _, _) = preference_margin(spec, policy, pair)?;
    let e = 0.5 - spec.beta() * m;
    Ok(e * e)
}

pub fn ipo_pair_grad(
    spec: &BanditSpec,
    policy: &TabularPolicy,
    pair: &ScoredPair,
) -> Result<GradientEstimate> {
    let (m, win, lose) = preference_margin(spec, policy, pair)?;
    let beta = spec.beta();
    let coef = -2.0 * beta * (0.5 - beta * m);
    let mut g = GradientEstimate::zeros(spec.cells());
    g.add_score(policy, pair.x, win, coef);
    g.add_score(policy, pair.x, lose, -coef);
    Ok(g)
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// DPO loss `-ln σ(β Δ)`.
pub fn dpo_pair_loss(spec: &BanditSpec, policy: &TabularPolicy, pair: &ScoredPair) -> Result<f64> {
    let (m, _, _) = preference_margin(spec, policy, pair)?;
    Ok(softplus(-spec.beta() * m))
}

pub fn dpo_pair_grad(
    spec: &BanditSpec,
    policy: &TabularPolicy,
    pair: &ScoredPair,
) -> Result<GradientEstimate> {
    let (m, win, lose) = preference_margin(spec, policy, pair)?;
    let beta = spec.beta();
    let coef = -beta * sigmoid(-beta * m);
    let mut g = GradientEstimate::zeros(spec.cells());
    g.add_score(policy, pair.x, win, coef);
    g.add_score(policy, pair.x, lose, -coef);
    Ok(g)
}

/// A learned reward per `(context, arm)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    pub contexts: usize,
    pub arms: usize,
    pub values: Vec<f64>,
}

impl RewardTable {
    pub fn zeros(contexts: usize, arms: usize) -> Self {
        Self {
            contexts,
            arms,
            values: vec![0.0; contexts * arms],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[x * self.arms + y]
    }

    fn check(&self, pair: &ScoredPair) -> Result<()> {
        if pair.x >= self.contexts || pair.y >= self.arms || pair.y_prime >= self.arms {
            return Err(Error::Index {
                context: pair.x,
                arm: pair.y.max(pair.y_prime),
            });
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "#copg-reward v1 contexts={} arms={}\n",
            self.contexts, self.arms
        );
        for row in self.values.chunks(self.arms) {
            let row: Vec<String> = row.iter().map(|v| crate::policy::fmt_f64(*v)).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_text(reader: impl std::io::Read) -> Result<Self> {
        let (contexts, arms, values) = crate::policy::read_table(reader, "#copg-reward v1")?;
        Ok(Self {
            contexts,
            arms,
            values,
        })
    }
}

/// Bradley-Terry reward-model loss `-ln σ(R̂(x,y⁺) - R̂(x,y⁻))`.
pub fn rm_bt_loss(reward_hat: &RewardTable, pair: &ScoredPair) -> Result<f64> {
    reward_hat.check(pair)?;
    let (win, lose) = pair.ranked()?;
    Ok(softplus(-(reward_hat.get(pair.x, win) - reward_hat.get(pair.x, lose))))
}

/// Gradient of [`rm_bt_loss`] with respect to the reward table.
pub fn rm_bt_grad(reward_hat: &RewardTable, pair: &ScoredPair) -> Result<GradientEstimate> {
    reward_hat.check(pair)?;
    let (win, lose) = pair.ranked()?;
    let d = reward_hat.get(pair.x, win) - reward_hat.get(pair.x, lose);
    let s = sigmoid(-d);
    let mut g = GradientEstimate::zeros(reward_hat.values.len());
    g.values[pair.x * reward_hat.arms + win] -= s;
    g.values[pair.x * reward_hat.arms + lose] += s;
    Ok(g)
}
