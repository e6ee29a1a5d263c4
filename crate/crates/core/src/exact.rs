//! Exact quantities by full enumeration over contexts and arms: the
//! regularized objective, its maximizer, regret, KL, the contrastive
//! objective and the gradients of both.
//!
//! Cells where a weight (ρ, π, μ) is zero are skipped, so masked arms never
//! produce `0 · ∞` terms.

use crate::bandit::BanditSpec;
use crate::error::{Error, Result};
use crate::policy::{GradientEstimate, TabularPolicy};

/// `ln π(y|x) - ln π_ref(y|x)`, failing where the reference has no mass.
pub(crate) fn log_ratio(spec: &BanditSpec, policy: &TabularPolicy, x: usize, y: usize) -> Result<f64> {
    let r = spec.ref_prob(x, y);
    if r <= 0.0 {
        return Err(Error::Support {
            context: x,
            arm: y,
            reason: "reference policy has zero probability".into(),
        });
    }
    Ok(policy.log_prob(x, y) - r.ln())
}

/// `R(x,y) - beta_eff · ln(π(y|x)/π_ref(y|x))`.
///
/// The contrastive loss uses `beta_eff = β/2`; gradients and the objective
/// use `β`.
pub fn regularized_reward(
    spec: &BanditSpec,
    policy: &TabularPolicy,
    x: usize,
    y: usize,
    beta_eff: f64,
) -> Result<f64> {
    spec.check_index(x, y)?;
    policy.matches(spec)?;
    Ok(spec.reward(x, y) - beta_eff * log_ratio(spec, policy, x, y)?)
}

fn reg_rewards_row(
    spec: &BanditSpec,
    policy: &TabularPolicy,
    x: usize,
    beta_eff: f64,
    weights: &[&[f64]],
) -> Result<Vec<Option<f64>>> {
    (0..spec.arms())
        .map(|y| {
            let c = spec.cell(x, y);
            if weights.iter().all(|w| w[c] <= 0.0) {
                Ok(None)
            } else {
                Ok(Some(spec.reward(x, y) - beta_eff * log_ratio(spec, policy, x, y)?))
            }
        })
        .collect()
}

/// `J(π) = Σ_x ρ(x) Σ_y π(y|x) R_β^π(x,y) = E[R] - β KL(π ‖ π_ref)`.
pub fn objective_j(spec: &BanditSpec, policy: &TabularPolicy) -> Result<f64> {
    policy.matches(spec)?;
    let probs = policy.probs();
    let mut total = 0.0;
    for x in 0..spec.contexts() {
        let rho = spec.rho()[x];
        if rho <= 0.0 {
            continue;
        }
        let rewards = reg_rewards_row(spec, policy, x, spec.beta(), &[&probs])?;
        let inner: f64 = rewards
            .iter()
            .enumerate()
            .filter_map(|(y, r)| r.map(|r| probs[spec.cell(x, y)] * r))
            .sum();
        total += rho * inner;
    }
    Ok(total)
}

/// `Σ_x ρ(x) Σ_y π(y|x) R(x,y)`.
pub fn expected_reward(spec: &BanditSpec, policy: &TabularPolicy) -> Result<f64> {
    policy.matches(spec)?;
    Ok((0..spec.contexts())
        .map(|x| {
            spec.rho()[x]
                * (0..spec.arms())
                    .map(|y| policy.prob(x, y) * spec.reward(x, y))
                    .sum::<f64>()
        })
        .sum())
}

/// `Σ_x ρ(x) KL(π(·|x) ‖ π_ref(·|x))`.
pub fn kl_to_ref(policy: &TabularPolicy, spec: &BanditSpec) -> Result<f64> {
    policy.matches(spec)?;
    let mut total = 0.0;
    for x in 0..spec.contexts() {
        let rho = spec.rho()[x];
        if rho <= 0.0 {
            continue;
        }
        for y in 0..spec.arms() {
            let p = policy.prob(x, y);
            if p > 0.0 {
                total += rho * p * log_ratio(spec, policy, x, y)?;
            }
        }
    }
    Ok(total)
}

/// `π*(y|x) ∝ π_ref(y|x) exp(R(x,y)/β)`, the maximizer of `J`.
pub fn optimal_policy(spec: &BanditSpec) -> TabularPolicy {
    let beta = spec.beta();
    let logits = spec
        .ref_table()
        .iter()
        .zip(spec.reward_table())
        .map(|(p, r)| p.ln() + r / beta)
        .collect();
    TabularPolicy::from_logits(spec.contexts(), spec.arms(), logits)
        .expect("reference rows have support")
}

/// `J(π*) - J(π)`.
pub fn regret(spec: &BanditSpec, policy: &TabularPolicy) -> Result<f64> {
    Ok(objective_j(spec, &optimal_policy(spec))? - objective_j(spec, policy)?)
}

/// Exact contrastive objective `L(π) = E_{ρ, μ1 × μ2}[ℓ(x, y, y'; π)]`,
/// evaluated through its contrastive-baseline form: each arm's β/2-reward
/// is contrasted with the expected β/2-reward under the other sampling
/// distribution.
pub fn exact_l(spec: &BanditSpec, policy: &TabularPolicy) -> Result<f64> {
    policy.matches(spec)?;
    let (mu1, mu2) = (spec.mu1_table(), spec.mu2_table());
    let half = spec.beta() / 2.0;
    let mut total = 0.0;
    for x in 0..spec.contexts() {
        let rho = spec.rho()[x];
        if rho <= 0.0 {
            continue;
        }
        let rewards = reg_rewards_row(spec, policy, x, half, &[mu1, mu2])?;
        let mean_under = |mu: &[f64]| -> f64 {
            rewards
                .iter()
                .enumerate()
                .filter_map(|(y, r)| r.map(|r| mu[spec.cell(x, y)] * r))
                .sum()
        };
        let (bar1, bar2) = (mean_under(mu1), mean_under(mu2));
        let mut inner = 0.0;
        for (y, r) in rewards.iter().enumerate() {
            let Some(r) = r else { continue };
            let c = spec.cell(x, y);
            let lr = log_ratio(spec, policy, x, y)?;
            inner += mu1[c] * (r - bar2) * lr + mu2[c] * (r - bar1) * lr;
        }
        total += rho * inner;
    }
    Ok(total)
}

/// `∇J = E_{ρ,π}[(R_β^π - b(x)) ∇ln π]` with a per-context baseline `b`.
/// Any baseline gives the same vector, since the score has zero mean.
pub fn exact_grad_j_with_baseline(
    spec: &BanditSpec,
    policy: &TabularPolicy,
    baseline: &[f64],
) -> Result<GradientEstimate> {
    policy.matches(spec)?;
    if baseline.len() != spec.contexts() {
        return Err(Error::Shape {
            expected: spec.contexts(),
            got: baseline.len(),
        });
    }
    let probs = policy.probs();
    let mut grad = GradientEstimate::zeros(spec.cells());
    for x in 0..spec.contexts() {
        let rho = spec.rho()[x];
        if rho <= 0.0 {
            continue;
        }
        let rewards = reg_rewards_row(spec, policy, x, spec.beta(), &[&probs])?;
        for (y, r) in rewards.iter().enumerate() {
            if let Some(r) = r {
                let w = rho * probs[spec.cell(x, y)] * (r - baseline[x]);
                grad.add_score(policy, x, y, w);
            }
        }
    }
    Ok(grad)
}

pub fn exact_grad_j(spec: &BanditSpec, policy: &TabularPolicy) -> Result<GradientEstimate> {
    exact_grad_j_with_baseline(spec, policy, &vec![0.0; spec.contexts()])
}

/// Per-context value `E_{y∼π}[R_β^π(x,y)]`, a convenient baseline.
pub fn value_baseline(spec: &BanditSpec, policy: &TabularPolicy) -> Result<Vec<f64>> {
    policy.matches(spec)?;
    let probs = policy.probs();
    (0..spec.contexts())
        .map(|x| {
            let rewards = reg_rewards_row(spec, policy, x, spec.beta(), &[&probs])?;
            Ok(rewards
                .iter()
                .enumerate()
                .filter_map(|(y, r)| r.map(|r| probs[spec.cell(x, y)] * r))
                .sum())
        })
        .collect()
}

/// `∇L = E_{μ1}[(R_β^π - mean_{μ2} R_β^π) ∇ln π] + E_{μ2}[(R_β^π - mean_{μ1} R_β^π) ∇ln π]`.
pub fn exact_grad_l(spec: &BanditSpec, policy: &TabularPolicy) -> Result<GradientEstimate> {
    policy.matches(spec)?;
    let (mu1, mu2) = (spec.mu1_table(), spec.mu2_table());
    let mut grad = GradientEstimate::zeros(spec.cells());
    for x in 0..spec.contexts() {
        let rho = spec.rho()[x];
        if rho <= 0.0 {
            continue;
        }
        let rewards = reg_rewards_row(spec, policy, x, spec.beta(), &[mu1, mu2])?;
        let mean_under = |mu: &[f64]| -> f64 {
            rewards
                .iter()
                .enumerate()
                .filter_map(|(y, r)| r.map(|r| mu[spec.cell(x, y)] * r))
                .sum()
        };
        let (bar1, bar2) = (mean_under(mu1), mean_under(mu2));
        for (y, r) in rewards.iter().enumerate() {
            let Some(r) = r else { continue };
            let c = spec.cell(x, y);
            let w = mu1[c] * (r - bar2) + mu2[c] * (r - bar1);
            grad.add_score(policy, x, y, rho * w);
        }
    }
    Ok(grad)
}

/// Largest per-context total-variation distance between two policies.
pub fn total_variation(p: &TabularPolicy, q: &TabularPolicy) -> f64 {
    assert_eq!(p.logits().len(), q.logits().len(), "policy shapes differ");
    (0..p.contexts())
        .map(|x| {
            0.5 * p
                .probs_row(x)
                .iter()
                .zip(q.probs_row(x))
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}
