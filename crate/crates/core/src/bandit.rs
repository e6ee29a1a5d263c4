//! The tabular contextual bandit: contexts, arms, rewards, the reference
//! policy, the two data-sampling distributions and the KL temperature.
//!
//! Every table is stored flat in row-major order, one row per context, so
//! cell `(x, y)` lives at `x * arms + y`. Policies and gradients share this
//! layout.
//!
//! On disk a spec is a small TOML document:
//!
//! ```toml
//! contexts = 1
//! arms = 3
//! beta = 0.5
//! reward = [2.5, 2.0, 1.0]
//! ref_policy = [0.3333333333333333, 0.3333333333333333, 0.3333333333333333]
//! mu1 = [0.1, 0.2, 0.7]
//! mu2 = [0.05, 0.05, 0.9]
//! # rho = [1.0]            optional, uniform when absent
//! ```
//!
//! `ref_policy` may also be omitted, in which case it is uniform.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-12;

/// Plain-data mirror of [`BanditSpec`] used for (de)serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub contexts: usize,
    pub arms: usize,
    pub beta: f64,
    pub reward: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_policy: Option<Vec<f64>>,
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditSpec {
    contexts: usize,
    arms: usize,
    rho: Vec<f64>,
    reward: Vec<f64>,
    ref_policy: Vec<f64>,
    mu1: Vec<f64>,
    mu2: Vec<f64>,
    beta: f64,
}

fn check_distribution(name: &str, row: &[f64]) -> Result<()> {
    if let Some(bad) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::InvalidSpec(format!(
            "{name} has an invalid probability {bad}"
        )));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidSpec(format!(
            "{name} sums to {total}, not 1"
        )));
    }
    Ok(())
}

impl BanditSpec {
    /// Builds a spec from its tables. Checks shapes, stochasticity and
    /// `beta > 0`; the support condition is checked separately by
    /// [`BanditSpec::check_support`] so that callers can report it as a
    /// precondition rather than a parse failure.
    pub fn from_file(file: SpecFile) -> Result<Self> {
        let SpecFile {
            contexts,
            arms,
            beta,
            reward,
            ref_policy,
            mu1,
            mu2,
            rho,
        } = file;
        if contexts == 0 || arms == 0 {
            return Err(Error::InvalidSpec(
                "need at least one context and one arm".into(),
            ));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidSpec(format!("beta must be positive, got {beta}")));
        }
        let cells = contexts * arms;
        let ref_policy = ref_policy.unwrap_or_else(|| vec![1.0 / arms as f64; cells]);
        let rho = rho.unwrap_or_else(|| vec![1.0 / contexts as f64; contexts]);
        for (name, table) in [
            ("reward", &reward),
            ("ref_policy", &ref_policy),
            ("mu1", &mu1),
            ("mu2", &mu2),
        ] {
            if table.len() != cells {
                return Err(Error::InvalidSpec(format!(
                    "{name} has {} entries, expected {cells}",
                    table.len()
                )));
            }
        }
        if rho.len() != contexts {
            return Err(Error::InvalidSpec(format!(
                "rho has {} entries, expected {contexts}",
                rho.len()
            )));
        }
        if let Some(r) = reward.iter().find(|r| !r.is_finite()) {
            return Err(Error::InvalidSpec(format!("non-finite reward {r}")));
        }
        check_distribution("rho", &rho)?;
        for x in 0..contexts {
            let row = x * arms..(x + 1) * arms;
            check_distribution(&format!("ref_policy[{x}]"), &ref_policy[row.clone()])?;
            check_distribution(&format!("mu1[{x}]"), &mu1[row.clone()])?;
            check_distribution(&format!("mu2[{x}]"), &mu2[row])?;
        }
        Ok(Self {
            contexts,
            arms,
            rho,
            reward,
            ref_policy,
            mu1,
            mu2,
            beta,
        })
    }

    pub fn to_file(&self) -> SpecFile {
        SpecFile {
            contexts: self.contexts,
            arms: self.arms,
            beta: self.beta,
            reward: self.reward.clone(),
            ref_policy: Some(self.ref_policy.clone()),
            mu1: self.mu1.clone(),
            mu2: self.mu2.clone(),
            rho: Some(self.rho.clone()),
        }
    }

    /// Three arms with rewards (2.5, 2, 1), uniform reference policy,
    /// sampling distributions (0.1, 0.2, 0.7) and (0.05, 0.05, 0.9), β = 0.5.
    pub fn toy_three_arm() -> Self {
        Self::from_file(SpecFile {
            contexts: 1,
            arms: 3,
            beta: 0.5,
            reward: vec![2.5, 2.0, 1.0],
            ref_policy: None,
            mu1: vec![0.1, 0.2, 0.7],
            mu2: vec![0.05, 0.05, 0.9],
            rho: None,
        })
        .expect("built-in spec is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SpecFile = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
                .unwrap_or(0);
            Error::parse(line, e.message().to_string())
        })?;
        Self::from_file(file)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.to_file()).expect("spec tables serialize")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    /// Checks that, for every context with positive mass, `ref_policy`,
    /// `mu1` and `mu2` put positive probability on exactly the same arms.
    pub fn check_support(&self) -> Result<()> {
        for x in 0..self.contexts {
            if self.rho[x] <= 0.0 {
                continue;
            }
            for y in 0..self.arms {
                let c = self.cell(x, y);
                let r = self.ref_policy[c] > 0.0;
                let a = self.mu1[c] > 0.0;
                let b = self.mu2[c] > 0.0;
                if r != a || r != b {
                    return Err(Error::Support {
                        context: x,
                        arm: y,
                        reason: format!(
                            "ref_policy={}, mu1={}, mu2={} do not share support",
                            self.ref_policy[c], self.mu1[c], self.mu2[c]
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        let mut file = self.to_file();
        file.beta = beta;
        Self::from_file(file)
    }

    pub fn with_sampling(&self, mu1: Vec<f64>, mu2: Vec<f64>) -> Result<Self> {
        let mut file = self.to_file();
        file.mu1 = mu1;
        file.mu2 = mu2;
        Self::from_file(file)
    }

    pub fn with_reward(&self, reward: Vec<f64>) -> Result<Self> {
        let mut file = self.to_file();
        file.reward = reward;
        Self::from_file(file)
    }

    /// Short hash of the tables that drive dataset generation
    /// (shape, rho, reward, mu1, mu2). β and the reference policy are left
    /// out so one dataset can serve a temperature sweep.
    pub fn fingerprint(&self) -> String {
        let mut canon = format!("contexts={}\narms={}\n", self.contexts, self.arms);
        for (name, table) in [
            ("rho", &self.rho),
            ("reward", &self.reward),
            ("mu1", &self.mu1),
            ("mu2", &self.mu2),
        ] {
            canon.push_str(name);
            canon.push('=');
            for v in table.iter() {
                let _ = write!(canon, "{v:.16e},");
            }
            canon.push('\n');
        }
        let digest = Sha256::digest(canon.as_bytes());
        digest[..8].iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    #[inline]
    pub fn contexts(&self) -> usize {
        self.contexts
    }

    #[inline]
    pub fn arms(&self) -> usize {
        self.arms
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.contexts * self.arms
    }

    #[inline]
    pub fn beta(&self) -> f64 {
        self.beta
    }

    #[inline]
    pub fn cell(&self, x: usize, y: usize) -> usize {
        x * self.arms + y
    }

    pub fn check_index(&self, x: usize, y: usize) -> Result<usize> {
        if x < self.contexts && y < self.arms {
            Ok(self.cell(x, y))
        } else {
            Err(Error::Index { context: x, arm: y })
        }
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn reward(&self, x: usize, y: usize) -> f64 {
        self.reward[self.cell(x, y)]
    }

    pub fn ref_prob(&self, x: usize, y: usize) -> f64 {
        self.ref_policy[self.cell(x, y)]
    }

    pub fn reward_table(&self) -> &[f64] {
        &self.reward
    }

    pub fn ref_table(&self) -> &[f64] {
        &self.ref_policy
    }

    pub fn mu1_table(&self) -> &[f64] {
        &self.mu1
    }

    pub fn mu2_table(&self) -> &[f64] {
        &self.mu2
    }

    pub fn row<'a>(&self, table: &'a [f64], x: usize) -> &'a [f64] {
        &table[x * self.arms..(x + 1) * self.arms]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let spec = BanditSpec::toy_three_arm();
        let back = BanditSpec::from_toml_str(&spec.to_toml_string()).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn optional_tables_default_to_uniform() {
        let spec = BanditSpec::from_toml_str(
            "contexts = 2\narms = 2\nbeta = 1.0\nreward = [1, 0, 0, 1]\n\
             mu1 = [0.5, 0.5, 0.5, 0.5]\nmu2 = [0.5, 0.5, 0.5, 0.5]\n",
        )
        .unwrap();
        assert_eq!(spec.rho(), &[0.5, 0.5]);
        assert_eq!(spec.ref_table(), &[0.5; 4]);
    }

    #[test]
    fn rejects_bad_tables() {
        let mut f = BanditSpec::toy_three_arm().to_file();
        f.mu1 = vec![0.5, 0.5, 0.5];
        assert!(matches!(BanditSpec::from_file(f), Err(Error::InvalidSpec(_))));

        let mut f = BanditSpec::toy_three_arm().to_file();
        f.beta = 0.0;
        assert!(BanditSpec::from_file(f).is_err());

        let mut f = BanditSpec::toy_three_arm().to_file();
        f.reward.pop();
        assert!(BanditSpec::from_file(f).is_err());

        let mut f = BanditSpec::toy_three_arm().to_file();
        f.mu2 = vec![1.2, -0.1, -0.1];
        assert!(BanditSpec::from_file(f).is_err());
    }

    #[test]
    fn support_mismatch_detected() {
        let spec = BanditSpec::toy_three_arm()
            .with_sampling(vec![0.0, 0.3, 0.7], vec![0.05, 0.05, 0.9])
            .unwrap();
        assert!(matches!(
            spec.check_support(),
            Err(Error::Support { context: 0, arm: 0, .. })
        ));
        assert!(BanditSpec::toy_three_arm().check_support().is_ok());
    }

    #[test]
    fn parse_error_carries_line() {
        let err = BanditSpec::from_toml_str("contexts = 1\narms = 3\nbeta = =\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn fingerprint_ignores_beta() {
        let a = BanditSpec::toy_three_arm();
        let b = a.with_beta(2.0).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 16);
        let c = a.with_reward(vec![2.5, 2.0, 1.5]).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }
}
