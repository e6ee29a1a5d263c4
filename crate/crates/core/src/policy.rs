//! Softmax policies over a tabular bandit, flat gradient vectors and the
//! temperature-scaled logit reparametrization.

use std::io::{BufRead, BufReader, Read};

use crate::bandit::BanditSpec;
use crate::error::{Error, Result};

/// One logit per `(context, arm)` cell; `π(·|x)` is the softmax of row `x`.
///
/// A logit of `-inf` masks an arm out of its context (probability zero),
/// which is how the reference policy is represented when `π_ref` has
/// holes in its support.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    contexts: usize,
    arms: usize,
    logits: Vec<f64>,
    log_probs: Vec<f64>,
}

fn log_softmax_row(logits: &[f64], out: &mut [f64]) -> Result<()> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite(format!(
            "logit row has no finite maximum ({max})"
        )));
    }
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let lse = max + sum.ln();
    for (o, l) in out.iter_mut().zip(logits) {
        *o = l - lse;
    }
    Ok(())
}

impl TabularPolicy {
    pub fn from_logits(contexts: usize, arms: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != contexts * arms {
            return Err(Error::Shape {
                expected: contexts * arms,
                got: logits.len(),
            });
        }
        if logits.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(Error::NonFinite("logits contain NaN or +inf".into()));
        }
        let mut log_probs = vec![0.0; logits.len()];
        for x in 0..contexts {
            let row = x * arms..(x + 1) * arms;
            log_softmax_row(&logits[row.clone()], &mut log_probs[row])?;
        }
        Ok(Self {
            contexts,
            arms,
            logits,
            log_probs,
        })
    }

    /// Policy with logits `ln p`; rows of `probs` need not be normalized.
    pub fn from_probs(contexts: usize, arms: usize, probs: &[f64]) -> Result<Self> {
        Self::from_logits(contexts, arms, probs.iter().map(|p| p.ln()).collect())
    }

    /// The reference policy, logits `ln π_ref`.
    pub fn reference(spec: &BanditSpec) -> Self {
        Self::from_probs(spec.contexts(), spec.arms(), spec.ref_table())
            .expect("reference rows are distributions")
    }

    pub fn uniform(contexts: usize, arms: usize) -> Self {
        Self::from_logits(contexts, arms, vec![0.0; contexts * arms]).expect("zero logits")
    }

    pub fn contexts(&self) -> usize {
        self.contexts
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    #[inline]
    pub fn log_prob(&self, x: usize, y: usize) -> f64 {
        self.log_probs[x * self.arms + y]
    }

    #[inline]
    pub fn prob(&self, x: usize, y: usize) -> f64 {
        self.log_prob(x, y).exp()
    }

    pub fn probs_row(&self, x: usize) -> Vec<f64> {
        self.log_probs[x * self.arms..(x + 1) * self.arms]
            .iter()
            .map(|l| l.exp())
            .collect()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    pub fn with_logits(&self, logits: Vec<f64>) -> Result<Self> {
        Self::from_logits(self.contexts, self.arms, logits)
    }

    /// Applies `f` to the logits in place and refreshes the cached
    /// log-probabilities.
    pub fn update_logits<F>(&mut self, f: F) -> Result<()>
    where
        F: FnOnce(&mut [f64]) -> Result<()>,
    {
        let mut logits = self.logits.clone();
        f(&mut logits)?;
        *self = Self::from_logits(self.contexts, self.arms, logits)?;
        Ok(())
    }

    /// Same policy, logits of context `x` shifted by `c`.
    pub fn shifted(&self, x: usize, c: f64) -> Self {
        let mut logits = self.logits.clone();
        for l in &mut logits[x * self.arms..(x + 1) * self.arms] {
            *l += c;
        }
        self.with_logits(logits).expect("shift keeps logits valid")
    }

    pub fn matches(&self, spec: &BanditSpec) -> Result<()> {
        if self.contexts != spec.contexts() || self.arms != spec.arms() {
            return Err(Error::Shape {
                expected: spec.cells(),
                got: self.logits.len(),
            });
        }
        Ok(())
    }

    /// Text rendering: a header line, then one comma-separated row of
    /// logits per context (17 significant digits, `-inf` for masked arms).
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "#copg-policy v1 contexts={} arms={}\n",
            self.contexts, self.arms
        );
        for x in 0..self.contexts {
            let row: Vec<String> = self.logits[x * self.arms..(x + 1) * self.arms]
                .iter()
                .map(|l| fmt_f64(*l))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_text(reader: impl Read) -> Result<Self> {
        let (contexts, arms, values) = read_table(reader, "#copg-policy v1")?;
        Self::from_logits(contexts, arms, values)
    }
}

/// Decimal rendering with 17 significant digits, which round-trips any f64.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Reads a `<magic> contexts=<n> arms=<m>` table file.
pub(crate) fn read_table(reader: impl Read, magic: &str) -> Result<(usize, usize, Vec<f64>)> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty file"))??;
    let rest = header
        .strip_prefix(magic)
        .ok_or_else(|| Error::parse(1, format!("expected header starting with `{magic}`")))?;
    let mut contexts = None;
    let mut arms = None;
    for field in rest.split_whitespace() {
        match field.split_once('=') {
            Some(("contexts", v)) => contexts = v.parse().ok(),
            Some(("arms", v)) => arms = v.parse().ok(),
            _ => return Err(Error::parse(1, format!("unknown header field `{field}`"))),
        }
    }
    let (contexts, arms): (usize, usize) = match (contexts, arms) {
        (Some(c), Some(a)) => (c, a),
        _ => return Err(Error::parse(1, "header needs contexts= and arms=")),
    };
    let mut values = Vec::with_capacity(contexts * arms);
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(lineno, e.to_string()))?;
        if row.len() != arms {
            return Err(Error::parse(
                lineno,
                format!("expected {arms} values, found {}", row.len()),
            ));
        }
        values.extend(row);
        rows += 1;
    }
    if rows != contexts {
        return Err(Error::parse(
            rows + 2,
            format!("expected {contexts} rows, found {rows}"),
        ));
    }
    Ok((contexts, arms, values))
}

/// A gradient (or any per-cell vector) laid out like [`TabularPolicy`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub values: Vec<f64>,
}

impl GradientEstimate {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn add_scaled(&mut self, other: &GradientEstimate, scale: f64) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn scaled(mut self, scale: f64) -> Self {
        for v in &mut self.values {
            *v *= scale;
        }
        self
    }

    pub fn inf_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &GradientEstimate) -> f64 {
        assert_eq!(self.len(), other.len(), "gradient layouts differ");
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Accumulates `weight · ∇_θ ln π(y|x)`. For a softmax row the score is
    /// the indicator of `y` minus the row's probabilities.
    pub fn add_score(&mut self, policy: &TabularPolicy, x: usize, y: usize, weight: f64) {
        let arms = policy.arms();
        let base = x * arms;
        for a in 0..arms {
            let p = policy.log_probs[base + a].exp();
            self.values[base + a] -= weight * p;
        }
        self.values[base + y] += weight;
    }
}

/// Temperature-scaled logits `V` with `β ln(π/π_ref) = V - ln Z_V` and
/// `Z_V(x) = β Σ_y π_ref(y|x) exp(V(x,y)/β)`.
///
/// `V` is only defined up to a per-context constant by the policy; the
/// constant is picked as the fixed point of the `Z_V` definition,
/// `c = β ln β / (β - 1)` (limit 1 at β = 1), so both relations hold.
#[derive(Debug, Clone, PartialEq)]
pub struct ReparamLogits {
    pub v: Vec<f64>,
    pub log_z: Vec<f64>,
}

impl ReparamLogits {
    pub fn from_policy(spec: &BanditSpec, policy: &TabularPolicy) -> Result<Self> {
        policy.matches(spec)?;
        let beta = spec.beta();
        let d = beta - 1.0;
        let ratio = if d.abs() < 1e-8 {
            1.0 - d / 2.0
        } else {
            d.ln_1p() / d
        };
        let c = beta * ratio;
        let mut v = vec![f64::NEG_INFINITY; spec.cells()];
        for x in 0..spec.contexts() {
            for y in 0..spec.arms() {
                let r = spec.ref_prob(x, y);
                let p = policy.log_prob(x, y);
                if r > 0.0 {
                    v[spec.cell(x, y)] = beta * (p - r.ln()) + c;
                } else if p > f64::NEG_INFINITY {
                    return Err(Error::Support {
                        context: x,
                        arm: y,
                        reason: "policy has mass where the reference has none".into(),
                    });
                }
            }
        }
        Ok(Self {
            v,
            log_z: vec![c; spec.contexts()],
        })
    }

    /// `ln Z_V(x)` recomputed from `V` by its defining sum.
    pub fn log_partition(&self, spec: &BanditSpec, x: usize) -> f64 {
        let beta = spec.beta();
        let s: f64 = (0..spec.arms())
            .filter(|&y| spec.ref_prob(x, y) > 0.0)
            .map(|y| spec.ref_prob(x, y) * (self.v[spec.cell(x, y)] / beta).exp())
            .sum();
        (beta * s).ln()
    }
}
