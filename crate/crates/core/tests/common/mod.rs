//! Independent reference computations for the integration tests. Nothing
//! here calls the library's math; inputs are plain vectors.

#![allow(dead_code)]

pub const REWARD: [f64; 3] = [2.5, 2.0, 1.0];
pub const MU1: [f64; 3] = [0.1, 0.2, 0.7];
pub const MU2: [f64; 3] = [0.05, 0.05, 0.9];
pub const BETA: f64 = 0.5;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Single-context objective `Σ π (R - β ln(π/π_ref))`.
pub fn objective(probs: &[f64], reward: &[f64], reference: &[f64], beta: f64) -> f64 {
    probs
        .iter()
        .zip(reward)
        .zip(reference)
        .map(|((p, r), q)| p * (r - beta * (p / q).ln()))
        .sum()
}

/// Closed-form logit gradient of [`objective`]: `π_a (A_a - Σ_b π_b A_b)`
/// with `A = R - β ln(π/π_ref)`.
pub fn objective_grad(probs: &[f64], reward: &[f64], reference: &[f64], beta: f64) -> Vec<f64> {
    let a: Vec<f64> = probs
        .iter()
        .zip(reward)
        .zip(reference)
        .map(|((p, r), q)| r - beta * (p / q).ln())
        .collect();
    let mean: f64 = probs.iter().zip(&a).map(|(p, v)| p * v).sum();
    probs.iter().zip(&a).map(|(p, v)| p * (v - mean)).collect()
}

/// `π* ∝ π_ref exp(R/β)`.
pub fn optimum(reward: &[f64], reference: &[f64], beta: f64) -> Vec<f64> {
    let w: Vec<f64> = reward
        .iter()
        .zip(reference)
        .map(|(r, q)| q * (r / beta).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Pair-loss gradient for one context written out directly:
/// `(A_y - A_y') (e_y - π) + (A_y' - A_y) (e_y' - π)` with full-β `A`.
pub fn pair_grad(
    probs: &[f64],
    reward: &[f64],
    reference: &[f64],
    beta: f64,
    y: usize,
    yp: usize,
) -> Vec<f64> {
    let a = |k: usize| reward[k] - beta * (probs[k] / reference[k]).ln();
    let d = a(y) - a(yp);
    (0..probs.len())
        .map(|i| {
            let ey = if i == y { 1.0 } else { 0.0 };
            let eyp = if i == yp { 1.0 } else { 0.0 };
            d * (ey - probs[i]) - d * (eyp - probs[i])
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Maximum-likelihood Bradley-Terry rewards (arm 0 pinned at zero) from
/// win counts `wins[a][b]` = times `a` beat `b`, by Newton's method.
pub fn bt_mle(wins: &[Vec<f64>]) -> Vec<f64> {
    let n = wins.len();
    let mut r = vec![0.0f64; n];
    for _ in 0..200 {
        let mut g = vec![0.0; n];
        let mut h = vec![vec![0.0; n]; n];
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let s = 1.0 / (1.0 + (-(r[a] - r[b])).exp());
                // log-likelihood of a beating b, wins[a][b] times
                g[a] += wins[a][b] * (1.0 - s);
                g[b] -= wins[a][b] * (1.0 - s);
                let w = wins[a][b] * s * (1.0 - s);
                h[a][a] -= w;
                h[b][b] -= w;
                h[a][b] += w;
                h[b][a] += w;
            }
        }
        // solve on arms 1..n with arm 0 fixed
        let m = n - 1;
        let mut aug: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let mut row: Vec<f64> = (0..m).map(|j| -h[i + 1][j + 1]).collect();
                row.push(g[i + 1]);
                row
            })
            .collect();
        for c in 0..m {
            let piv = (c..m)
                .max_by(|&i, &j| aug[i][c].abs().total_cmp(&aug[j][c].abs()))
                .unwrap();
            aug.swap(c, piv);
            for i in 0..m {
                if i != c {
                    let f = aug[i][c] / aug[c][c];
                    for j in c..=m {
                        aug[i][j] -= f * aug[c][j];
                    }
                }
            }
        }
        let mut step = 0.0f64;
        for i in 0..m {
            let d = aug[i][m] / aug[i][i];
            r[i + 1] += d;
            step = step.max(d.abs());
        }
        if step < 1e-14 {
            break;
        }
    }
    r
}

/// Deterministic uniform stream for test inputs (SplitMix64).
pub struct Stream(pub u64);

impl Stream {
    pub fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn logits(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| 6.0 * self.next() - 3.0).collect()
    }
}
