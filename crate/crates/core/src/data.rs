//! Offline pair datasets: sampling from `ρ × μ1 × μ2`, preference labels,
//! and the line-oriented file format.
//!
//! File layout:
//!
//! ```text
//! #copg-dataset v1 seed=<int> spec=<fingerprint>
//! x,y,y_prime,r_y,r_yprime,pref
//! ...
//! ```
//!
//! Indices are 0-based, rewards use 17 significant digits and `pref` is
//! `1` (y preferred), `0` (y' preferred) or `-` (unlabeled).

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::bandit::BanditSpec;
use crate::error::{Error, Result};
use crate::losses::{sigmoid, ScoredPair};
use crate::policy::fmt_f64;
use crate::rng::SampleRng;

const MAGIC: &str = "#copg-dataset v1";

#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pub pairs: Vec<ScoredPair>,
    pub spec_fingerprint: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    None,
    /// Stochastic Bradley-Terry labels.
    Bt,
    /// Deterministic labels from the recorded rewards.
    Rank,
}

impl std::str::FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "bt" => Ok(Self::Bt),
            "rank" => Ok(Self::Rank),
            other => Err(Error::Config(format!("unknown label mode `{other}`"))),
        }
    }
}

fn draw_pairs(spec: &BanditSpec, n: usize, rng: &mut SampleRng) -> Vec<ScoredPair> {
    (0..n)
        .map(|_| {
            let x = rng.categorical(spec.rho());
            let y = rng.categorical(spec.row(spec.mu1_table(), x));
            let y_prime = rng.categorical(spec.row(spec.mu2_table(), x));
            ScoredPair {
                x,
                y,
                y_prime,
                r_y: spec.reward(x, y),
                r_yprime: spec.reward(x, y_prime),
                pref: None,
            }
        })
        .collect()
}

/// `n` pairs with `x ∼ ρ`, `y ∼ μ1(·|x)`, `y' ∼ μ2(·|x)`, scored by the
/// spec's reward. Each pair consumes three uniforms in the order x, y, y'.
pub fn sample_pair_dataset(spec: &BanditSpec, n: usize, seed: u64) -> Result<PairDataset> {
    generate_dataset(spec, n, seed, LabelMode::None)
}

/// Samples pairs as [`sample_pair_dataset`] does, then labels them. Bradley-
/// Terry labels continue the same stream, one uniform per pair, so the
/// pairs themselves do not depend on the label mode.
pub fn generate_dataset(
    spec: &BanditSpec,
    n: usize,
    seed: u64,
    labels: LabelMode,
) -> Result<PairDataset> {
    if n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    let mut rng = SampleRng::new(seed);
    let mut pairs = draw_pairs(spec, n, &mut rng);
    match labels {
        LabelMode::None => {}
        LabelMode::Bt => {
            for p in &mut pairs {
                *p = bt_label(p, &mut rng);
            }
        }
        LabelMode::Rank => {
            for p in &mut pairs {
                *p = rank_by_reward(p);
            }
        }
    }
    Ok(PairDataset {
        pairs,
        spec_fingerprint: spec.fingerprint(),
        seed,
    })
}

/// Labels `y` as preferred with probability `σ(r_y - r_y')`.
pub fn bt_label(pair: &ScoredPair, rng: &mut SampleRng) -> ScoredPair {
    let p = sigmoid(pair.r_y - pair.r_yprime);
    ScoredPair {
        pref: Some(rng.bernoulli(p)),
        ..*pair
    }
}

/// Prefers the arm with the larger recorded reward; ties go to `y`.
pub fn rank_by_reward(pair: &ScoredPair) -> ScoredPair {
    ScoredPair {
        pref: Some(pair.r_y >= pair.r_yprime),
        ..*pair
    }
}

impl PairDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.pairs.iter().all(|p| p.pref.is_some())
    }

    /// Checks indices against `spec`. A fingerprint mismatch is an error
    /// unless `allow_mismatch` is set, in which case it is logged. With
    /// matching fingerprints the recorded rewards must equal the spec's.
    pub fn check_against(&self, spec: &BanditSpec, allow_mismatch: bool) -> Result<()> {
        let fp = spec.fingerprint();
        let same = fp == self.spec_fingerprint;
        if !same {
            let msg = format!(
                "dataset fingerprint {} does not match spec {}",
                self.spec_fingerprint, fp
            );
            if allow_mismatch {
                log::warn!("{msg}");
            } else {
                return Err(Error::Config(msg));
            }
        }
        for (i, p) in self.pairs.iter().enumerate() {
            spec.check_index(p.x, p.y)?;
            spec.check_index(p.x, p.y_prime)?;
            if same && (p.r_y != spec.reward(p.x, p.y) || p.r_yprime != spec.reward(p.x, p.y_prime))
            {
                return Err(Error::Config(format!(
                    "pair {i} rewards differ from the spec's reward table"
                )));
            }
        }
        Ok(())
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{MAGIC} seed={} spec={}", self.seed, self.spec_fingerprint)?;
        for p in &self.pairs {
            let pref = match p.pref {
                Some(true) => "1",
                Some(false) => "0",
                None => "-",
            };
            writeln!(
                out,
                "{},{},{},{},{},{}",
                p.x,
                p.y,
                p.y_prime,
                fmt_f64(p.r_y),
                fmt_f64(p.r_yprime),
                pref
            )?;
        }
        Ok(())
    }

    pub fn read_from(reader: impl Read) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines.next().ok_or_else(|| Error::parse(1, "empty file"))??;
        let rest = header
            .strip_prefix(MAGIC)
            .ok_or_else(|| Error::parse(1, format!("expected `{MAGIC}` header")))?;
        let mut seed = None;
        let mut fingerprint = None;
        for field in rest.split_whitespace() {
            match field.split_once('=') {
                Some(("seed", v)) => {
                    seed = Some(v.parse::<u64>().map_err(|e| Error::parse(1, e.to_string()))?)
                }
                Some(("spec", v)) => fingerprint = Some(v.to_string()),
                _ => return Err(Error::parse(1, format!("unknown header field `{field}`"))),
            }
        }
        let (Some(seed), Some(spec_fingerprint)) = (seed, fingerprint) else {
            return Err(Error::parse(1, "header needs seed= and spec="));
        };
        let mut pairs = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            pairs.push(parse_record(&line).map_err(|msg| Error::parse(i + 2, msg))?);
        }
        if pairs.is_empty() {
            log::warn!("dataset (seed {seed}) has no pairs");
        }
        Ok(Self {
            pairs,
            spec_fingerprint,
            seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

fn parse_record(line: &str) -> std::result::Result<ScoredPair, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 6 {
        return Err(format!("expected 6 fields, found {}", fields.len()));
    }
    let idx = |s: &str, name: &str| s.parse::<usize>().map_err(|e| format!("{name}: {e}"));
    let num = |s: &str, name: &str| s.parse::<f64>().map_err(|e| format!("{name}: {e}"));
    let pref = match fields[5] {
        "1" => Some(true),
        "0" => Some(false),
        "-" => None,
        other => return Err(format!("pref must be 1, 0 or -, found `{other}`")),
    };
    Ok(ScoredPair {
        x: idx(fields[0], "x")?,
        y: idx(fields[1], "y")?,
        y_prime: idx(fields[2], "y_prime")?,
        r_y: num(fields[3], "r_y")?,
        r_yprime: num(fields[4], "r_yprime")?,
        pref,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn to_bytes(ds: &PairDataset) -> Vec<u8> {
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        buf
    }

    #[test]
    fn second_slot_frequency() {
        let spec = BanditSpec::toy_three_arm();
        let ds = sample_pair_dataset(&spec, 10_000, 0).unwrap();
        let freq = ds.pairs.iter().filter(|p| p.y_prime == 2).count() as f64 / 1e4;
        assert!((freq - 0.9).abs() < 0.01, "{freq}");
    }

    #[test]
    fn degenerate_first_slot() {
        let spec = BanditSpec::toy_three_arm()
            .with_sampling(vec![1.0, 0.0, 0.0], vec![0.05, 0.05, 0.9])
            .unwrap();
        let ds = sample_pair_dataset(&spec, 500, 3).unwrap();
        assert!(ds.pairs.iter().all(|p| p.y == 0 && p.r_y == 2.5));
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = BanditSpec::toy_three_arm();
        let a = generate_dataset(&spec, 1000, 42, LabelMode::Bt).unwrap();
        let b = generate_dataset(&spec, 1000, 42, LabelMode::Bt).unwrap();
        assert_eq!(to_bytes(&a), to_bytes(&b));
        let c = generate_dataset(&spec, 1000, 43, LabelMode::Bt).unwrap();
        assert_ne!(to_bytes(&a), to_bytes(&c));
    }

    #[test]
    fn labels_do_not_move_pairs() {
        let spec = BanditSpec::toy_three_arm();
        let plain = generate_dataset(&spec, 300, 5, LabelMode::None).unwrap();
        let bt = generate_dataset(&spec, 300, 5, LabelMode::Bt).unwrap();
        for (a, b) in plain.pairs.iter().zip(&bt.pairs) {
            assert_eq!(*a, ScoredPair { pref: None, ..*b });
        }
        assert!(bt.is_labeled() && !plain.is_labeled());
    }

    #[test]
    fn zero_pairs_rejected_at_generation() {
        assert!(sample_pair_dataset(&BanditSpec::toy_three_arm(), 0, 1).is_err());
    }

    #[test]
    fn bt_probability() {
        let pair = ScoredPair {
            x: 0,
            y: 0,
            y_prime: 1,
            r_y: 2.5,
            r_yprime: 2.0,
            pref: None,
        };
        let mut rng = SampleRng::new(11);
        let n = 100_000;
        let wins = (0..n).filter(|_| bt_label(&pair, &mut rng).pref == Some(true)).count();
        let freq = wins as f64 / n as f64;
        assert!((freq - sigmoid(0.5)).abs() < 0.005, "{freq}");
        assert!((sigmoid(0.5) - 0.6225).abs() < 1e-4);

        let labeled = bt_label(&pair, &mut rng);
        assert_eq!(ScoredPair { pref: None, ..labeled }, pair);

        let even = ScoredPair { r_yprime: 2.5, ..pair };
        assert_eq!(sigmoid(even.r_y - even.r_yprime), 0.5);

        let lopsided = ScoredPair { r_y: 21.0, r_yprime: 1.0, ..pair };
        let wins = (0..10_000)
            .filter(|_| bt_label(&lopsided, &mut rng).pref == Some(true))
            .count();
        assert!(wins as f64 / 1e4 > 0.999);
    }

    #[test]
    fn ranking() {
        let p = ScoredPair {
            x: 0,
            y: 0,
            y_prime: 2,
            r_y: 2.5,
            r_yprime: 1.0,
            pref: None,
        };
        assert_eq!(rank_by_reward(&p).pref, Some(true));
        assert_eq!(rank_by_reward(&p.swapped()).pref, Some(false));
        let tie = ScoredPair { r_yprime: 2.5, ..p };
        assert_eq!(rank_by_reward(&tie).pref, Some(true));
        let once = rank_by_reward(&p.swapped());
        assert_eq!(rank_by_reward(&once), once);
    }

    #[test]
    fn file_round_trip() {
        let spec = BanditSpec::toy_three_arm();
        let ds = generate_dataset(&spec, 10_000, 9, LabelMode::Bt).unwrap();
        let back = PairDataset::read_from(to_bytes(&ds).as_slice()).unwrap();
        assert_eq!(ds, back);
        back.check_against(&spec, false).unwrap();
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let spec = BanditSpec::toy_three_arm();
        let ds = sample_pair_dataset(&spec, 10, 9).unwrap();
        let bytes = to_bytes(&ds);
        let cut = &bytes[..bytes.len() - 7];
        let err = PairDataset::read_from(cut).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 11, .. }), "{err:?}");
        assert!(matches!(
            PairDataset::read_from(&b""[..]),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn empty_dataset_loads() {
        let ds = PairDataset::read_from(&b"#copg-dataset v1 seed=3 spec=abcd\n"[..]).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.seed, 3);
    }

    #[test]
    fn fingerprint_mismatch() {
        let spec = BanditSpec::toy_three_arm();
        let ds = sample_pair_dataset(&spec, 10, 9).unwrap();
        let other = spec.with_reward(vec![1.0, 1.0, 1.0]).unwrap();
        assert!(ds.check_against(&other, false).is_err());
        assert!(ds.check_against(&other, true).is_ok());
    }
}
