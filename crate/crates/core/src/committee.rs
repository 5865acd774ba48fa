//! Confidence filtering and supermajority voting over per-model scores.

use serde::{Deserialize, Serialize};

pub const DEFAULT_LOW_BAND: f64 = 0.1;
pub const DEFAULT_HIGH_BAND: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictLabel {
    Vulnerable,
    NonVulnerable,
    Unknown,
}

impl VerdictLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictLabel::Vulnerable => "vulnerable",
            VerdictLabel::NonVulnerable => "non_vulnerable",
            VerdictLabel::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: VerdictLabel,
    pub votes_for_1: usize,
    pub votes_for_0: usize,
    pub discarded: usize,
}

/// What the two-thirds threshold is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    /// `ceil(2M/3)` of all `M` models, so 80 of 120.
    #[default]
    Absolute,
    /// `ceil(2K/3)` of the `K` models that survived the confidence filter.
    Surviving,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Committee {
    pub low_band: f64,
    pub high_band: f64,
    pub threshold: Threshold,
}

impl Default for Committee {
    fn default() -> Self {
        Committee { low_band: DEFAULT_LOW_BAND, high_band: DEFAULT_HIGH_BAND, threshold: Threshold::Absolute }
    }
}

/// `ceil(2m/3)`.
pub fn supermajority(m: usize) -> usize {
    (2 * m).div_ceil(3)
}

impl Committee {
    pub fn is_valid(&self) -> bool {
        0.0 < self.low_band && self.low_band < self.high_band && self.high_band < 1.0
    }

    /// Scores strictly inside `(low_band, high_band)` are discarded; the
    /// boundaries themselves vote.
    pub fn classify(&self, scores: &[f64]) -> Verdict {
        let mut ones = 0;
        let mut zeros = 0;
        let mut discarded = 0;
        for &s in scores {
            if s >= self.high_band {
                ones += 1;
            } else if s <= self.low_band {
                zeros += 1;
            } else {
                discarded += 1;
            }
        }
        let needed = match self.threshold {
            Threshold::Absolute => supermajority(scores.len()),
            Threshold::Surviving => supermajority(ones + zeros),
        };
        let label = if needed > 0 && ones >= needed {
            VerdictLabel::Vulnerable
        } else if needed > 0 && zeros >= needed {
            VerdictLabel::NonVulnerable
        } else {
            VerdictLabel::Unknown
        };
        Verdict { label, votes_for_1: ones, votes_for_0: zeros, discarded }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(groups: &[(usize, f64)]) -> Vec<f64> {
        groups.iter().flat_map(|&(n, s)| std::iter::repeat_n(s, n)).collect()
    }

    #[test]
    fn threshold_examples() {
        let c = Committee::default();
        assert_eq!(supermajority(120), 80);
        let v = c.classify(&scores(&[(120, 0.95)]));
        assert_eq!((v.label, v.votes_for_1), (VerdictLabel::Vulnerable, 120));
        let v = c.classify(&scores(&[(50, 0.95), (70, 0.5)]));
        assert_eq!(v, Verdict { label: VerdictLabel::Unknown, votes_for_1: 50, votes_for_0: 0, discarded: 70 });
        let v = c.classify(&scores(&[(85, 0.05), (35, 0.95)]));
        assert_eq!(v.label, VerdictLabel::NonVulnerable);
        assert_eq!(v.votes_for_0, 85);
    }

    #[test]
    fn boundaries_vote() {
        let c = Committee::default();
        assert_eq!(c.classify(&[0.9]).votes_for_1, 1);
        assert_eq!(c.classify(&[0.1]).votes_for_0, 1);
        assert_eq!(c.classify(&[0.8999999]).discarded, 1);
    }

    #[test]
    fn surviving_mode_counts_only_confident_models() {
        let c = Committee { threshold: Threshold::Surviving, ..Default::default() };
        let v = c.classify(&scores(&[(50, 0.95), (70, 0.5)]));
        assert_eq!(v.label, VerdictLabel::Vulnerable);
        assert_eq!(c.classify(&scores(&[(5, 0.5)])).label, VerdictLabel::Unknown);
    }

    #[test]
    fn verdict_json_shape() {
        let v = Committee::default().classify(&[0.95, 0.95, 0.2]);
        assert_eq!(
            serde_json::to_string(&v).unwrap(),
            r#"{"label":"vulnerable","votes_for_1":2,"votes_for_0":0,"discarded":1}"#
        );
    }
}
