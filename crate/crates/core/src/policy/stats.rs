use serde::{Deserialize, Serialize};

/// Two-sided 90% normal quantile.
pub const Z_90: f64 = 1.6449;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatsMode {
    /// Binary outcomes, Wilson score interval.
    Wilson,
    /// Fractional outcomes, mean with a normal-approximation interval.
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessStats {
    pub n: usize,
    /// Sum of outcomes (number of successes when binary).
    pub successes: f64,
    pub p_hat: f64,
    pub lo: f64,
    pub hi: f64,
    pub mode: StatsMode,
}

/// Wilson score interval for `successes` out of `n` at normal quantile `z`.
pub fn wilson_interval(successes: f64, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

impl SuccessStats {
    pub fn from_outcomes(outcomes: &[f64]) -> Self {
        let n = outcomes.len();
        let successes: f64 = outcomes.iter().sum();
        let p_hat = if n == 0 { 0.0 } else { successes / n as f64 };
        let binary = outcomes.iter().all(|&o| o == 0.0 || o == 1.0);
        if binary {
            let (lo, hi) = wilson_interval(successes, n, Z_90);
            // guard rounding so lo <= p_hat <= hi holds exactly
            Self {
                n,
                successes,
                p_hat,
                lo: lo.min(p_hat),
                hi: hi.max(p_hat),
                mode: StatsMode::Wilson,
            }
        } else {
            let var = outcomes.iter().map(|o| (o - p_hat).powi(2)).sum::<f64>() / n as f64;
            let half = Z_90 * (var / n as f64).sqrt();
            Self {
                n,
                successes,
                p_hat,
                lo: (p_hat - half).max(0.0),
                hi: (p_hat + half).min(1.0),
                mode: StatsMode::Normal,
            }
        }
    }

    /// Pools several evaluations into one interval over all their trials.
    pub fn pooled(parts: &[SuccessStats]) -> Self {
        let n: usize = parts.iter().map(|s| s.n).sum();
        let successes: f64 = parts.iter().map(|s| s.successes).sum();
        let p_hat = if n == 0 { 0.0 } else { successes / n as f64 };
        if parts.iter().all(|s| s.mode == StatsMode::Wilson) {
            let (lo, hi) = wilson_interval(successes, n, Z_90);
            Self {
                n,
                successes,
                p_hat,
                lo: lo.min(p_hat),
                hi: hi.max(p_hat),
                mode: StatsMode::Wilson,
            }
        } else {
            // variance of the pooled mean from the per-part intervals
            let var: f64 = parts
                .iter()
                .map(|s| {
                    let se = (s.hi - s.lo) / (2.0 * Z_90);
                    (s.n as f64 / n as f64).powi(2) * se * se
                })
                .sum();
            let half = Z_90 * var.sqrt();
            Self {
                n,
                successes,
                p_hat,
                lo: (p_hat - half).max(0.0),
                hi: (p_hat + half).min(1.0),
                mode: StatsMode::Normal,
            }
        }
    }

    pub fn disjoint_from(&self, other: &SuccessStats) -> bool {
        self.lo > other.hi || other.lo > self.hi
    }
}
