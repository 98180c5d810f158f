use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Smallest standard deviation a normalizer will divide by.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-dimension z-scoring fitted on a classifier's training states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Population mean and std over every state yielded by `states`.
    pub fn fit<'a>(states: impl IntoIterator<Item = &'a Vec<f64>>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let rows: Vec<&Vec<f64>> = states.into_iter().collect();
        for s in &rows {
            if n == 0 {
                sum = vec![0.0; s.len()];
            } else if s.len() != sum.len() {
                return Err(Error::Contract("states of different widths".into()));
            }
            sum.iter_mut().zip(s.iter()).for_each(|(a, b)| *a += b);
            n += 1;
        }
        if n == 0 {
            return Err(Error::Contract("cannot fit a normalizer on zero states".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut var = vec![0.0; mean.len()];
        for s in &rows {
            for ((v, x), m) in var.iter_mut().zip(s.iter()).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .iter()
            .map(|v| (v / n as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, state: &[f64]) -> Vec<f64> {
        state
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn apply_into(&self, state: &[f64], out: &mut [f64]) {
        for (o, (x, (m, s))) in out.iter_mut().zip(state.iter().zip(self.mean.iter().zip(&self.std))) {
            *o = (x - m) / s;
        }
    }

    /// Hex SHA-256 over the little-endian bytes of mean then std.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.mean.iter().chain(&self.std) {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
