//! Mixture-density action head and its negative log-likelihood.
//!
//! The network's linear output for `K` components is laid out as
//! `[logits (K) | means (2K) | log-std pre-activations (2K)]`. Means are
//! scaled by the action cap. Log-stds are squashed smoothly into
//! `[ln SIGMA_MIN, ln SIGMA_MAX]` so no component can collapse or explode.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numcore::sigmoid;

pub const SIGMA_MIN: f64 = 5e-3;
pub const SIGMA_MAX: f64 = 0.2;

/// Decoded mixture for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub logits: Vec<f64>,
    pub means: Vec<[f64; 2]>,
    pub log_stds: Vec<[f64; 2]>,
}

impl Mixture {
    pub fn components(&self) -> usize {
        self.logits.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        let lse = log_sum_exp(&self.logits);
        self.logits.iter().map(|l| (l - lse).exp()).collect()
    }
}

pub fn output_width(components: usize) -> usize {
    5 * components
}

fn log_bounds() -> (f64, f64) {
    let lo = SIGMA_MIN.ln();
    (lo, SIGMA_MAX.ln() - lo)
}

pub fn decode(raw: &[f64], components: usize, action_cap: f64) -> Mixture {
    debug_assert_eq!(raw.len(), output_width(components));
    let k = components;
    let (lo, span) = log_bounds();
    Mixture {
        logits: raw[..k].to_vec(),
        means: (0..k)
            .map(|c| [action_cap * raw[k + 2 * c], action_cap * raw[k + 2 * c + 1]])
            .collect(),
        log_stds: (0..k)
            .map(|c| {
                [
                    lo + span * sigmoid(raw[3 * k + 2 * c]),
                    lo + span * sigmoid(raw[3 * k + 2 * c + 1]),
                ]
            })
            .collect(),
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Per-component joint log-probability `log pi_k + log N(a; mu_k, sigma_k)`.
fn component_log_probs(mix: &Mixture, action: [f64; 2]) -> Vec<f64> {
    let lse = log_sum_exp(&mix.logits);
    let half_log_2pi = 0.5 * (2.0 * PI).ln();
    (0..mix.components())
        .map(|c| {
            let mut lp = mix.logits[c] - lse;
            for d in 0..2 {
                let ls = mix.log_stds[c][d];
                let z = (action[d] - mix.means[c][d]) * (-ls).exp();
                lp += -ls - half_log_2pi - 0.5 * z * z;
            }
            lp
        })
        .collect()
}

/// `-log sum_k pi_k N(action; mu_k, diag sigma_k^2)`
pub fn mdn_nll(mix: &Mixture, action: [f64; 2]) -> Result<f64> {
    let nll = -log_sum_exp(&component_log_probs(mix, action));
    if !nll.is_finite() {
        return Err(Error::NonFinite {
            layer: 0,
            what: format!("mixture NLL for action {action:?}"),
        });
    }
    Ok(nll)
}

/// NLL and its gradient with respect to the raw network output.
pub fn nll_and_grad(raw: &[f64], components: usize, action_cap: f64, action: [f64; 2]) -> (f64, Vec<f64>) {
    let k = components;
    let mix = decode(raw, k, action_cap);
    let lps = component_log_probs(&mix, action);
    let total = log_sum_exp(&lps);
    let weights = mix.weights();
    let (_, span) = log_bounds();
    let mut grad = vec![0.0; output_width(k)];
    for c in 0..k {
        let resp = (lps[c] - total).exp();
        grad[c] = weights[c] - resp;
        for d in 0..2 {
            let ls = mix.log_stds[c][d];
            let inv_var = (-2.0 * ls).exp();
            let diff = action[d] - mix.means[c][d];
            grad[k + 2 * c + d] = -resp * diff * inv_var * action_cap;
            let s = sigmoid(raw[3 * k + 2 * c + d]);
            grad[3 * k + 2 * c + d] = -resp * (diff * diff * inv_var - 1.0) * span * s * (1.0 - s);
        }
    }
    (-total, grad)
}
