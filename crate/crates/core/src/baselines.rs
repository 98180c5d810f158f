//! Comparison methods that also reuse the initial policy's rollouts.

use std::path::Path;

use crate::datamodel::{read_file, write_file, DemoDataset, FileKind, Header, RolloutSet, Trajectory, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::policy::{episode_nll, MdnPolicy, OBS_DIM};

/// Rollouts with outcome at least `threshold`, in set order.
pub fn successful_rollouts(sets: &[RolloutSet], threshold: f64) -> Vec<Trajectory> {
    sets.iter()
        .flat_map(|s| &s.trajectories)
        .filter(|t| t.outcome >= threshold)
        .cloned()
        .collect()
}

/// All demonstrations plus every successful rollout, unfiltered.
pub fn auto_il_dataset(demos: &DemoDataset, sets: &[RolloutSet], threshold: f64) -> DemoDataset {
    let mut out = demos.clone();
    out.trajectories.extend(successful_rollouts(sets, threshold));
    out
}

/// Policy input width once the return input is appended.
pub const RCP_INPUT_WIDTH: usize = OBS_DIM + 1;

/// What an RCP policy needs besides its training data.
#[derive(Debug, Clone, PartialEq)]
pub struct RcpSpec {
    pub input_dim: usize,
    /// Return input held fixed while acting.
    pub condition: Vec<f64>,
}

/// Every demonstration and rollout with its outcome appended to each state
/// as a constant return input.
pub fn rcp_dataset_and_policy(demos: &DemoDataset, sets: &[RolloutSet]) -> Result<(Vec<Trajectory>, RcpSpec)> {
    let mut out = Vec::new();
    for t in demos.trajectories.iter().chain(sets.iter().flat_map(|s| &s.trajectories)) {
        if t.states.iter().any(|s| s.len() != OBS_DIM) {
            return Err(Error::Contract(format!("trajectory {} is not {OBS_DIM}-wide", t.id)));
        }
        let mut c = t.clone();
        for s in &mut c.states {
            s.push(t.outcome);
        }
        out.push(c);
    }
    Ok((
        out,
        RcpSpec {
            input_dim: RCP_INPUT_WIDTH,
            condition: vec![1.0],
        },
    ))
}

/// Demonstrations with a non-negative training weight each.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDataset {
    pub dataset: DemoDataset,
    pub weights: Vec<f64>,
    /// Mean per-step NLL of each episode under the scoring checkpoint.
    pub mean_losses: Vec<f64>,
    /// Losses were shifted to a minimum of 1 before inversion.
    pub shifted: bool,
    /// All normalized weights were equal and were reset to 1.
    pub guarded: bool,
}

impl WeightedDataset {
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.dataset.len() {
            return Err(Error::Validation("one weight per episode required".into()));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Validation("weights must be finite and >= 0".into()));
        }
        if !self.weights.iter().any(|&w| w > 0.0) {
            return Err(Error::Validation("at least one weight must be positive".into()));
        }
        self.dataset.validate()
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<u64> {
        self.validate()?;
        let header = Header {
            schema_version: SCHEMA_VERSION,
            kind: FileKind::Weighted,
            env_config: self.dataset.env.clone(),
            mixture: Some(self.dataset.mixture.clone()),
            checkpoint: None,
        };
        write_file(
            path,
            &header,
            self.dataset.trajectories.iter().zip(&self.weights).map(|(t, w)| (t, Some(*w))),
        )
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let (header, lines) = read_file(path, FileKind::Weighted)?;
        let mut trajectories = Vec::with_capacity(lines.len());
        let mut weights = Vec::with_capacity(lines.len());
        for (i, (t, w)) in lines.into_iter().enumerate() {
            weights.push(w.ok_or_else(|| Error::Parse {
                line: i + 2,
                message: "missing weight".into(),
            })?);
            trajectories.push(t);
        }
        let ws = WeightedDataset {
            dataset: DemoDataset {
                env: header.env_config,
                mixture: header.mixture.unwrap_or_default(),
                trajectories,
            },
            weights,
            mean_losses: Vec::new(),
            shifted: false,
            guarded: false,
        };
        ws.validate()?;
        Ok(ws)
    }
}

/// Normalized inverse-loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub weights: Vec<f64>,
    pub shifted: bool,
    pub guarded: bool,
}

/// Inverts each mean loss, subtracts the minimum and divides by the
/// population standard deviation. Losses that are not all positive are first
/// shifted so the smallest is 1; equal weights fall back to all ones.
pub fn normalize_loss_weights(mean_losses: &[f64]) -> Result<LossWeights> {
    if mean_losses.is_empty() {
        return Err(Error::Contract("no losses to weight".into()));
    }
    if mean_losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Contract("non-finite episode loss".into()));
    }
    let min_loss = mean_losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let shifted = min_loss <= 0.0;
    let raw: Vec<f64> = mean_losses
        .iter()
        .map(|&l| if shifted { 1.0 / (l - min_loss + 1.0) } else { 1.0 / l })
        .collect();
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let std = (raw.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / n).sqrt();
    let min_w = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    if std == 0.0 || !std.is_finite() {
        log::warn!("all loss weights are equal; using uniform weights");
        return Ok(LossWeights {
            weights: vec![1.0; raw.len()],
            shifted,
            guarded: true,
        });
    }
    Ok(LossWeights {
        weights: raw.iter().map(|w| (w - min_w) / std).collect(),
        shifted,
        guarded: false,
    })
}

/// Weights each demonstration by its inverse mean NLL under `checkpoint`.
pub fn loss_weighting(demos: &DemoDataset, checkpoint: &MdnPolicy) -> Result<WeightedDataset> {
    let mean_losses = demos
        .trajectories
        .iter()
        .map(|t| episode_nll(checkpoint, t))
        .collect::<Result<Vec<_>>>()?;
    let w = normalize_loss_weights(&mean_losses)?;
    let ws = WeightedDataset {
        dataset: demos.clone(),
        weights: w.weights,
        mean_losses,
        shifted: w.shifted,
        guarded: w.guarded,
    };
    ws.validate()?;
    Ok(ws)
}
