//! Success classifiers trained on policy rollouts, selected on a held-out
//! checkpoint, and used to filter demonstrations.

mod classifier;
mod filter;
mod normalizer;
mod select;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datamodel::{RolloutSet, Trajectory};
use crate::error::{Error, Result};

pub use classifier::{
    bce, pooled_features, step_loss, train_classifier, train_trajectory_classifier,
    validation_loss, QualityClassifier, P_CLAMP,
};
pub use filter::{
    chunk_id, compute_threshold, episode_score, filter_chunks, filter_episodes, filter_rollouts,
    score_histogram, FilterOutcome, Granularity,
};
pub use normalizer::{Normalizer, STD_FLOOR};
pub use select::{argmin, cross_validate_select, select_classifier, Candidate, Selection};

/// Weight decay used when regularization is switched off.
pub const NO_REG_WEIGHT_DECAY: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    Episode,
    Chunk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Step,
    Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointStrategy {
    EvenlySpaced,
    Plateau,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurationConfig {
    /// Rollouts per training checkpoint (M).
    pub rollouts_per_checkpoint: usize,
    /// Rollouts from the validation checkpoint.
    pub validation_rollouts: usize,
    pub epochs: usize,
    /// Minibatch size in states for step classifiers.
    pub batch: usize,
    /// Minibatch size in trajectories for trajectory classifiers.
    pub trajectory_batch: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub weight_decay: f64,
    /// When off, dropout is disabled and weight decay drops to 1e-4.
    pub regularization: bool,
    pub cross_validation: bool,
    /// Pool size for the single-checkpoint split used without cross-validation.
    pub no_cv_pool: usize,
    pub mode: FilterMode,
    pub chunk_width: usize,
    pub kind: ClassifierKind,
    pub prefix_steps: usize,
    pub checkpoint_strategy: CheckpointStrategy,
    /// A snapshot is on the plateau once its success reaches this fraction of the best.
    pub plateau_fraction: f64,
    pub min_kept_fraction: f64,
    /// Keep the top `fallback_fraction` by score instead of failing on a degenerate filter.
    pub fallback: bool,
    pub fallback_fraction: f64,
    /// Fractional outcomes at or above this count as successes.
    pub success_threshold: f64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            rollouts_per_checkpoint: 50,
            validation_rollouts: 50,
            epochs: 200,
            batch: 256,
            trajectory_batch: 8,
            lr: 1e-3,
            hidden: vec![8, 8],
            dropout: 0.3,
            weight_decay: 0.1,
            regularization: true,
            cross_validation: true,
            no_cv_pool: 200,
            mode: FilterMode::Episode,
            chunk_width: 16,
            kind: ClassifierKind::Step,
            prefix_steps: 100,
            checkpoint_strategy: CheckpointStrategy::EvenlySpaced,
            plateau_fraction: 0.9,
            min_kept_fraction: 0.05,
            fallback: false,
            fallback_fraction: 0.25,
            success_threshold: 0.99,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.rollouts_per_checkpoint == 0 {
            bad.push("rollouts_per_checkpoint must be >= 1".to_string());
        }
        if self.validation_rollouts == 0 {
            bad.push("validation_rollouts must be >= 1".to_string());
        }
        if self.batch == 0 || self.trajectory_batch == 0 {
            bad.push("batch sizes must be >= 1".to_string());
        }
        if self.chunk_width == 0 {
            bad.push("chunk_width must be >= 1".to_string());
        }
        if self.prefix_steps == 0 {
            bad.push("prefix_steps must be >= 1".to_string());
        }
        if self.no_cv_pool < 2 {
            bad.push("no_cv_pool must be >= 2".to_string());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bad.push(format!("lr {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bad.push(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.weight_decay >= 0.0) {
            bad.push(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            bad.push("hidden widths must be >= 1".to_string());
        }
        for (name, v) in [
            ("plateau_fraction", self.plateau_fraction),
            ("min_kept_fraction", self.min_kept_fraction),
            ("fallback_fraction", self.fallback_fraction),
            ("success_threshold", self.success_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                bad.push(format!("{name} {v} outside [0, 1]"));
            }
        }
        if self.mode == FilterMode::Chunk && self.kind == ClassifierKind::Trajectory {
            bad.push("chunk filtering needs a step classifier".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Dropout rate and weight decay actually used for classifier training.
    pub fn regularization_params(&self) -> (f64, f64) {
        if self.regularization {
            (self.dropout, self.weight_decay)
        } else {
            (0.0, NO_REG_WEIGHT_DECAY)
        }
    }
}

/// Outcome of one curation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationResult {
    pub gamma: f64,
    pub chosen_ckpt: usize,
    /// Best validation loss of each candidate, in candidate order.
    pub val_losses: Vec<f64>,
    pub candidate_ckpts: Vec<usize>,
    /// Validation loss of the returned classifier.
    pub chosen_val_loss: f64,
    /// Per-epoch validation losses of every candidate; entry 0 is the
    /// initialization.
    pub val_histories: Vec<Vec<f64>>,
    /// Episode score of every demonstration.
    pub scores: BTreeMap<String, f64>,
    /// Kept and discarded unit ids (chunk ids when filtering by chunk).
    pub kept: Vec<String>,
    pub discarded: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub chunk_scores: BTreeMap<String, f64>,
    pub kept_rollouts: Vec<String>,
    pub granularity: Granularity,
    pub kind: ClassifierKind,
    pub kept_fraction: f64,
    pub fallback_used: bool,
    pub normalizer_checksum: String,
}

impl CurationResult {
    /// True when the chosen validation loss is the minimum over every
    /// candidate and every epoch snapshot.
    pub fn selection_is_optimal(&self) -> bool {
        let min = self.val_histories.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
        self.chosen_val_loss == min && self.val_losses.iter().all(|&l| l >= min)
    }
}

/// Everything a curation pass produces.
#[derive(Debug, Clone)]
pub struct Curation {
    pub result: CurationResult,
    pub selection: Selection,
    /// Filtered demonstrations followed by filtered successful rollouts.
    pub training_set: Vec<Trajectory>,
}

/// Selects a classifier, thresholds it on its own training rollouts, and
/// filters the demonstrations and the successful rollouts in `pool`.
pub fn curate(
    demos: &[Trajectory],
    train_sets: &[RolloutSet],
    val: &RolloutSet,
    pool: &[RolloutSet],
    cfg: &CurationConfig,
    seed: u64,
) -> Result<Curation> {
    cfg.validate()?;
    let selection = select_classifier(train_sets, val, cfg, seed)?;
    let clf = &selection.classifier;
    let gamma = compute_threshold(clf, &train_sets[selection.chosen])?;
    let outcome = match cfg.mode {
        FilterMode::Episode => filter_episodes(demos, clf, gamma, cfg)?,
        FilterMode::Chunk => filter_chunks(demos, clf, gamma, cfg.chunk_width, cfg)?,
    };
    let rollouts = filter_rollouts(pool, clf, gamma, cfg.success_threshold)?;

    let scores = match outcome.granularity {
        Granularity::Episode => outcome.scores.iter().cloned().collect(),
        Granularity::Chunk => demos
            .iter()
            .map(|t| Ok((t.id.clone(), episode_score(clf, t)?)))
            .collect::<Result<BTreeMap<_, _>>>()?,
    };
    let chunk_scores = match outcome.granularity {
        Granularity::Episode => BTreeMap::new(),
        Granularity::Chunk => outcome.scores.iter().cloned().collect(),
    };
    let result = CurationResult {
        gamma,
        chosen_ckpt: clf.checkpoint,
        val_losses: selection.candidates.iter().map(|c| c.val_loss).collect(),
        candidate_ckpts: selection.candidates.iter().map(|c| c.checkpoint).collect(),
        chosen_val_loss: clf.val_loss,
        val_histories: selection.candidates.iter().map(|c| c.val_history.clone()).collect(),
        scores,
        kept: outcome.kept.clone(),
        discarded: outcome.discarded.clone(),
        chunk_scores,
        kept_rollouts: rollouts.iter().map(|t| t.id.clone()).collect(),
        granularity: outcome.granularity,
        kind: clf.kind,
        kept_fraction: outcome.kept_fraction(),
        fallback_used: outcome.fallback_used,
        normalizer_checksum: clf.normalizer.checksum(),
    };
    let mut training_set = outcome.trajectories;
    training_set.extend(rollouts);
    Ok(Curation {
        result,
        selection,
        training_set,
    })
}
