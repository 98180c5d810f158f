use serde::{Deserialize, Serialize};

use crate::datamodel::RolloutSet;
use crate::error::{Error, Result};
use crate::numcore::RngStream;

use super::classifier::{train_classifier, train_trajectory_classifier, QualityClassifier};
use super::{ClassifierKind, CurationConfig};

/// Validation record of one candidate classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Checkpoint index of the candidate's training rollouts.
    pub checkpoint: usize,
    pub val_loss: f64,
    pub best_epoch: usize,
    pub val_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub classifier: QualityClassifier,
    /// Position of the chosen classifier's training set in the input list.
    pub chosen: usize,
    pub candidates: Vec<Candidate>,
}

impl Selection {
    /// True when the chosen validation loss equals the minimum over every
    /// candidate and every epoch snapshot.
    pub fn is_optimal(&self) -> bool {
        let min = self
            .candidates
            .iter()
            .flat_map(|c| c.val_history.iter())
            .cloned()
            .fold(f64::INFINITY, f64::min);
        self.classifier.val_loss == min
    }
}

/// Index of the smallest loss; the earliest wins ties.
pub fn argmin(losses: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &l) in losses.iter().enumerate() {
        if l.is_nan() {
            continue;
        }
        if best.map_or(true, |b| l < losses[b]) {
            best = Some(i);
        }
    }
    best
}

/// Trains one classifier per training set, scores each on `val`, and returns
/// the one with the lowest validation loss.
pub fn select_classifier(
    train_sets: &[RolloutSet],
    val: &RolloutSet,
    cfg: &CurationConfig,
    seed: u64,
) -> Result<Selection> {
    if train_sets.is_empty() {
        return Err(Error::Config("no candidate rollout sets to train classifiers on".into()));
    }
    let root = RngStream::new(seed);
    let mut classifiers = Vec::with_capacity(train_sets.len());
    for (i, set) in train_sets.iter().enumerate() {
        let s = root.derive_indexed_seed("classifier", i as u64);
        let clf = match cfg.kind {
            ClassifierKind::Step => train_classifier(set, val, cfg, s)?,
            ClassifierKind::Trajectory => train_trajectory_classifier(set, val, cfg, s)?,
        };
        classifiers.push(clf);
    }
    let candidates: Vec<Candidate> = classifiers
        .iter()
        .map(|c| Candidate {
            checkpoint: c.checkpoint,
            val_loss: c.val_loss,
            best_epoch: c.best_epoch,
            val_history: c.val_history.clone(),
        })
        .collect();
    let losses: Vec<f64> = candidates.iter().map(|c| c.val_loss).collect();
    let chosen = argmin(&losses)
        .ok_or_else(|| Error::Validation("all candidate validation losses are NaN".into()))?;
    let selection = Selection {
        classifier: classifiers.swap_remove(chosen),
        chosen,
        candidates,
    };
    if !selection.is_optimal() {
        return Err(Error::Validation(
            "chosen classifier is not the validation minimum".into(),
        ));
    }
    Ok(selection)
}

/// Classifiers on sets `1..C-1`, validated on the last set.
pub fn cross_validate_select(sets: &[RolloutSet], cfg: &CurationConfig, seed: u64) -> Result<Selection> {
    if sets.len() < 2 {
        return Err(Error::Config(format!(
            "cross-validation needs C >= 2 rollout sets, got {}",
            sets.len()
        )));
    }
    let (train, val) = sets.split_at(sets.len() - 1);
    select_classifier(train, &val[0], cfg, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmin_picks_smallest_and_first_on_ties() {
        assert_eq!(argmin(&[0.4, 0.2, 0.3]), Some(1));
        assert_eq!(argmin(&[0.2, 0.2]), Some(0));
        assert_eq!(argmin(&[f64::NAN, 0.5]), Some(1));
        assert_eq!(argmin(&[]), None);
    }

    #[test]
    fn too_few_sets() {
        let set = RolloutSet {
            env: Default::default(),
            checkpoint: 1,
            trajectories: vec![],
        };
        let err = cross_validate_select(&[set], &CurationConfig::default(), 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
