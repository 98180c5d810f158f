use serde::{Deserialize, Serialize};

use crate::datamodel::{RolloutSet, Trajectory};
use crate::error::{Error, Result};

use super::classifier::QualityClassifier;
use super::{ClassifierKind, CurationConfig};

/// Mean per-step success probability (the pooled prediction for the
/// trajectory kind).
pub fn episode_score(classifier: &QualityClassifier, trajectory: &Trajectory) -> Result<f64> {
    match classifier.kind {
        ClassifierKind::Step => {
            let p = classifier.step_probs(&trajectory.states)?;
            if p.is_empty() {
                return Err(Error::Contract(format!("trajectory {} is empty", trajectory.id)));
            }
            Ok(p.iter().sum::<f64>() / p.len() as f64)
        }
        ClassifierKind::Trajectory => classifier.trajectory_prob(&trajectory.states),
    }
}

/// Mean success probability over every state of `set`, which must be the
/// classifier's own training rollouts. For the trajectory kind this is the
/// mean pooled prediction over trajectories.
pub fn compute_threshold(classifier: &QualityClassifier, set: &RolloutSet) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in &set.trajectories {
        match classifier.kind {
            ClassifierKind::Step => {
                let p = classifier.step_probs(&t.states)?;
                sum += p.iter().sum::<f64>();
                n += p.len();
            }
            ClassifierKind::Trajectory => {
                sum += classifier.trajectory_prob(&t.states)?;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Contract("threshold needs at least one state".into()));
    }
    Ok(sum / n as f64)
}

/// Counts of scores in ten equal-width bins over [0, 1].
pub fn score_histogram(scores: &[f64]) -> Vec<usize> {
    let mut h = vec![0; 10];
    for &s in scores {
        let b = ((s * 10.0).floor() as isize).clamp(0, 9) as usize;
        h[b] += 1;
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Episode,
    Chunk,
}

impl Granularity {
    pub fn name(self) -> &'static str {
        match self {
            Granularity::Episode => "episode",
            Granularity::Chunk => "chunk",
        }
    }
}

/// Keep/discard decision over scored units (episodes or chunks).
#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub granularity: Granularity,
    /// Unit id and score, in input order.
    pub scores: Vec<(String, f64)>,
    pub kept: Vec<String>,
    pub discarded: Vec<String>,
    pub fallback_used: bool,
    /// Kept units as training sequences.
    pub trajectories: Vec<Trajectory>,
}

impl FilterOutcome {
    pub fn kept_fraction(&self) -> f64 {
        if self.scores.is_empty() {
            0.0
        } else {
            self.kept.len() as f64 / self.scores.len() as f64
        }
    }
}

/// Strict `score > gamma`; below the minimum kept fraction either fails or,
/// with the fallback enabled, keeps the top fraction by score instead.
fn decide(scores: &[f64], gamma: f64, cfg: &CurationConfig, granularity: Granularity) -> Result<(Vec<bool>, bool)> {
    let mut keep: Vec<bool> = scores.iter().map(|&s| s > gamma).collect();
    let kept = keep.iter().filter(|&&k| k).count();
    let total = scores.len();
    if total == 0 || kept as f64 >= cfg.min_kept_fraction * total as f64 {
        return Ok((keep, false));
    }
    if !cfg.fallback {
        return Err(Error::DegenerateFilter {
            kept,
            total,
            granularity: granularity.name(),
            histogram: score_histogram(scores),
        });
    }
    let n_keep = ((cfg.fallback_fraction * total as f64).ceil() as usize).clamp(1, total);
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    keep.iter_mut().for_each(|k| *k = false);
    for &i in &order[..n_keep] {
        keep[i] = true;
    }
    log::warn!(
        "{} filter kept {kept}/{total}; falling back to the top {n_keep} by score",
        granularity.name()
    );
    Ok((keep, true))
}

/// Keeps demonstrations whose episode score is strictly above `gamma`.
pub fn filter_episodes(
    demos: &[Trajectory],
    classifier: &QualityClassifier,
    gamma: f64,
    cfg: &CurationConfig,
) -> Result<FilterOutcome> {
    let scores = demos
        .iter()
        .map(|t| episode_score(classifier, t))
        .collect::<Result<Vec<_>>>()?;
    let (keep, fallback_used) = decide(&scores, gamma, cfg, Granularity::Episode)?;
    let mut out = FilterOutcome {
        granularity: Granularity::Episode,
        scores: Vec::with_capacity(demos.len()),
        kept: Vec::new(),
        discarded: Vec::new(),
        fallback_used,
        trajectories: Vec::new(),
    };
    for ((t, s), k) in demos.iter().zip(scores).zip(keep) {
        out.scores.push((t.id.clone(), s));
        if k {
            out.kept.push(t.id.clone());
            out.trajectories.push(t.clone());
        } else {
            out.discarded.push(t.id.clone());
        }
    }
    Ok(out)
}

/// Id of chunk `k` of a trajectory.
pub fn chunk_id(trajectory_id: &str, k: usize) -> String {
    format!("{trajectory_id}/c{k}")
}

/// Applies the threshold to non-overlapping windows of `width` steps; kept
/// windows become separate training sequences.
pub fn filter_chunks(
    demos: &[Trajectory],
    classifier: &QualityClassifier,
    gamma: f64,
    width: usize,
    cfg: &CurationConfig,
) -> Result<FilterOutcome> {
    if width == 0 {
        return Err(Error::Config("chunk width must be >= 1".into()));
    }
    if classifier.kind != ClassifierKind::Step {
        return Err(Error::Config("chunk filtering needs a step classifier".into()));
    }
    let mut units = Vec::new();
    let mut scores = Vec::new();
    for t in demos {
        let probs = classifier.step_probs(&t.states)?;
        for (k, start) in (0..t.len()).step_by(width).enumerate() {
            let end = (start + width).min(t.len());
            scores.push(probs[start..end].iter().sum::<f64>() / (end - start) as f64);
            units.push((t, k, start, end));
        }
    }
    let (keep, fallback_used) = decide(&scores, gamma, cfg, Granularity::Chunk)?;
    let mut out = FilterOutcome {
        granularity: Granularity::Chunk,
        scores: Vec::with_capacity(units.len()),
        kept: Vec::new(),
        discarded: Vec::new(),
        fallback_used,
        trajectories: Vec::new(),
    };
    for ((&(t, k, start, end), s), kp) in units.iter().zip(scores).zip(keep) {
        let id = chunk_id(&t.id, k);
        out.scores.push((id.clone(), s));
        if kp {
            out.trajectories.push(Trajectory {
                id: id.clone(),
                source: t.source.clone(),
                seed: t.seed,
                outcome: t.outcome,
                states: t.states[start..end].to_vec(),
                actions: t.actions[start..end].to_vec(),
            });
            out.kept.push(id);
        } else {
            out.discarded.push(id);
        }
    }
    Ok(out)
}

/// Successful rollouts (outcome at least `success_threshold`) whose episode
/// score is strictly above `gamma`.
pub fn filter_rollouts(
    sets: &[RolloutSet],
    classifier: &QualityClassifier,
    gamma: f64,
    success_threshold: f64,
) -> Result<Vec<Trajectory>> {
    let mut kept = Vec::new();
    for t in sets.iter().flat_map(|s| &s.trajectories) {
        if t.outcome >= success_threshold && episode_score(classifier, t)? > gamma {
            kept.push(t.clone());
        }
    }
    Ok(kept)
}
