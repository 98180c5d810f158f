use crate::datamodel::{RolloutSet, Trajectory};
use crate::error::{Error, Result};
use crate::numcore::{AdamW, AdamWConfig, Head, Matrix, Mlp, RngStream};

use super::normalizer::Normalizer;
use super::{ClassifierKind, CurationConfig};

/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` inside log terms.
pub const P_CLAMP: f64 = 1e-7;

/// Binary cross-entropy of probability `q` against a (possibly soft) label.
pub fn bce(q: f64, y: f64) -> f64 {
    let q = q.clamp(P_CLAMP, 1.0 - P_CLAMP);
    -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
}

/// Success classifier with the normalizer fitted on its own training set.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityClassifier {
    pub kind: ClassifierKind,
    pub mlp: Mlp<f64>,
    pub normalizer: Normalizer,
    /// Steps pooled by the trajectory kind.
    pub prefix_steps: usize,
    /// Index of the rollout set the classifier was trained on.
    pub checkpoint: usize,
    /// Validation loss of the returned snapshot.
    pub val_loss: f64,
    pub best_epoch: usize,
    /// Validation loss after each epoch; entry 0 is the initialization.
    pub val_history: Vec<f64>,
}

/// Mean, std, min and max per dimension over the first `prefix` normalized
/// states, padding short trajectories by repeating the last state.
pub fn pooled_features(normalizer: &Normalizer, states: &[Vec<f64>], prefix: usize) -> Result<Vec<f64>> {
    if states.is_empty() || prefix == 0 {
        return Err(Error::Contract("pooling needs at least one state".into()));
    }
    let d = normalizer.dim();
    let rows: Vec<Vec<f64>> = (0..prefix)
        .map(|t| normalizer.apply(&states[t.min(states.len() - 1)]))
        .collect();
    let n = prefix as f64;
    let mut out = vec![0.0; 4 * d];
    for j in 0..d {
        let col = rows.iter().map(|r| r[j]);
        // shifted by the first value so a constant column has exactly zero spread
        let shift = rows[0][j];
        let m = col.clone().map(|x| x - shift).sum::<f64>() / n;
        let m2 = col.clone().map(|x| (x - shift) * (x - shift)).sum::<f64>() / n;
        let var = (m2 - m * m).max(0.0);
        out[j] = shift + m;
        out[d + j] = var.sqrt();
        out[2 * d + j] = col.clone().fold(f64::INFINITY, f64::min);
        out[3 * d + j] = col.fold(f64::NEG_INFINITY, f64::max);
    }
    Ok(out)
}

impl QualityClassifier {
    /// A classifier that outputs `p` everywhere; handy as a reference point.
    pub fn constant(p: f64, kind: ClassifierKind, state_dim: usize) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Contract(format!("constant probability {p} outside (0, 1)")));
        }
        let width = match kind {
            ClassifierKind::Step => state_dim,
            ClassifierKind::Trajectory => 4 * state_dim,
        };
        let mut mlp = Mlp::zeros(&[width, 1], Head::Sigmoid)?;
        mlp.layers_mut()[0].bias[0] = (p / (1.0 - p)).ln();
        Ok(Self {
            kind,
            mlp,
            normalizer: Normalizer {
                mean: vec![0.0; state_dim],
                std: vec![1.0; state_dim],
            },
            prefix_steps: 100,
            checkpoint: 0,
            val_loss: f64::NAN,
            best_epoch: 0,
            val_history: Vec::new(),
        })
    }

    /// Eval-mode success probability of each state. Step kind only.
    pub fn step_probs(&self, states: &[Vec<f64>]) -> Result<Vec<f64>> {
        if self.kind != ClassifierKind::Step {
            return Err(Error::Contract("per-step probabilities need a step classifier".into()));
        }
        if states.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.step_matrix(states.iter())?;
        let cache = self.mlp.forward_batch(&x, 0.0, &mut RngStream::new(0), false)?;
        Ok(cache.output().as_slice().to_vec())
    }

    /// Eval-mode probability of the pooled prefix. Trajectory kind only.
    pub fn trajectory_prob(&self, states: &[Vec<f64>]) -> Result<f64> {
        if self.kind != ClassifierKind::Trajectory {
            return Err(Error::Contract("pooled scoring needs a trajectory classifier".into()));
        }
        let f = pooled_features(&self.normalizer, states, self.prefix_steps)?;
        Ok(self.mlp.predict(&f)?[0])
    }

    fn step_matrix<'a>(&self, states: impl Iterator<Item = &'a Vec<f64>>) -> Result<Matrix<f64>> {
        let rows: Vec<Vec<f64>> = states.map(|s| self.normalizer.apply(s)).collect();
        Matrix::from_rows(&rows)
    }

    /// Classifier input rows and labels for a rollout set: one row per state
    /// for the step kind, one per trajectory otherwise.
    fn design(&self, set: &RolloutSet) -> Result<(Matrix<f64>, Vec<f64>, Vec<usize>)> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut owner = Vec::new();
        for (i, tr) in set.trajectories.iter().enumerate() {
            match self.kind {
                ClassifierKind::Step => {
                    for s in &tr.states {
                        rows.push(self.normalizer.apply(s));
                        labels.push(tr.outcome);
                        owner.push(i);
                    }
                }
                ClassifierKind::Trajectory => {
                    rows.push(pooled_features(&self.normalizer, &tr.states, self.prefix_steps)?);
                    labels.push(tr.outcome);
                    owner.push(i);
                }
            }
        }
        Ok((Matrix::from_rows(&rows)?, labels, owner))
    }
}

/// Per-trajectory classifier loss: the step-averaged BCE for the step kind,
/// the BCE of the pooled prediction for the trajectory kind.
pub fn step_loss(classifier: &QualityClassifier, trajectory: &Trajectory, y: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::Contract(format!("label {y} outside [0, 1]")));
    }
    match classifier.kind {
        ClassifierKind::Step => {
            let probs = classifier.step_probs(&trajectory.states)?;
            if probs.is_empty() {
                return Err(Error::Contract("empty trajectory".into()));
            }
            Ok(probs.iter().map(|&q| bce(q, y)).sum::<f64>() / probs.len() as f64)
        }
        ClassifierKind::Trajectory => Ok(bce(classifier.trajectory_prob(&trajectory.states)?, y)),
    }
}

/// Unweighted validation BCE: averaged over every state for the step kind,
/// over trajectories for the trajectory kind.
pub fn validation_loss(classifier: &QualityClassifier, val: &RolloutSet) -> Result<f64> {
    let (x, y, _) = classifier.design(val)?;
    mean_bce(&classifier.mlp, &x, &y)
}

fn mean_bce(mlp: &Mlp<f64>, x: &Matrix<f64>, y: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Contract("validation set has no samples".into()));
    }
    let cache = mlp.forward_batch(x, 0.0, &mut RngStream::new(0), false)?;
    let q = cache.output().as_slice();
    Ok(q.iter().zip(y).map(|(&q, &y)| bce(q, y)).sum::<f64>() / y.len() as f64)
}

/// Step classifier trained on every state of `train`, labelled with the
/// trajectory outcome. Each state is weighted by the inverse length of its
/// trajectory so the objective is the mean over trajectories of their
/// step-averaged loss. The epoch with the lowest validation loss wins.
pub fn train_classifier(
    train: &RolloutSet,
    val: &RolloutSet,
    cfg: &CurationConfig,
    seed: u64,
) -> Result<QualityClassifier> {
    fit(train, val, cfg, seed, ClassifierKind::Step)
}

/// Classifier on pooled statistics of the first `prefix_steps` states, cut to
/// the shortest training trajectory.
pub fn train_trajectory_classifier(
    train: &RolloutSet,
    val: &RolloutSet,
    cfg: &CurationConfig,
    seed: u64,
) -> Result<QualityClassifier> {
    fit(train, val, cfg, seed, ClassifierKind::Trajectory)
}

fn fit(
    train: &RolloutSet,
    val: &RolloutSet,
    cfg: &CurationConfig,
    seed: u64,
    kind: ClassifierKind,
) -> Result<QualityClassifier> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Contract(
            "classifier training needs non-empty train and validation sets".into(),
        ));
    }
    let successes = train.trajectories.iter().filter(|t| t.outcome >= 0.5).count();
    if successes == 0 || successes == train.len() {
        log::warn!(
            "rollout set {} is single-class ({successes}/{} successes)",
            train.checkpoint,
            train.len()
        );
    }

    let normalizer = Normalizer::fit(train.trajectories.iter().flat_map(|t| &t.states))?;
    let d = normalizer.dim();
    let width = match kind {
        ClassifierKind::Step => d,
        ClassifierKind::Trajectory => 4 * d,
    };
    let mut sizes = vec![width];
    sizes.extend(&cfg.hidden);
    sizes.push(1);

    // Pool no further than the shortest training trajectory, so no training
    // feature is built from padding.
    let prefix_steps = match kind {
        ClassifierKind::Step => cfg.prefix_steps,
        ClassifierKind::Trajectory => train.trajectories.iter().map(|t| t.len()).fold(cfg.prefix_steps, usize::min),
    };

    let root = RngStream::new(seed);
    let mlp = Mlp::new(&sizes, Head::Sigmoid, &mut root.derive("init"))?;
    let mut clf = QualityClassifier {
        kind,
        mlp,
        normalizer,
        prefix_steps,
        checkpoint: train.checkpoint,
        val_loss: f64::NAN,
        best_epoch: 0,
        val_history: Vec::new(),
    };

    let (x, y, owner) = clf.design(train)?;
    let weights: Vec<f64> = owner
        .iter()
        .map(|&i| match kind {
            ClassifierKind::Step => 1.0 / train.trajectories[i].len() as f64,
            ClassifierKind::Trajectory => 1.0,
        })
        .collect();
    let (xv, yv, _) = clf.design(val)?;

    let (dropout, weight_decay) = cfg.regularization_params();
    let batch = match kind {
        ClassifierKind::Step => cfg.batch,
        ClassifierKind::Trajectory => cfg.trajectory_batch,
    };
    let mut opt = AdamW::new(
        &clf.mlp,
        AdamWConfig {
            lr: cfg.lr,
            weight_decay,
            ..AdamWConfig::default()
        },
    );
    let mut shuffler = root.derive("shuffle");
    let mut mask_rng = root.derive("dropout");

    let mut best = clf.mlp.clone();
    let mut best_loss = mean_bce(&clf.mlp, &xv, &yv)?;
    let mut history = vec![best_loss];
    let mut best_epoch = 0;
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        shuffler.shuffle(&mut order);
        for chunk in order.chunks(batch) {
            let mut xb = Matrix::zeros(chunk.len(), width);
            for (r, &i) in chunk.iter().enumerate() {
                xb.row_mut(r).copy_from_slice(x.row(i));
            }
            let cache = clf.mlp.forward_batch(&xb, dropout, &mut mask_rng, true)?;
            let total_w: f64 = chunk.iter().map(|&i| weights[i]).sum();
            let mut g = Matrix::zeros(chunk.len(), 1);
            for (r, &i) in chunk.iter().enumerate() {
                let q = cache.output().get(r, 0);
                g.set(r, 0, weights[i] * (q - y[i]) / total_w);
            }
            let grads = clf.mlp.backward_batch_preactivation(&cache, &g)?;
            opt.step(&mut clf.mlp, &grads)?;
        }
        let loss = mean_bce(&clf.mlp, &xv, &yv)?;
        history.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best_epoch = epoch;
            best = clf.mlp.clone();
        }
    }
    clf.mlp = best;
    clf.val_loss = best_loss;
    clf.best_epoch = best_epoch;
    clf.val_history = history;
    Ok(clf)
}
