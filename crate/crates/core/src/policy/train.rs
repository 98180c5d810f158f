use serde::{Deserialize, Serialize};

use crate::datamodel::Trajectory;
use crate::error::{Error, Result};
use crate::numcore::{AdamW, AdamWConfig, Matrix, RngStream};

use super::mdn::{decode, mdn_nll, nll_and_grad};
use super::MdnPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRun {
    /// Total minibatch steps.
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Number of rollout checkpoints, taken at `i * steps / checkpoints`.
    pub checkpoints: usize,
    /// Extra evaluation snapshots between rollout checkpoints (a value of 2
    /// adds one snapshot halfway between each pair).
    #[serde(default = "default_grid")]
    pub grid_per_checkpoint: usize,
    #[serde(default = "default_components")]
    pub components: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
}

fn default_grid() -> usize {
    2
}

fn default_components() -> usize {
    5
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

impl Default for TrainRun {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch: 64,
            lr: 1e-3,
            checkpoints: 4,
            grid_per_checkpoint: default_grid(),
            components: default_components(),
            hidden: default_hidden(),
        }
    }
}

impl TrainRun {
    pub fn validate(&self) -> Result<()> {
        if self.checkpoints < 2 {
            return Err(Error::Config(format!("need C >= 2 checkpoints, got {}", self.checkpoints)));
        }
        if self.grid_per_checkpoint == 0 || self.batch == 0 || self.components == 0 {
            return Err(Error::Config("batch, components and grid_per_checkpoint must be positive".into()));
        }
        let grid = self.checkpoints * self.grid_per_checkpoint;
        if self.steps < grid {
            return Err(Error::Config(format!(
                "{} steps cannot hold {grid} distinct snapshots",
                self.steps
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }

    /// Steps at which grid snapshots are taken (1-based grid index `j`).
    pub fn grid_steps(&self) -> Vec<usize> {
        let g = self.checkpoints * self.grid_per_checkpoint;
        (1..=g).map(|j| j * self.steps / g).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// 1-based position within its schedule.
    pub index: usize,
    pub step: usize,
    pub policy: MdnPolicy,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// The `C` rollout checkpoints.
    pub checkpoints: Vec<Checkpoint>,
    /// All evaluation snapshots, a superset of `checkpoints`.
    pub grid: Vec<Checkpoint>,
    /// `(step, mean NLL over every training pair)` at step 0 and each snapshot.
    pub eval_losses: Vec<(usize, f64)>,
}

impl TrainOutput {
    pub fn final_policy(&self) -> &MdnPolicy {
        &self.checkpoints.last().expect("C >= 2").policy
    }
}

/// Mean per-step NLL of `policy` over every (state, action) pair.
pub fn mean_nll(policy: &MdnPolicy, episodes: &[Trajectory]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for ep in episodes {
        total += episode_nll(policy, ep)? * ep.len() as f64;
        n += ep.len();
    }
    if n == 0 {
        return Err(Error::Contract("mean NLL of an empty dataset".into()));
    }
    Ok(total / n as f64)
}

/// Mean per-step NLL over one episode.
pub fn episode_nll(policy: &MdnPolicy, ep: &Trajectory) -> Result<f64> {
    let mut total = 0.0;
    for (s, &a) in ep.states.iter().zip(&ep.actions) {
        let raw = policy.net().predict(s)?;
        total += mdn_nll(&decode(&raw, policy.components(), policy.action_cap()), a)?;
    }
    Ok(total / ep.len() as f64)
}

/// Behaviour cloning by minibatch NLL minimization.
///
/// Pairs are sampled uniformly over all steps of all episodes; an episode's
/// weight multiplies the loss of each of its steps. Starts from `init` when
/// fine-tuning, otherwise from a fresh network seeded by `seed`.
pub fn train_bc(
    episodes: &[Trajectory],
    weights: Option<&[f64]>,
    run: &TrainRun,
    action_cap: f64,
    seed: u64,
    init: Option<&MdnPolicy>,
) -> Result<TrainOutput> {
    run.validate()?;
    let total_pairs: usize = episodes.iter().map(Trajectory::len).sum();
    if episodes.is_empty() || total_pairs == 0 {
        return Err(Error::Contract("behaviour cloning needs a non-empty dataset".into()));
    }
    if let Some(w) = weights {
        if w.len() != episodes.len() {
            return Err(Error::Contract(format!(
                "{} weights for {} episodes",
                w.len(),
                episodes.len()
            )));
        }
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Contract("episode weights must be finite and >= 0".into()));
        }
    }
    let input_dim = episodes[0].states[0].len();
    if episodes.iter().flat_map(|e| &e.states).any(|s| s.len() != input_dim) {
        return Err(Error::Contract("episodes disagree on state width".into()));
    }

    let root = RngStream::new(seed);
    let mut policy = match init {
        Some(p) => {
            if p.input_dim() != input_dim {
                return Err(Error::Contract("fine-tune policy has a different input width".into()));
            }
            p.clone()
        }
        None => MdnPolicy::new(
            input_dim,
            &run.hidden,
            run.components,
            action_cap,
            &mut root.derive("init"),
        )?,
    };
    let mut sampler = root.derive("minibatch");
    let mut scratch = root.derive("forward");
    let mut opt = AdamW::new(
        policy.net(),
        AdamWConfig {
            lr: run.lr,
            ..AdamWConfig::default()
        },
    );

    // flat index of (episode, step) pairs
    let mut pair_episode = Vec::with_capacity(total_pairs);
    let mut pair_step = Vec::with_capacity(total_pairs);
    for (e, ep) in episodes.iter().enumerate() {
        for t in 0..ep.len() {
            pair_episode.push(e);
            pair_step.push(t);
        }
    }

    let grid_steps = run.grid_steps();
    let mut grid = Vec::with_capacity(grid_steps.len());
    let mut eval_losses = vec![(0, mean_nll(&policy, episodes)?)];
    let k = policy.components();
    let out_w = policy.net().output_dim();
    let mut next_snapshot = 0;
    let mut input = Matrix::zeros(run.batch, input_dim);
    let mut grad_out = Matrix::zeros(run.batch, out_w);
    let mut batch_w = vec![0.0; run.batch];
    let mut batch_a = vec![[0.0; 2]; run.batch];

    for step in 1..=run.steps {
        for b in 0..run.batch {
            let p = sampler.below(total_pairs);
            let (e, t) = (pair_episode[p], pair_step[p]);
            input.row_mut(b).copy_from_slice(&episodes[e].states[t]);
            batch_a[b] = episodes[e].actions[t];
            batch_w[b] = weights.map_or(1.0, |w| w[e]);
        }
        let cache = policy.net().forward_batch(&input, 0.0, &mut scratch, false)?;
        let mut loss = 0.0;
        let scale = 1.0 / run.batch as f64;
        for b in 0..run.batch {
            let (nll, g) = nll_and_grad(cache.output().row(b), k, action_cap, batch_a[b]);
            loss += batch_w[b] * nll * scale;
            let row = grad_out.row_mut(b);
            for (r, gv) in row.iter_mut().zip(g) {
                *r = gv * batch_w[b] * scale;
            }
        }
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        let grads = policy.net().backward_batch(&cache, &grad_out)?;
        opt.step(policy.net_mut(), &grads)
            .map_err(|_| Error::Divergence { step, loss })?;

        if next_snapshot < grid_steps.len() && step == grid_steps[next_snapshot] {
            next_snapshot += 1;
            eval_losses.push((step, mean_nll(&policy, episodes)?));
            grid.push(Checkpoint {
                index: next_snapshot,
                step,
                policy: policy.clone(),
            });
        }
    }

    let checkpoints = grid
        .iter()
        .filter(|c| c.index % run.grid_per_checkpoint == 0)
        .enumerate()
        .map(|(i, c)| Checkpoint {
            index: i + 1,
            step: c.step,
            policy: c.policy.clone(),
        })
        .collect();
    Ok(TrainOutput {
        checkpoints,
        grid,
        eval_losses,
    })
}
