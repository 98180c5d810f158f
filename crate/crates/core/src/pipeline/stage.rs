use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datamodel::{build_mixture, to_json_line, DemoDataset, RolloutSet};
use crate::error::{Error, Result};
use crate::numcore::RngStream;
use crate::policy::{collect_rollouts, evaluate_policy, train_bc, Checkpoint, MdnPolicy};

use super::config::ExperimentConfig;

/// Seed of a named stage of replicate `seed`.
pub fn stage_seed(seed: u64, tag: &str) -> u64 {
    RngStream::new(seed).derive_seed(tag)
}

/// Rollout seed of the snapshot taken at `step`; keyed by step so any
/// variant that revisits a snapshot sees the same episodes.
pub fn rollout_seed(seed: u64, step: usize) -> u64 {
    RngStream::new(seed).derive_indexed_seed("rollouts", step as u64)
}

/// Everything produced before curation: demonstrations, the initial
/// training run, snapshot rankings, and checkpoint rollouts.
#[derive(Debug, Clone)]
pub struct InitialStage {
    pub seed: u64,
    pub demos: DemoDataset,
    /// All training snapshots, numbered from 1.
    pub grid: Vec<Checkpoint>,
    /// The `C` rollout checkpoints, a subset of `grid`.
    pub checkpoints: Vec<Checkpoint>,
    pub eval_losses: Vec<(usize, f64)>,
    /// Success rate of each grid snapshot over `checkpoint_eval_n` episodes.
    pub grid_success: Vec<f64>,
    /// Rollouts of checkpoints `1..C`; the last set is the validation set.
    pub rollouts: Vec<RolloutSet>,
    /// Rollouts collected per training checkpoint.
    pub train_rollouts: usize,
    pub resumed: bool,
    pub seconds: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    fingerprint: String,
    train_rollouts: usize,
    grid_steps: Vec<usize>,
    checkpoint_grid: Vec<usize>,
    eval_losses: Vec<(usize, f64)>,
    grid_success: Vec<f64>,
}

fn fingerprint(cfg: &ExperimentConfig, seed: u64) -> Result<String> {
    let key = (
        &cfg.env,
        &cfg.mixture,
        &cfg.train,
        cfg.curation.validation_rollouts,
        cfg.checkpoint_eval_n,
        seed,
    );
    let digest = Sha256::digest(to_json_line(&key)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Directory holding a replicate's artifacts.
pub fn replicate_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

impl InitialStage {
    /// Runs the stage, or reloads it from `dir` when a matching run with at
    /// least `train_rollouts` rollouts per checkpoint is on disk.
    pub fn run(cfg: &ExperimentConfig, seed: u64, train_rollouts: usize, dir: Option<&Path>) -> Result<Self> {
        if train_rollouts == 0 {
            return Err(Error::Config("need at least one rollout per checkpoint".into()));
        }
        if let Some(d) = dir {
            if let Some(stage) = Self::load(cfg, seed, train_rollouts, d)? {
                log::info!("seed {seed}: resumed initial stage from {}", d.display());
                return Ok(stage);
            }
        }
        let t0 = Instant::now();
        let demos = build_mixture(&cfg.mixture, &cfg.env, stage_seed(seed, "mixture"))
            .map_err(|e| e.in_stage("mixture"))?;
        let out = train_bc(
            &demos.trajectories,
            None,
            &cfg.train,
            cfg.env.action_cap,
            stage_seed(seed, "initial-train"),
            None,
        )
        .map_err(|e| e.in_stage("initial-train"))?;
        let eval_seed = stage_seed(seed, "checkpoint-eval");
        let grid_success = out
            .grid
            .iter()
            .map(|c| {
                let s = RngStream::new(eval_seed).derive_indexed_seed("snapshot", c.step as u64);
                Ok(evaluate_policy(&c.policy, &cfg.env, cfg.checkpoint_eval_n, s)?.stats.p_hat)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_stage("checkpoint-eval"))?;
        let c = out.checkpoints.len();
        let rollouts = out
            .checkpoints
            .iter()
            .enumerate()
            .map(|(i, ck)| {
                let m = if i + 1 == c {
                    cfg.curation.validation_rollouts
                } else {
                    train_rollouts
                };
                collect_rollouts(&ck.policy, &cfg.env, m, rollout_seed(seed, ck.step), ck.index)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_stage("rollouts"))?;
        let stage = InitialStage {
            seed,
            demos,
            grid: out.grid,
            checkpoints: out.checkpoints,
            eval_losses: out.eval_losses,
            grid_success,
            rollouts,
            train_rollouts,
            resumed: false,
            seconds: t0.elapsed().as_secs_f64(),
        };
        if let Some(d) = dir {
            stage.save(cfg, d)?;
        }
        Ok(stage)
    }

    fn stage_dir(dir: &Path) -> PathBuf {
        dir.join("initial")
    }

    fn save(&self, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
        let d = Self::stage_dir(dir);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        self.demos.save_jsonl(&d.join("demos.jsonl"))?;
        for g in &self.grid {
            g.policy.save(&d.join(format!("snapshot-{:02}.bin", g.index)))?;
        }
        for r in &self.rollouts {
            r.save_jsonl(&d.join(format!("rollouts-ckpt{}.jsonl", r.checkpoint)))?;
        }
        let manifest = Manifest {
            fingerprint: fingerprint(cfg, self.seed)?,
            train_rollouts: self.train_rollouts,
            grid_steps: self.grid.iter().map(|g| g.step).collect(),
            checkpoint_grid: self
                .checkpoints
                .iter()
                .map(|c| self.grid.iter().find(|g| g.step == c.step).map_or(0, |g| g.index))
                .collect(),
            eval_losses: self.eval_losses.clone(),
            grid_success: self.grid_success.clone(),
        };
        // written last: its presence marks a complete stage
        let p = d.join("stage.json");
        fs::write(&p, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&p, e))
    }

    fn load(cfg: &ExperimentConfig, seed: u64, train_rollouts: usize, dir: &Path) -> Result<Option<Self>> {
        let d = Self::stage_dir(dir);
        let p = d.join("stage.json");
        let Ok(text) = fs::read(&p) else {
            return Ok(None);
        };
        let manifest: Manifest = serde_json::from_slice(&text)?;
        if manifest.fingerprint != fingerprint(cfg, seed)? || manifest.train_rollouts < train_rollouts {
            return Ok(None);
        }
        let demos = DemoDataset::load_jsonl(&d.join("demos.jsonl"))?;
        let grid = manifest
            .grid_steps
            .iter()
            .enumerate()
            .map(|(j, &step)| {
                Ok(Checkpoint {
                    index: j + 1,
                    step,
                    policy: MdnPolicy::load(&d.join(format!("snapshot-{:02}.bin", j + 1)))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let checkpoints: Vec<Checkpoint> = manifest
            .checkpoint_grid
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                let snap = grid
                    .get(g.wrapping_sub(1))
                    .ok_or_else(|| Error::Validation(format!("stage manifest names missing snapshot {g}")))?;
                Ok(Checkpoint {
                    index: i + 1,
                    step: snap.step,
                    policy: snap.policy.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let rollouts = (1..=checkpoints.len())
            .map(|i| {
                let set = RolloutSet::load_jsonl(&d.join(format!("rollouts-ckpt{i}.jsonl")))?;
                Ok(if i < checkpoints.len() { set.prefix(train_rollouts) } else { set })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(InitialStage {
            seed,
            demos,
            grid,
            checkpoints,
            eval_losses: manifest.eval_losses,
            grid_success: manifest.grid_success,
            rollouts,
            train_rollouts,
            resumed: true,
            seconds: 0.0,
        }))
    }

    /// First `m` rollouts of each training checkpoint.
    pub fn training_sets(&self, m: usize) -> Result<Vec<RolloutSet>> {
        if m > self.train_rollouts {
            return Err(Error::Config(format!(
                "{m} rollouts per checkpoint requested but only {} were collected",
                self.train_rollouts
            )));
        }
        Ok(self.rollouts[..self.rollouts.len() - 1]
            .iter()
            .map(|s| s.prefix(m))
            .collect())
    }

    pub fn validation_set(&self) -> &RolloutSet {
        self.rollouts.last().expect("C >= 2")
    }

    /// Training prefixes followed by the validation set.
    pub fn rollout_sets(&self, m: usize) -> Result<Vec<RolloutSet>> {
        let mut v = self.training_sets(m)?;
        v.push(self.validation_set().clone());
        Ok(v)
    }

    /// Grid position of each rollout checkpoint.
    pub fn checkpoint_grid_positions(&self) -> Vec<usize> {
        self.checkpoints
            .iter()
            .map(|c| self.grid.iter().position(|g| g.step == c.step).expect("checkpoint on grid"))
            .collect()
    }

    /// Rollout checkpoint with the highest snapshot success; the later wins ties.
    pub fn best_checkpoint(&self) -> &Checkpoint {
        let pos = self.checkpoint_grid_positions();
        let mut best = 0;
        for (i, &p) in pos.iter().enumerate() {
            if self.grid_success[p] >= self.grid_success[pos[best]] {
                best = i;
            }
        }
        &self.checkpoints[best]
    }

    pub fn final_policy(&self) -> &MdnPolicy {
        &self.checkpoints.last().expect("C >= 2").policy
    }
}
