use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::baselines::{auto_il_dataset, loss_weighting, rcp_dataset_and_policy, RCP_INPUT_WIDTH};
use crate::curator::{curate, CheckpointStrategy, Curation, CurationResult};
use crate::datamodel::{RolloutSet, Trajectory};
use crate::envsim::StrategyTag;
use crate::error::{Error, Result};
use crate::numcore::RngStream;
use crate::policy::{collect_rollouts, evaluate_policy, train_bc, Checkpoint, TrainOutput};

use super::config::{ExperimentConfig, Method, Variant};
use super::report::{CheckpointPoint, CompositionRow, EpisodeBudget, MethodReport, OodPoint, ReplicateResult, Report};
use super::stage::{replicate_dir, rollout_seed, stage_seed, InitialStage};

/// Rollout-set label offset for snapshots that are not rollout checkpoints.
pub const SNAPSHOT_LABEL_OFFSET: usize = 1000;

struct Evaluated {
    checkpoints: Vec<CheckpointPoint>,
    ood: Vec<OodPoint>,
    episodes: usize,
}

fn eval_seed(cfg: &ExperimentConfig, seed: u64) -> u64 {
    RngStream::new(cfg.eval_seed).derive_indexed_seed("eval", seed)
}

/// Every checkpoint on the same evaluation episodes, plus the final one on
/// each expanded start region.
fn evaluate_run(checkpoints: &[Checkpoint], cfg: &ExperimentConfig, seed: u64) -> Result<Evaluated> {
    let es = eval_seed(cfg, seed);
    let points = checkpoints
        .iter()
        .map(|c| {
            Ok(CheckpointPoint {
                index: c.index,
                step: c.step,
                stats: evaluate_policy(&c.policy, &cfg.env, cfg.eval_n, es)?.stats,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let last = &checkpoints.last().expect("C >= 2").policy;
    let ood = cfg
        .ood_factors
        .iter()
        .enumerate()
        .map(|(k, &f)| {
            let env = cfg.env.with_expanded_start(f);
            let s = RngStream::new(es).derive_indexed_seed("ood", k as u64);
            Ok(OodPoint {
                factor: f,
                stats: evaluate_policy(last, &env, cfg.eval_n, s)?.stats,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluated {
        episodes: cfg.eval_n * (points.len() + ood.len()),
        checkpoints: points,
        ood,
    })
}

fn replicate(seed: u64, ev: Evaluated, training_episodes: usize, mut budget: EpisodeBudget, t0: Instant) -> ReplicateResult {
    let mut best = 0;
    for (i, p) in ev.checkpoints.iter().enumerate() {
        if p.stats.p_hat > ev.checkpoints[best].stats.p_hat {
            best = i;
        }
    }
    budget.eval = ev.episodes;
    budget.total = budget.rollouts + budget.snapshot_eval + budget.eval;
    ReplicateResult {
        seed,
        final_stats: ev.checkpoints.last().expect("C >= 2").stats,
        max_stats: ev.checkpoints[best].stats,
        max_checkpoint: ev.checkpoints[best].index,
        checkpoints: ev.checkpoints,
        ood: ev.ood,
        curation: None,
        candidate_steps: Vec::new(),
        composition: Vec::new(),
        training_episodes,
        episodes: budget,
        notes: Vec::new(),
        seconds: t0.elapsed().as_secs_f64(),
    }
}

fn retrain(
    stage: &InitialStage,
    cfg: &ExperimentConfig,
    data: &[Trajectory],
    weights: Option<&[f64]>,
    allow_fine_tune: bool,
) -> Result<TrainOutput> {
    let init = (cfg.fine_tune && allow_fine_tune).then(|| stage.final_policy());
    train_bc(
        data,
        weights,
        &cfg.train,
        cfg.env.action_cap,
        stage_seed(stage.seed, "retrain"),
        init,
    )
    .map_err(|e| e.in_stage("retrain"))
}

fn count(sets: &[RolloutSet]) -> usize {
    sets.iter().map(RolloutSet::len).sum()
}

/// One baseline (or plain Demo-SCORE) replicate on a shared initial stage.
pub fn run_method_on(stage: &InitialStage, cfg: &ExperimentConfig, method: Method) -> Result<ReplicateResult> {
    let t0 = Instant::now();
    let m = cfg.curation.rollouts_per_checkpoint;
    let seed = stage.seed;
    let eval = |cks: &[Checkpoint]| evaluate_run(cks, cfg, seed).map_err(|e| e.in_stage("evaluate"));
    match method {
        Method::DemoScore => run_variant_on(stage, cfg, &Variant::Original),
        Method::Base => {
            let ev = eval(&stage.checkpoints)?;
            Ok(replicate(seed, ev, stage.demos.len(), EpisodeBudget::default(), t0))
        }
        Method::AutoIl => {
            let sets = stage.rollout_sets(m)?;
            let data = auto_il_dataset(&stage.demos, &sets, cfg.curation.success_threshold);
            let out = retrain(stage, cfg, &data.trajectories, None, true)?;
            let budget = EpisodeBudget {
                rollouts: count(&sets),
                ..EpisodeBudget::default()
            };
            let mut r = replicate(seed, eval(&out.checkpoints)?, data.len(), budget, t0);
            r.notes.push(format!(
                "{} successful rollouts added (outcome >= {})",
                data.len() - stage.demos.len(),
                cfg.curation.success_threshold
            ));
            Ok(r)
        }
        Method::Rcp => {
            let sets = stage.rollout_sets(m)?;
            let (data, spec) = rcp_dataset_and_policy(&stage.demos, &sets)?;
            if spec.input_dim != RCP_INPUT_WIDTH || data.iter().flat_map(|t| &t.states).any(|s| s.len() != RCP_INPUT_WIDTH) {
                return Err(Error::Contract(format!("return-conditioned data must be {RCP_INPUT_WIDTH} wide")));
            }
            let out = retrain(stage, cfg, &data, None, false)?;
            let checkpoints = out
                .checkpoints
                .into_iter()
                .map(|c| {
                    Ok(Checkpoint {
                        policy: c.policy.with_condition(spec.condition.clone())?,
                        ..c
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let budget = EpisodeBudget {
                rollouts: count(&sets),
                ..EpisodeBudget::default()
            };
            let mut r = replicate(seed, eval(&checkpoints)?, data.len(), budget, t0);
            if cfg.fine_tune {
                r.notes.push("return-conditioned policy trained from scratch (input width differs)".into());
            }
            Ok(r)
        }
        Method::LossWeighting => {
            let best = stage.best_checkpoint();
            let ws = loss_weighting(&stage.demos, &best.policy).map_err(|e| e.in_stage("loss-weighting"))?;
            let out = retrain(stage, cfg, &ws.dataset.trajectories, Some(&ws.weights), true)?;
            let budget = EpisodeBudget {
                snapshot_eval: stage.grid.len() * cfg.checkpoint_eval_n,
                ..EpisodeBudget::default()
            };
            let mut r = replicate(seed, eval(&out.checkpoints)?, ws.dataset.len(), budget, t0);
            r.candidate_steps = vec![best.step];
            if ws.shifted {
                r.notes.push("episode losses shifted to a minimum of 1 before inversion".into());
            }
            if ws.guarded {
                r.notes.push("all weights equal; uniform weights used".into());
            }
            Ok(r)
        }
    }
}

/// Candidate training sets, validation set and rollout pool for a variant.
struct Sets {
    train: Vec<RolloutSet>,
    val: RolloutSet,
    pool: Vec<RolloutSet>,
    steps: Vec<usize>,
    snapshot_eval: usize,
}

fn plateau_positions(success: &[f64], candidates: usize, fraction: f64) -> Vec<usize> {
    let best = success.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let first = success.iter().position(|&s| s >= fraction * best).unwrap_or(0);
    // the last snapshot supplies the validation rollouts
    let last = success.len() - 1;
    let start = first.min(last.saturating_sub(candidates));
    (start..start + candidates).collect()
}

fn variant_sets(stage: &InitialStage, cfg: &ExperimentConfig, ccfg: &crate::curator::CurationConfig) -> Result<Sets> {
    let m = ccfg.rollouts_per_checkpoint;
    let seed = stage.seed;
    if !ccfg.cross_validation {
        let best = stage.best_checkpoint();
        let pool = collect_rollouts(
            &best.policy,
            &cfg.env,
            ccfg.no_cv_pool,
            RngStream::new(seed).derive_indexed_seed("no-cv-pool", best.step as u64),
            best.index,
        )?;
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        RngStream::new(stage_seed(seed, "no-cv-split")).shuffle(&mut idx);
        let half = pool.len() / 2;
        let pick = |ids: &[usize]| RolloutSet {
            env: pool.env.clone(),
            checkpoint: pool.checkpoint,
            trajectories: ids.iter().map(|&i| pool.trajectories[i].clone()).collect(),
        };
        return Ok(Sets {
            train: vec![pick(&idx[..half])],
            val: pick(&idx[half..]),
            steps: vec![best.step],
            pool: vec![pool],
            snapshot_eval: stage.grid.len() * cfg.checkpoint_eval_n,
        });
    }
    let val = stage.validation_set().clone();
    match ccfg.checkpoint_strategy {
        CheckpointStrategy::EvenlySpaced => {
            let train = stage.training_sets(m)?;
            let mut pool = train.clone();
            pool.push(val.clone());
            Ok(Sets {
                steps: stage.checkpoints[..train.len()].iter().map(|c| c.step).collect(),
                train,
                val,
                pool,
                snapshot_eval: 0,
            })
        }
        CheckpointStrategy::Plateau => {
            let main = stage.checkpoint_grid_positions();
            let positions = plateau_positions(&stage.grid_success, main.len() - 1, ccfg.plateau_fraction);
            let mut train = Vec::new();
            for &p in &positions {
                let snap = &stage.grid[p];
                let set = match main.iter().position(|&q| q == p) {
                    Some(i) => stage.rollouts[i].prefix(m),
                    None => collect_rollouts(
                        &snap.policy,
                        &cfg.env,
                        m,
                        rollout_seed(seed, snap.step),
                        SNAPSHOT_LABEL_OFFSET + snap.index,
                    )?,
                };
                train.push(set);
            }
            let mut pool = train.clone();
            pool.push(val.clone());
            Ok(Sets {
                steps: positions.iter().map(|&p| stage.grid[p].step).collect(),
                train,
                val,
                pool,
                snapshot_eval: stage.grid.len() * cfg.checkpoint_eval_n,
            })
        }
    }
}

/// Kept/discarded counts and mean episode score per strategy.
pub fn composition(demos: &[Trajectory], result: &CurationResult) -> Vec<CompositionRow> {
    let tag_of: BTreeMap<&str, StrategyTag> = demos
        .iter()
        .filter_map(|t| t.source.tag().map(|g| (t.id.as_str(), g)))
        .collect();
    let unit_tag = |id: &str| tag_of.get(id.split('/').next().unwrap_or(id)).copied();
    StrategyTag::ALL
        .iter()
        .filter(|&&tag| tag_of.values().any(|&g| g == tag))
        .map(|&tag| {
            let kept = result.kept.iter().filter(|id| unit_tag(id) == Some(tag)).count();
            let discarded = result.discarded.iter().filter(|id| unit_tag(id) == Some(tag)).count();
            let scores: Vec<f64> = result
                .scores
                .iter()
                .filter(|(id, _)| tag_of.get(id.as_str()) == Some(&tag))
                .map(|(_, &s)| s)
                .collect();
            CompositionRow {
                tag,
                kept,
                discarded,
                mean_score: scores.iter().sum::<f64>() / scores.len().max(1) as f64,
            }
        })
        .collect()
}

/// Curation step of one variant, without retraining.
pub fn curate_variant(stage: &InitialStage, cfg: &ExperimentConfig, variant: &Variant) -> Result<(Curation, Vec<usize>, EpisodeBudget)> {
    let ccfg = variant.apply(&cfg.curation);
    ccfg.validate()?;
    let sets = variant_sets(stage, cfg, &ccfg).map_err(|e| e.in_stage("rollouts"))?;
    let curation = curate(
        &stage.demos.trajectories,
        &sets.train,
        &sets.val,
        &sets.pool,
        &ccfg,
        stage_seed(stage.seed, "classifier"),
    )
    .map_err(|e| e.in_stage("curation"))?;
    // the no-cv pool already contains its own validation half
    let rollouts = if ccfg.cross_validation { count(&sets.pool) } else { ccfg.no_cv_pool };
    Ok((
        curation,
        sets.steps,
        EpisodeBudget {
            rollouts,
            snapshot_eval: sets.snapshot_eval,
            ..EpisodeBudget::default()
        },
    ))
}

/// One Demo-SCORE replicate under an ablation variant.
pub fn run_variant_on(stage: &InitialStage, cfg: &ExperimentConfig, variant: &Variant) -> Result<ReplicateResult> {
    let t0 = Instant::now();
    let (curation, steps, budget) = curate_variant(stage, cfg, variant)?;
    let out = retrain(stage, cfg, &curation.training_set, None, true)?;
    let ev = evaluate_run(&out.checkpoints, cfg, stage.seed).map_err(|e| e.in_stage("evaluate"))?;
    let mut r = replicate(stage.seed, ev, curation.training_set.len(), budget, t0);
    r.composition = composition(&stage.demos.trajectories, &curation.result);
    r.candidate_steps = steps;
    if curation.result.fallback_used {
        r.notes.push("degenerate filter; kept the top fraction by score".into());
    }
    if curation.training_set.iter().any(|t| t.outcome < 1.0) {
        r.notes.push("fractional outcomes counted as successes".into());
    }
    r.curation = Some(curation.result);
    Ok(r)
}

fn method_dir(out: &Path, seed: u64, method: Method, variant: &str) -> PathBuf {
    replicate_dir(out, seed).join(format!("{}-{variant}", method.name()))
}

fn save_replicate(out: &Path, method: Method, variant: &str, r: &ReplicateResult) -> Result<()> {
    let d = method_dir(out, r.seed, method, variant);
    fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    if let Some(c) = &r.curation {
        let p = d.join("curation.json");
        fs::write(&p, serde_json::to_vec_pretty(c)?).map_err(|e| Error::io(&p, e))?;
    }
    let p = d.join("replicate.json");
    fs::write(&p, serde_json::to_vec_pretty(r)?).map_err(|e| Error::io(&p, e))
}

/// Rollouts per training checkpoint needed by a set of variants.
pub fn rollouts_needed(cfg: &ExperimentConfig, variants: &[Variant]) -> usize {
    variants
        .iter()
        .map(|v| v.apply(&cfg.curation).rollouts_per_checkpoint)
        .chain(std::iter::once(cfg.curation.rollouts_per_checkpoint))
        .max()
        .unwrap_or(1)
}

/// Runs `methods` for every replicate seed, sharing each seed's initial stage.
pub fn run_methods(cfg: &ExperimentConfig, methods: &[Method]) -> Result<Report> {
    cfg.validate()?;
    let out = cfg.out_dir.as_deref();
    let mut per_method: Vec<Vec<ReplicateResult>> = vec![Vec::new(); methods.len()];
    for &seed in &cfg.seeds {
        let dir = out.map(|o| replicate_dir(o, seed));
        let stage = InitialStage::run(cfg, seed, cfg.curation.rollouts_per_checkpoint, dir.as_deref())?;
        for (k, &m) in methods.iter().enumerate() {
            let r = run_method_on(&stage, cfg, m)?;
            log::info!(
                "seed {seed} {}: final {:.3}, {} environment episodes",
                m.name(),
                r.final_stats.p_hat,
                r.episodes.total
            );
            if let Some(o) = out {
                save_replicate(o, m, "original", &r)?;
            }
            per_method[k].push(r);
        }
    }
    let label = cfg.mixture_label();
    let reports = methods
        .iter()
        .zip(per_method)
        .map(|(&m, reps)| MethodReport::new(m, "original", &label, reps))
        .collect();
    Ok(Report::new(cfg.clone(), reports))
}

/// The full curation pipeline for every replicate seed.
pub fn run_demo_score(cfg: &ExperimentConfig) -> Result<Report> {
    run_methods(cfg, &[Method::DemoScore])
}

/// The configured method for every replicate seed.
pub fn run_baseline(cfg: &ExperimentConfig) -> Result<Report> {
    run_methods(cfg, &[cfg.method])
}

/// Every variant for every replicate seed over shared initial stages.
pub fn run_ablation_suite(cfg: &ExperimentConfig, variants: &[Variant]) -> Result<Report> {
    cfg.validate()?;
    let mut seen = HashSet::new();
    if let Some(v) = variants.iter().find(|v| !seen.insert(v.name())) {
        return Err(Error::Config(format!("variant {} listed twice", v.name())));
    }
    for v in variants {
        v.apply(&cfg.curation).validate()?;
    }
    let out = cfg.out_dir.as_deref();
    let m_collect = rollouts_needed(cfg, variants);
    let mut per_variant: Vec<Vec<ReplicateResult>> = vec![Vec::new(); variants.len()];
    for &seed in &cfg.seeds {
        let dir = out.map(|o| replicate_dir(o, seed));
        let stage = InitialStage::run(cfg, seed, m_collect, dir.as_deref())?;
        for (k, v) in variants.iter().enumerate() {
            let r = run_variant_on(&stage, cfg, v)?;
            log::info!("seed {seed} {}: final {:.3}", v.name(), r.final_stats.p_hat);
            if let Some(o) = out {
                save_replicate(o, Method::DemoScore, &v.name(), &r)?;
            }
            per_variant[k].push(r);
        }
    }
    let label = cfg.mixture_label();
    let reports = variants
        .iter()
        .zip(per_variant)
        .map(|(v, reps)| MethodReport::new(Method::DemoScore, &v.name(), &label, reps))
        .collect();
    Ok(Report::new(cfg.clone(), reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_window() {
        // C = 4: three candidates, snapshot 8 validates
        let s = [0.1, 0.5, 0.92, 0.95, 1.0, 0.97, 0.99, 0.98];
        assert_eq!(plateau_positions(&s, 3, 0.9), vec![2, 3, 4]);
        let late = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 1.0];
        assert_eq!(plateau_positions(&late, 3, 0.9), vec![4, 5, 6]);
        let flat = [0.5; 8];
        assert_eq!(plateau_positions(&flat, 3, 0.9), vec![0, 1, 2]);
    }
}
