use demoscore::curator::CurationConfig;
use demoscore::pipeline::{
    replicate_dir, run_ablation_suite, run_method_on, ExperimentConfig, InitialStage, Method, ReplicateResult, Variant,
};
use demoscore::policy::TrainRun;

fn small() -> ExperimentConfig {
    ExperimentConfig {
        train: TrainRun {
            steps: 600,
            ..TrainRun::default()
        },
        curation: CurationConfig {
            rollouts_per_checkpoint: 8,
            validation_rollouts: 8,
            epochs: 15,
            fallback: true,
            ..CurationConfig::default()
        },
        seeds: vec![3],
        eval_n: 16,
        checkpoint_eval_n: 8,
        ..ExperimentConfig::default()
    }
}

fn demo_score(cfg: &ExperimentConfig) -> ReplicateResult {
    let stage = InitialStage::run(cfg, 3, cfg.curation.rollouts_per_checkpoint, None).unwrap();
    run_method_on(&stage, cfg, Method::DemoScore).unwrap()
}

#[test]
fn eval_seed_never_changes_curation() {
    let a = small();
    let b = ExperimentConfig {
        eval_seed: 99,
        ..small()
    };
    let ra = demo_score(&a);
    let rb = demo_score(&b);
    assert_eq!(ra.curation, rb.curation);
    assert!(ra.curation.is_some());
    assert_ne!(ra.checkpoints, rb.checkpoints, "evaluation should use the new seed");
}

#[test]
fn stage_resumes_from_disk() {
    let cfg = small();
    let tmp = tempfile::tempdir().unwrap();
    let dir = replicate_dir(tmp.path(), 3);
    let first = InitialStage::run(&cfg, 3, 8, Some(&dir)).unwrap();
    assert!(!first.resumed);
    let second = InitialStage::run(&cfg, 3, 8, Some(&dir)).unwrap();
    assert!(second.resumed);
    assert_eq!(first.demos, second.demos);
    assert_eq!(first.rollouts, second.rollouts);
    assert_eq!(first.grid_success, second.grid_success);
    for (a, b) in first.checkpoints.iter().zip(&second.checkpoints) {
        assert_eq!(a.step, b.step);
        assert_eq!(a.policy.to_bytes(), b.policy.to_bytes());
    }
    // a smaller budget is served from the same files
    let fewer = InitialStage::run(&cfg, 3, 4, Some(&dir)).unwrap();
    assert!(fewer.resumed);
    assert_eq!(fewer.training_sets(4).unwrap()[0].len(), 4);

    let r1 = run_method_on(&first, &cfg, Method::DemoScore).unwrap();
    let r2 = run_method_on(&second, &cfg, Method::DemoScore).unwrap();
    assert_eq!(r1.curation, r2.curation);
    assert_eq!(r1.checkpoints, r2.checkpoints);

    // a changed config invalidates the saved stage
    let other = ExperimentConfig {
        train: TrainRun {
            steps: 700,
            ..cfg.train.clone()
        },
        ..cfg
    };
    assert!(!InitialStage::run(&other, 3, 8, Some(&dir)).unwrap().resumed);
}

#[test]
fn episode_accounting() {
    let cfg = small();
    let stage = InitialStage::run(&cfg, 3, 8, None).unwrap();
    let c = cfg.train.checkpoints;
    let r = run_method_on(&stage, &cfg, Method::DemoScore).unwrap();
    assert_eq!(r.episodes.rollouts, (c - 1) * 8 + 8);
    assert_eq!(r.episodes.eval, c * cfg.eval_n);
    assert_eq!(r.episodes.total, r.episodes.rollouts + r.episodes.snapshot_eval + r.episodes.eval);
    let base = run_method_on(&stage, &cfg, Method::Base).unwrap();
    assert_eq!(base.episodes.rollouts, 0);
    assert!(base.curation.is_none());
    assert_eq!(base.training_episodes, stage.demos.len());
}

#[test]
fn selection_is_optimal_in_every_run() {
    let cfg = small();
    let r = demo_score(&cfg);
    let c = r.curation.unwrap();
    assert!(c.selection_is_optimal());
    assert_eq!(c.val_histories.len(), cfg.train.checkpoints - 1);
}

#[test]
fn ablation_variants_run_on_shared_stages() {
    let cfg = small();
    let variants = Variant::suite("original,rollouts_4,no_cv,plateau,chunk,trajectory,no_reg,classifier_8x8x8").unwrap();
    let report = run_ablation_suite(&cfg, &variants).unwrap();
    assert_eq!(report.methods.len(), variants.len());
    let c = cfg.train.checkpoints;
    for m in &report.methods {
        let r = &m.replicates[0];
        assert!(r.curation.as_ref().unwrap().selection_is_optimal(), "{}", m.variant);
        if m.variant == "rollouts_4" {
            assert_eq!(r.episodes.rollouts, 4 * (c - 1) + cfg.curation.validation_rollouts);
        }
        if m.variant == "no_cv" {
            assert_eq!(r.curation.as_ref().unwrap().val_losses.len(), 1);
        }
    }
    // the unmodified variant reuses the stage a plain run would build
    let plain = demo_score(&cfg);
    assert_eq!(report.methods[0].replicates[0].curation, plain.curation);
    assert!(matches!(
        run_ablation_suite(&cfg, &[Variant::Original, Variant::Original]),
        Err(demoscore::Error::Config(_))
    ));
}
