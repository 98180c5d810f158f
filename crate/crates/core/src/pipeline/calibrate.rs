//! Environment calibration: scripted demonstrator reliability plus BC
//! policies trained on a single strategy.

use serde::{Deserialize, Serialize};

use crate::datamodel::{build_mixture, MixtureEntry};
use crate::envsim::{calibrate, CalibrationReport, StrategyTag};
use crate::error::{Error, Result};
use crate::policy::{evaluate_policy, train_bc};

use super::config::ExperimentConfig;
use super::stage::stage_seed;

/// Scripted demonstrators must succeed at least this often.
pub const DEMONSTRATOR_BAND: f64 = 0.99;
/// A policy cloned from narrow demos must succeed at most this often.
pub const NARROW_POLICY_BAND: f64 = 0.5;
/// A policy cloned from wide demos must succeed at least this often.
pub const WIDE_POLICY_BAND: f64 = 0.9;
pub const DEMONSTRATOR_TRIALS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCalibration {
    pub seed: u64,
    pub tag: StrategyTag,
    pub success: f64,
    pub eval_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub demonstrators: CalibrationReport,
    pub policies: Vec<PolicyCalibration>,
}

impl Calibration {
    fn rates(&self, tag: StrategyTag) -> impl Iterator<Item = f64> + '_ {
        self.policies.iter().filter(move |p| p.tag == tag).map(|p| p.success)
    }

    fn majority(&self, tag: StrategyTag, ok: impl Fn(f64) -> bool) -> bool {
        let n = self.rates(tag).count();
        2 * self.rates(tag).filter(|&r| ok(r)).count() > n
    }

    pub fn demonstrators_ok(&self) -> bool {
        self.demonstrators.wide_rate >= DEMONSTRATOR_BAND && self.demonstrators.narrow_rate >= DEMONSTRATOR_BAND
    }

    /// Narrow-only policies at or below their band in a majority of seeds.
    pub fn narrow_ok(&self) -> bool {
        self.majority(StrategyTag::NarrowB, |r| r <= NARROW_POLICY_BAND)
    }

    pub fn wide_ok(&self) -> bool {
        self.majority(StrategyTag::WideA, |r| r >= WIDE_POLICY_BAND)
    }

    pub fn passed(&self) -> bool {
        self.demonstrators_ok() && self.narrow_ok() && self.wide_ok()
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "demonstrators over {} trials: WideA {:.3}, NarrowB {:.3} (clearance narrow {:.4}, wide {:.4})\n",
            self.demonstrators.trials,
            self.demonstrators.wide_rate,
            self.demonstrators.narrow_rate,
            self.demonstrators.narrow_clearance,
            self.demonstrators.wide_clearance
        );
        for tag in [StrategyTag::WideA, StrategyTag::NarrowB] {
            let r: Vec<String> = self.rates(tag).map(|r| format!("{r:.3}")).collect();
            s.push_str(&format!("pure {} policy success per seed: {}\n", tag.name(), r.join(" ")));
        }
        s.push_str(&format!(
            "bands: demonstrators {}, narrow policy {}, wide policy {}\n",
            verdict(self.demonstrators_ok()),
            verdict(self.narrow_ok()),
            verdict(self.wide_ok())
        ));
        s
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "MISSED"
    }
}

/// Success of the final checkpoint of a policy cloned from
/// `cfg.calibration_demos` demos of `tag`.
pub fn calibrate_policy(cfg: &ExperimentConfig, tag: StrategyTag, seed: u64) -> Result<PolicyCalibration> {
    let key = format!("calibration-{}", tag.name());
    let demos = build_mixture(
        &[MixtureEntry {
            tag,
            count: cfg.calibration_demos,
        }],
        &cfg.env,
        stage_seed(seed, &format!("{key}-demos")),
    )?;
    let out = train_bc(
        &demos.trajectories,
        None,
        &cfg.train,
        cfg.env.action_cap,
        stage_seed(seed, &format!("{key}-train")),
        None,
    )?;
    let ev = evaluate_policy(
        out.final_policy(),
        &cfg.env,
        cfg.calibration_eval_n,
        stage_seed(seed, &format!("{key}-eval")),
    )?;
    Ok(PolicyCalibration {
        seed,
        tag,
        success: ev.stats.p_hat,
        eval_n: cfg.calibration_eval_n,
    })
}

/// Demonstrator rates plus one pure-WideA and one pure-NarrowB policy per
/// replicate seed.
pub fn run_calibration(cfg: &ExperimentConfig) -> Result<Calibration> {
    cfg.validate()?;
    if cfg.calibration_demos == 0 {
        return Err(Error::Config("calibration_demos must be >= 1".into()));
    }
    let demonstrators = calibrate(&cfg.env, DEMONSTRATOR_TRIALS, stage_seed(0, "calibration"))
        .map_err(|e| e.in_stage("calibrate-demonstrators"))?;
    let mut policies = Vec::new();
    for &seed in &cfg.seeds {
        for tag in [StrategyTag::WideA, StrategyTag::NarrowB] {
            let p = calibrate_policy(cfg, tag, seed).map_err(|e| e.in_stage("calibrate-policy"))?;
            log::info!("seed {seed} pure {}: success {:.3}", tag.name(), p.success);
            policies.push(p);
        }
    }
    Ok(Calibration { demonstrators, policies })
}
