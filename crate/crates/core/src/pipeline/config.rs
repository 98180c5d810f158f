use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curator::{CheckpointStrategy, ClassifierKind, CurationConfig, FilterMode};
use crate::datamodel::MixtureEntry;
use crate::envsim::{EnvConfig, StrategyTag};
use crate::error::{Error, Result};
use crate::policy::TrainRun;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DemoScore,
    Base,
    AutoIl,
    Rcp,
    LossWeighting,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Base,
        Method::DemoScore,
        Method::AutoIl,
        Method::Rcp,
        Method::LossWeighting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::DemoScore => "demo_score",
            Method::Base => "base",
            Method::AutoIl => "auto_il",
            Method::Rcp => "rcp",
            Method::LossWeighting => "loss_weighting",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method `{name}` (expected one of {})",
                    Self::ALL.map(Method::name).join(", ")
                ))
            })
    }
}

/// One row of an ablation suite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Original,
    Chunk,
    Trajectory,
    Plateau,
    NoReg,
    NoCv,
    /// Rollouts per training checkpoint.
    Rollouts(usize),
    /// Hidden widths of the classifier.
    ClassifierSize(Vec<usize>),
}

/// Classifier shapes of the size suite.
pub const CLASSIFIER_SIZES: [&[usize]; 6] = [&[8, 8], &[8, 8, 8], &[16, 16], &[16, 16, 16], &[32, 32], &[32, 32, 32]];

/// Per-checkpoint rollout budgets of the budget suite.
pub const ROLLOUT_BUDGETS: [usize; 4] = [10, 25, 50, 100];

impl Variant {
    pub fn name(&self) -> String {
        match self {
            Variant::Original => "original".into(),
            Variant::Chunk => "chunk".into(),
            Variant::Trajectory => "trajectory".into(),
            Variant::Plateau => "plateau".into(),
            Variant::NoReg => "no_reg".into(),
            Variant::NoCv => "no_cv".into(),
            Variant::Rollouts(m) => format!("rollouts_{m}"),
            Variant::ClassifierSize(h) => {
                format!("classifier_{}", h.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("x"))
            }
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown ablation variant `{name}`"));
        Ok(match name {
            "original" => Variant::Original,
            "chunk" => Variant::Chunk,
            "trajectory" => Variant::Trajectory,
            "plateau" => Variant::Plateau,
            "no_reg" => Variant::NoReg,
            "no_cv" => Variant::NoCv,
            _ => {
                if let Some(m) = name.strip_prefix("rollouts_") {
                    let m: usize = m.parse().map_err(|_| bad())?;
                    if m == 0 {
                        return Err(bad());
                    }
                    Variant::Rollouts(m)
                } else if let Some(h) = name.strip_prefix("classifier_") {
                    let widths = h
                        .split('x')
                        .map(|w| w.parse::<usize>().ok().filter(|&w| w > 0))
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(bad)?;
                    Variant::ClassifierSize(widths)
                } else {
                    return Err(bad());
                }
            }
        })
    }

    /// Variants of a named suite, or of a comma-separated variant list.
    pub fn suite(name: &str) -> Result<Vec<Variant>> {
        let table = || {
            vec![
                Variant::Original,
                Variant::Chunk,
                Variant::Trajectory,
                Variant::Plateau,
                Variant::NoReg,
                Variant::NoCv,
            ]
        };
        let budget = || ROLLOUT_BUDGETS.iter().map(|&m| Variant::Rollouts(m)).collect::<Vec<_>>();
        let sizes = || {
            CLASSIFIER_SIZES
                .iter()
                .map(|h| Variant::ClassifierSize(h.to_vec()))
                .collect::<Vec<_>>()
        };
        Ok(match name {
            "variants" => table(),
            "budget" => budget(),
            "classifier_size" => sizes(),
            "all" => {
                let mut v = table();
                v.extend(budget());
                v.extend(sizes());
                v
            }
            list => list
                .split(',')
                .map(|s| Variant::parse(s.trim()))
                .collect::<Result<Vec<_>>>()?,
        })
    }

    /// Curation settings for this variant.
    pub fn apply(&self, base: &CurationConfig) -> CurationConfig {
        let mut c = base.clone();
        match self {
            Variant::Original => {}
            Variant::Chunk => c.mode = FilterMode::Chunk,
            Variant::Trajectory => c.kind = ClassifierKind::Trajectory,
            Variant::Plateau => c.checkpoint_strategy = CheckpointStrategy::Plateau,
            Variant::NoReg => c.regularization = false,
            Variant::NoCv => c.cross_validation = false,
            Variant::Rollouts(m) => c.rollouts_per_checkpoint = *m,
            Variant::ClassifierSize(h) => c.hidden = h.clone(),
        }
        c
    }
}

/// A full experiment: environment, demonstrations, training, curation,
/// method, and evaluation protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default = "default_mixture")]
    pub mixture: Vec<MixtureEntry>,
    #[serde(default)]
    pub train: TrainRun,
    #[serde(default)]
    pub curation: CurationConfig,
    #[serde(default = "default_method")]
    pub method: Method,
    /// Evaluation episodes per checkpoint.
    #[serde(default = "default_eval_n")]
    pub eval_n: usize,
    /// Replicate seeds.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Seed of the evaluation episodes, kept apart from the replicate seeds.
    #[serde(default)]
    pub eval_seed: u64,
    /// Episodes per snapshot when ranking initial-run snapshots.
    #[serde(default = "default_checkpoint_eval_n")]
    pub checkpoint_eval_n: usize,
    /// Start-range expansion factors for out-of-distribution evaluation.
    #[serde(default)]
    pub ood_factors: Vec<f64>,
    /// Retrain from the initial policy instead of from scratch.
    #[serde(default)]
    pub fine_tune: bool,
    /// Demonstrations per strategy in the calibration runs.
    #[serde(default = "default_calibration_demos")]
    pub calibration_demos: usize,
    #[serde(default = "default_calibration_eval_n")]
    pub calibration_eval_n: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_mixture() -> Vec<MixtureEntry> {
    vec![
        MixtureEntry {
            tag: StrategyTag::WideA,
            count: 50,
        },
        MixtureEntry {
            tag: StrategyTag::NarrowB,
            count: 50,
        },
    ]
}

fn default_method() -> Method {
    Method::DemoScore
}

fn default_eval_n() -> usize {
    256
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_checkpoint_eval_n() -> usize {
    100
}

fn default_calibration_demos() -> usize {
    100
}

fn default_calibration_eval_n() -> usize {
    200
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        self.curation.validate()?;
        let mut bad = Vec::new();
        if self.mixture.iter().map(|m| m.count).sum::<usize>() == 0 {
            bad.push("mixture is empty".to_string());
        }
        if self.seeds.is_empty() {
            bad.push("at least one replicate seed is required".to_string());
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            bad.push("replicate seeds must be distinct".to_string());
        }
        if self.eval_n == 0 || self.checkpoint_eval_n == 0 || self.calibration_eval_n == 0 {
            bad.push("evaluation budgets must be >= 1".to_string());
        }
        if self.ood_factors.iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
            bad.push("ood_factors must be finite and >= 0".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Short label such as `WideA50-NarrowB50`.
    pub fn mixture_label(&self) -> String {
        mixture_label(&self.mixture)
    }
}

pub fn mixture_label(mixture: &[MixtureEntry]) -> String {
    mixture
        .iter()
        .map(|m| format!("{}{}", m.tag.name(), m.count))
        .collect::<Vec<_>>()
        .join("-")
}
