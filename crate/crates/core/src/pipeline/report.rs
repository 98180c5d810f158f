use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curator::CurationResult;
use crate::envsim::StrategyTag;
use crate::error::{Error, Result};
use crate::policy::SuccessStats;

use super::config::{ExperimentConfig, Method};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointPoint {
    pub index: usize,
    pub step: usize,
    pub stats: SuccessStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodPoint {
    pub factor: f64,
    pub stats: SuccessStats,
}

/// Kept and discarded units per strategy. Uses metadata the curator never sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionRow {
    pub tag: StrategyTag,
    pub kept: usize,
    pub discarded: usize,
    /// Mean episode score of this strategy's demonstrations.
    pub mean_score: f64,
}

/// Environment episodes consumed by one replicate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeBudget {
    /// Checkpoint rollouts read by the method.
    pub rollouts: usize,
    /// Episodes spent ranking initial-run snapshots.
    pub snapshot_eval: usize,
    /// Final evaluation episodes.
    pub eval: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub seed: u64,
    /// Success of the last checkpoint of the method's training run.
    pub final_stats: SuccessStats,
    /// Best checkpoint of the same run.
    pub max_stats: SuccessStats,
    pub max_checkpoint: usize,
    pub checkpoints: Vec<CheckpointPoint>,
    pub ood: Vec<OodPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curation: Option<CurationResult>,
    /// Training steps of the snapshots whose rollouts trained classifiers.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidate_steps: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub composition: Vec<CompositionRow>,
    /// Sequences in the final training set.
    pub training_episodes: usize,
    pub episodes: EpisodeBudget,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    /// Wall-clock seconds; the only nondeterministic field.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub variant: String,
    pub mixture: String,
    pub replicates: Vec<ReplicateResult>,
    pub pooled_final: SuccessStats,
    pub pooled_max: SuccessStats,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pooled_ood: Vec<OodPoint>,
}

impl MethodReport {
    pub fn new(method: Method, variant: &str, mixture: &str, replicates: Vec<ReplicateResult>) -> Self {
        let finals: Vec<_> = replicates.iter().map(|r| r.final_stats).collect();
        let maxes: Vec<_> = replicates.iter().map(|r| r.max_stats).collect();
        let pooled_ood = replicates
            .first()
            .map(|r0| {
                r0.ood
                    .iter()
                    .enumerate()
                    .map(|(k, p)| OodPoint {
                        factor: p.factor,
                        stats: SuccessStats::pooled(
                            &replicates.iter().map(|r| r.ood[k].stats).collect::<Vec<_>>(),
                        ),
                    })
                    .collect()
            })
            .unwrap_or_default();
        Self {
            method,
            variant: variant.to_string(),
            mixture: mixture.to_string(),
            pooled_final: SuccessStats::pooled(&finals),
            pooled_max: SuccessStats::pooled(&maxes),
            pooled_ood,
            replicates,
        }
    }
}

impl MethodReport {
    /// Environment episodes consumed over all replicates.
    pub fn episodes(&self) -> usize {
        self.replicates.iter().map(|r| r.episodes.total).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub methods: Vec<MethodReport>,
}

impl Report {
    pub fn new(config: ExperimentConfig, methods: Vec<MethodReport>) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            config,
            methods,
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("report.json");
        let text = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let r: Report = serde_json::from_slice(&text)?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "unsupported report schema_version {}",
                r.schema_version
            )));
        }
        Ok(r)
    }
}

/// Formats `x` with six significant digits.
pub fn fmt_sig(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("float formats parse");
    rounded.to_string()
}

fn stats_cols(s: &SuccessStats) -> String {
    format!("{},{},{},{}", s.n, fmt_sig(s.p_hat), fmt_sig(s.lo), fmt_sig(s.hi))
}

/// Writes `summary.csv`, `composition.csv` and `plotdata.csv`.
pub fn write_csvs(methods: &[MethodReport], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut summary = String::from("method,variant,mixture,replicates,n,success,lo,hi,max_n,max_success,max_lo,max_hi,episodes\n");
    let mut composition = String::from("method,variant,mixture,seed,tag,kept,discarded,mean_score\n");
    let mut plot = String::from("method,variant,mixture,seed,checkpoint,step,n,success,lo,hi\n");
    for m in methods {
        let key = format!("{},{},{}", m.method.name(), m.variant, m.mixture);
        let _ = writeln!(
            summary,
            "{key},{},{},{},{}",
            m.replicates.len(),
            stats_cols(&m.pooled_final),
            stats_cols(&m.pooled_max),
            m.episodes()
        );
        for r in &m.replicates {
            for c in &r.composition {
                let _ = writeln!(
                    composition,
                    "{key},{},{},{},{},{}",
                    r.seed,
                    c.tag.name(),
                    c.kept,
                    c.discarded,
                    fmt_sig(c.mean_score)
                );
            }
            for p in &r.checkpoints {
                let _ = writeln!(plot, "{key},{},{},{},{}", r.seed, p.index, p.step, stats_cols(&p.stats));
            }
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, body) in [
        ("summary.csv", summary),
        ("composition.csv", composition),
        ("plotdata.csv", plot),
    ] {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        written.push(p);
    }
    Ok(written)
}

/// Writes `report.json` and the CSV tables into `dir`.
pub fn emit_report(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join("report.json");
    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    fs::write(&p, json).map_err(|e| Error::io(&p, e))?;
    let mut written = vec![p];
    written.extend(write_csvs(&report.methods, dir)?);
    Ok(written)
}

/// Plain-text table of pooled results.
pub fn summary_table(methods: &[MethodReport]) -> String {
    let mut s = format!(
        "{:<16} {:<18} {:<20} {:>8} {:>17} {:>8} {:>9}\n",
        "method", "variant", "mixture", "final", "90% interval", "max", "episodes"
    );
    for m in methods {
        let _ = writeln!(
            s,
            "{:<16} {:<18} {:<20} {:>8.3} {:>17} {:>8.3} {:>9}",
            m.method.name(),
            m.variant,
            m.mixture,
            m.pooled_final.p_hat,
            format!("[{:.3}, {:.3}]", m.pooled_final.lo, m.pooled_final.hi),
            m.pooled_max.p_hat,
            m.episodes()
        );
    }
    s
}
