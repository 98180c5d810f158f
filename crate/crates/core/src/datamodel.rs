//! Trajectory containers, demonstration mixtures, and the JSONL format shared
//! by every stage.
//!
//! A file holds one metadata object on the first line followed by one
//! trajectory per line. Floats are written with 17 significant digits so a
//! load of a saved file reproduces every value bit for bit.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{CompactFormatter, Formatter};

use crate::envsim::{script_demo, EnvConfig, StrategyTag};
use crate::error::{Error, Result};
use crate::numcore::RngStream;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Source {
    Demo { tag: StrategyTag },
    Rollout { ckpt: usize },
}

impl Source {
    pub fn label(&self) -> String {
        match self {
            Source::Demo { tag } => format!("demo:{}", tag.name()),
            Source::Rollout { ckpt } => format!("rollout:{ckpt}"),
        }
    }

    /// Strategy metadata. Only evaluation code may look at this.
    pub fn tag(&self) -> Option<StrategyTag> {
        match self {
            Source::Demo { tag } => Some(*tag),
            Source::Rollout { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub source: Source,
    pub seed: u64,
    pub outcome: f64,
    /// Observations `[x, y, t/T_max]`, optionally followed by conditioning inputs.
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<[f64; 2]>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn validate(&self, max_steps: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(format!("trajectory {}: {msg}", self.id)));
        if self.states.len() != self.actions.len() {
            return fail(format!(
                "{} states but {} actions",
                self.states.len(),
                self.actions.len()
            ));
        }
        if self.states.is_empty() || self.states.len() > max_steps {
            return fail(format!("length {} outside [1, {max_steps}]", self.states.len()));
        }
        if !(0.0..=1.0).contains(&self.outcome) {
            return fail(format!("outcome {} outside [0, 1]", self.outcome));
        }
        let width = self.states[0].len();
        if self.states.iter().any(|s| s.len() != width) {
            return fail("ragged state widths".into());
        }
        let finite = self.states.iter().flatten().all(|v| v.is_finite())
            && self.actions.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return fail("non-finite entry".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixtureEntry {
    pub tag: StrategyTag,
    pub count: usize,
}

/// Successful demonstrations.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    pub env: EnvConfig,
    pub mixture: Vec<MixtureEntry>,
    pub trajectories: Vec<Trajectory>,
}

impl DemoDataset {
    pub fn validate(&self) -> Result<()> {
        validate_common(&self.trajectories, self.env.max_steps)?;
        if let Some(t) = self.trajectories.iter().find(|t| t.outcome != 1.0) {
            return Err(Error::Validation(format!(
                "demonstration {} has outcome {} (demos must be successful)",
                t.id, t.outcome
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<u64> {
        self.validate()?;
        let header = Header {
            schema_version: SCHEMA_VERSION,
            kind: FileKind::Demo,
            env_config: self.env.clone(),
            mixture: Some(self.mixture.clone()),
            checkpoint: None,
        };
        write_file(path, &header, self.trajectories.iter().map(|t| (t, None)))
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let (header, lines) = read_file(path, FileKind::Demo)?;
        let ds = DemoDataset {
            env: header.env_config,
            mixture: header.mixture.unwrap_or_default(),
            trajectories: lines.into_iter().map(|(t, _)| t).collect(),
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Rollouts of one policy checkpoint, labelled by outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutSet {
    pub env: EnvConfig,
    pub checkpoint: usize,
    pub trajectories: Vec<Trajectory>,
}

impl RolloutSet {
    pub fn validate(&self) -> Result<()> {
        validate_common(&self.trajectories, self.env.max_steps)?;
        for t in &self.trajectories {
            if t.source != (Source::Rollout { ckpt: self.checkpoint }) {
                return Err(Error::Validation(format!(
                    "rollout {} has source {} in checkpoint-{} set",
                    t.id,
                    t.source.label(),
                    self.checkpoint
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn success_rate(&self) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        self.trajectories.iter().map(|t| t.outcome).sum::<f64>() / self.trajectories.len() as f64
    }

    /// The first `n` episodes (episodes are independently seeded, so a
    /// prefix is itself a valid sample).
    pub fn prefix(&self, n: usize) -> RolloutSet {
        RolloutSet {
            env: self.env.clone(),
            checkpoint: self.checkpoint,
            trajectories: self.trajectories.iter().take(n).cloned().collect(),
        }
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<u64> {
        self.validate()?;
        let header = Header {
            schema_version: SCHEMA_VERSION,
            kind: FileKind::Rollout,
            env_config: self.env.clone(),
            mixture: None,
            checkpoint: Some(self.checkpoint),
        };
        write_file(path, &header, self.trajectories.iter().map(|t| (t, None)))
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let (header, lines) = read_file(path, FileKind::Rollout)?;
        let checkpoint = header
            .checkpoint
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: "rollout header lacks `checkpoint`".into(),
            })?;
        let set = RolloutSet {
            env: header.env_config,
            checkpoint,
            trajectories: lines.into_iter().map(|(t, _)| t).collect(),
        };
        set.validate()?;
        Ok(set)
    }
}

fn validate_common(trajectories: &[Trajectory], max_steps: usize) -> Result<()> {
    let mut ids = HashSet::new();
    for t in trajectories {
        t.validate(max_steps)?;
        if !ids.insert(t.id.as_str()) {
            return Err(Error::Validation(format!("duplicate trajectory id {}", t.id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileKind {
    Demo,
    Rollout,
    Weighted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Header {
    pub schema_version: u32,
    pub kind: FileKind,
    pub env_config: EnvConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<Vec<MixtureEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<usize>,
}

#[derive(Serialize)]
struct LineOut<'a> {
    #[serde(flatten)]
    trajectory: &'a Trajectory,
    #[serde(skip_serializing_if = "Option::is_none")]
    weight: Option<f64>,
}

#[derive(Deserialize)]
struct LineIn {
    #[serde(flatten)]
    trajectory: Trajectory,
    #[serde(default)]
    weight: Option<f64>,
}

/// JSON formatter that prints every float with 17 significant digits.
#[derive(Debug, Default, Clone, Copy)]
pub struct Digits17;

impl Formatter for Digits17 {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        CompactFormatter.write_f32(writer, value)
    }
}

/// Serializes `value` compactly with 17-significant-digit floats.
pub fn to_json_line<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17);
    value.serialize(&mut ser)?;
    Ok(buf)
}

pub(crate) fn write_file<'a>(
    path: &Path,
    header: &Header,
    lines: impl Iterator<Item = (&'a Trajectory, Option<f64>)>,
) -> Result<u64> {
    let mut out = Vec::new();
    out.extend(to_json_line(header)?);
    out.push(b'\n');
    for (trajectory, weight) in lines {
        out.extend(to_json_line(&LineOut { trajectory, weight })?);
        out.push(b'\n');
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, &out).map_err(|e| Error::io(path, e))?;
    Ok(out.len() as u64)
}

pub(crate) fn read_file(
    path: &Path,
    expected: FileKind,
) -> Result<(Header, Vec<(Trajectory, Option<f64>)>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing metadata line".into(),
        })?
        .map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_str(&first).map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::Parse {
            line: 1,
            message: format!("unsupported schema_version {}", header.schema_version),
        });
    }
    if header.kind != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("file holds {:?} records, expected {expected:?}", header.kind),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LineIn = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((rec.trajectory, rec.weight));
    }
    Ok((header, out))
}

/// Generates a shuffled mixture of scripted demonstrations.
pub fn build_mixture(spec: &[MixtureEntry], cfg: &EnvConfig, seed: u64) -> Result<DemoDataset> {
    let root = RngStream::new(seed);
    let mut trajectories = Vec::new();
    for entry in spec {
        for j in 0..entry.count {
            let demo_seed = root.derive_indexed_seed(&format!("demo/{}", entry.tag.name()), j as u64);
            trajectories.push(script_demo(entry.tag, cfg, demo_seed)?);
        }
    }
    root.derive("shuffle").shuffle(&mut trajectories);
    for (i, t) in trajectories.iter_mut().enumerate() {
        t.id = format!("demo-{i:04}");
    }
    Ok(DemoDataset {
        env: cfg.clone(),
        mixture: spec.to_vec(),
        trajectories,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub count: usize,
    pub per_source: BTreeMap<String, usize>,
    /// Length at quantiles 0, 0.25, 0.5, 0.75, 1 (nearest rank).
    pub length_quantiles: [usize; 5],
    pub outcome_mean: f64,
}

pub fn dataset_stats(trajectories: &[Trajectory]) -> DatasetStats {
    let mut per_source = BTreeMap::new();
    for t in trajectories {
        *per_source.entry(t.source.label()).or_insert(0) += 1;
    }
    let mut lens: Vec<usize> = trajectories.iter().map(Trajectory::len).collect();
    lens.sort_unstable();
    let q = |p: f64| {
        if lens.is_empty() {
            0
        } else {
            lens[((lens.len() - 1) as f64 * p).round() as usize]
        }
    };
    let outcome_mean = if trajectories.is_empty() {
        0.0
    } else {
        trajectories.iter().map(|t| t.outcome).sum::<f64>() / trajectories.len() as f64
    };
    DatasetStats {
        count: trajectories.len(),
        per_source,
        length_quantiles: [q(0.0), q(0.25), q(0.5), q(0.75), q(1.0)],
        outcome_mean,
    }
}
