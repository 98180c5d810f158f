//! Mixture-density behaviour-cloning policy: training, rollouts, evaluation.

mod mdn;
mod rollout;
mod stats;
mod train;

use std::fs;
use std::path::Path;

pub use mdn::{decode, log_sum_exp, mdn_nll, nll_and_grad, output_width, Mixture, SIGMA_MAX, SIGMA_MIN};
pub use rollout::{collect_rollouts, evaluate_policy, run_policy_episode, Evaluation};
pub use stats::{wilson_interval, StatsMode, SuccessStats, Z_90};
pub use train::{episode_nll, mean_nll, train_bc, Checkpoint, TrainOutput, TrainRun};

use crate::error::{Error, Result};
use crate::numcore::{Dense, Head, Matrix, Mlp, RngStream};

/// Observation width `(x, y, t/T_max)`.
pub const OBS_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct MdnPolicy {
    net: Mlp<f64>,
    components: usize,
    action_cap: f64,
    /// Extra inputs appended to every observation when acting (the return
    /// condition of a return-conditioned policy). Empty for plain policies.
    condition: Vec<f64>,
}

impl MdnPolicy {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        components: usize,
        action_cap: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if components == 0 {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        if input_dim < OBS_DIM {
            return Err(Error::Config(format!("policy input width {input_dim} < {OBS_DIM}")));
        }
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(output_width(components));
        Ok(Self {
            net: Mlp::new(&sizes, Head::Linear, rng)?,
            components,
            action_cap,
            condition: vec![0.0; input_dim - OBS_DIM],
        })
    }

    pub fn net(&self) -> &Mlp<f64> {
        &self.net
    }

    pub(crate) fn net_mut(&mut self) -> &mut Mlp<f64> {
        &mut self.net
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn action_cap(&self) -> f64 {
        self.action_cap
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn condition(&self) -> &[f64] {
        &self.condition
    }

    /// Sets the conditioning inputs used at acting time.
    pub fn with_condition(mut self, condition: Vec<f64>) -> Result<Self> {
        if condition.len() + OBS_DIM != self.input_dim() {
            return Err(Error::Contract(format!(
                "condition of width {} for a policy with input width {}",
                condition.len(),
                self.input_dim()
            )));
        }
        self.condition = condition;
        Ok(self)
    }

    pub fn mixture(&self, input: &[f64]) -> Result<Mixture> {
        let raw = self.net.predict(input)?;
        Ok(decode(&raw, self.components, self.action_cap))
    }

    /// Observation followed by the acting-time condition.
    fn acting_input(&self, obs: &[f64]) -> Vec<f64> {
        let mut input = obs[..OBS_DIM].to_vec();
        input.extend_from_slice(&self.condition);
        input
    }

    /// Ancestral sample: component by its weight, then a diagonal gaussian,
    /// clamped to the action cap.
    pub fn sample_action(&self, obs: &[f64], rng: &mut RngStream) -> Result<[f64; 2]> {
        let mix = self.mixture(&self.acting_input(obs))?;
        let weights = mix.weights();
        let u = rng.next_f64();
        let mut acc = 0.0;
        let mut chosen = weights.len() - 1;
        for (c, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                chosen = c;
                break;
            }
        }
        let cap = self.action_cap;
        let mut a = [0.0; 2];
        for (d, ad) in a.iter_mut().enumerate() {
            let z = rng.next_gaussian();
            *ad = (mix.means[chosen][d] + mix.log_stds[chosen][d].exp() * z).clamp(-cap, cap);
        }
        Ok(a)
    }

    const MAGIC: &'static [u8; 8] = b"DSMDNv01";

    /// Versioned little-endian blob: magic, header (`components`, layer
    /// count, per-layer `rows cols`, condition width) as u32, then `action_cap`,
    /// condition values, and every layer's weights and bias as f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Self::MAGIC.to_vec();
        let mut u32s = vec![self.components as u32, self.net.layers().len() as u32];
        for l in self.net.layers() {
            u32s.push(l.outputs() as u32);
            u32s.push(l.inputs() as u32);
        }
        u32s.push(self.condition.len() as u32);
        for v in u32s {
            out.extend(v.to_le_bytes());
        }
        out.extend(self.action_cap.to_le_bytes());
        for v in &self.condition {
            out.extend(v.to_le_bytes());
        }
        for v in self.net.flat() {
            out.extend(v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Validation(format!("checkpoint blob: {m}"));
        if bytes.len() < 8 || &bytes[..8] != Self::MAGIC {
            return Err(bad("bad magic"));
        }
        let mut pos = 8;
        let u32_at = |pos: &mut usize| -> Result<usize> {
            let b = bytes.get(*pos..*pos + 4).ok_or_else(|| bad("truncated header"))?;
            *pos += 4;
            Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
        };
        let components = u32_at(&mut pos)?;
        let n_layers = u32_at(&mut pos)?;
        let mut shapes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let rows = u32_at(&mut pos)?;
            let cols = u32_at(&mut pos)?;
            shapes.push((rows, cols));
        }
        let cond_len = u32_at(&mut pos)?;
        let mut f64s = bytes[pos..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        if (bytes.len() - pos) % 8 != 0 {
            return Err(bad("trailing bytes"));
        }
        let action_cap = f64s.next().ok_or_else(|| bad("missing action cap"))?;
        let condition: Vec<f64> = f64s.by_ref().take(cond_len).collect();
        let mut layers = Vec::with_capacity(n_layers);
        for (rows, cols) in shapes {
            let w: Vec<f64> = f64s.by_ref().take(rows * cols).collect();
            let b: Vec<f64> = f64s.by_ref().take(rows).collect();
            if w.len() != rows * cols || b.len() != rows {
                return Err(bad("truncated parameters"));
            }
            layers.push(Dense {
                weight: Matrix::from_vec(rows, cols, w)?,
                bias: b,
            });
        }
        if f64s.next().is_some() {
            return Err(bad("trailing parameters"));
        }
        let net = Mlp::from_layers(layers, Head::Linear)?;
        if net.output_dim() != output_width(components) || condition.len() != cond_len {
            return Err(bad("head width does not match component count"));
        }
        Ok(Self {
            net,
            components,
            action_cap,
            condition,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
