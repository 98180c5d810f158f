//! GapWorld: a 2D point-mass arena split by a wall at `x = 0`.
//!
//! The wall has two openings. A wide one near the top (`open_region`) and a
//! narrow gap centred on `y = 0`. Scripted demonstrators succeed through
//! either, but the narrow gap leaves almost no clearance, so a policy that
//! acts under the rollout actuation noise fails there often.

use serde::{Deserialize, Serialize};

use crate::datamodel::{Source, Trajectory};
use crate::error::{Error, Result};
use crate::numcore::RngStream;

/// Scripted demonstrators give up after this many consecutive failures.
pub const MAX_DEMO_ATTEMPTS: u64 = 100;

/// Waypoint-controller gain and waypoint advance radius.
const CONTROLLER_GAIN: f64 = 1.0;
const WAYPOINT_RADIUS: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Square arena `[lo, hi]` on both axes.
    pub arena: [f64; 2],
    pub gap_half_width: f64,
    /// Wide opening in the wall, `[y_lo, y_hi]`.
    pub open_region: [f64; 2],
    pub agent_radius: f64,
    pub goal_center: [f64; 2],
    pub goal_radius: f64,
    pub start_x: f64,
    pub start_y_range: [f64; 2],
    pub max_steps: usize,
    /// Actuation noise std applied to policy rollouts.
    pub sigma_dyn: f64,
    /// Actuation noise std under which demonstrations are recorded.
    pub sigma_demo: f64,
    /// Per-axis action magnitude cap.
    pub action_cap: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            arena: [-1.0, 1.0],
            gap_half_width: 0.024,
            open_region: [0.6, 1.0],
            agent_radius: 0.02,
            goal_center: [0.8, 0.0],
            goal_radius: 0.2,
            start_x: -0.8,
            start_y_range: [-0.2, 0.2],
            max_steps: 150,
            sigma_dyn: 0.01,
            sigma_demo: 0.001,
            action_cap: 0.05,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        let [lo, hi] = self.arena;
        if !(lo < 0.0 && hi > 0.0) {
            violations.push("arena must straddle the wall at x = 0".to_string());
        }
        if self.agent_radius < 0.0 {
            violations.push("agent_radius must be non-negative".into());
        }
        if self.gap_half_width <= self.agent_radius {
            violations.push(format!(
                "gap_half_width {} must exceed agent_radius {}",
                self.gap_half_width, self.agent_radius
            ));
        }
        if self.open_region[1] - self.open_region[0] <= 2.0 * self.agent_radius {
            violations.push("open_region narrower than the agent".into());
        }
        if self.goal_radius <= 0.0 {
            violations.push("goal_radius must be positive".into());
        }
        if self.goal_center[0].abs() <= self.goal_radius {
            violations.push("goal disc intersects the wall".into());
        }
        if self.start_x >= 0.0 || self.start_x < lo {
            violations.push("start_x must lie left of the wall inside the arena".into());
        }
        let [y0, y1] = self.start_y_range;
        if y0 > y1 || y0 < lo || y1 > hi {
            violations.push("start_y_range must be ordered and inside the arena".into());
        }
        if self.action_cap <= 0.0 {
            violations.push("action_cap must be positive".into());
        }
        if self.sigma_dyn < 0.0 || self.sigma_demo < 0.0 {
            violations.push("noise stds must be non-negative".into());
        }
        let min_path = (self.goal_center[0] - self.goal_radius) - self.start_x;
        if (self.max_steps as f64) * self.action_cap < min_path {
            violations.push(format!(
                "max_steps {} cannot cover minimal path length {min_path:.3}",
                self.max_steps
            ));
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(violations.join("; ")))
        }
    }

    /// Copy with the start range widened by `factor` around its centre
    /// (`0.5` widens by half, `1.0` doubles it).
    pub fn with_expanded_start(&self, factor: f64) -> Self {
        let [a, b] = self.start_y_range;
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a) * (1.0 + factor);
        let mut out = self.clone();
        out.start_y_range = [
            (mid - half).max(self.arena[0]),
            (mid + half).min(self.arena[1]),
        ];
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyTag {
    WideA,
    NarrowB,
}

impl StrategyTag {
    pub const ALL: [StrategyTag; 2] = [StrategyTag::WideA, StrategyTag::NarrowB];

    pub fn name(self) -> &'static str {
        match self {
            StrategyTag::WideA => "WideA",
            StrategyTag::NarrowB => "NarrowB",
        }
    }

    fn waypoints(self, cfg: &EnvConfig) -> [[f64; 2]; 3] {
        match self {
            StrategyTag::WideA => [[-0.5, 0.8], [0.3, 0.8], cfg.goal_center],
            StrategyTag::NarrowB => [[-0.3, 0.0], [0.3, 0.0], cfg.goal_center],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Running,
    Collided,
    Reached,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub pos: [f64; 2],
    pub t: usize,
    pub status: Status,
}

impl EnvState {
    pub fn terminated(&self) -> bool {
        self.status != Status::Running
    }

    pub fn collided(&self) -> bool {
        self.status == Status::Collided
    }

    pub fn reached(&self) -> bool {
        self.status == Status::Reached
    }

    /// `(x, y, t / T_max)`
    pub fn observation(&self, cfg: &EnvConfig) -> [f64; 3] {
        [
            self.pos[0],
            self.pos[1],
            self.t as f64 / cfg.max_steps as f64,
        ]
    }
}

pub fn reset(cfg: &EnvConfig, rng: &mut RngStream) -> Result<EnvState> {
    cfg.validate()?;
    let [lo, hi] = cfg.start_y_range;
    let y0 = rng.uniform_in(lo, hi);
    Ok(EnvState {
        pos: [cfg.start_x, y0],
        t: 0,
        status: Status::Running,
    })
}

/// Advances one step under the rollout actuation noise `sigma_dyn`.
pub fn env_step(
    cfg: &EnvConfig,
    state: &EnvState,
    action: [f64; 2],
    rng: &mut RngStream,
) -> Result<EnvState> {
    step_with_noise(cfg, state, action, cfg.sigma_dyn, rng)
}

pub fn step_with_noise(
    cfg: &EnvConfig,
    state: &EnvState,
    action: [f64; 2],
    noise_std: f64,
    rng: &mut RngStream,
) -> Result<EnvState> {
    if state.terminated() {
        return Err(Error::Contract(format!(
            "step called on terminated state ({:?})",
            state.status
        )));
    }
    let cap = cfg.action_cap;
    let [lo, hi] = cfg.arena;
    let [x0, y0] = state.pos;
    let nx = rng.next_gaussian();
    let ny = rng.next_gaussian();
    let x1 = (x0 + action[0].clamp(-cap, cap) + noise_std * nx).clamp(lo, hi);
    let y1 = (y0 + action[1].clamp(-cap, cap) + noise_std * ny).clamp(lo, hi);
    let t = state.t + 1;

    if (x0 >= 0.0) != (x1 >= 0.0) {
        let lambda = (0.0 - x0) / (x1 - x0);
        let yc = y0 + lambda * (y1 - y0);
        if !passable(cfg, yc) {
            let side = if x0 < 0.0 { -1.0 } else { 1.0 };
            return Ok(EnvState {
                pos: [side * cfg.agent_radius, yc],
                t,
                status: Status::Collided,
            });
        }
    }

    let dx = x1 - cfg.goal_center[0];
    let dy = y1 - cfg.goal_center[1];
    let status = if dx * dx + dy * dy <= cfg.goal_radius * cfg.goal_radius {
        Status::Reached
    } else if t >= cfg.max_steps {
        Status::Timeout
    } else {
        Status::Running
    };
    Ok(EnvState {
        pos: [x1, y1],
        t,
        status,
    })
}

/// Whether an agent centred at height `y` fits through the wall.
fn passable(cfg: &EnvConfig, y: f64) -> bool {
    let r = cfg.agent_radius;
    let narrow = y.abs() <= cfg.gap_half_width - r;
    let wide = y >= cfg.open_region[0] + r && y <= cfg.open_region[1] - r;
    narrow || wide
}

/// Terminal outcome score: 1 iff the goal was reached without collision.
pub fn is_success(state: &EnvState) -> Result<f64> {
    match state.status {
        Status::Running => Err(Error::Contract("outcome of an unterminated episode".into())),
        Status::Reached => Ok(1.0),
        Status::Collided | Status::Timeout => Ok(0.0),
    }
}

/// Raw episode record before it is wrapped into a [`Trajectory`].
#[derive(Debug, Clone)]
pub struct Episode {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<[f64; 2]>,
    pub final_state: EnvState,
}

impl Episode {
    pub fn outcome(&self) -> f64 {
        is_success(&self.final_state).expect("episodes always terminate")
    }
}

/// Runs one episode from `reset`, querying `act` for each action.
pub fn run_episode(
    cfg: &EnvConfig,
    noise_std: f64,
    rng: &mut RngStream,
    mut act: impl FnMut(&EnvState, &[f64; 3]) -> [f64; 2],
) -> Result<Episode> {
    let mut state = reset(cfg, rng)?;
    let mut states = Vec::new();
    let mut actions = Vec::new();
    while !state.terminated() {
        let obs = state.observation(cfg);
        let a = act(&state, &obs);
        states.push(obs.to_vec());
        actions.push(a);
        state = step_with_noise(cfg, &state, a, noise_std, rng)?;
    }
    Ok(Episode {
        states,
        actions,
        final_state: state,
    })
}

fn scripted_episode(tag: StrategyTag, cfg: &EnvConfig, rng: &mut RngStream) -> Result<Episode> {
    let waypoints = tag.waypoints(cfg);
    let cap = cfg.action_cap;
    let mut idx = 0;
    run_episode(cfg, cfg.sigma_demo, rng, |state, _| {
        let [x, y] = state.pos;
        while idx + 1 < waypoints.len() {
            let [wx, wy] = waypoints[idx];
            if ((wx - x).powi(2) + (wy - y).powi(2)).sqrt() < WAYPOINT_RADIUS {
                idx += 1;
            } else {
                break;
            }
        }
        let [wx, wy] = waypoints[idx];
        [
            (CONTROLLER_GAIN * (wx - x)).clamp(-cap, cap),
            (CONTROLLER_GAIN * (wy - y)).clamp(-cap, cap),
        ]
    })
}

/// One scripted attempt; returns the raw episode whatever its outcome.
pub fn script_attempt(tag: StrategyTag, cfg: &EnvConfig, seed: u64, attempt: u64) -> Result<Episode> {
    let mut rng = RngStream::new(seed).derive_indexed("demo-attempt", attempt);
    scripted_episode(tag, cfg, &mut rng)
}

/// Scripted demonstration. Failed attempts are retried with fresh derived
/// seeds so every returned demonstration is successful.
pub fn script_demo(tag: StrategyTag, cfg: &EnvConfig, seed: u64) -> Result<Trajectory> {
    cfg.validate()?;
    for attempt in 0..MAX_DEMO_ATTEMPTS {
        let ep = script_attempt(tag, cfg, seed, attempt)?;
        if ep.outcome() == 1.0 {
            return Ok(Trajectory {
                id: format!("scripted-{seed}"),
                states: ep.states,
                actions: ep.actions,
                outcome: 1.0,
                source: Source::Demo { tag },
                seed,
            });
        }
    }
    Err(Error::Calibration(format!(
        "{} demonstrator failed {MAX_DEMO_ATTEMPTS} consecutive attempts (seed {seed})",
        tag.name()
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub trials: usize,
    pub wide_rate: f64,
    pub narrow_rate: f64,
    /// Free space on each side of the agent when centred in the narrow gap.
    pub narrow_clearance: f64,
    /// Same for the wide opening.
    pub wide_clearance: f64,
}

/// First-attempt success rates of the scripted demonstrators.
pub fn calibrate(cfg: &EnvConfig, n_trials: usize, seed: u64) -> Result<CalibrationReport> {
    cfg.validate()?;
    if n_trials < 100 {
        return Err(Error::Config(format!("calibration needs >= 100 trials, got {n_trials}")));
    }
    let root = RngStream::new(seed);
    let rate = |tag: StrategyTag| -> Result<f64> {
        let mut ok = 0usize;
        for i in 0..n_trials {
            let s = root.derive_indexed_seed(tag.name(), i as u64);
            if script_attempt(tag, cfg, s, 0)?.outcome() == 1.0 {
                ok += 1;
            }
        }
        Ok(ok as f64 / n_trials as f64)
    };
    let wide_rate = rate(StrategyTag::WideA)?;
    let narrow_rate = rate(StrategyTag::NarrowB)?;
    Ok(CalibrationReport {
        trials: n_trials,
        wide_rate,
        narrow_rate,
        narrow_clearance: cfg.gap_half_width - cfg.agent_radius,
        wide_clearance: 0.5 * (cfg.open_region[1] - cfg.open_region[0]) - cfg.agent_radius,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    Wide,
    Narrow,
}

/// Which opening a trajectory went through (or headed into when it hit the
/// wall), judged by the largest `|y|` seen near the wall.
pub fn route_of(states: &[Vec<f64>]) -> Option<Route> {
    let near: Vec<f64> = states
        .iter()
        .filter(|s| s[0].abs() < 0.1)
        .map(|s| s[1].abs())
        .collect();
    let max_abs_y = if near.is_empty() {
        let last = states.last()?;
        if last[0] < -0.15 {
            return None;
        }
        last[1].abs()
    } else {
        near.into_iter().fold(0.0, f64::max)
    };
    Some(if max_abs_y > 0.3 { Route::Wide } else { Route::Narrow })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless() -> EnvConfig {
        EnvConfig {
            sigma_dyn: 0.0,
            sigma_demo: 0.0,
            ..EnvConfig::default()
        }
    }

    fn running(x: f64, y: f64) -> EnvState {
        EnvState {
            pos: [x, y],
            t: 0,
            status: Status::Running,
        }
    }

    #[test]
    fn default_config_is_valid() {
        EnvConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_config_lists_violation() {
        let cfg = EnvConfig {
            gap_half_width: 0.01,
            ..EnvConfig::default()
        };
        let err = reset(&cfg, &mut RngStream::new(0)).unwrap_err();
        assert!(err.to_string().contains("gap_half_width"), "{err}");
        let cfg = EnvConfig {
            goal_center: [0.05, 0.0],
            ..EnvConfig::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("goal"));
        let cfg = EnvConfig {
            max_steps: 10,
            ..EnvConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_start_range_starts_on_axis() {
        let cfg = EnvConfig {
            start_y_range: [0.0, 0.0],
            ..EnvConfig::default()
        };
        let s = reset(&cfg, &mut RngStream::new(4)).unwrap();
        assert_eq!(s.pos, [-0.8, 0.0]);
        assert_eq!(s.t, 0);
    }

    #[test]
    fn reset_reproducible_and_in_range() {
        let cfg = EnvConfig::default();
        let a = reset(&cfg, &mut RngStream::new(11)).unwrap();
        let b = reset(&cfg, &mut RngStream::new(11)).unwrap();
        assert_eq!(a.pos, b.pos);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..10_000 {
            let y = reset(&cfg, &mut RngStream::new(i)).unwrap().pos[1];
            lo = lo.min(y);
            hi = hi.max(y);
        }
        assert!(lo >= -0.2 && hi <= 0.2);
        assert!(lo < -0.19 && hi > 0.19);
    }

    #[test]
    fn zero_action_zero_noise_stays_put() {
        let cfg = noiseless();
        let s = env_step(&cfg, &running(-0.5, 0.3), [0.0, 0.0], &mut RngStream::new(0)).unwrap();
        assert_eq!(s.pos, [-0.5, 0.3]);
        assert_eq!(s.t, 1);
        assert_eq!(s.status, Status::Running);
    }

    #[test]
    fn wall_segment_collides() {
        let cfg = noiseless();
        let s = env_step(&cfg, &running(-0.01, 0.5), [0.05, 0.0], &mut RngStream::new(0)).unwrap();
        assert!(s.collided());
        assert!(s.terminated());
    }

    #[test]
    fn narrow_gap_passes_on_axis() {
        let cfg = noiseless();
        let s = env_step(&cfg, &running(-0.01, 0.0), [0.05, 0.0], &mut RngStream::new(0)).unwrap();
        assert!(!s.collided());
        assert!((s.pos[0] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn wide_opening_passes() {
        let cfg = noiseless();
        let s = env_step(&cfg, &running(-0.01, 0.8), [0.05, 0.0], &mut RngStream::new(0)).unwrap();
        assert_eq!(s.status, Status::Running);
    }

    #[test]
    fn actions_are_clamped() {
        let cfg = noiseless();
        let s = env_step(&cfg, &running(-0.5, 0.3), [1.0, -1.0], &mut RngStream::new(0)).unwrap();
        assert!((s.pos[0] - -0.45).abs() < 1e-15);
        assert!((s.pos[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn timeout_and_terminal_contract() {
        let cfg = noiseless();
        let mut s = running(-0.5, 0.3);
        s.t = cfg.max_steps - 1;
        let s = env_step(&cfg, &s, [0.0, 0.0], &mut RngStream::new(0)).unwrap();
        assert_eq!(s.status, Status::Timeout);
        assert_eq!(is_success(&s).unwrap(), 0.0);
        assert!(env_step(&cfg, &s, [0.0, 0.0], &mut RngStream::new(0)).is_err());
        assert!(is_success(&running(0.0, 0.0)).is_err());
    }

    #[test]
    fn collision_precedes_goal() {
        // a goal placed right behind the wall still cannot be reached through it
        let cfg = EnvConfig {
            goal_center: [0.2, 0.5],
            goal_radius: 0.15,
            ..noiseless()
        };
        let s = env_step(&cfg, &running(-0.01, 0.5), [0.05, 0.0], &mut RngStream::new(0)).unwrap();
        assert!(s.collided());
        assert_eq!(is_success(&s).unwrap(), 0.0);
    }

    #[test]
    fn demos_succeed_and_are_deterministic() {
        let cfg = EnvConfig::default();
        for tag in StrategyTag::ALL {
            let a = script_demo(tag, &cfg, 7).unwrap();
            let b = script_demo(tag, &cfg, 7).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.outcome, 1.0);
            assert_eq!(a.states.len(), a.actions.len());
        }
    }

    #[test]
    fn wide_demo_from_centre_succeeds() {
        let cfg = EnvConfig {
            start_y_range: [0.0, 0.0],
            ..EnvConfig::default()
        };
        let d = script_demo(StrategyTag::WideA, &cfg, 0).unwrap();
        assert_eq!(d.outcome, 1.0);
        assert_eq!(route_of(&d.states), Some(Route::Wide));
    }

    #[test]
    fn narrow_demo_stays_inside_gap() {
        let cfg = EnvConfig::default();
        for seed in 0..20 {
            let d = script_demo(StrategyTag::NarrowB, &cfg, seed).unwrap();
            for s in d.states.iter().filter(|s| s[0] > -0.1 && s[0] < 0.1) {
                assert!(s[1].abs() < cfg.gap_half_width, "{s:?}");
            }
            assert_eq!(route_of(&d.states), Some(Route::Narrow));
        }
    }

    #[test]
    fn wide_route_is_longer() {
        let cfg = EnvConfig::default();
        let mean_len = |tag| {
            (0..100)
                .map(|s| script_demo(tag, &cfg, s).unwrap().states.len() as f64)
                .sum::<f64>()
                / 100.0
        };
        assert!(mean_len(StrategyTag::WideA) > mean_len(StrategyTag::NarrowB));
    }

    #[test]
    fn noise_free_calibration_is_perfect() {
        let r = calibrate(&noiseless(), 100, 1).unwrap();
        assert_eq!(r.wide_rate, 1.0);
        assert_eq!(r.narrow_rate, 1.0);
    }

    #[test]
    fn zero_clearance_collapses_narrow_rate() {
        // validate() rejects gap == radius, so probe the demonstrator directly
        let cfg = EnvConfig {
            gap_half_width: 0.02 + 1e-12,
            ..EnvConfig::default()
        };
        let r = calibrate(&cfg, 100, 2).unwrap();
        assert!(r.narrow_rate < 0.05, "{r:?}");
        assert!(r.wide_rate >= 0.99);
    }

    #[test]
    fn default_calibration_meets_band() {
        let r = calibrate(&EnvConfig::default(), 1000, 3).unwrap();
        assert!(r.wide_rate >= 0.99 && r.narrow_rate >= 0.99, "{r:?}");
    }

    #[test]
    fn no_trajectory_jumps_the_wall() {
        let cfg = EnvConfig {
            sigma_demo: 0.01,
            ..EnvConfig::default()
        };
        for seed in 0..200 {
            for tag in StrategyTag::ALL {
                let ep = script_attempt(tag, &cfg, seed, 0).unwrap();
                let mut crossed = false;
                let mut pts: Vec<[f64; 2]> = ep.states.iter().map(|s| [s[0], s[1]]).collect();
                pts.push(ep.final_state.pos);
                for w in pts.windows(2) {
                    if (w[0][0] >= 0.0) != (w[1][0] >= 0.0) {
                        let lam = -w[0][0] / (w[1][0] - w[0][0]);
                        let yc = w[0][1] + lam * (w[1][1] - w[0][1]);
                        crossed |= passable(&cfg, yc);
                    }
                    if w[1][0] > cfg.agent_radius && !ep.final_state.collided() {
                        assert!(crossed, "seed {seed} {tag:?}");
                    }
                }
            }
        }
    }
}
