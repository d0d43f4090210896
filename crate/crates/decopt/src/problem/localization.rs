//! Online localization benchmark: a moving target tracked by fixed sensors
//! under per-round linear inequality constraints.
//!
//! The loss for sensor `i` at round `t` is `¼ |‖S_i − x‖² − D_{i,t}|²`, where
//! `D_{i,t}` is the noisy squared distance between the sensor and the target.
//! The constraints are `B_{i,t} x − b_{i,t} ≤ 0` with entries drawn fresh each
//! round. All randomness comes from named streams derived from one seed, so
//! instances replay exactly.

use std::fmt::Write as _;
use std::sync::RwLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{cell_stream, round_stream, stream, StreamLabel};

use super::{check_point, BoxSet, ConstraintEval, ProblemBounds, ProblemError, RoundProblem, SlaterCertificate};

const SENSOR_RANGE: f64 = 10.0;
const NOISE_MAX: f64 = 0.001;
const CONSTRAINT_ENTRY_MAX: f64 = 2.0;
const TARGET_START: [f64; 2] = [0.8, 0.95];

/// Generator configuration for a localization instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationConfig {
    /// Number of sensors.
    pub n: usize,
    /// Decision dimension.
    pub p: usize,
    /// Constraints per sensor.
    pub m_per_agent: usize,
    /// Slater margin: constraint offsets are drawn from `[b, b+1]`.
    pub b: f64,
    /// Master seed for all named streams.
    pub seed: u64,
    /// Half-width of the symmetric decision box.
    #[serde(default = "default_box_halfwidth")]
    pub box_halfwidth: f64,
    /// Allow `b <= 0` (drops the Slater certificate).
    #[serde(default)]
    pub no_slater: bool,
}

fn default_box_halfwidth() -> f64 {
    5.0
}

impl LocalizationConfig {
    /// The benchmark configuration at full scale: 100 sensors in the plane.
    pub fn full_scale(seed: u64) -> Self {
        Self { n: 100, p: 2, m_per_agent: 2, b: 0.01, seed, box_halfwidth: 5.0, no_slater: false }
    }
}

/// A concrete localization instance: sensor positions are materialized,
/// everything per-round (target steps, noise, constraint data) is derived
/// on demand from counter-addressed streams.
#[derive(Debug)]
pub struct LocalizationInstance {
    config: LocalizationConfig,
    domain: BoxSet,
    sensors: Vec<DVector<f64>>,
    bounds: ProblemBounds,
    // Memoized target trajectory; index t holds the position at round t.
    trajectory: RwLock<Vec<DVector<f64>>>,
}

impl LocalizationInstance {
    pub fn generate(config: LocalizationConfig) -> Result<Self, ProblemError> {
        if config.n < 1 {
            return Err(ProblemError::Config("need at least one agent".into()));
        }
        if config.p < 1 {
            return Err(ProblemError::Config("dimension must be >= 1".into()));
        }
        if config.m_per_agent < 1 {
            return Err(ProblemError::Config("need at least one constraint per agent".into()));
        }
        if config.b <= 0.0 && !config.no_slater {
            return Err(ProblemError::SlaterViolation { b: config.b });
        }
        let domain = BoxSet::symmetric(config.p, config.box_halfwidth)?;
        let mut sensor_rng = stream(config.seed, StreamLabel::Sensors);
        let sensors: Vec<DVector<f64>> = (0..config.n)
            .map(|_| {
                DVector::from_iterator(
                    config.p,
                    (0..config.p).map(|_| sensor_rng.gen_range(-SENSOR_RANGE..SENSOR_RANGE)),
                )
            })
            .collect();
        Self::assemble(config, domain, sensors)
    }

    fn assemble(
        config: LocalizationConfig,
        domain: BoxSet,
        sensors: Vec<DVector<f64>>,
    ) -> Result<Self, ProblemError> {
        if sensors.len() != config.n || sensors.iter().any(|s| s.len() != config.p) {
            return Err(ProblemError::Config("sensor table does not match (n, p)".into()));
        }
        let bounds = estimate_bounds(&config, &domain, &sensors);
        let start = target_start(config.p);
        Ok(Self {
            config,
            domain,
            sensors,
            bounds,
            trajectory: RwLock::new(vec![start.clone(), start]),
        })
    }

    pub fn config(&self) -> &LocalizationConfig {
        &self.config
    }

    pub fn sensor(&self, agent: usize) -> &DVector<f64> {
        &self.sensors[agent]
    }

    /// Target position at round `t` (`t = 0` is the initial state; the first
    /// displacement happens between rounds 1 and 2 because the step formula
    /// divides by the round index).
    pub fn target_position(&self, t: u64) -> DVector<f64> {
        let idx = t as usize;
        {
            let traj = self.trajectory.read().unwrap();
            if idx < traj.len() {
                return traj[idx].clone();
            }
        }
        let mut traj = self.trajectory.write().unwrap();
        while traj.len() <= idx {
            let s = (traj.len() - 1) as u64;
            let next = traj.last().unwrap() + self.target_step(s);
            traj.push(next);
        }
        traj[idx].clone()
    }

    /// The position the target moves to after round `t >= 1`.
    pub fn advance_target(&self, t: u64) -> DVector<f64> {
        assert!(t >= 1, "the target dynamics start at round 1");
        self.target_position(t + 1)
    }

    /// Displacement applied between rounds `t` and `t+1`.
    fn target_step(&self, t: u64) -> DVector<f64> {
        let coin = round_stream(self.config.seed, StreamLabel::TargetStep, t).gen_bool(0.5);
        let tf = t as f64;
        let mut step = DVector::zeros(self.config.p);
        let sign = if coin { -1.0 } else { 1.0 };
        step[0] = sign * (tf / 50.0).sin() / (10.0 * tf);
        if self.config.p > 1 {
            let q = if coin { 1.0 } else { 0.0 };
            step[1] = -q * (tf / 70.0).cos() / (40.0 * tf);
        }
        step
    }

    /// Measurement noise `τ_{i,t} ∈ [0, 0.001]`.
    pub fn noise(&self, agent: usize, t: u64) -> f64 {
        cell_stream(self.config.seed, StreamLabel::Noise, agent, t).gen_range(0.0..NOISE_MAX)
    }

    /// Noisy squared distance `D_{i,t} = ‖S_i − X_{0,t}‖² + τ_{i,t}`.
    pub fn measured_distance(&self, agent: usize, t: u64) -> f64 {
        let target = self.target_position(t);
        (&self.sensors[agent] - target).norm_squared() + self.noise(agent, t)
    }

    /// Constraint data `(B_{i,t}, b_{i,t})`: entries of `B` from `[0, 2]`,
    /// entries of `b` from `[b, b+1]`.
    pub fn constraint_data(&self, agent: usize, t: u64) -> (DMatrix<f64>, DVector<f64>) {
        let m = self.config.m_per_agent;
        let p = self.config.p;
        let mut rng = cell_stream(self.config.seed, StreamLabel::Constraints, agent, t);
        let matrix = DMatrix::from_fn(m, p, |_, _| rng.gen_range(0.0..CONSTRAINT_ENTRY_MAX));
        let offset = DVector::from_fn(m, |_, _| rng.gen_range(self.config.b..self.config.b + 1.0));
        (matrix, offset)
    }

    /// Loss value `¼ |‖S_i − x‖² − D_{i,t}|²` (the gradient oracle is what the
    /// algorithm consumes; the value is exposed for finite-difference checks).
    pub fn loss(&self, agent: usize, t: u64, x: &DVector<f64>) -> Result<f64, ProblemError> {
        self.check_query(agent, t, x)?;
        let r = (&self.sensors[agent] - x).norm_squared() - self.measured_distance(agent, t);
        Ok(0.25 * r * r)
    }

    fn check_query(&self, agent: usize, t: u64, x: &DVector<f64>) -> Result<(), ProblemError> {
        if agent >= self.config.n {
            return Err(ProblemError::AgentOutOfRange { agent, n: self.config.n });
        }
        if t == 0 {
            return Err(ProblemError::RoundOutOfRange { round: t });
        }
        check_point(&self.domain, x)
    }

    /// Serialize to a key-value text file; floats use Rust's shortest
    /// round-trip decimal encoding, so replay is bit-exact.
    pub fn to_toml_string(&self) -> String {
        let mut out = String::new();
        let file = InstanceFile {
            instance: self.config.clone(),
            domain: self.domain.clone(),
            sensors: self
                .sensors
                .iter()
                .map(|s| s.iter().copied().collect())
                .collect(),
        };
        write!(out, "{}", toml::to_string_pretty(&file).expect("instance serializes")).unwrap();
        out
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ProblemError> {
        let file: InstanceFile =
            toml::from_str(text).map_err(|e| ProblemError::File(e.to_string()))?;
        let sensors = file.sensors.into_iter().map(DVector::from_vec).collect();
        Self::assemble(file.instance, file.domain, sensors)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ProblemError> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| ProblemError::File(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ProblemError> {
        let text = std::fs::read_to_string(path).map_err(|e| ProblemError::File(e.to_string()))?;
        Self::from_toml_str(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    instance: LocalizationConfig,
    domain: BoxSet,
    sensors: Vec<Vec<f64>>,
}

fn target_start(p: usize) -> DVector<f64> {
    let mut start = DVector::zeros(p);
    for (k, &v) in TARGET_START.iter().enumerate().take(p) {
        start[k] = v;
    }
    start
}

/// Corner-point estimates of the loss-gradient, constraint-gradient and
/// Lipschitz bounds. The loss bounds dominate every point of the box for any
/// round: the squared sensor-to-corner distance is maximized componentwise,
/// and the target stays within a small disc around its start. The constraint
/// bounds come from the generator's entry range — `B` entries never exceed 2,
/// which caps both the spectral and the Frobenius norm at `2√(m·p)`.
fn estimate_bounds(config: &LocalizationConfig, domain: &BoxSet, sensors: &[DVector<f64>]) -> ProblemBounds {
    // Target drift is a logarithmic sum of 1/(10t) steps; 4 covers any
    // realistic horizon.
    const TARGET_REACH: f64 = 4.0;
    let mut grad_loss: f64 = 0.0;
    let mut lipschitz: f64 = 0.0;
    for s in sensors {
        let corner_sq: f64 = s
            .iter()
            .zip(domain.lower().iter().zip(domain.upper()))
            .map(|(&sd, (&lo, &hi))| (sd - lo).abs().max((sd - hi).abs()).powi(2))
            .sum();
        let d_max = (s.norm() + TARGET_REACH).powi(2) + NOISE_MAX;
        let residual_max = corner_sq.max(d_max);
        grad_loss = grad_loss.max(residual_max * corner_sq.sqrt());
        lipschitz = lipschitz.max(2.0 * corner_sq + residual_max);
    }
    let cap = CONSTRAINT_ENTRY_MAX * ((config.m_per_agent * config.p) as f64).sqrt();
    ProblemBounds {
        grad_loss,
        grad_constraint_spectral: cap,
        grad_constraint_frobenius: cap,
        loss_gradient_lipschitz: lipschitz,
    }
}

impl RoundProblem for LocalizationInstance {
    fn agent_count(&self) -> usize {
        self.config.n
    }

    fn constraint_dims(&self) -> Vec<usize> {
        vec![self.config.m_per_agent; self.config.n]
    }

    fn domain(&self) -> &BoxSet {
        &self.domain
    }

    fn loss_gradient(
        &self,
        agent: usize,
        round: u64,
        x: &DVector<f64>,
    ) -> Result<DVector<f64>, ProblemError> {
        self.check_query(agent, round, x)?;
        let sensor = &self.sensors[agent];
        let residual = (sensor - x).norm_squared() - self.measured_distance(agent, round);
        Ok((x - sensor) * residual)
    }

    fn constraint(
        &self,
        agent: usize,
        round: u64,
        x: &DVector<f64>,
    ) -> Result<ConstraintEval, ProblemError> {
        self.check_query(agent, round, x)?;
        let (matrix, offset) = self.constraint_data(agent, round);
        let value = &matrix * x - &offset;
        Ok(ConstraintEval { value, jacobian: matrix })
    }

    fn bounds(&self) -> ProblemBounds {
        self.bounds
    }

    fn slater(&self) -> Option<SlaterCertificate> {
        if self.config.b <= 0.0 {
            return None;
        }
        // g_{i,t}(0) = -b_{i,t} <= -b componentwise, and the origin lies in
        // the symmetric box.
        let origin = DVector::zeros(self.config.p);
        if !self.domain.contains(&origin) {
            return None;
        }
        Some(SlaterCertificate { point: origin, margin: self.config.b })
    }
}
