//! Seeded path simulation: the exact OU transition and a Milstein scheme.
//!
//! Every path draws from its own ChaCha stream seeded by
//! [`path_seed`]`(seed, k)`, so results do not depend on how paths are
//! scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SnapshotData;
use crate::error::{invalid, Result};
use crate::model::SdeModel;

/// Distance kept from the BMR boundary by the Milstein clamp.
pub const BOUNDARY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ExactOu,
    Milstein,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    Value(f64),
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub theta: Vec<f64>,
    /// Spacing of stored snapshots.
    pub t_step: f64,
    /// Snapshot pairs per path (each path stores `n_points + 1` states).
    pub n_points: usize,
    pub n_paths: usize,
    pub x0: InitialCondition,
    pub seed: u64,
    pub scheme: Scheme,
    /// Milstein sub-step; `t_step` must be an integer multiple of it.
    pub internal_dt: f64,
}

impl SimConfig {
    /// Exact OU sampling, snapshots every `t_step`.
    pub fn exact_ou(theta: Vec<f64>, t_step: f64, n_points: usize, n_paths: usize, seed: u64) -> Self {
        Self {
            x0: InitialCondition::Value(theta.get(1).copied().unwrap_or(0.0)),
            theta,
            t_step,
            n_points,
            n_paths,
            seed,
            scheme: Scheme::ExactOu,
            internal_dt: t_step,
        }
    }

    /// Milstein sampling with `t_step = internal_dt · substeps`.
    pub fn milstein(
        theta: Vec<f64>,
        internal_dt: f64,
        substeps: usize,
        n_points: usize,
        x0: InitialCondition,
        seed: u64,
    ) -> Self {
        Self {
            theta,
            t_step: internal_dt * substeps as f64,
            n_points,
            n_paths: 1,
            x0,
            seed,
            scheme: Scheme::Milstein,
            internal_dt,
        }
    }

    pub fn validate(&self, model: SdeModel) -> Result<()> {
        model.check_theta(&self.theta)?;
        if !(self.t_step > 0.0 && self.t_step.is_finite()) {
            return Err(invalid("t_step must be positive"));
        }
        if self.n_points == 0 || self.n_paths == 0 {
            return Err(invalid("n_points and n_paths must be positive"));
        }
        self.substeps()?;
        if self.scheme == Scheme::ExactOu {
            if model != SdeModel::OrnsteinUhlenbeck {
                return Err(invalid("the exact scheme is only available for the OU model"));
            }
            if self.theta[0] <= 0.0 {
                return Err(invalid("exact OU sampling needs theta1 > 0"));
            }
        }
        match self.x0 {
            InitialCondition::Value(v) => {
                let (lo, hi) = model.state_space();
                if !v.is_finite() || v < lo || v > hi {
                    return Err(invalid(format!("initial value {v} outside the state space")));
                }
            }
            InitialCondition::Stationary => {
                if !model.in_parameter_set(&self.theta) {
                    return Err(invalid("stationary start needs parameters inside Θ"));
                }
            }
        }
        Ok(())
    }

    /// Number of internal steps per stored snapshot.
    pub fn substeps(&self) -> Result<usize> {
        if !(self.internal_dt > 0.0 && self.internal_dt <= self.t_step * (1.0 + 1e-12)) {
            return Err(invalid("internal_dt must lie in (0, t_step]"));
        }
        let ratio = self.t_step / self.internal_dt;
        let k = ratio.round();
        if (ratio - k).abs() > 1e-9 * ratio {
            return Err(invalid("t_step must be an integer multiple of internal_dt"));
        }
        Ok(k as usize)
    }
}

/// Per-path seed: the base seed xor a SplitMix64 hash of the path index.
pub fn path_seed(seed: u64, path: u64) -> u64 {
    let mut z = path.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    seed ^ (z ^ (z >> 31))
}

pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(path_seed(seed, path))
}

/// The Gaussian transition `X_t | X_0 = x` of the OU process.
#[derive(Debug, Clone, Copy)]
pub struct OuTransition {
    theta2: f64,
    decay: f64,
    sd: f64,
}

impl OuTransition {
    pub fn new(theta: &[f64], t: f64) -> Result<Self> {
        SdeModel::OrnsteinUhlenbeck.check_theta(theta)?;
        if !(t > 0.0 && t.is_finite()) {
            return Err(invalid("transition time must be positive"));
        }
        if theta[0] <= 0.0 {
            return Err(invalid("exact OU transition needs theta1 > 0"));
        }
        let decay = (-theta[0] * t).exp();
        let var = theta[2] * theta[2] * (-(-2.0 * theta[0] * t).exp_m1()) / (2.0 * theta[0]);
        Ok(Self {
            theta2: theta[1],
            decay,
            sd: var.sqrt(),
        })
    }

    pub fn mean(&self, x: f64) -> f64 {
        self.theta2 + (x - self.theta2) * self.decay
    }

    pub fn variance(&self) -> f64 {
        self.sd * self.sd
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mean(x) + self.sd * z
    }
}

/// One draw from the exact OU conditional distribution after time `t`.
pub fn ou_exact_step<R: Rng + ?Sized>(x: f64, theta: &[f64], t: f64, rng: &mut R) -> Result<f64> {
    if !x.is_finite() {
        return Err(invalid("non-finite state"));
    }
    Ok(OuTransition::new(theta, t)?.sample(x, rng))
}

/// Result of one Milstein update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MilsteinUpdate {
    pub value: f64,
    pub clamped: bool,
}

/// Milstein update for a given Brownian increment `dw`:
/// `x + a dt + b dw + ½ b b′ (dw² − dt)`, clamped into the BMR interior.
pub fn milstein_update(model: SdeModel, theta: &[f64], x: f64, dt: f64, dw: f64) -> Result<MilsteinUpdate> {
    let (lo, hi) = model.state_space();
    if !x.is_finite() || x < lo || x > hi {
        return Err(invalid(format!("state {x} outside the state space")));
    }
    let raw = x
        + model.drift(x, theta) * dt
        + model.volatility(x, theta) * dw
        + model.milstein_correction(x, theta) * (dw * dw - dt);
    Ok(clamp_to_interior(model, raw))
}

fn clamp_to_interior(model: SdeModel, raw: f64) -> MilsteinUpdate {
    match model {
        SdeModel::OrnsteinUhlenbeck => MilsteinUpdate {
            value: raw,
            clamped: false,
        },
        SdeModel::BoundedMeanReversion => {
            let bound = 1.0 - BOUNDARY_EPS;
            let value = raw.clamp(-bound, bound);
            MilsteinUpdate {
                value,
                clamped: value != raw,
            }
        }
    }
}

/// One Milstein step with `ΔW ~ N(0, dt)` drawn from `rng`.
pub fn milstein_step<R: Rng + ?Sized>(
    x: f64,
    model: SdeModel,
    theta: &[f64],
    dt: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(invalid("dt must be positive"));
    }
    let z: f64 = rng.sample(StandardNormal);
    Ok(milstein_update(model, theta, x, dt, dt.sqrt() * z)?.value)
}

/// Simulated paths and their clamp diagnostics.
#[derive(Debug, Clone)]
pub struct SimulatedPaths {
    pub model: SdeModel,
    pub config: SimConfig,
    pub paths: Vec<SnapshotData>,
    pub clamp_count: u64,
}

impl SimulatedPaths {
    /// All pairs of all paths in path order.
    pub fn concatenated(&self) -> Result<SnapshotData> {
        SnapshotData::concat(&self.paths)
    }
}

/// Draws the initial state of path `k`.
fn initial_state<R: Rng + ?Sized>(model: SdeModel, cfg: &SimConfig, rng: &mut R) -> Result<f64> {
    match cfg.x0 {
        InitialCondition::Value(v) => Ok(v),
        InitialCondition::Stationary => match model {
            SdeModel::OrnsteinUhlenbeck => {
                let th = &cfg.theta;
                let sd = (th[2] * th[2] / (2.0 * th[0])).sqrt();
                let z: f64 = rng.sample(StandardNormal);
                Ok(th[1] + sd * z)
            }
            SdeModel::BoundedMeanReversion => {
                // Stationary density ∝ (1 − x²)^{θ1/θ2 − 1}.
                let alpha = cfg.theta[0] / cfg.theta[1];
                let beta = Beta::new(alpha, alpha).map_err(|e| invalid(e.to_string()))?;
                let u: f64 = beta.sample(rng);
                Ok(clamp_to_interior(model, 2.0 * u - 1.0).value)
            }
        },
    }
}

fn simulate_path(model: SdeModel, cfg: &SimConfig, k: usize) -> Result<(Vec<f64>, u64)> {
    let mut rng = path_rng(cfg.seed, k as u64);
    let mut states = Vec::with_capacity(cfg.n_points + 1);
    let mut x = initial_state(model, cfg, &mut rng)?;
    states.push(x);
    let mut clamps = 0u64;
    match cfg.scheme {
        Scheme::ExactOu => {
            let tr = OuTransition::new(&cfg.theta, cfg.t_step)?;
            for _ in 0..cfg.n_points {
                x = tr.sample(x, &mut rng);
                states.push(x);
            }
        }
        Scheme::Milstein => {
            let sub = cfg.substeps()?;
            let dt = cfg.internal_dt;
            let sqrt_dt = dt.sqrt();
            for _ in 0..cfg.n_points {
                for _ in 0..sub {
                    let z: f64 = rng.sample(StandardNormal);
                    let step = milstein_update(model, &cfg.theta, x, dt, sqrt_dt * z)?;
                    clamps += u64::from(step.clamped);
                    x = step.value;
                }
                states.push(x);
            }
        }
    }
    Ok((states, clamps))
}

/// Simulates `cfg.n_paths` independent paths of `cfg.n_points` snapshot
/// pairs each. Output is bit-identical for equal configurations.
pub fn simulate_snapshots(model: SdeModel, cfg: &SimConfig) -> Result<SimulatedPaths> {
    cfg.validate(model)?;
    let results: Vec<Result<(Vec<f64>, u64)>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|k| simulate_path(model, cfg, k))
        .collect();
    let mut paths = Vec::with_capacity(cfg.n_paths);
    let mut clamp_count = 0;
    for r in results {
        let (states, clamps) = r?;
        clamp_count += clamps;
        paths.push(SnapshotData::from_path(&states, cfg.t_step)?);
    }
    if clamp_count > 0 {
        log::debug!("{clamp_count} Milstein sub-steps clamped into the state space");
    }
    Ok(SimulatedPaths {
        model,
        config: cfg.clone(),
        paths,
        clamp_count,
    })
}

/// Deterministic flow of the OU drift ODE `dX = θ1(θ2 − X) dt`.
pub fn ou_ode_flow(x: f64, theta1: f64, theta2: f64, t: f64) -> f64 {
    theta2 + (x - theta2) * (-theta1 * t).exp()
}
