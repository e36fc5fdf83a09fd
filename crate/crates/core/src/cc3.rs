//! Three-compartment controller (3CC) muscle fatigue dynamics.
//!
//! Motor units move between the active (`M_A`), fatigued (`M_F`) and resting
//! (`M_R`) pools, all in %MVC:
//!
//! ```text
//! dM_R/dt = -C(t) + R M_F
//! dM_A/dt =  C(t) - F M_A
//! dM_F/dt =  F M_A - R M_F
//! ```
//!
//! `C(t)` is a piecewise feedback controller that drives `M_A` toward the
//! target load `TL`. The pools always sum to 100.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::rk4_step;

/// Largest internal integration step used when advancing over a frame.
pub const MAX_SUBSTEP: f64 = 0.05;
const RENORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompartmentState {
    pub active: f64,
    pub fatigued: f64,
    pub resting: f64,
}

impl CompartmentState {
    /// All motor units rested.
    pub const REST: Self = Self {
        active: 0.0,
        fatigued: 0.0,
        resting: 100.0,
    };

    pub fn new(active: f64, fatigued: f64, resting: f64) -> Result<Self> {
        let s = Self {
            active,
            fatigued,
            resting,
        };
        if [active, fatigued, resting]
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0 || *v > 100.0)
        {
            return Err(Error::invalid(format!("compartments out of [0, 100]: {s:?}")));
        }
        if (s.total() - 100.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "compartments sum to {}, expected 100",
                s.total()
            )));
        }
        Ok(s)
    }

    pub fn total(&self) -> f64 {
        self.active + self.fatigued + self.resting
    }

    pub fn residual_capacity(&self) -> f64 {
        residual_capacity(self)
    }

    fn to_array(self) -> [f64; 3] {
        [self.active, self.fatigued, self.resting]
    }

    fn from_array(a: [f64; 3]) -> Self {
        Self {
            active: a[0],
            fatigued: a[1],
            resting: a[2],
        }
    }
}

impl Default for CompartmentState {
    fn default() -> Self {
        Self::REST
    }
}

/// Rate constants, all in 1/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cc3Params {
    #[serde(rename = "F")]
    pub fatigue: f64,
    #[serde(rename = "R")]
    pub recovery: f64,
    #[serde(rename = "LD")]
    pub develop: f64,
    #[serde(rename = "LR")]
    pub relax: f64,
}

impl Cc3Params {
    /// Elbow fatigue/recovery rates with the shared controller gains.
    pub const ELBOW: Self = Self {
        fatigue: 0.00912,
        recovery: 0.00094,
        develop: 10.0,
        relax: 10.0,
    };

    pub fn new(fatigue: f64, recovery: f64, develop: f64, relax: f64) -> Result<Self> {
        let p = Self {
            fatigue,
            recovery,
            develop,
            relax,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("F", self.fatigue),
            ("R", self.recovery),
            ("LD", self.develop),
            ("LR", self.relax),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerCase {
    /// `M_A < TL` and enough resting units: `L_D (TL - M_A)`.
    Develop,
    /// `M_A < TL` and resting pool exhausted: `L_D M_R`.
    Exhausted,
    /// `M_A >= TL`: `L_R (TL - M_A)`.
    Relax,
}

pub fn controller_case(active: f64, resting: f64, target: f64) -> ControllerCase {
    if active < target {
        if resting > target - active {
            ControllerCase::Develop
        } else {
            ControllerCase::Exhausted
        }
    } else {
        ControllerCase::Relax
    }
}

/// Evaluates one branch expression regardless of which case is active.
pub fn controller_branch(
    case: ControllerCase,
    active: f64,
    resting: f64,
    target: f64,
    p: &Cc3Params,
) -> f64 {
    match case {
        ControllerCase::Develop => p.develop * (target - active),
        ControllerCase::Exhausted => p.develop * resting,
        ControllerCase::Relax => p.relax * (target - active),
    }
}

/// Controller flow from the resting to the active pool, in %MVC/s.
pub fn controller_flow(active: f64, resting: f64, target: f64, p: &Cc3Params) -> f64 {
    controller_branch(controller_case(active, resting, target), active, resting, target, p)
}

pub fn controller(state: &CompartmentState, target: f64, p: &Cc3Params) -> f64 {
    controller_flow(state.active, state.resting, target, p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivatives {
    pub resting: f64,
    pub active: f64,
    pub fatigued: f64,
}

impl Derivatives {
    pub fn sum(&self) -> f64 {
        self.resting + self.active + self.fatigued
    }
}

pub fn derivatives(state: &CompartmentState, target: f64, p: &Cc3Params) -> Derivatives {
    let c = controller(state, target, p);
    let to_fatigue = p.fatigue * state.active;
    let to_rest = p.recovery * state.fatigued;
    Derivatives {
        resting: -c + to_rest,
        active: c - to_fatigue,
        fatigued: to_fatigue - to_rest,
    }
}

fn rate(p: &Cc3Params, target: f64) -> impl Fn(&[f64; 3]) -> [f64; 3] + '_ {
    move |y: &[f64; 3]| {
        let d = derivatives(&CompartmentState::from_array(*y), target, p);
        [d.active, d.fatigued, d.resting]
    }
}

/// Pulls a state back onto the simplex after an integration step.
fn guard(raw: [f64; 3]) -> CompartmentState {
    let mut s = raw.map(|v| v.max(0.0));
    let total: f64 = s.iter().sum();
    if (total - 100.0).abs() > RENORM_TOLERANCE && total > 0.0 {
        for v in &mut s {
            *v *= 100.0 / total;
        }
    }
    CompartmentState::from_array(s)
}

/// One classical RK4 step with the target load held over the step.
pub fn step_rk4(
    state: &CompartmentState,
    target: f64,
    p: &Cc3Params,
    dt: f64,
) -> Result<CompartmentState> {
    if !(dt > 0.0 && dt <= 0.5) {
        return Err(Error::invalid(format!("step must be in (0, 0.5], got {dt}")));
    }
    Ok(guard(rk4_step(rate(p, target), &state.to_array(), dt)))
}

/// Advances over `dt`, sub-stepping so no internal step exceeds [`MAX_SUBSTEP`].
pub fn advance(
    state: &CompartmentState,
    target: f64,
    p: &Cc3Params,
    dt: f64,
) -> Result<CompartmentState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let n = (dt / MAX_SUBSTEP).ceil().max(1.0) as usize;
    let h = dt / n as f64;
    let mut s = *state;
    for _ in 0..n {
        s = step_rk4(&s, target, p, h)?;
    }
    Ok(s)
}

/// Sampled target-load trace in %MVC.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadProfile {
    dt: f64,
    values: Vec<f64>,
}

impl LoadProfile {
    pub fn new(dt: f64, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=100.0).contains(*v)) {
            return Err(Error::invalid(format!("target load {v} outside [0, 100]")));
        }
        Ok(Self { dt, values })
    }

    /// `level` held for `duration` seconds; one sample per step including t=0.
    pub fn constant(level: f64, duration: f64, dt: f64) -> Result<Self> {
        let n = samples_for(duration, dt)?;
        Self::new(dt, vec![level; n])
    }

    /// Smooth onset `level (1 - exp(-t / tau))`.
    pub fn smooth_onset(level: f64, tau: f64, duration: f64, dt: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::invalid("onset time constant must be positive"));
        }
        let n = samples_for(duration, dt)?;
        let values = (0..n)
            .map(|k| level * (1.0 - (-(k as f64) * dt / tau).exp()))
            .collect();
        Self::new(dt, values)
    }

    /// Parses `const:<level>` or `onset:<level>:<tau>`.
    pub fn parse(spec: &str, duration: f64, dt: f64) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad number `{s}` in load spec `{spec}`")))
        };
        match parts.as_slice() {
            ["const", level] => Self::constant(num(level)?, duration, dt),
            ["onset", level, tau] => Self::smooth_onset(num(level)?, num(tau)?, duration, dt),
            _ => Err(Error::invalid(format!(
                "unknown load spec `{spec}` (expected const:<level> or onset:<level>:<tau>)"
            ))),
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.values.len().saturating_sub(1) as f64 * self.dt
    }

    /// Linear interpolation between samples, held constant outside the trace.
    pub fn at(&self, t: f64) -> f64 {
        let n = self.values.len();
        if n == 0 {
            return 0.0;
        }
        let x = (t / self.dt).clamp(0.0, (n - 1) as f64);
        let k = (x.floor() as usize).min(n - 1);
        if k + 1 == n {
            return self.values[k];
        }
        let w = x - k as f64;
        self.values[k] * (1.0 - w) + self.values[k + 1] * w
    }
}

fn samples_for(duration: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && duration >= 0.0) {
        return Err(Error::invalid("duration must be >= 0 and dt > 0"));
    }
    Ok((duration / dt).round() as usize + 1)
}

/// Simulates from `initial`, producing one state per profile sample.
///
/// `states[0]` is the initial state; `states[k + 1]` follows from holding
/// `TL_k` over `[t_k, t_k + dt]`.
pub fn simulate(
    initial: &CompartmentState,
    profile: &LoadProfile,
    p: &Cc3Params,
) -> Result<Vec<CompartmentState>> {
    if profile.is_empty() {
        return Err(Error::Empty("load profile".into()));
    }
    p.validate()?;
    let mut states = Vec::with_capacity(profile.len());
    let mut s = *initial;
    states.push(s);
    for &target in &profile.values[..profile.len() - 1] {
        s = advance(&s, target, p, profile.dt)?;
        states.push(s);
    }
    Ok(states)
}

pub fn residual_capacity(state: &CompartmentState) -> f64 {
    100.0 - state.fatigued
}

/// Residual capacity with fatigue attenuated by `lambda` in `[0, 1]`.
pub fn residual_capacity_lambda(fatigued: f64, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must be in [0, 1], got {lambda}")));
    }
    Ok(100.0 - lambda * fatigued)
}

/// Scales a torque by a residual capacity given in percent; sign is kept.
pub fn modulate_torque(torque: f64, capacity: f64) -> f64 {
    capacity / 100.0 * torque
}

/// Per-joint fatigue configuration as stored in profile JSON files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FatigueProfile {
    pub joint: String,
    #[serde(flatten)]
    pub params: Cc3Params,
    pub lambda: f64,
}

impl FatigueProfile {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!(
                "joint `{}`: lambda must be in [0, 1], got {}",
                self.joint, self.lambda
            )));
        }
        Ok(())
    }

    /// Reads either a single profile object or an array of them.
    pub fn load_all(path: impl AsRef<Path>) -> Result<Vec<Self>> {
        let text = fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let profiles: Vec<Self> = if value.is_array() {
            serde_json::from_value(value)?
        } else {
            vec![serde_json::from_value(value)?]
        };
        for p in &profiles {
            p.validate()?;
        }
        Ok(profiles)
    }
}

/// CSV with columns `t,M_A,M_F,M_R,RC,RC_lambda`.
pub fn trajectory_csv(states: &[CompartmentState], dt: f64, lambda: f64) -> Result<String> {
    let mut out = String::from("t,M_A,M_F,M_R,RC,RC_lambda\n");
    for (k, s) in states.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            k as f64 * dt,
            s.active,
            s.fatigued,
            s.resting,
            residual_capacity(s),
            residual_capacity_lambda(s.fatigued, lambda)?
        );
    }
    Ok(out)
}
