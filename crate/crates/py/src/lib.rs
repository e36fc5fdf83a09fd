//! Python bindings: compartment simulation, the compartment network, dynamics
//! surrogates and the fatigue pipeline.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use motion_fatigue::bilstm;
use motion_fatigue::cc3::{self, Cc3Params, CompartmentState, FatigueProfile, LoadProfile};
use motion_fatigue::dynamics::{self, ArmParams};
use motion_fatigue::metrics;
use motion_fatigue::motion::{self, Sequence, SequenceKind};
use motion_fatigue::nn::{Activation, Checkpoint, TrainConfig};
use motion_fatigue::pinn::{self, BoundaryCondition, OracleTrajectory, PinnArchitecture, PinnMode, PinnTrainConfig};
use motion_fatigue::pipeline::{self, FatigueMode, PipelineConfig, SurrogateBank};
use motion_fatigue::{Error, ErrorKind};

fn to_py(e: Error) -> PyErr {
    match (&e, e.kind()) {
        (Error::Io(_), _) => PyIOError::new_err(e.to_string()),
        (_, ErrorKind::Numeric) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn params(f: f64, r: f64, ld: f64, lr: f64) -> PyResult<Cc3Params> {
    Cc3Params::new(f, r, ld, lr).map_err(to_py)
}

/// Simulate the three-compartment model from rest.
///
/// Returns a dict of lists with keys `t`, `M_A`, `M_F`, `M_R`.
#[pyfunction]
#[pyo3(signature = (tl="const:100", duration=180.0, dt=0.05, F=0.00912, R=0.00094, LD=10.0, LR=10.0))]
#[allow(non_snake_case)]
fn simulate_3cc(
    tl: &str,
    duration: f64,
    dt: f64,
    F: f64,
    R: f64,
    LD: f64,
    LR: f64,
) -> PyResult<BTreeMap<String, Vec<f64>>> {
    let p = params(F, R, LD, LR)?;
    let profile = LoadProfile::parse(tl, duration, dt).map_err(to_py)?;
    let states = cc3::simulate(&CompartmentState::REST, &profile, &p).map_err(to_py)?;
    let mut out = BTreeMap::new();
    out.insert("t".into(), (0..states.len()).map(|k| k as f64 * dt).collect());
    out.insert("M_A".into(), states.iter().map(|s| s.active).collect());
    out.insert("M_F".into(), states.iter().map(|s| s.fatigued).collect());
    out.insert("M_R".into(), states.iter().map(|s| s.resting).collect());
    Ok(out)
}

/// `100 - lambda * M_F`, in percent.
#[pyfunction]
fn residual_capacity_lambda(fatigued: f64, lam: f64) -> PyResult<f64> {
    cc3::residual_capacity_lambda(fatigued, lam).map_err(to_py)
}

#[pyfunction]
fn nrmse(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    metrics::nrmse(&pred, &truth).map_err(to_py)
}

#[pyfunction]
fn r_squared(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    metrics::r_squared(&pred, &truth).map_err(to_py)
}

/// Write a synthetic two-link arm dataset to `out`; returns the trial count.
#[pyfunction]
#[pyo3(signature = (out, trials=20, frames=200, dt=0.05, seed=0))]
fn generate_dataset(out: PathBuf, trials: usize, frames: usize, dt: f64, seed: u64) -> PyResult<usize> {
    let arm = ArmParams::default();
    let data = dynamics::generate_dataset(&arm, trials, frames, dt, seed).map_err(to_py)?;
    dynamics::write_dataset(&out, &data, &arm, seed).map_err(to_py)?;
    Ok(data.len())
}

/// Network mapping `(t, M_A)` to `(M_F, M_R)` for one joint.
#[pyclass(name = "Pinn3cc")]
struct PyPinn3cc {
    inner: pinn::Pinn3ccModel,
}

fn train_config(epochs: usize, seed: u64, physics_weight: f64) -> PinnTrainConfig {
    PinnTrainConfig {
        train: TrainConfig {
            epochs,
            patience: None,
            seed,
            ..TrainConfig::default()
        },
        physics_weight,
    }
}

#[pymethods]
impl PyPinn3cc {
    #[new]
    #[pyo3(signature = (F=0.00912, R=0.00094, LD=10.0, LR=10.0, duration=100.0, hidden_width=64, activation="relu", seed=0))]
    #[allow(non_snake_case, clippy::too_many_arguments)]
    fn new(
        F: f64,
        R: f64,
        LD: f64,
        LR: f64,
        duration: f64,
        hidden_width: usize,
        activation: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let activation = match activation {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            other => return Err(PyValueError::new_err(format!("unknown activation `{other}`"))),
        };
        let arch = PinnArchitecture {
            hidden_width,
            activation,
        };
        let inner = pinn::Pinn3ccModel::new(arch, params(F, R, LD, LR)?, duration, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Fit to an oracle trajectory sampled at `frames` points.
    ///
    /// Returns the total loss before training followed by one value per epoch.
    #[pyo3(signature = (load="onset:50:5", frames=50, dt=0.05, epochs=500, seed=0, physics_weight=1.0))]
    fn train_supervised(
        &mut self,
        load: &str,
        frames: usize,
        dt: f64,
        epochs: usize,
        seed: u64,
        physics_weight: f64,
    ) -> PyResult<Vec<f64>> {
        let profile = LoadProfile::parse(load, self.inner.time_scale(), dt).map_err(to_py)?;
        let oracle = OracleTrajectory::simulate(self.inner.params(), profile, &CompartmentState::REST).map_err(to_py)?;
        let data = oracle.frames(frames).map_err(to_py)?;
        let report = self
            .inner
            .train_supervised(&data, &train_config(epochs, seed, physics_weight))
            .map_err(to_py)?;
        Ok(std::iter::once(&report.initial).chain(&report.history).map(|b| b.total).collect())
    }

    /// Fit from the boundary condition at rest and the compartment equations only.
    #[pyo3(signature = (load="const:50", points=256, dt=0.05, epochs=300, seed=0, physics_weight=1.0))]
    fn train_unsupervised(
        &mut self,
        load: &str,
        points: usize,
        dt: f64,
        epochs: usize,
        seed: u64,
        physics_weight: f64,
    ) -> PyResult<Vec<f64>> {
        let profile = LoadProfile::parse(load, self.inner.time_scale(), dt).map_err(to_py)?;
        let pts = pinn::collocation_points(&profile, points).map_err(to_py)?;
        let bc = BoundaryCondition::from_rest(profile.at(0.0));
        let report = self
            .inner
            .train_unsupervised(&pts, &bc, &train_config(epochs, seed, physics_weight))
            .map_err(to_py)?;
        Ok(std::iter::once(&report.initial).chain(&report.history).map(|b| b.total).collect())
    }

    /// `(M_F, M_R)` in %MVC.
    fn predict(&self, t: f64, active: f64) -> (f64, f64) {
        self.inner.predict(t, active)
    }

    /// `(dM_F/dt, dM_R/dt)` by differentiating the network in time.
    fn time_derivatives(&self, t: f64, active: f64) -> (f64, f64) {
        self.inner.time_derivatives(t, active)
    }

    fn physics_residuals(&self, t: f64, active: f64, target: f64) -> (f64, f64) {
        self.inner.physics_residuals(t, active, target)
    }

    #[pyo3(signature = (path, seed=0))]
    fn save(&self, path: PathBuf, seed: u64) -> PyResult<()> {
        let ckpt = self.inner.to_checkpoint(seed, PinnMode::Supervised).map_err(to_py)?;
        ckpt.save(path).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = Checkpoint::load(path).map_err(to_py)?;
        let inner = pinn::Pinn3ccModel::from_checkpoint(&ckpt).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_params(&self) -> usize {
        use motion_fatigue::nn::Parameters;
        self.inner.n_params()
    }
}

/// A trained inverse (`id`) or forward (`fd`) dynamics surrogate.
#[pyclass(name = "DynSurrogate")]
struct PyDynSurrogate {
    inner: bilstm::DynSurrogate,
}

#[pymethods]
impl PyDynSurrogate {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = Checkpoint::load(path).map_err(to_py)?;
        let inner = bilstm::DynSurrogate::from_checkpoint(&ckpt).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn role(&self) -> &'static str {
        match self.inner.role {
            bilstm::DynRole::Inverse => "id",
            bilstm::DynRole::Forward => "fd",
        }
    }

    #[getter]
    fn input_joints(&self) -> Vec<String> {
        self.inner.input_joints().to_vec()
    }

    #[getter]
    fn output_joints(&self) -> Vec<String> {
        self.inner.output_joints().to_vec()
    }

    /// Predict per-frame outputs for `rows` (frames x input joints, physical units).
    fn predict(&self, rows: Vec<Vec<f64>>, dt: f64) -> PyResult<Vec<Vec<f64>>> {
        let seq = Sequence::from_rows(self.inner.role.input_kind(), self.inner.input_joints(), dt, &rows)
            .map_err(to_py)?;
        let out = self.inner.predict(&seq).map_err(to_py)?;
        Ok(out.frames().map(<[f64]>::to_vec).collect())
    }
}

/// Run the fatigue pipeline on a joint-angle CSV.
///
/// `checkpoints` lists ID and FD surrogate files. Returns a dict with the
/// joint names, fatigued and baseline rows, and per-joint deviation NRMSE.
#[pyfunction]
#[pyo3(signature = (motion_path, profiles_path, checkpoints, mode="dynamic"))]
fn apply_fatigue(
    py: Python<'_>,
    motion_path: PathBuf,
    profiles_path: PathBuf,
    checkpoints: Vec<PathBuf>,
    mode: &str,
) -> PyResult<Py<PyAny>> {
    let motion = motion::load_sequence(&motion_path, SequenceKind::Angle).map_err(to_py)?;
    let profiles = FatigueProfile::load_all(&profiles_path).map_err(to_py)?;
    let mut inverse = Vec::new();
    let mut forward = Vec::new();
    for path in &checkpoints {
        let ckpt = Checkpoint::load(path).map_err(to_py)?;
        let s = bilstm::DynSurrogate::from_checkpoint(&ckpt).map_err(to_py)?;
        match s.role {
            bilstm::DynRole::Inverse => inverse.push(s),
            bilstm::DynRole::Forward => forward.push(s),
        }
    }
    let bank = SurrogateBank::new(inverse, forward).map_err(to_py)?;
    let config = PipelineConfig::new(profiles, FatigueMode::parse(mode).map_err(to_py)?);
    let out = py
        .detach(|| pipeline::apply_fatigue(&motion, &config, &bank))
        .map_err(to_py)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("joints", out.fatigued.joint_names())?;
    dict.set_item("fatigued", out.fatigued.frames().map(<[f64]>::to_vec).collect::<Vec<_>>())?;
    dict.set_item("baseline", out.baseline.frames().map(<[f64]>::to_vec).collect::<Vec<_>>())?;
    let scores: BTreeMap<String, Option<f64>> =
        out.report.scores.iter().map(|s| (s.joint.clone(), s.nrmse)).collect();
    dict.set_item("nrmse", scores)?;
    Ok(dict.into_any().unbind())
}

#[pymodule]
fn motion_fatigue_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(simulate_3cc, m)?)?;
    m.add_function(wrap_pyfunction!(residual_capacity_lambda, m)?)?;
    m.add_function(wrap_pyfunction!(nrmse, m)?)?;
    m.add_function(wrap_pyfunction!(r_squared, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(apply_fatigue, m)?)?;
    m.add_class::<PyPinn3cc>()?;
    m.add_class::<PyDynSurrogate>()?;
    Ok(())
}
