//! Physics-informed 3CC-λ network: a five-layer MLP mapping `(t, M_A)` to
//! `(M_F, M_R)`, trained on data plus the squared residuals of the
//! fatigued and resting compartment equations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cc3::{self, Cc3Params, CompartmentState, ControllerCase, LoadProfile};
use crate::error::{Error, Result};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{
    ordered_grad_sum, train_loop, Activation, LossTerms, Mlp, Objective, Parameters, TrainConfig,
};

pub const LAYERS: usize = 5;
pub const CHECKPOINT_KIND: &str = "pinn-3cc";

/// Inputs and outputs are scaled by this factor (%MVC ↔ [0, 1]).
const MVC: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PinnArchitecture {
    pub hidden_width: usize,
    pub activation: Activation,
}

impl Default for PinnArchitecture {
    fn default() -> Self {
        Self {
            hidden_width: 64,
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PinnMode {
    Supervised,
    Unsupervised,
}

/// A point where the network is evaluated: time, activation and target load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollocationPoint {
    pub t: f64,
    pub active: f64,
    pub target: f64,
}

/// A collocation point with known compartment values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub point: CollocationPoint,
    pub fatigued: f64,
    pub resting: f64,
}

/// Initial compartment values for forward-problem training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCondition {
    pub active: f64,
    pub fatigued: f64,
    pub resting: f64,
}

impl BoundaryCondition {
    /// No fatigue at `t = 0`; every unit not active is resting.
    pub fn from_rest(active: f64) -> Self {
        Self {
            active,
            fatigued: 0.0,
            resting: MVC - active,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PinnLossBreakdown {
    pub total: f64,
    /// `L_NN` in supervised mode, `L_BC` in unsupervised mode.
    pub data: f64,
    pub physics: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinnOutput {
    pub fatigued: f64,
    pub resting: f64,
    pub d_fatigued: f64,
    pub d_resting: f64,
}

/// `(ρ_F, ρ_R)` for given compartment values and rates.
pub fn residuals(
    p: &Cc3Params,
    active: f64,
    target: f64,
    fatigued: f64,
    resting: f64,
    d_fatigued: f64,
    d_resting: f64,
) -> (f64, f64) {
    let c = cc3::controller_flow(active, resting, target, p);
    (
        d_fatigued - p.fatigue * active + p.recovery * fatigued,
        d_resting + c - p.recovery * fatigued,
    )
}

/// `∂C/∂M_R`, non-zero only when the resting pool limits recruitment.
fn controller_slope(active: f64, resting: f64, target: f64, p: &Cc3Params) -> f64 {
    match cc3::controller_case(active, resting, target) {
        ControllerCase::Exhausted => p.develop,
        ControllerCase::Develop | ControllerCase::Relax => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pinn3ccModel {
    mlp: Mlp,
    params: Cc3Params,
    time_scale: f64,
    architecture: PinnArchitecture,
}

impl Pinn3ccModel {
    /// `time_scale` is the horizon used to map `t` into `[0, 1]`.
    pub fn new(architecture: PinnArchitecture, params: Cc3Params, time_scale: f64, seed: u64) -> Result<Self> {
        if architecture.hidden_width == 0 {
            return Err(Error::invalid("hidden width must be positive"));
        }
        let w = architecture.hidden_width;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = Mlp::new(&[2, w, w, w, w, 2], architecture.activation, Activation::Linear, &mut rng);
        Self::from_mlp(mlp, params, time_scale)
    }

    pub fn from_mlp(mlp: Mlp, params: Cc3Params, time_scale: f64) -> Result<Self> {
        params.validate()?;
        if !(time_scale > 0.0 && time_scale.is_finite()) {
            return Err(Error::invalid(format!("time scale must be positive, got {time_scale}")));
        }
        if mlp.layers().len() != LAYERS || mlp.inputs() != 2 || mlp.outputs() != 2 {
            return Err(Error::invalid(format!(
                "3CC-λ network needs {LAYERS} layers mapping 2 inputs to 2 outputs"
            )));
        }
        let architecture = PinnArchitecture {
            hidden_width: mlp.layers()[0].outputs(),
            activation: mlp.layers()[0].activation(),
        };
        Ok(Self {
            mlp,
            params,
            time_scale,
            architecture,
        })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn params(&self) -> &Cc3Params {
        &self.params
    }

    pub fn time_scale(&self) -> f64 {
        self.time_scale
    }

    pub fn architecture(&self) -> PinnArchitecture {
        self.architecture
    }

    fn encode(&self, t: f64, active: f64) -> [f64; 2] {
        [t / self.time_scale, active / MVC]
    }

    /// `(M̂_F, M̂_R)` in %MVC, unclamped.
    pub fn predict(&self, t: f64, active: f64) -> (f64, f64) {
        let y = self.mlp.infer(&self.encode(t, active)).expect("input width is fixed");
        (MVC * y[0], MVC * y[1])
    }

    /// Predictions clamped to `[0, 100]`.
    pub fn predict_clamped(&self, t: f64, active: f64) -> (f64, f64) {
        let (f, r) = self.predict(t, active);
        (f.clamp(0.0, MVC), r.clamp(0.0, MVC))
    }

    /// `(∂M̂_F/∂t, ∂M̂_R/∂t)` with `M_A` held fixed, by reverse-mode differentiation.
    pub fn time_derivatives(&self, t: f64, active: f64) -> (f64, f64) {
        let (_, cache) = self.mlp.forward(&self.encode(t, active)).expect("input width is fixed");
        let scale = MVC / self.time_scale;
        let mut d = [0.0; 2];
        for (k, seed) in [[1.0, 0.0], [0.0, 1.0]].iter().enumerate() {
            let g = self.mlp.backward(&cache, seed).expect("cache from this model");
            d[k] = scale * g.input[0];
        }
        (d[0], d[1])
    }

    /// Outputs and time rates in one forward-mode pass.
    pub fn evaluate(&self, t: f64, active: f64) -> PinnOutput {
        let (y, dy, _) = self
            .mlp
            .forward_tangent(&self.encode(t, active), &[1.0, 0.0])
            .expect("input width is fixed");
        let scale = MVC / self.time_scale;
        PinnOutput {
            fatigued: MVC * y[0],
            resting: MVC * y[1],
            d_fatigued: scale * dy[0],
            d_resting: scale * dy[1],
        }
    }

    pub fn physics_residuals(&self, t: f64, active: f64, target: f64) -> (f64, f64) {
        let o = self.evaluate(t, active);
        residuals(&self.params, active, target, o.fatigued, o.resting, o.d_fatigued, o.d_resting)
    }

    /// Loss terms at one point. `obs` adds the squared output error scaled by
    /// `data_scale`; the squared residuals are scaled by `phys_scale`. The
    /// matching gradient is added into `grad` when given.
    fn point_terms(
        &self,
        point: &CollocationPoint,
        obs: Option<(f64, f64)>,
        data_scale: f64,
        phys_scale: f64,
        grad: Option<&mut [f64]>,
    ) -> Result<(f64, f64)> {
        let (y, dy, cache) = self
            .mlp
            .forward_tangent(&self.encode(point.t, point.active), &[1.0, 0.0])?;
        let scale = MVC / self.time_scale;
        let (f, r) = (MVC * y[0], MVC * y[1]);
        let (df, dr) = (scale * dy[0], scale * dy[1]);
        let p = &self.params;
        let (rho_f, rho_r) = residuals(p, point.active, point.target, f, r, df, dr);
        let physics = rho_f * rho_f + rho_r * rho_r;

        // Gradients with respect to (M̂_F, M̂_R) and their rates.
        let mut g_val = [0.0; 2];
        let mut g_rate = [0.0; 2];
        let mut data = 0.0;
        if let Some((f_obs, r_obs)) = obs {
            let (ef, er) = (f - f_obs, r - r_obs);
            data = ef * ef + er * er;
            g_val[0] += 2.0 * data_scale * ef;
            g_val[1] += 2.0 * data_scale * er;
        }
        if phys_scale != 0.0 {
            let slope = controller_slope(point.active, r, point.target, p);
            g_rate[0] += 2.0 * phys_scale * rho_f;
            g_rate[1] += 2.0 * phys_scale * rho_r;
            g_val[0] += 2.0 * phys_scale * (rho_f - rho_r) * p.recovery;
            g_val[1] += 2.0 * phys_scale * rho_r * slope;
        }
        if let Some(grad) = grad {
            let g_y = [MVC * g_val[0], MVC * g_val[1]];
            let g_dy = [scale * g_rate[0], scale * g_rate[1]];
            self.mlp.backward_tangent_into(&cache, &g_y, &g_dy, grad)?;
        }
        Ok((data, physics))
    }

    /// Loss over a whole supervised dataset.
    pub fn supervised_loss(&self, data: &[Observation], physics_weight: f64) -> Result<PinnLossBreakdown> {
        let idx: Vec<usize> = (0..data.len()).collect();
        SupervisedObjective { data, physics_weight }.terms(self, &idx, None)
    }

    /// Loss over a whole set of collocation points.
    pub fn unsupervised_loss(
        &self,
        points: &[CollocationPoint],
        bc: &BoundaryCondition,
        physics_weight: f64,
    ) -> Result<PinnLossBreakdown> {
        let idx: Vec<usize> = (0..points.len()).collect();
        UnsupervisedObjective { points, bc: *bc, physics_weight }.terms(self, &idx, None)
    }

    pub fn train_supervised(&mut self, data: &[Observation], config: &PinnTrainConfig) -> Result<PinnTrainReport> {
        config.validate()?;
        let objective = SupervisedObjective {
            data,
            physics_weight: config.physics_weight,
        };
        run(self, &objective, config, PinnMode::Supervised)
    }

    pub fn train_unsupervised(
        &mut self,
        points: &[CollocationPoint],
        bc: &BoundaryCondition,
        config: &PinnTrainConfig,
    ) -> Result<PinnTrainReport> {
        config.validate()?;
        let objective = UnsupervisedObjective {
            points,
            bc: *bc,
            physics_weight: config.physics_weight,
        };
        run(self, &objective, config, PinnMode::Unsupervised)
    }

    pub fn to_checkpoint(&self, seed: u64, mode: PinnMode) -> Result<Checkpoint> {
        let meta = json!({
            "cc3": self.params,
            "time_scale": self.time_scale,
            "mode": mode,
        });
        Checkpoint::new(CHECKPOINT_KIND, &self.architecture, seed, meta, &self.mlp.params())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(CHECKPOINT_KIND)?;
        let arch: PinnArchitecture = ckpt.architecture()?;
        let params: Cc3Params = serde_json::from_value(ckpt.metadata["cc3"].clone())?;
        let time_scale = ckpt.metadata["time_scale"]
            .as_f64()
            .ok_or_else(|| Error::Checkpoint("missing time_scale".into()))?;
        let mut model = Self::new(arch, params, time_scale, 0)?;
        model.mlp.set_params(&ckpt.decode_params()?)?;
        Ok(model)
    }
}

impl Parameters for Pinn3ccModel {
    fn n_params(&self) -> usize {
        self.mlp.n_params()
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        self.mlp.write_params(out);
    }

    fn read_params(&mut self, src: &mut &[f64]) {
        self.mlp.read_params(src);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PinnTrainConfig {
    pub train: TrainConfig,
    /// Weight on `L_PB`; 1 gives the plain sum, 0 plain regression.
    pub physics_weight: f64,
}

impl Default for PinnTrainConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            physics_weight: 1.0,
        }
    }
}

impl PinnTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.physics_weight >= 0.0 && self.physics_weight.is_finite()) {
            return Err(Error::invalid("physics weight must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinnTrainReport {
    pub mode: PinnMode,
    /// Full-dataset loss before the first update.
    pub initial: PinnLossBreakdown,
    /// Mean mini-batch loss for each epoch.
    pub history: Vec<PinnLossBreakdown>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl PinnTrainReport {
    /// Per-epoch log, with the pre-training loss as epoch 0.
    pub fn log_csv(&self) -> String {
        let data = match self.mode {
            PinnMode::Supervised => "L_NN",
            PinnMode::Unsupervised => "L_BC",
        };
        let mut out = format!("epoch,L_total,{data},L_PB\n");
        let rows = std::iter::once(&self.initial).chain(&self.history);
        for (epoch, b) in rows.enumerate() {
            out.push_str(&format!("{epoch},{},{},{}\n", b.total, b.data, b.physics));
        }
        out
    }
}

trait PinnObjective: Sync {
    fn len(&self) -> usize;

    fn terms(&self, model: &Pinn3ccModel, batch: &[usize], grad: Option<&mut [f64]>) -> Result<PinnLossBreakdown>;
}

fn batch_terms<F>(batch: &[usize], grad: Option<&mut [f64]>, f: F) -> Result<(f64, f64)>
where
    F: Fn(usize, Option<&mut [f64]>) -> Result<(f64, f64)> + Sync,
{
    let parts = match grad {
        None => batch.iter().map(|&i| f(i, None)).collect::<Result<Vec<_>>>()?,
        Some(grad) => ordered_grad_sum(batch, grad, |&i, g| f(i, Some(g)))?,
    };
    Ok(parts.iter().fold((0.0, 0.0), |acc, t| (acc.0 + t.0, acc.1 + t.1)))
}

struct SupervisedObjective<'a> {
    data: &'a [Observation],
    physics_weight: f64,
}

impl PinnObjective for SupervisedObjective<'_> {
    fn len(&self) -> usize {
        self.data.len()
    }

    fn terms(&self, model: &Pinn3ccModel, batch: &[usize], grad: Option<&mut [f64]>) -> Result<PinnLossBreakdown> {
        let n = batch.len() as f64;
        let (data, physics) = batch_terms(batch, grad, |i, g| {
            let o = &self.data[i];
            model.point_terms(&o.point, Some((o.fatigued, o.resting)), 1.0 / n, self.physics_weight / n, g)
        })?;
        let (data, physics) = (data / n, physics / n);
        Ok(PinnLossBreakdown {
            total: data + self.physics_weight * physics,
            data,
            physics,
        })
    }
}

struct UnsupervisedObjective<'a> {
    points: &'a [CollocationPoint],
    bc: BoundaryCondition,
    physics_weight: f64,
}

impl PinnObjective for UnsupervisedObjective<'_> {
    fn len(&self) -> usize {
        self.points.len()
    }

    fn terms(&self, model: &Pinn3ccModel, batch: &[usize], mut grad: Option<&mut [f64]>) -> Result<PinnLossBreakdown> {
        let n = batch.len() as f64;
        let (_, physics) = batch_terms(batch, grad.as_deref_mut(), |i, g| {
            model.point_terms(&self.points[i], None, 0.0, self.physics_weight / n, g)
        })?;
        let origin = CollocationPoint {
            t: 0.0,
            active: self.bc.active,
            target: self.bc.active,
        };
        let (bc, _) = model.point_terms(&origin, Some((self.bc.fatigued, self.bc.resting)), 1.0, 0.0, grad)?;
        let physics = physics / n;
        Ok(PinnLossBreakdown {
            total: bc + self.physics_weight * physics,
            data: bc,
            physics,
        })
    }
}

struct Adapter<'a, O: ?Sized>(&'a O);

impl<O: PinnObjective + ?Sized> Objective<Pinn3ccModel> for Adapter<'_, O> {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn loss_and_grad(&self, model: &Pinn3ccModel, batch: &[usize], grad: &mut [f64]) -> Result<LossTerms> {
        let b = self.0.terms(model, batch, Some(grad))?;
        Ok(LossTerms {
            total: b.total,
            components: vec![b.data, b.physics],
        })
    }
}

fn run(
    model: &mut Pinn3ccModel,
    objective: &dyn PinnObjective,
    config: &PinnTrainConfig,
    mode: PinnMode,
) -> Result<PinnTrainReport> {
    if objective.len() == 0 {
        return Err(Error::Empty("training points".into()));
    }
    let all: Vec<usize> = (0..objective.len()).collect();
    let initial = objective.terms(model, &all, None)?;
    if !initial.total.is_finite() {
        return Err(Error::NonFinite("initial 3CC-λ loss".into()));
    }
    let report = train_loop(model, &Adapter(objective), &config.train)?;
    let history = report
        .history
        .iter()
        .map(|e| PinnLossBreakdown {
            total: e.train_loss,
            data: e.components[0],
            physics: e.components[1],
        })
        .collect();
    Ok(PinnTrainReport {
        mode,
        initial,
        history,
        best_epoch: report.best_epoch,
        stopped_early: report.stopped_early,
    })
}

/// Dense reference solution from the 3CC simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTrajectory {
    pub profile: LoadProfile,
    pub states: Vec<CompartmentState>,
}

impl OracleTrajectory {
    pub fn simulate(params: &Cc3Params, profile: LoadProfile, initial: &CompartmentState) -> Result<Self> {
        let states = cc3::simulate(initial, &profile, params)?;
        Ok(Self { profile, states })
    }

    pub fn duration(&self) -> f64 {
        self.profile.duration()
    }

    pub fn observation(&self, k: usize) -> Observation {
        let s = &self.states[k];
        Observation {
            point: CollocationPoint {
                t: k as f64 * self.profile.dt(),
                active: s.active,
                target: self.profile.values()[k],
            },
            fatigued: s.fatigued,
            resting: s.resting,
        }
    }

    fn frame_indices(&self, frames: usize) -> Result<Vec<usize>> {
        let n = self.states.len();
        if frames < 2 || frames > n {
            return Err(Error::invalid(format!(
                "cannot draw {frames} frames from a {n}-sample trajectory"
            )));
        }
        Ok((0..frames)
            .map(|k| ((k * (n - 1)) as f64 / (frames - 1) as f64).round() as usize)
            .collect())
    }

    /// `frames` evenly spaced observations including both end points.
    pub fn frames(&self, frames: usize) -> Result<Vec<Observation>> {
        Ok(self.frame_indices(frames)?.into_iter().map(|k| self.observation(k)).collect())
    }

    /// Observations midway between consecutive `frames` samples.
    pub fn midpoints(&self, frames: usize) -> Result<Vec<Observation>> {
        let idx = self.frame_indices(frames)?;
        Ok(idx.windows(2).map(|w| self.observation((w[0] + w[1]) / 2)).collect())
    }
}

/// `n` evenly spaced points over the profile with `M_A = TL`.
pub fn collocation_points(profile: &LoadProfile, n: usize) -> Result<Vec<CollocationPoint>> {
    if n < 2 {
        return Err(Error::invalid("need at least two collocation points"));
    }
    let d = profile.duration();
    Ok((0..n)
        .map(|k| {
            let t = d * k as f64 / (n - 1) as f64;
            let load = profile.at(t);
            CollocationPoint {
                t,
                active: load,
                target: load,
            }
        })
        .collect())
}
