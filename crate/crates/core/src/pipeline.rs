//! End-to-end fatigue application: angles → ID surrogate → 3CC-λ →
//! modulated torques → FD surrogate → fatigued angles.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bilstm::{DynRole, DynSurrogate};
use crate::cc3::{self, CompartmentState, FatigueProfile, LoadProfile};
use crate::error::{Error, Result};
use crate::metrics;
use crate::motion::{torque_to_activation, MotionSequence, Sequence, SequenceKind, TorqueSequence};
use crate::pinn::Pinn3ccModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "level")]
pub enum FatigueMode {
    /// Compartment states evolve with the activation trace.
    Dynamic,
    /// Residual capacity held at a constant percentage.
    Fixed(f64),
}

impl FatigueMode {
    /// Parses `dynamic` or `fixed:<level>`.
    pub fn parse(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "dynamic" => Ok(Self::Dynamic),
            Some(("fixed", level)) => {
                let v: f64 = level
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad fatigue level `{level}`")))?;
                let mode = Self::Fixed(v);
                mode.validate()?;
                Ok(mode)
            }
            _ => Err(Error::invalid(format!(
                "unknown fatigue mode `{s}` (expected dynamic or fixed:<level>)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Self::Fixed(level) = self {
            if !(0.0..=100.0).contains(level) {
                return Err(Error::invalid(format!("fixed level {level} outside [0, 100]")));
            }
        }
        Ok(())
    }
}

/// Fatigue settings for one joint.
#[derive(Debug, Clone, PartialEq)]
pub struct JointFatigue {
    pub profile: FatigueProfile,
    /// Torque that maps to 100% activation; defaults to the ID surrogate's
    /// largest training magnitude.
    pub torque_max: Option<f64>,
    /// Network replacement for the compartment integrator in dynamic mode.
    pub pinn: Option<Pinn3ccModel>,
}

impl JointFatigue {
    pub fn new(profile: FatigueProfile) -> Self {
        Self {
            profile,
            torque_max: None,
            pinn: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub joints: Vec<JointFatigue>,
    pub mode: FatigueMode,
    /// Compartment step; defaults to the motion's frame interval.
    pub dt: Option<f64>,
}

impl PipelineConfig {
    pub fn new(profiles: Vec<FatigueProfile>, mode: FatigueMode) -> Self {
        Self {
            joints: profiles.into_iter().map(JointFatigue::new).collect(),
            mode,
            dt: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mode.validate()?;
        for j in &self.joints {
            j.profile.validate()?;
            if j.torque_max.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
                return Err(Error::invalid(format!("torque ceiling for `{}` must be positive", j.profile.joint)));
            }
        }
        if self.dt.is_some_and(|d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::invalid("pipeline dt must be positive"));
        }
        Ok(())
    }
}

/// Trained surrogates, each covering one or more output joints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurrogateBank {
    pub inverse: Vec<DynSurrogate>,
    pub forward: Vec<DynSurrogate>,
}

impl SurrogateBank {
    pub fn new(inverse: Vec<DynSurrogate>, forward: Vec<DynSurrogate>) -> Result<Self> {
        for (models, role) in [(&inverse, DynRole::Inverse), (&forward, DynRole::Forward)] {
            if let Some(m) = models.iter().find(|m| m.role != role) {
                return Err(Error::invalid(format!(
                    "{:?} surrogate for {:?} listed as {role:?}",
                    m.role,
                    m.output_joints()
                )));
            }
        }
        Ok(Self { inverse, forward })
    }

    fn locate(models: &[DynSurrogate], joint: &str) -> Option<(usize, usize)> {
        models.iter().enumerate().find_map(|(i, m)| {
            m.output_joints().iter().position(|j| j == joint).map(|k| (i, k))
        })
    }

    pub fn inverse_for(&self, joint: &str) -> Option<&DynSurrogate> {
        Self::locate(&self.inverse, joint).map(|(i, _)| &self.inverse[i])
    }

    pub fn forward_for(&self, joint: &str) -> Option<&DynSurrogate> {
        Self::locate(&self.forward, joint).map(|(i, _)| &self.forward[i])
    }
}

/// Per-joint compartment and capacity traces, one value per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTrace {
    pub joint: String,
    pub lambda: f64,
    /// Activation demanded by the unmodulated torque, %MVC.
    pub activation: Vec<f64>,
    pub active: Vec<f64>,
    pub fatigued: Vec<f64>,
    pub resting: Vec<f64>,
    /// Residual capacity applied to the torque, %.
    pub capacity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointScore {
    pub joint: String,
    pub nrmse: Option<f64>,
    pub r_squared: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FatigueReport {
    pub mode: FatigueMode,
    pub dt: f64,
    pub traces: Vec<JointTrace>,
    /// Fatigued versus baseline angles.
    pub scores: Vec<JointScore>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub fatigued: MotionSequence,
    /// FD(ID(q)) with no modulation.
    pub baseline: MotionSequence,
    pub torque: TorqueSequence,
    pub modulated_torque: TorqueSequence,
    pub report: FatigueReport,
}

fn run_stage(models: &[DynSurrogate], input: &Sequence) -> Result<Vec<Sequence>> {
    models.par_iter().map(|m| m.predict(input)).collect()
}

/// Merges per-model outputs into one sequence ordered as `joints`. Joints
/// no model covers are taken from `fallback` when given.
fn assemble(
    kind: SequenceKind,
    joints: &[String],
    dt: f64,
    parts: &[Sequence],
    fallback: Option<&Sequence>,
) -> Result<Sequence> {
    let channels = joints
        .iter()
        .map(|j| {
            parts
                .iter()
                .find_map(|p| p.joint_index(j).map(|k| p.channel(k)))
                .or_else(|| fallback.and_then(|f| f.joint_index(j).map(|k| f.channel(k))))
                .ok_or_else(|| Error::Missing(format!("{kind:?} model for joint `{j}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    Sequence::from_channels(kind, joints, dt, &channels)
}

fn trace_for(
    joint: &JointFatigue,
    torque: &[f64],
    ceiling: f64,
    mode: FatigueMode,
    dt: f64,
) -> Result<JointTrace> {
    let activation = torque
        .iter()
        .map(|&t| torque_to_activation(t, ceiling))
        .collect::<Result<Vec<_>>>()?;
    let p = &joint.profile;
    let n = torque.len();
    let (active, fatigued, resting, capacity) = match (mode, &joint.pinn) {
        // Only `level` percent of units can be recruited; the rest count as
        // fatigued so the three pools still sum to 100.
        (FatigueMode::Fixed(level), _) => {
            let a: Vec<f64> = activation.iter().map(|&a| a.min(level)).collect();
            let r = a.iter().map(|&a| level - a).collect();
            (a, vec![100.0 - level; n], r, vec![level; n])
        }
        (FatigueMode::Dynamic, None) => {
            let load = LoadProfile::new(dt, activation.clone())?;
            let states = cc3::simulate(&CompartmentState::REST, &load, &p.params)?;
            let cap = states
                .iter()
                .map(|s| cc3::residual_capacity_lambda(s.fatigued, p.lambda))
                .collect::<Result<Vec<_>>>()?;
            (
                states.iter().map(|s| s.active).collect(),
                states.iter().map(|s| s.fatigued).collect(),
                states.iter().map(|s| s.resting).collect(),
                cap,
            )
        }
        (FatigueMode::Dynamic, Some(net)) => {
            let mut f = Vec::with_capacity(n);
            let mut r = Vec::with_capacity(n);
            for (k, &a) in activation.iter().enumerate() {
                let (mf, mr) = net.predict_clamped(k as f64 * dt, a);
                f.push(mf);
                r.push(mr);
            }
            let cap = f
                .iter()
                .map(|&mf| cc3::residual_capacity_lambda(mf, p.lambda))
                .collect::<Result<Vec<_>>>()?;
            (activation.clone(), f, r, cap)
        }
    };
    Ok(JointTrace {
        joint: p.joint.clone(),
        lambda: p.lambda,
        activation,
        active,
        fatigued,
        resting,
        capacity,
    })
}

fn score(joint: &str, fatigued: &[f64], baseline: &[f64]) -> JointScore {
    JointScore {
        joint: joint.to_string(),
        nrmse: metrics::nrmse(fatigued, baseline).ok(),
        r_squared: metrics::r_squared(fatigued, baseline).ok(),
    }
}

/// Applies fatigue to `motion`. The ID, fatigue and FD stages each run over
/// the whole sequence in turn, since the surrogates are bidirectional.
pub fn apply_fatigue(motion: &MotionSequence, config: &PipelineConfig, models: &SurrogateBank) -> Result<PipelineOutput> {
    config.validate()?;
    if motion.kind() != SequenceKind::Angle {
        return Err(Error::invalid("pipeline input must be a joint-angle sequence"));
    }
    if motion.is_normalized() {
        return Err(Error::invalid("pipeline input must be in physical units"));
    }
    for j in &config.joints {
        let name = &j.profile.joint;
        if motion.joint_index(name).is_none() {
            return Err(Error::Missing(format!("joint `{name}` in the motion")));
        }
        if models.inverse_for(name).is_none() || models.forward_for(name).is_none() {
            return Err(Error::Missing(format!("ID and FD surrogates for joint `{name}`")));
        }
    }
    let dt = config.dt.unwrap_or(motion.dt());

    // Stage 1: torques for every joint any FD model reads.
    let id_out = run_stage(&models.inverse, motion)?;
    let mut torque_joints: Vec<String> = Vec::new();
    for m in &models.forward {
        for j in m.input_joints() {
            if !torque_joints.contains(j) {
                torque_joints.push(j.clone());
            }
        }
    }
    for j in &config.joints {
        if !torque_joints.contains(&j.profile.joint) {
            torque_joints.push(j.profile.joint.clone());
        }
    }
    let torque = assemble(SequenceKind::Torque, &torque_joints, motion.dt(), &id_out, None)?;

    // Stage 2: compartment traces and modulation.
    let traces = config
        .joints
        .par_iter()
        .map(|j| {
            let name = &j.profile.joint;
            let col = torque.joint_index(name).expect("assembled above");
            let ceiling = match j.torque_max {
                Some(t) => t,
                None => {
                    let m = models.inverse_for(name).expect("checked above");
                    let k = m.output_joints().iter().position(|o| o == name).expect("located");
                    m.output_norm.min[k].abs().max(m.output_norm.max[k].abs())
                }
            };
            trace_for(j, &torque.channel(col), ceiling, config.mode, dt)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut modulated = torque.clone();
    for tr in &traces {
        let col = torque.joint_index(&tr.joint).expect("assembled above");
        let scaled: Vec<f64> = torque
            .channel(col)
            .iter()
            .zip(&tr.capacity)
            .map(|(&t, &c)| cc3::modulate_torque(t, c))
            .collect();
        modulated.set_channel(col, &scaled)?;
    }

    // Stage 3: angles from modulated and unmodulated torques.
    let names = motion.joint_names();
    let fatigued = assemble(SequenceKind::Angle, &names, motion.dt(), &run_stage(&models.forward, &modulated)?, Some(motion))?;
    let baseline = assemble(SequenceKind::Angle, &names, motion.dt(), &run_stage(&models.forward, &torque)?, Some(motion))?;

    let scores = names
        .iter()
        .enumerate()
        .map(|(k, j)| score(j, &fatigued.channel(k), &baseline.channel(k)))
        .collect();
    Ok(PipelineOutput {
        fatigued,
        baseline,
        torque,
        modulated_torque: modulated,
        report: FatigueReport {
            mode: config.mode,
            dt,
            traces,
            scores,
            metadata: BTreeMap::new(),
        },
    })
}

/// Runs the pipeline once per fixed capacity level.
pub fn fixed_level_sweep(
    motion: &MotionSequence,
    config: &PipelineConfig,
    models: &SurrogateBank,
    levels: &[f64],
) -> Result<Vec<(f64, PipelineOutput)>> {
    levels
        .iter()
        .map(|&level| {
            let mut cfg = config.clone();
            cfg.mode = FatigueMode::Fixed(level);
            Ok((level, apply_fatigue(motion, &cfg, models)?))
        })
        .collect()
}

/// One labelled pipeline run for curve export.
#[derive(Debug, Clone, Copy)]
pub struct CurveRun<'a> {
    pub label: &'a str,
    pub output: &'a PipelineOutput,
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes `angles_<joint>_<label>.csv` (baseline and fatigued angles scaled
/// to `[0, 1]` by the joint's range over all runs) and
/// `compartments_<joint>_<label>.csv` for each fatigued joint. Returns the
/// written paths in order.
pub fn export_curves(runs: &[CurveRun<'_>], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let first = runs.first().ok_or_else(|| Error::Empty("curve runs".into()))?;
    fs::create_dir_all(dir)?;
    let names = first.output.baseline.joint_names();
    let mut written = Vec::new();
    for (k, joint) in names.iter().enumerate() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for run in runs {
            let f = run.output.fatigued.joint_index(joint);
            let b = run.output.baseline.joint_index(joint);
            let (Some(f), Some(b)) = (f, b) else {
                return Err(Error::Missing(format!("joint `{joint}` in run `{}`", run.label)));
            };
            for v in run.output.fatigued.channel(f).into_iter().chain(run.output.baseline.channel(b)) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        let span = if hi > lo { hi - lo } else { 1.0 };
        for run in runs {
            let out = run.output;
            let dt = out.baseline.dt();
            let base = out.baseline.channel(k);
            let fat = out.fatigued.channel(out.fatigued.joint_index(joint).expect("checked"));
            let mut csv = String::from("t,baseline,fatigued\n");
            for (t, (b, f)) in base.iter().zip(&fat).enumerate() {
                writeln!(csv, "{},{},{}", t as f64 * dt, (b - lo) / span, (f - lo) / span).expect("string write");
            }
            let path = dir.join(format!("angles_{}_{}.csv", sanitize(joint), sanitize(run.label)));
            fs::write(&path, csv)?;
            written.push(path);
        }
    }
    for run in runs {
        for tr in &run.output.report.traces {
            let dt = run.output.report.dt;
            let mut csv = String::from("t,activation,M_A,M_F,M_R,RC_lambda\n");
            for t in 0..tr.capacity.len() {
                writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    t as f64 * dt,
                    tr.activation[t],
                    tr.active[t],
                    tr.fatigued[t],
                    tr.resting[t],
                    tr.capacity[t]
                )
                .expect("string write");
            }
            let path = dir.join(format!("compartments_{}_{}.csv", sanitize(&tr.joint), sanitize(run.label)));
            fs::write(&path, csv)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bilstm::{train_surrogate, BiLstmConfig, DynTrainConfig, TrialSplit};
    use crate::cc3::Cc3Params;
    use crate::dynamics::{generate_dataset, ArmParams, Trial};
    use crate::nn::TrainConfig;
    use std::sync::OnceLock;

    fn profile(joint: &str, lambda: f64, fatigue: f64) -> FatigueProfile {
        FatigueProfile {
            joint: joint.into(),
            params: Cc3Params {
                fatigue,
                ..Cc3Params::ELBOW
            },
            lambda,
        }
    }

    /// Small, briefly trained surrogates; enough to exercise the plumbing.
    fn fixture() -> &'static (Vec<Trial>, SurrogateBank) {
        static CELL: OnceLock<(Vec<Trial>, SurrogateBank)> = OnceLock::new();
        CELL.get_or_init(|| {
            let trials = generate_dataset(&ArmParams::default(), 4, 40, 0.02, 7).unwrap();
            let split = TrialSplit::new(4, 0.25, 0.0, 0).unwrap();
            let cfg = DynTrainConfig {
                model: BiLstmConfig { layers: 1, hidden: 4 },
                train: TrainConfig {
                    epochs: 3,
                    ..Default::default()
                },
                ..Default::default()
            };
            let mut id = Vec::new();
            let mut fd = Vec::new();
            for j in ["shoulder", "elbow"] {
                id.push(train_surrogate(&trials, &split, DynRole::Inverse, &[j.into()], &cfg, None, 1).unwrap().0);
                fd.push(train_surrogate(&trials, &split, DynRole::Forward, &[j.into()], &cfg, None, 1).unwrap().0);
            }
            (trials, SurrogateBank::new(id, fd).unwrap())
        })
    }

    #[test]
    fn mode_parsing() {
        assert_eq!(FatigueMode::parse("dynamic").unwrap(), FatigueMode::Dynamic);
        assert_eq!(FatigueMode::parse("fixed:70").unwrap(), FatigueMode::Fixed(70.0));
        assert!(FatigueMode::parse("fixed:120").is_err());
        assert!(FatigueMode::parse("sometimes").is_err());
    }

    #[test]
    fn fixed_level_scales_torque_exactly() {
        let (trials, bank) = fixture();
        let cfg = PipelineConfig::new(vec![profile("elbow", 0.6, 0.00912)], FatigueMode::Fixed(70.0));
        let out = apply_fatigue(&trials[0].motion, &cfg, bank).unwrap();
        let e = out.torque.joint_index("elbow").unwrap();
        let s = out.torque.joint_index("shoulder").unwrap();
        for t in 0..out.torque.n_frames() {
            assert_eq!(out.modulated_torque.value(t, e), 0.7 * out.torque.value(t, e));
            assert_eq!(out.modulated_torque.value(t, s), out.torque.value(t, s));
        }
        assert_eq!(out.report.traces[0].capacity.len(), trials[0].motion.n_frames());
    }

    #[test]
    fn lambda_zero_and_zero_fatigue_rate_match_baseline() {
        let (trials, bank) = fixture();
        let motion = &trials[1].motion;
        let no_lambda = PipelineConfig::new(vec![profile("elbow", 0.0, 0.00912), profile("shoulder", 0.0, 0.00912)], FatigueMode::Dynamic);
        let out = apply_fatigue(motion, &no_lambda, bank).unwrap();
        assert_eq!(out.fatigued, out.baseline);
        assert_eq!(out.modulated_torque, out.torque);
        for tr in &out.report.traces {
            for t in 0..tr.active.len() {
                let sum = tr.active[t] + tr.fatigued[t] + tr.resting[t];
                assert!((sum - 100.0).abs() < 1e-6);
            }
        }
        let no_rate = PipelineConfig::new(vec![profile("elbow", 1.0, 0.0), profile("shoulder", 1.0, 0.0)], FatigueMode::Dynamic);
        let out2 = apply_fatigue(motion, &no_rate, bank).unwrap();
        assert!(out2.report.traces.iter().all(|tr| tr.fatigued.iter().all(|&f| f == 0.0)));
        assert_eq!(out2.fatigued, out.fatigued);
    }

    #[test]
    fn missing_models_or_joints_are_reported() {
        let (trials, bank) = fixture();
        let cfg = PipelineConfig::new(vec![profile("wrist", 0.5, 0.01)], FatigueMode::Dynamic);
        assert!(matches!(apply_fatigue(&trials[0].motion, &cfg, bank), Err(Error::Missing(_))));
        let partial = SurrogateBank::new(bank.inverse.clone(), bank.forward[..1].to_vec()).unwrap();
        let cfg = PipelineConfig::new(vec![profile("elbow", 0.5, 0.01)], FatigueMode::Dynamic);
        let target = bank.forward[1].output_joints()[0].clone();
        let cfg = PipelineConfig::new(vec![profile(&target, 0.5, 0.01)], cfg.mode);
        assert!(matches!(apply_fatigue(&trials[0].motion, &cfg, &partial), Err(Error::Missing(_))));
        assert!(SurrogateBank::new(bank.forward.clone(), vec![]).is_err());
    }

    #[test]
    fn export_writes_expected_files_deterministically() {
        let (trials, bank) = fixture();
        let cfg = PipelineConfig::new(vec![profile("elbow", 0.6, 0.00912), profile("shoulder", 0.6, 0.00912)], FatigueMode::Dynamic);
        let sweep = fixed_level_sweep(&trials[2].motion, &cfg, bank, &[90.0, 80.0, 70.0]).unwrap();
        let labels: Vec<String> = sweep.iter().map(|(l, _)| format!("rc{l}")).collect();
        let runs: Vec<CurveRun> = sweep
            .iter()
            .zip(&labels)
            .map(|((_, o), label)| CurveRun { label, output: o })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let files = export_curves(&runs, dir.path()).unwrap();
        let angles: Vec<_> = files.iter().filter(|p| p.file_name().unwrap().to_str().unwrap().starts_with("angles_")).collect();
        assert_eq!(angles.len(), 6);
        assert_eq!(files.len(), 12);
        for p in &angles {
            let text = fs::read_to_string(p).unwrap();
            for line in text.lines().skip(1) {
                for v in line.split(',').skip(1) {
                    let v: f64 = v.parse().unwrap();
                    assert!((0.0..=1.0).contains(&v), "{v} in {p:?}");
                }
            }
        }
        let before: Vec<Vec<u8>> = files.iter().map(|p| fs::read(p).unwrap()).collect();
        export_curves(&runs, dir.path()).unwrap();
        let after: Vec<Vec<u8>> = files.iter().map(|p| fs::read(p).unwrap()).collect();
        assert_eq!(before, after);
    }
}
