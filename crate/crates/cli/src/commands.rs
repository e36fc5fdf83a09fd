use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use motion_fatigue::bilstm::{self, train_surrogate, DynRole, DynSurrogate, TrialSplit};
use motion_fatigue::cc3::{self, CompartmentState, FatigueProfile, LoadProfile};
use motion_fatigue::dynamics::{self, generate_dataset, load_dataset, write_dataset};
use motion_fatigue::metrics;
use motion_fatigue::motion::{self, SequenceKind};
use motion_fatigue::nn::Checkpoint;
use motion_fatigue::pinn::{self, collocation_points, BoundaryCondition, OracleTrajectory, Pinn3ccModel, PinnMode};
use motion_fatigue::pipeline::{
    apply_fatigue, export_curves, fixed_level_sweep, CurveRun, FatigueMode, PipelineConfig, PipelineOutput,
    SurrogateBank,
};
use motion_fatigue::{Error, ErrorKind};
use serde::Serialize;
use serde_json::json;

use crate::config::{self, ApplyConfig, ExportConfig, GenDataConfig, SimConfig, TrainDynConfig, TrainPinnConfig};
use crate::manifest;
use crate::{ApplyArgs, Command, EvalArgs, ExportArgs, GenDataArgs, ModeArg, RoleArg, SimArgs, TrainDynArgs, TrainPinnArgs};

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    /// Inputs that parse but do not fit together.
    Data(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::Data(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn exit_code(e: &CliError) -> u8 {
    match e {
        CliError::Core(e) => match e.kind() {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numeric => 3,
        },
        CliError::Data(_) => 2,
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Sim3cc(a) => sim_3cc(a),
        Command::TrainPinn(a) => train_pinn(a),
        Command::TrainDyn(a) => train_dyn(a),
        Command::ApplyFatigue(a) => apply(a),
        Command::Eval(a) => eval(a),
        Command::ExportCurves(a) => export(a),
    }
}

/// Writes to stdout, treating a closed pipe (`| head`) as success.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn announce_seed(seed: u64) {
    eprintln!("seed: {seed}");
}

fn finish(dir: &Path, command: &str, seed: u64, config: &impl Serialize, outputs: Vec<String>) -> Result<()> {
    let m = manifest::write(dir, command, seed, config, outputs)?;
    eprintln!("config hash: {}", m.config_hash);
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>, outputs: &mut Vec<String>) -> Result<()> {
    fs::write(dir.join(name), contents)?;
    outputs.push(name.to_string());
    Ok(())
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut cfg: GenDataConfig = config::load(a.config.as_deref())?;
    cfg.trials = a.trials.unwrap_or(cfg.trials);
    cfg.frames = a.frames.unwrap_or(cfg.frames);
    cfg.dt = a.dt.unwrap_or(cfg.dt);
    announce_seed(a.seed);
    let trials = generate_dataset(&cfg.arm, cfg.trials, cfg.frames, cfg.dt, a.seed)?;
    let written = write_dataset(&a.out, &trials, &cfg.arm, a.seed)?;
    let mut outputs = vec!["manifest.json".to_string()];
    for t in &written.trials {
        outputs.extend([t.motion.clone(), t.torque.clone(), t.velocity.clone(), t.acceleration.clone()]);
    }
    finish(&a.out, "gen-data", a.seed, &cfg, outputs)
}

fn sim_3cc(a: SimArgs) -> Result<()> {
    let mut cfg: SimConfig = config::load(a.config.as_deref())?;
    let p = &mut cfg.params;
    p.fatigue = a.fatigue.unwrap_or(p.fatigue);
    p.recovery = a.recovery.unwrap_or(p.recovery);
    p.develop = a.develop.unwrap_or(p.develop);
    p.relax = a.relax.unwrap_or(p.relax);
    p.validate()?;
    if let Some(tl) = a.tl {
        cfg.tl = tl;
    }
    cfg.duration = a.duration.unwrap_or(cfg.duration);
    cfg.dt = a.dt.unwrap_or(cfg.dt);
    cfg.lambda = a.lambda.unwrap_or(cfg.lambda);
    announce_seed(0);
    let profile = LoadProfile::parse(&cfg.tl, cfg.duration, cfg.dt)?;
    let states = cc3::simulate(&CompartmentState::REST, &profile, &cfg.params)?;
    let csv = cc3::trajectory_csv(&states, cfg.dt, cfg.lambda)?;
    match a.out {
        None => emit(&csv),
        Some(dir) => {
            fs::create_dir_all(&dir)?;
            let mut outputs = Vec::new();
            write(&dir, "trajectory.csv", csv, &mut outputs)?;
            finish(&dir, "sim-3cc", 0, &cfg, outputs)
        }
    }
}

fn train_pinn(a: TrainPinnArgs) -> Result<()> {
    let mut cfg: TrainPinnConfig = config::load(a.config.as_deref())?;
    if let Some(j) = a.joint {
        cfg.joint = j;
    }
    if let Some(m) = a.mode {
        cfg.mode = match m {
            ModeArg::Supervised => PinnMode::Supervised,
            ModeArg::Unsupervised => PinnMode::Unsupervised,
        };
    }
    if a.load.is_some() {
        cfg.load = a.load;
    }
    cfg.training.train.epochs = a.epochs.unwrap_or(cfg.training.train.epochs);
    cfg.training.train.seed = a.seed;
    let profiles = match &a.profiles {
        Some(p) => FatigueProfile::load_all(p)?,
        None => Vec::new(),
    };
    let params = cfg.resolve_params(&profiles).ok_or_else(|| {
        Error::InvalidParameter(format!("no fatigue rates for joint `{}`; pass --profiles", cfg.joint))
    })?;
    cfg.params = Some(params);
    announce_seed(a.seed);

    let profile = LoadProfile::parse(cfg.load_spec(), cfg.duration, cfg.dt)?;
    let oracle = OracleTrajectory::simulate(&params, profile.clone(), &CompartmentState::REST)?;
    let mut model = Pinn3ccModel::new(cfg.architecture, params, oracle.duration(), a.seed)?;
    let (report, held_out) = match cfg.mode {
        PinnMode::Supervised => {
            let data = oracle.frames(cfg.frames)?;
            let report = model.train_supervised(&data, &cfg.training)?;
            (report, oracle.midpoints(cfg.frames)?)
        }
        PinnMode::Unsupervised => {
            let points = collocation_points(&profile, cfg.collocation)?;
            let bc = BoundaryCondition::from_rest(profile.at(0.0));
            let report = model.train_unsupervised(&points, &bc, &cfg.training)?;
            (report, oracle.frames(oracle.states.len().min(1001))?)
        }
    };
    let pred: Vec<f64> = held_out.iter().map(|o| model.predict(o.point.t, o.point.active).0).collect();
    let truth: Vec<f64> = held_out.iter().map(|o| o.fatigued).collect();
    let nrmse = metrics::nrmse(&pred, &truth)?;
    eprintln!("M_F NRMSE vs oracle: {nrmse:.4}%");

    let dir = a.out.unwrap_or_else(|| PathBuf::from(format!("pinn-{}", cfg.joint)));
    fs::create_dir_all(&dir)?;
    let mut ckpt = model.to_checkpoint(a.seed, cfg.mode)?;
    ckpt.metadata["joint"] = json!(cfg.joint);
    ckpt.metadata["load"] = json!(cfg.load_spec());
    let mut outputs = Vec::new();
    ckpt.save(dir.join("checkpoint.ckpt.json"))?;
    outputs.push("checkpoint.ckpt.json".into());
    write(&dir, "train_log.csv", report.log_csv(), &mut outputs)?;
    let summary = json!({
        "joint": cfg.joint,
        "mode": cfg.mode,
        "initial_loss": report.initial.total,
        "final_loss": report.history.last().map(|b| b.total),
        "best_epoch": report.best_epoch,
        "fatigued_nrmse": nrmse,
    });
    write(&dir, "metrics.json", serde_json::to_string_pretty(&summary)?, &mut outputs)?;
    finish(&dir, "train-pinn", a.seed, &cfg, outputs)
}

fn train_dyn(a: TrainDynArgs) -> Result<()> {
    let mut cfg: TrainDynConfig = config::load(a.config.as_deref())?;
    if !a.joint.is_empty() {
        cfg.joints = a.joint;
    }
    cfg.multi_output |= a.multi;
    cfg.physics |= a.physics;
    cfg.dyn_train.train.epochs = a.epochs.unwrap_or(cfg.dyn_train.train.epochs);
    cfg.dyn_train.train.seed = a.seed;
    announce_seed(a.seed);

    let (data, trials) = load_dataset(&a.data)?;
    let joints = if cfg.joints.is_empty() { data.joints.clone() } else { cfg.joints.clone() };
    if let Some(j) = joints.iter().find(|j| !data.joints.contains(j)) {
        return Err(CliError::Data(format!("joint `{j}` is not in the dataset {:?}", data.joints)));
    }
    let role = match a.role {
        RoleArg::Id => DynRole::Inverse,
        RoleArg::Fd => DynRole::Forward,
    };
    let tag = match role {
        DynRole::Inverse => "id",
        DynRole::Forward => "fd",
    };
    let split = TrialSplit::new(trials.len(), cfg.test_fraction, cfg.val_fraction, a.seed)?;
    let groups: Vec<Vec<String>> = if cfg.multi_output {
        vec![joints.clone()]
    } else {
        joints.iter().map(|j| vec![j.clone()]).collect()
    };
    let arm = cfg.physics.then_some(&data.arm);
    let test: Vec<&dynamics::Trial> = split.test.iter().map(|&i| &trials[i]).collect();

    fs::create_dir_all(&a.out)?;
    let mut outputs = Vec::new();
    let mut scores = Vec::new();
    for group in &groups {
        let name = if cfg.multi_output { "multi".to_string() } else { group[0].clone() };
        eprintln!("training {tag} model `{name}`");
        let (surrogate, report) = train_surrogate(&trials, &split, role, group, &cfg.dyn_train, arm, a.seed)?;
        let stem = format!("{tag}_{name}");
        surrogate.to_checkpoint(a.seed)?.save(a.out.join(format!("{stem}.ckpt.json")))?;
        outputs.push(format!("{stem}.ckpt.json"));
        write(&a.out, &format!("{stem}_log.csv"), report.log_csv(), &mut outputs)?;
        for s in surrogate.evaluate(&test)? {
            eprintln!("  {}: NRMSE {:.3}%  R2 {:.4}", s.joint, s.nrmse, s.r_squared);
            scores.push(json!({"model": stem, "joint": s.joint, "nrmse": s.nrmse, "r_squared": s.r_squared}));
        }
    }
    let summary = json!({"split": split, "scores": scores});
    write(&a.out, "metrics.json", serde_json::to_string_pretty(&summary)?, &mut outputs)?;
    let record = json!({"role": tag, "data": a.data, "config": cfg});
    finish(&a.out, "train-dyn", a.seed, &record, outputs)
}

/// Loads every `*.ckpt.json` surrogate in the given directories, in name order.
fn load_bank(dirs: &[PathBuf]) -> Result<SurrogateBank> {
    let mut inverse = Vec::new();
    let mut forward = Vec::new();
    for dir in dirs {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        paths.sort();
        for path in paths {
            if !path.to_string_lossy().ends_with(".ckpt.json") {
                continue;
            }
            let ckpt = Checkpoint::load(&path)?;
            if ckpt.kind != bilstm::CHECKPOINT_KIND {
                continue;
            }
            let s = DynSurrogate::from_checkpoint(&ckpt)?;
            match s.role {
                DynRole::Inverse => inverse.push(s),
                DynRole::Forward => forward.push(s),
            }
        }
    }
    if inverse.is_empty() || forward.is_empty() {
        return Err(CliError::Data(format!(
            "need both ID and FD checkpoints, found {} and {} in {dirs:?}",
            inverse.len(),
            forward.len()
        )));
    }
    Ok(SurrogateBank::new(inverse, forward)?)
}

fn pipeline_config(
    profiles: Vec<FatigueProfile>,
    mode: FatigueMode,
    dt: Option<f64>,
    torque_max: &std::collections::BTreeMap<String, f64>,
) -> PipelineConfig {
    let mut pc = PipelineConfig::new(profiles, mode);
    pc.dt = dt;
    for j in &mut pc.joints {
        j.torque_max = torque_max.get(&j.profile.joint).copied();
    }
    pc
}

fn apply(a: ApplyArgs) -> Result<()> {
    let mut cfg: ApplyConfig = config::load(a.config.as_deref())?;
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    cfg.dt = a.dt.or(cfg.dt);
    let mode = FatigueMode::parse(&cfg.mode)?;
    announce_seed(0);
    let profiles = FatigueProfile::load_all(&a.profiles)?;
    let motion = motion::load_sequence(&a.motion, SequenceKind::Angle)?;
    let bank = load_bank(&a.models)?;
    let mut pc = pipeline_config(profiles.clone(), mode, cfg.dt, &cfg.torque_max);
    for path in &a.pinn {
        let ckpt = Checkpoint::load(path)?;
        ckpt.expect_kind(pinn::CHECKPOINT_KIND)?;
        let joint = ckpt.metadata["joint"]
            .as_str()
            .ok_or_else(|| CliError::Data(format!("{}: checkpoint names no joint", path.display())))?
            .to_string();
        let net = Pinn3ccModel::from_checkpoint(&ckpt)?;
        let slot = pc
            .joints
            .iter_mut()
            .find(|j| j.profile.joint == joint)
            .ok_or_else(|| CliError::Data(format!("no profile for joint `{joint}` of {}", path.display())))?;
        slot.pinn = Some(net);
    }
    let out = apply_fatigue(&motion, &pc, &bank)?;
    for s in &out.report.scores {
        if let (Some(n), Some(r)) = (s.nrmse, s.r_squared) {
            eprintln!("{}: deviation NRMSE {n:.3}%  R2 {r:.4}", s.joint);
        }
    }
    fs::create_dir_all(&a.out)?;
    let mut outputs = Vec::new();
    write(&a.out, "fatigued.csv", motion::format_sequence(&out.fatigued), &mut outputs)?;
    write(&a.out, "baseline.csv", motion::format_sequence(&out.baseline), &mut outputs)?;
    write(&a.out, "torque.csv", motion::format_sequence(&out.torque), &mut outputs)?;
    write(&a.out, "modulated_torque.csv", motion::format_sequence(&out.modulated_torque), &mut outputs)?;
    write(&a.out, "report.json", serde_json::to_string_pretty(&out.report)?, &mut outputs)?;
    let record = json!({"config": cfg, "profiles": profiles, "pinn": a.pinn});
    finish(&a.out, "apply-fatigue", 0, &record, outputs)
}

fn eval(a: EvalArgs) -> Result<()> {
    let pred = motion::load_sequence(&a.pred, SequenceKind::Angle)?;
    let truth = motion::load_sequence(&a.truth, SequenceKind::Angle)?;
    announce_seed(0);
    let joints = pred.joint_names();
    let truth = truth.select(&joints)?;
    if pred.n_frames() != truth.n_frames() {
        return Err(CliError::Data(format!(
            "frame counts differ: {} predicted, {} ground truth",
            pred.n_frames(),
            truth.n_frames()
        )));
    }
    let mut csv = String::from("joint,nrmse,r_squared\n");
    let mut rows = Vec::new();
    for (k, j) in joints.iter().enumerate() {
        let (p, t) = (pred.channel(k), truth.channel(k));
        let n = metrics::nrmse(&p, &t)?;
        let r = metrics::r_squared(&p, &t)?;
        csv.push_str(&format!("{j},{n},{r}\n"));
        rows.push(json!({"joint": j, "nrmse": n, "r_squared": r}));
    }
    emit(&csv)?;
    if let Some(dir) = a.out {
        fs::create_dir_all(&dir)?;
        let mut outputs = Vec::new();
        write(&dir, "metrics.json", serde_json::to_string_pretty(&rows)?, &mut outputs)?;
        let record = json!({"pred": a.pred, "truth": a.truth});
        finish(&dir, "eval", 0, &record, outputs)?;
    }
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let mut cfg: ExportConfig = config::load(a.config.as_deref())?;
    if let Some(l) = a.levels {
        cfg.levels = l;
    }
    cfg.dynamic &= !a.no_dynamic;
    announce_seed(0);
    let profiles = FatigueProfile::load_all(&a.profiles)?;
    let motion = motion::load_sequence(&a.motion, SequenceKind::Angle)?;
    let bank = load_bank(&a.models)?;
    let pc = pipeline_config(profiles.clone(), FatigueMode::Dynamic, cfg.dt, &cfg.torque_max);
    let mut runs: Vec<(String, PipelineOutput)> = fixed_level_sweep(&motion, &pc, &bank, &cfg.levels)?
        .into_iter()
        .map(|(level, out)| (format!("fixed{level}"), out))
        .collect();
    if cfg.dynamic {
        runs.push(("dynamic".into(), apply_fatigue(&motion, &pc, &bank)?));
    }
    let curve_runs: Vec<CurveRun<'_>> = runs
        .iter()
        .map(|(label, output)| CurveRun { label, output })
        .collect();
    let paths = export_curves(&curve_runs, &a.out)?;
    let mut outputs: Vec<String> = paths
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    let mut summary = String::from("run,joint,nrmse,r_squared\n");
    for (label, out) in &runs {
        for s in &out.report.scores {
            let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            summary.push_str(&format!("{label},{},{},{}\n", s.joint, cell(s.nrmse), cell(s.r_squared)));
        }
    }
    write(&a.out, "summary.csv", summary, &mut outputs)?;
    let record = json!({"config": cfg, "profiles": profiles});
    finish(&a.out, "export-curves", 0, &record, outputs)
}
