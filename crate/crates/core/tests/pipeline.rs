use motion_fatigue::bilstm::{train_surrogate, DynRole, DynSurrogate, DynTrainConfig, TrialSplit};
use motion_fatigue::cc3::{Cc3Params, FatigueProfile};
use motion_fatigue::dynamics::{self, ArmParams, Trial};
use motion_fatigue::nn::Checkpoint;
use motion_fatigue::pipeline::{apply_fatigue, FatigueMode, PipelineConfig, SurrogateBank};

fn quick_config() -> DynTrainConfig {
    let mut cfg = DynTrainConfig::desk();
    cfg.train.epochs = 3;
    cfg
}

fn train(trials: &[Trial], split: &TrialSplit, role: DynRole) -> DynSurrogate {
    let joints: Vec<String> = dynamics::JOINT_NAMES.iter().map(|s| s.to_string()).collect();
    train_surrogate(trials, split, role, &joints, &quick_config(), None, 0).unwrap().0
}

#[test]
fn dataset_survives_disk_round_trip() {
    let arm = ArmParams::default();
    let trials = dynamics::generate_dataset(&arm, 3, 30, 0.05, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    dynamics::write_dataset(dir.path(), &trials, &arm, 4).unwrap();
    let (manifest, loaded) = dynamics::load_dataset(dir.path()).unwrap();
    assert_eq!(manifest.seed, 4);
    assert_eq!(manifest.frames, 30);
    assert_eq!(loaded.len(), 3);
    for (a, b) in trials.iter().zip(&loaded) {
        for (x, y) in a.torque.as_flat().iter().zip(b.torque.as_flat()) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        assert_eq!(a.motion.joint_names(), b.motion.joint_names());
    }
}

#[test]
fn same_seed_same_dataset() {
    let arm = ArmParams::default();
    let a = dynamics::generate_dataset(&arm, 2, 20, 0.05, 9).unwrap();
    let b = dynamics::generate_dataset(&arm, 2, 20, 0.05, 9).unwrap();
    let c = dynamics::generate_dataset(&arm, 2, 20, 0.05, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn surrogates_and_pipeline_wire_together() {
    let arm = ArmParams::default();
    let trials = dynamics::generate_dataset(&arm, 5, 40, 0.05, 2).unwrap();
    let split = TrialSplit::new(trials.len(), 0.2, 0.2, 2).unwrap();
    let id = train(&trials, &split, DynRole::Inverse);
    let fd = train(&trials, &split, DynRole::Forward);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("id.ckpt.json");
    id.to_checkpoint(0).unwrap().save(&path).unwrap();
    let reloaded = DynSurrogate::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    let motion = &trials[split.test[0]].motion;
    assert_eq!(id.predict(motion).unwrap(), reloaded.predict(motion).unwrap());

    let bank = SurrogateBank::new(vec![id], vec![fd]).unwrap();
    let profiles: Vec<FatigueProfile> = dynamics::JOINT_NAMES
        .iter()
        .map(|j| FatigueProfile {
            joint: j.to_string(),
            params: Cc3Params::ELBOW,
            lambda: 1.0,
        })
        .collect();

    let full = apply_fatigue(motion, &PipelineConfig::new(profiles.clone(), FatigueMode::Fixed(100.0)), &bank).unwrap();
    assert_eq!(full.fatigued, full.baseline);

    let out = apply_fatigue(motion, &PipelineConfig::new(profiles, FatigueMode::Dynamic), &bank).unwrap();
    assert_eq!(out.fatigued.n_frames(), motion.n_frames());
    for trace in &out.report.traces {
        for i in 0..trace.active.len() {
            let sum = trace.active[i] + trace.fatigued[i] + trace.resting[i];
            assert!((sum - 100.0).abs() < 1e-6);
            assert!(trace.capacity[i] <= 100.0 + 1e-9);
        }
    }
}
