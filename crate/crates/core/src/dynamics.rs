//! Planar two-link arm: exact rigid-body dynamics and a synthetic dataset
//! generator producing paired joint-angle / joint-torque trials.
//!
//! Angles are measured counter-clockwise, `q1` from the horizontal and `q2`
//! relative to the first link. Gravity acts along `-y`.
//!
//! The equation of motion is `M(q) q'' + C(q, q') + G(q) = tau`, with `C` the
//! combined Coriolis/centrifugal vector.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{self, MotionSequence, Sequence, SequenceKind, TorqueSequence};

pub const JOINT_NAMES: [&str; 2] = ["shoulder", "elbow"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub r1: f64,
    pub r2: f64,
    pub i1: f64,
    pub i2: f64,
    pub g: f64,
}

impl Default for ArmParams {
    fn default() -> Self {
        Self {
            m1: 1.5,
            m2: 1.0,
            l1: 0.3,
            l2: 0.25,
            r1: 0.15,
            r2: 0.125,
            i1: 0.02,
            i2: 0.01,
            g: 9.81,
        }
    }
}

impl ArmParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m1", self.m1),
            ("m2", self.m2),
            ("l1", self.l1),
            ("l2", self.l2),
            ("r1", self.r1),
            ("r2", self.r2),
            ("I1", self.i1),
            ("I2", self.i2),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.r1 > self.l1 || self.r2 > self.l2 {
            return Err(Error::invalid("center-of-mass distance exceeds link length"));
        }
        if !self.g.is_finite() || self.g < 0.0 {
            return Err(Error::invalid(format!("gravity must be >= 0, got {}", self.g)));
        }
        Ok(())
    }
}

/// Joint-space inertia matrix. Depends on the elbow angle only.
pub fn mass_matrix(q: &Vector2<f64>, p: &ArmParams) -> Matrix2<f64> {
    let c2 = q[1].cos();
    let m22 = p.i2 + p.m2 * p.r2 * p.r2;
    let m12 = m22 + p.m2 * p.l1 * p.r2 * c2;
    let m11 = p.i1
        + p.m1 * p.r1 * p.r1
        + p.i2
        + p.m2 * (p.l1 * p.l1 + p.r2 * p.r2 + 2.0 * p.l1 * p.r2 * c2);
    Matrix2::new(m11, m12, m12, m22)
}

/// Coriolis and centrifugal torques.
pub fn coriolis(q: &Vector2<f64>, qd: &Vector2<f64>, p: &ArmParams) -> Vector2<f64> {
    let h = p.m2 * p.l1 * p.r2 * q[1].sin();
    Vector2::new(-h * qd[1] * (2.0 * qd[0] + qd[1]), h * qd[0] * qd[0])
}

pub fn gravity(q: &Vector2<f64>, p: &ArmParams) -> Vector2<f64> {
    let c1 = q[0].cos();
    let c12 = (q[0] + q[1]).cos();
    let g2 = p.m2 * p.r2 * p.g * c12;
    Vector2::new((p.m1 * p.r1 + p.m2 * p.l1) * p.g * c1 + g2, g2)
}

pub fn inverse_dynamics(
    q: &Vector2<f64>,
    qd: &Vector2<f64>,
    qdd: &Vector2<f64>,
    p: &ArmParams,
) -> Vector2<f64> {
    mass_matrix(q, p) * qdd + coriolis(q, qd, p) + gravity(q, p)
}

pub fn forward_dynamics(
    q: &Vector2<f64>,
    qd: &Vector2<f64>,
    tau: &Vector2<f64>,
    p: &ArmParams,
) -> Vector2<f64> {
    let m = mass_matrix(q, p);
    let rhs = tau - coriolis(q, qd, p) - gravity(q, p);
    // 2x2 SPD: Cramer's rule is exact enough and never singular for valid params.
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    Vector2::new(
        (m[(1, 1)] * rhs[0] - m[(0, 1)] * rhs[1]) / det,
        (m[(0, 0)] * rhs[1] - m[(1, 0)] * rhs[0]) / det,
    )
}

/// `M q'' + C + G - tau`; zero for a consistent sample.
pub fn eom_residual(
    q: &Vector2<f64>,
    qd: &Vector2<f64>,
    qdd: &Vector2<f64>,
    tau: &Vector2<f64>,
    p: &ArmParams,
) -> Vector2<f64> {
    inverse_dynamics(q, qd, qdd, p) - tau
}

/// Kinetic plus potential energy.
pub fn energy(q: &Vector2<f64>, qd: &Vector2<f64>, p: &ArmParams) -> f64 {
    let kinetic = 0.5 * qd.dot(&(mass_matrix(q, p) * qd));
    let potential =
        p.g * ((p.m1 * p.r1 + p.m2 * p.l1) * q[0].sin() + p.m2 * p.r2 * (q[0] + q[1]).sin());
    kinetic + potential
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateSample {
    pub q: [f64; 2],
    pub qd: [f64; 2],
    pub qdd: [f64; 2],
    pub tau: [f64; 2],
}

impl StateSample {
    pub fn residual(&self, p: &ArmParams) -> Vector2<f64> {
        eom_residual(
            &Vector2::from(self.q),
            &Vector2::from(self.qd),
            &Vector2::from(self.qdd),
            &Vector2::from(self.tau),
            p,
        )
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    t0: f64,
    duration: f64,
    from: [f64; 2],
    to: [f64; 2],
}

/// Piecewise minimum-jerk path through waypoints, rest-to-rest per segment.
#[derive(Debug, Clone)]
pub struct Trajectory {
    segments: Vec<Segment>,
}

impl Trajectory {
    /// Position, velocity and acceleration at time `t`, analytically.
    pub fn eval(&self, t: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
        let seg = self
            .segments
            .iter()
            .rfind(|s| t >= s.t0)
            .unwrap_or(&self.segments[0]);
        let tau = ((t - seg.t0) / seg.duration).clamp(0.0, 1.0);
        let (t2, t3) = (tau * tau, tau * tau * tau);
        let s = t3 * (10.0 - 15.0 * tau + 6.0 * t2);
        let ds = 30.0 * t2 * (1.0 - 2.0 * tau + t2) / seg.duration;
        let dds = (60.0 * tau - 180.0 * t2 + 120.0 * t3) / (seg.duration * seg.duration);
        let mut q = [0.0; 2];
        let mut qd = [0.0; 2];
        let mut qdd = [0.0; 2];
        for j in 0..2 {
            let delta = seg.to[j] - seg.from[j];
            q[j] = seg.from[j] + delta * s;
            qd[j] = delta * ds;
            qdd[j] = delta * dds;
        }
        (q, qd, qdd)
    }
}

/// Joint ranges keep `q1` and `q1 + q2` inside `(0, pi)`, where the gravity
/// torque is a one-to-one function of the pose.
pub const SHOULDER_RANGE: (f64, f64) = (0.2, 1.3);
pub const ELBOW_RANGE: (f64, f64) = (0.2, 1.5);
const SEGMENT_DURATION: (f64, f64) = (1.0, 2.0);

pub fn random_trajectory(rng: &mut impl Rng, total: f64) -> Trajectory {
    let sample = |rng: &mut dyn rand::RngCore| {
        [
            rng.gen_range(SHOULDER_RANGE.0..SHOULDER_RANGE.1),
            rng.gen_range(ELBOW_RANGE.0..ELBOW_RANGE.1),
        ]
    };
    let mut segments = Vec::new();
    let mut t0 = 0.0;
    let mut from = sample(rng);
    while t0 < total {
        let duration = rng.gen_range(SEGMENT_DURATION.0..SEGMENT_DURATION.1);
        let to = sample(rng);
        segments.push(Segment {
            t0,
            duration,
            from,
            to,
        });
        t0 += duration;
        from = to;
    }
    Trajectory { segments }
}

/// One generated trial: angles, torques and the analytic kinematics.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub motion: MotionSequence,
    pub torque: TorqueSequence,
    pub velocity: Sequence,
    pub acceleration: Sequence,
}

impl Trial {
    pub fn sample(&self, t: usize) -> StateSample {
        let pick = |s: &Sequence| [s.value(t, 0), s.value(t, 1)];
        StateSample {
            q: pick(&self.motion),
            qd: pick(&self.velocity),
            qdd: pick(&self.acceleration),
            tau: pick(&self.torque),
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = StateSample> + '_ {
        (0..self.motion.n_frames()).map(|t| self.sample(t))
    }
}

pub fn generate_dataset(
    params: &ArmParams,
    n_trials: usize,
    frames: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<Trial>> {
    params.validate()?;
    if frames < 16 {
        return Err(Error::invalid(format!("need at least 16 frames, got {frames}")));
    }
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(Error::invalid(format!("dt must be in (0, 0.1], got {dt}")));
    }
    if n_trials == 0 {
        return Err(Error::invalid("n_trials must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(n_trials);
    for _ in 0..n_trials {
        let path = random_trajectory(&mut rng, frames as f64 * dt);
        let mut q = Vec::with_capacity(frames * 2);
        let mut qd = Vec::with_capacity(frames * 2);
        let mut qdd = Vec::with_capacity(frames * 2);
        let mut tau = Vec::with_capacity(frames * 2);
        for t in 0..frames {
            let (a, v, acc) = path.eval(t as f64 * dt);
            let torque = inverse_dynamics(&a.into(), &v.into(), &acc.into(), params);
            q.extend(a);
            qd.extend(v);
            qdd.extend(acc);
            tau.extend(torque.iter());
        }
        trials.push(Trial {
            motion: Sequence::from_flat(SequenceKind::Angle, &JOINT_NAMES, dt, q)?,
            torque: Sequence::from_flat(SequenceKind::Torque, &JOINT_NAMES, dt, tau)?,
            velocity: Sequence::from_flat(SequenceKind::Angle, &JOINT_NAMES, dt, qd)?,
            acceleration: Sequence::from_flat(SequenceKind::Angle, &JOINT_NAMES, dt, qdd)?,
        });
    }
    Ok(trials)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialFiles {
    pub name: String,
    pub motion: String,
    pub torque: String,
    pub velocity: String,
    pub acceleration: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub arm: ArmParams,
    pub joints: Vec<String>,
    pub dt: f64,
    pub frames: usize,
    pub seed: u64,
    pub trials: Vec<TrialFiles>,
}

pub fn write_dataset(
    dir: impl AsRef<Path>,
    trials: &[Trial],
    params: &ArmParams,
    seed: u64,
) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let first = trials
        .first()
        .ok_or_else(|| Error::Empty("no trials to write".into()))?;
    let mut files = Vec::with_capacity(trials.len());
    for (i, trial) in trials.iter().enumerate() {
        let name = format!("trial_{i:03}");
        let entry = TrialFiles {
            motion: format!("{name}_angles.csv"),
            torque: format!("{name}_torques.csv"),
            velocity: format!("{name}_velocities.csv"),
            acceleration: format!("{name}_accelerations.csv"),
            name,
        };
        motion::save_sequence(&trial.motion, dir.join(&entry.motion))?;
        motion::save_sequence(&trial.torque, dir.join(&entry.torque))?;
        motion::save_sequence(&trial.velocity, dir.join(&entry.velocity))?;
        motion::save_sequence(&trial.acceleration, dir.join(&entry.acceleration))?;
        files.push(entry);
    }
    let manifest = DatasetManifest {
        arm: *params,
        joints: first.motion.joint_names(),
        dt: first.motion.dt(),
        frames: first.motion.n_frames(),
        seed,
        trials: files,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(DatasetManifest, Vec<Trial>)> {
    let dir = dir.as_ref();
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    manifest.arm.validate()?;
    let trials = manifest
        .trials
        .iter()
        .map(|f| {
            Ok(Trial {
                motion: motion::load_sequence(dir.join(&f.motion), SequenceKind::Angle)?,
                torque: motion::load_sequence(dir.join(&f.torque), SequenceKind::Torque)?,
                velocity: motion::load_sequence(dir.join(&f.velocity), SequenceKind::Angle)?,
                acceleration: motion::load_sequence(dir.join(&f.acceleration), SequenceKind::Angle)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, trials))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::rk4_step;

    fn random_state(rng: &mut ChaCha8Rng) -> (Vector2<f64>, Vector2<f64>, Vector2<f64>) {
        let mut v = || Vector2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        (v(), v(), v())
    }

    /// Mass matrix assembled from link Jacobians: sum of m J_v^T J_v + I J_w^T J_w.
    fn jacobian_mass_matrix(q: &Vector2<f64>, p: &ArmParams) -> Matrix2<f64> {
        let (s1, c1) = q[0].sin_cos();
        let (s12, c12) = (q[0] + q[1]).sin_cos();
        let jv1 = nalgebra::Matrix2::new(-p.r1 * s1, 0.0, p.r1 * c1, 0.0);
        let jv2 = nalgebra::Matrix2::new(
            -p.l1 * s1 - p.r2 * s12,
            -p.r2 * s12,
            p.l1 * c1 + p.r2 * c12,
            p.r2 * c12,
        );
        let jw1 = nalgebra::RowVector2::new(1.0, 0.0);
        let jw2 = nalgebra::RowVector2::new(1.0, 1.0);
        p.m1 * jv1.transpose() * jv1
            + p.m2 * jv2.transpose() * jv2
            + p.i1 * jw1.transpose() * jw1
            + p.i2 * jw2.transpose() * jw2
    }

    #[test]
    fn mass_matrix_matches_jacobian_assembly() {
        let p = ArmParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (q, _, _) = random_state(&mut rng);
            let diff = mass_matrix(&q, &p) - jacobian_mass_matrix(&q, &p);
            assert!(diff.abs().max() < 1e-12);
        }
    }

    #[test]
    fn mass_matrix_symmetric_positive_definite() {
        let p = ArmParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            let q = Vector2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            let m = mass_matrix(&q, &p);
            assert_eq!(m, m.transpose());
            let eig = m.symmetric_eigenvalues();
            assert!(eig.iter().all(|&e| e > 0.0), "{eig}");
        }
    }

    #[test]
    fn mass_matrix_ignores_shoulder_angle() {
        let p = ArmParams::default();
        let q2 = 0.7;
        let base = mass_matrix(&Vector2::new(0.0, q2), &p);
        for q1 in [-2.0, -0.3, 0.4, 1.9, 3.1] {
            assert_eq!(mass_matrix(&Vector2::new(q1, q2), &p), base);
        }
    }

    /// Coriolis vector from Christoffel symbols of finite-differenced M.
    #[test]
    fn coriolis_matches_christoffel_symbols() {
        let p = ArmParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-6;
        for _ in 0..100 {
            let (q, qd, _) = random_state(&mut rng);
            let dm = |k: usize| {
                let mut e = Vector2::zeros();
                e[k] = h;
                (mass_matrix(&(q + e), &p) - mass_matrix(&(q - e), &p)) / (2.0 * h)
            };
            let dmk = [dm(0), dm(1)];
            let mut c = Vector2::zeros();
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        let gamma =
                            0.5 * (dmk[k][(i, j)] + dmk[j][(i, k)] - dmk[i][(j, k)]);
                        c[i] += gamma * qd[j] * qd[k];
                    }
                }
            }
            assert!((c - coriolis(&q, &qd, &p)).abs().max() < 1e-7);
        }
    }

    #[test]
    fn gravity_is_potential_gradient() {
        let p = ArmParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-6;
        for _ in 0..100 {
            let (q, _, _) = random_state(&mut rng);
            let zero = Vector2::zeros();
            let grad = Vector2::from_fn(|k, _| {
                let mut e = Vector2::zeros();
                e[k] = h;
                (energy(&(q + e), &zero, &p) - energy(&(q - e), &zero, &p)) / (2.0 * h)
            });
            assert!((grad - gravity(&q, &p)).abs().max() < 1e-7);
        }
    }

    #[test]
    fn statics_and_inertia_only() {
        let p = ArmParams::default();
        let q = Vector2::new(0.4, 0.9);
        let zero = Vector2::zeros();
        assert_eq!(inverse_dynamics(&q, &zero, &zero, &p), gravity(&q, &p));
        let p0 = ArmParams { g: 0.0, ..p };
        let qdd = Vector2::new(1.5, -2.0);
        assert_eq!(inverse_dynamics(&q, &zero, &qdd, &p0), mass_matrix(&q, &p0) * qdd);
        let tau = gravity(&q, &p);
        assert!(forward_dynamics(&q, &zero, &tau, &p).abs().max() < 1e-12);
    }

    #[test]
    fn forward_and_inverse_are_mutual_inverses() {
        let p = ArmParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let (q, qd, qdd) = random_state(&mut rng);
            let tau = inverse_dynamics(&q, &qd, &qdd, &p);
            assert!((forward_dynamics(&q, &qd, &tau, &p) - qdd).abs().max() < 1e-9);
            let tau2 = Vector2::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0));
            let acc = forward_dynamics(&q, &qd, &tau2, &p);
            assert!((inverse_dynamics(&q, &qd, &acc, &p) - tau2).abs().max() < 1e-9);
        }
    }

    #[test]
    fn unforced_arm_conserves_energy() {
        let p = ArmParams { g: 0.0, ..ArmParams::default() };
        let f = |y: &[f64; 4]| {
            let q = Vector2::new(y[0], y[1]);
            let qd = Vector2::new(y[2], y[3]);
            let acc = forward_dynamics(&q, &qd, &Vector2::zeros(), &p);
            [y[2], y[3], acc[0], acc[1]]
        };
        let mut y = [0.3, 1.1, 2.0, -3.0];
        let e0 = energy(&Vector2::new(y[0], y[1]), &Vector2::new(y[2], y[3]), &p);
        for _ in 0..1000 {
            y = rk4_step(f, &y, 1e-3);
        }
        let e1 = energy(&Vector2::new(y[0], y[1]), &Vector2::new(y[2], y[3]), &p);
        assert!(((e1 - e0) / e0).abs() < 1e-6, "{e0} -> {e1}");
    }

    #[test]
    fn dataset_shape_determinism_and_consistency() {
        let p = ArmParams::default();
        let a = generate_dataset(&p, 20, 200, 0.01, 1).unwrap();
        let b = generate_dataset(&p, 20, 200, 0.01, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        assert!(a.iter().all(|t| t.motion.n_frames() == 200 && t.torque.n_frames() == 200));
        for trial in &a {
            for s in trial.samples() {
                assert!(s.residual(&p).abs().max() < 1e-9);
            }
        }
        let c = generate_dataset(&p, 20, 200, 0.01, 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn trajectory_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let path = random_trajectory(&mut rng, 2.0);
        let h = 1e-5;
        for k in 1..199 {
            let t = k as f64 * 0.01 + 0.003;
            let (_, v, a) = path.eval(t);
            let (qp, vp, _) = path.eval(t + h);
            let (qm, vm, _) = path.eval(t - h);
            for j in 0..2 {
                assert!((v[j] - (qp[j] - qm[j]) / (2.0 * h)).abs() < 1e-5);
                assert!((a[j] - (vp[j] - vm[j]) / (2.0 * h)).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn rejects_invalid_generation_parameters() {
        let p = ArmParams::default();
        assert!(generate_dataset(&p, 2, 15, 0.01, 0).is_err());
        assert!(generate_dataset(&p, 2, 100, 0.2, 0).is_err());
        assert!(generate_dataset(&p, 2, 100, 0.0, 0).is_err());
        let bad = ArmParams { r1: 0.5, ..p };
        assert!(generate_dataset(&bad, 2, 100, 0.01, 0).is_err());
    }

    #[test]
    fn dataset_files_round_trip() {
        let p = ArmParams::default();
        let trials = generate_dataset(&p, 3, 32, 0.01, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &trials, &p, 9).unwrap();
        let (manifest, back) = load_dataset(dir.path()).unwrap();
        assert_eq!(manifest.trials.len(), 3);
        assert_eq!(manifest.arm, p);
        for (a, b) in trials.iter().zip(&back) {
            assert_eq!(a, b);
        }
    }
}
