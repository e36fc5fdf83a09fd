//! Joint-angle and joint-torque sequences.
//!
//! A sequence is a `T x N` matrix of per-frame joint values with a fixed frame
//! period. The on-disk form is a small CSV dialect:
//!
//! ```text
//! # dt=0.01
//! shoulder,elbow
//! 0.5,1.2
//! 0.51,1.19
//! ```
//!
//! Min-max normalization statistics persist as JSON next to trained models.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointId {
    pub name: String,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceKind {
    Angle,
    Torque,
}

/// Time-indexed per-joint trace. Frames are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    kind: SequenceKind,
    joints: Vec<JointId>,
    dt: f64,
    values: Vec<f64>,
    normalized: bool,
}

pub type MotionSequence = Sequence;
pub type TorqueSequence = Sequence;

impl Sequence {
    /// Builds a sequence from per-frame rows.
    pub fn from_rows<S: AsRef<str>>(
        kind: SequenceKind,
        names: &[S],
        dt: f64,
        rows: &[Vec<f64>],
    ) -> Result<Self> {
        let n = names.len();
        let mut values = Vec::with_capacity(rows.len() * n);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::invalid(format!(
                    "frame {t} has {} values, expected {n}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Self::from_flat(kind, names, dt, values)
    }

    /// Builds a sequence from a row-major `T x N` buffer.
    pub fn from_flat<S: AsRef<str>>(
        kind: SequenceKind,
        names: &[S],
        dt: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        let n = names.len();
        if n == 0 {
            return Err(Error::Empty("sequence has no joints".into()));
        }
        let mut seen = HashSet::new();
        for name in names {
            if !seen.insert(name.as_ref()) {
                return Err(Error::invalid(format!(
                    "duplicate joint name `{}`",
                    name.as_ref()
                )));
            }
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        if values.len() % n != 0 {
            return Err(Error::invalid("value count is not a multiple of joint count"));
        }
        if values.len() / n < 2 {
            return Err(Error::invalid("a sequence needs at least 2 frames"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "frame {}, joint {}",
                i / n,
                names[i % n].as_ref()
            )));
        }
        let joints = names
            .iter()
            .enumerate()
            .map(|(index, name)| JointId {
                name: name.as_ref().to_string(),
                index,
            })
            .collect();
        Ok(Self {
            kind,
            joints,
            dt,
            values,
            normalized: false,
        })
    }

    pub fn kind(&self) -> SequenceKind {
        self.kind
    }

    pub fn joints(&self) -> &[JointId] {
        &self.joints
    }

    pub fn joint_names(&self) -> Vec<String> {
        self.joints.iter().map(|j| j.name.clone()).collect()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn n_frames(&self) -> usize {
        self.values.len() / self.joints.len()
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.n_joints();
        &self.values[t * n..(t + 1) * n]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_joints())
    }

    pub fn value(&self, t: usize, joint: usize) -> f64 {
        self.values[t * self.n_joints() + joint]
    }

    pub fn channel(&self, joint: usize) -> Vec<f64> {
        self.frames().map(|f| f[joint]).collect()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    /// Replaces one joint's trace.
    pub fn set_channel(&mut self, joint: usize, trace: &[f64]) -> Result<()> {
        if trace.len() != self.n_frames() {
            return Err(Error::invalid(format!(
                "trace length {} does not match {} frames",
                trace.len(),
                self.n_frames()
            )));
        }
        let n = self.n_joints();
        for (t, v) in trace.iter().enumerate() {
            self.values[t * n + joint] = *v;
        }
        Ok(())
    }

    /// Assembles a sequence from per-joint traces of equal length.
    pub fn from_channels<S: AsRef<str>>(
        kind: SequenceKind,
        names: &[S],
        dt: f64,
        channels: &[Vec<f64>],
    ) -> Result<Self> {
        if channels.len() != names.len() {
            return Err(Error::invalid("channel count does not match joint count"));
        }
        let t = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != t) {
            return Err(Error::invalid("channels have different lengths"));
        }
        let mut values = Vec::with_capacity(t * names.len());
        for i in 0..t {
            values.extend(channels.iter().map(|c| c[i]));
        }
        Self::from_flat(kind, names, dt, values)
    }

    /// Keeps the named joints, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| {
                self.joint_index(n)
                    .ok_or_else(|| Error::Missing(format!("joint `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let channels: Vec<Vec<f64>> = idx.iter().map(|&j| self.channel(j)).collect();
        let mut out = Self::from_channels(self.kind, names, self.dt, &channels)?;
        out.normalized = self.normalized;
        Ok(out)
    }

    fn with_values(&self, values: Vec<f64>, normalized: bool) -> Self {
        Self {
            kind: self.kind,
            joints: self.joints.clone(),
            dt: self.dt,
            values,
            normalized,
        }
    }
}

/// Reads a sequence from the CSV dialect described in the module docs.
pub fn load_sequence(path: impl AsRef<Path>, kind: SequenceKind) -> Result<Sequence> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_sequence(&text, kind, path)
}

pub fn parse_sequence(text: &str, kind: SequenceKind, path: &Path) -> Result<Sequence> {
    let parse_err = |line: usize, column: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));

    let (ln, meta) = lines
        .next()
        .ok_or_else(|| parse_err(1, 1, "empty file".into()))?;
    let dt_text = meta
        .trim()
        .strip_prefix('#')
        .map(str::trim)
        .and_then(|m| m.strip_prefix("dt="))
        .ok_or_else(|| parse_err(ln, 1, "expected metadata line `# dt=<seconds>`".into()))?;
    let dt: f64 = dt_text
        .trim()
        .parse()
        .map_err(|_| parse_err(ln, 1, format!("invalid dt `{dt_text}`")))?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(parse_err(ln, 1, format!("dt must be positive, got {dt}")));
    }

    let (ln, header) = lines
        .next()
        .ok_or_else(|| parse_err(2, 1, "missing joint-name header".into()))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    if let Some(col) = names.iter().position(|n| n.is_empty()) {
        return Err(parse_err(ln, col + 1, "empty joint name".into()));
    }
    let mut seen = HashSet::new();
    for (col, name) in names.iter().enumerate() {
        if !seen.insert(*name) {
            return Err(parse_err(ln, col + 1, format!("duplicate joint name `{name}`")));
        }
    }

    let n = names.len();
    let mut values = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                line: ln,
                expected: n,
                found: cells.len(),
            });
        }
        for (col, cell) in cells.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(ln, col + 1, format!("non-numeric cell `{}`", cell.trim())))?;
            if !v.is_finite() {
                return Err(parse_err(ln, col + 1, format!("non-finite cell `{}`", cell.trim())));
            }
            values.push(v);
        }
    }
    if values.len() / n < 2 {
        return Err(parse_err(1, 1, "a sequence needs at least 2 frames".into()));
    }
    Sequence::from_flat(kind, &names, dt, values)
}

pub fn format_sequence(seq: &Sequence) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# dt={}", seq.dt);
    let _ = writeln!(out, "{}", seq.joint_names().join(","));
    for frame in seq.frames() {
        let row: Vec<String> = frame.iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn save_sequence(seq: &Sequence, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_sequence(seq))?;
    Ok(())
}

/// Per-joint min-max statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub joints: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationParams {
    pub fn fit(seq: &Sequence) -> Result<Self> {
        Self::fit_many(std::slice::from_ref(seq))
    }

    /// Fits on the union of frames of several sequences sharing a joint set.
    pub fn fit_many(seqs: &[Sequence]) -> Result<Self> {
        let first = seqs
            .first()
            .ok_or_else(|| Error::Empty("no sequences to fit".into()))?;
        let joints = first.joint_names();
        let n = joints.len();
        let mut min = vec![f64::INFINITY; n];
        let mut max = vec![f64::NEG_INFINITY; n];
        for seq in seqs {
            check_joints(&joints, seq)?;
            for frame in seq.frames() {
                for j in 0..n {
                    min[j] = min[j].min(frame[j]);
                    max[j] = max[j].max(frame[j]);
                }
            }
        }
        let params = Self { joints, min, max };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.joints.len();
        if self.min.len() != n || self.max.len() != n {
            return Err(Error::invalid("normalization arrays differ in length"));
        }
        for j in 0..n {
            if !(self.max[j] > self.min[j]) {
                return Err(Error::DegenerateChannel(self.joints[j].clone()));
            }
        }
        Ok(())
    }

    pub fn range(&self, joint: usize) -> f64 {
        self.max[joint] - self.min[joint]
    }

    pub fn normalize_value(&self, joint: usize, v: f64) -> f64 {
        (v - self.min[joint]) / self.range(joint)
    }

    pub fn denormalize_value(&self, joint: usize, v: f64) -> f64 {
        v * self.range(joint) + self.min[joint]
    }

    pub fn normalize(&self, seq: &Sequence) -> Result<Sequence> {
        check_joints(&self.joints, seq)?;
        if seq.normalized {
            return Err(Error::invalid("sequence is already normalized"));
        }
        let n = seq.n_joints();
        let values = seq
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| self.normalize_value(i % n, v))
            .collect();
        Ok(seq.with_values(values, true))
    }

    pub fn denormalize(&self, seq: &Sequence) -> Result<Sequence> {
        check_joints(&self.joints, seq)?;
        if !seq.normalized {
            return Err(Error::invalid("sequence is not normalized"));
        }
        let n = seq.n_joints();
        let values = seq
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| self.denormalize_value(i % n, v))
            .collect();
        Ok(seq.with_values(values, false))
    }

    /// Restricts the statistics to the named joints, in that order.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let mut out = Self {
            joints: Vec::new(),
            min: Vec::new(),
            max: Vec::new(),
        };
        for name in names {
            let j = self
                .joints
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Missing(format!("normalization for joint `{name}`")))?;
            out.joints.push(name.clone());
            out.min.push(self.min[j]);
            out.max.push(self.max[j]);
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let params: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn check_joints(expected: &[String], seq: &Sequence) -> Result<()> {
    let found = seq.joint_names();
    if found != expected {
        return Err(Error::JointMismatch {
            expected: expected.to_vec(),
            found,
        });
    }
    Ok(())
}

/// Interprets a joint torque as an active motor-unit percentage (%MVC).
pub fn torque_to_activation(torque: f64, torque_max: f64) -> Result<f64> {
    if !(torque_max > 0.0 && torque_max.is_finite()) {
        return Err(Error::invalid(format!(
            "torque_max must be positive, got {torque_max}"
        )));
    }
    Ok((torque.abs() / torque_max * 100.0).clamp(0.0, 100.0))
}

/// Per-joint maximum absolute torque over a set of torque sequences.
pub fn torque_ceiling(seqs: &[TorqueSequence]) -> Result<Vec<f64>> {
    let first = seqs
        .first()
        .ok_or_else(|| Error::Empty("no torque sequences".into()))?;
    let names = first.joint_names();
    let mut ceil = vec![0.0_f64; names.len()];
    for seq in seqs {
        check_joints(&names, seq)?;
        for frame in seq.frames() {
            for (c, v) in ceil.iter_mut().zip(frame) {
                *c = c.max(v.abs());
            }
        }
    }
    if let Some(j) = ceil.iter().position(|&c| c <= 0.0) {
        return Err(Error::DegenerateChannel(names[j].clone()));
    }
    Ok(ceil)
}

/// Deterministic shuffled split of item indices into train and test sets.
///
/// Both returned lists are sorted ascending. Each split holds at least one item.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    if n < 2 {
        return Err(Error::CannotSplit(n));
    }
    let n_train = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split_train_test<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (train, test) = split_indices(items.len(), fraction, seed)?;
    Ok((
        train.iter().map(|&i| items[i].clone()).collect(),
        test.iter().map(|&i| items[i].clone()).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_joint() -> Sequence {
        Sequence::from_rows(
            SequenceKind::Angle,
            &["shoulder", "elbow"],
            0.01,
            &[vec![0.1, 2.0], vec![0.2, 4.0], vec![0.3, 6.0]],
        )
        .unwrap()
    }

    #[test]
    fn parses_well_formed_file() {
        let text = "# dt=0.01\nshoulder,elbow\n0.1,2\n0.2,4\n0.3,6\n";
        let seq = parse_sequence(text, SequenceKind::Angle, Path::new("m.csv")).unwrap();
        assert_eq!(seq.n_frames(), 3);
        assert_eq!(seq.n_joints(), 2);
        assert_eq!(seq.joint_names(), vec!["shoulder", "elbow"]);
        assert_eq!(seq.dt(), 0.01);
        assert_eq!(seq, two_joint());
    }

    #[test]
    fn header_order_is_preserved() {
        let text = "# dt=0.1\nz,a,m\n1,2,3\n4,5,6\n";
        let seq = parse_sequence(text, SequenceKind::Torque, Path::new("t.csv")).unwrap();
        assert_eq!(seq.joint_names(), vec!["z", "a", "m"]);
        assert_eq!(seq.channel(1), vec![2.0, 5.0]);
    }

    #[test]
    fn ragged_row_reports_line() {
        let text = "# dt=0.01\na,b\n1,2\n3\n5,6\n";
        match parse_sequence(text, SequenceKind::Angle, Path::new("r.csv")) {
            Err(Error::RaggedRow { line, expected, found, .. }) => {
                assert_eq!((line, expected, found), (4, 2, 1));
            }
            other => panic!("expected ragged row, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_cells_and_metadata() {
        let p = Path::new("x.csv");
        let bad_cell = parse_sequence("# dt=0.01\na,b\n1,2\n3,x\n", SequenceKind::Angle, p);
        assert!(matches!(bad_cell, Err(Error::Parse { line: 4, column: 2, .. })));
        let bad_dt = parse_sequence("# dt=0\na\n1\n2\n", SequenceKind::Angle, p);
        assert!(matches!(bad_dt, Err(Error::Parse { line: 1, .. })));
        let neg_dt = parse_sequence("# dt=-1\na\n1\n2\n", SequenceKind::Angle, p);
        assert!(matches!(neg_dt, Err(Error::Parse { line: 1, .. })));
        let no_meta = parse_sequence("a,b\n1,2\n", SequenceKind::Angle, p);
        assert!(matches!(no_meta, Err(Error::Parse { line: 1, .. })));
        let dup = parse_sequence("# dt=1\na,a\n1,2\n1,2\n", SequenceKind::Angle, p);
        assert!(matches!(dup, Err(Error::Parse { line: 2, column: 2, .. })));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let seq = two_joint();
        save_sequence(&seq, &path).unwrap();
        let back = load_sequence(&path, SequenceKind::Angle).unwrap();
        assert_eq!(back, seq);
        save_sequence(&back, dir.path().join("m2.csv")).unwrap();
        assert_eq!(
            fs::read(&path).unwrap(),
            fs::read(dir.path().join("m2.csv")).unwrap()
        );
    }

    #[test]
    fn normalizes_linearly() {
        let seq = two_joint();
        let p = NormalizationParams::fit(&seq).unwrap();
        let norm = p.normalize(&seq).unwrap();
        assert!(norm.is_normalized());
        assert_eq!(norm.channel(1), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn constant_channel_is_degenerate() {
        let seq = Sequence::from_rows(
            SequenceKind::Angle,
            &["a", "b"],
            0.1,
            &[vec![5.0, 1.0], vec![5.0, 2.0], vec![5.0, 3.0]],
        )
        .unwrap();
        assert!(matches!(
            NormalizationParams::fit(&seq),
            Err(Error::DegenerateChannel(ref j)) if j == "a"
        ));
    }

    #[test]
    fn normalize_requires_matching_joints() {
        let seq = two_joint();
        let mut p = NormalizationParams::fit(&seq).unwrap();
        p.joints = vec!["elbow".into(), "shoulder".into()];
        assert!(matches!(p.normalize(&seq), Err(Error::JointMismatch { .. })));
    }

    #[test]
    fn activation_examples() {
        assert_eq!(torque_to_activation(0.0, 50.0).unwrap(), 0.0);
        assert_eq!(torque_to_activation(-25.0, 50.0).unwrap(), 50.0);
        assert_eq!(torque_to_activation(80.0, 50.0).unwrap(), 100.0);
        assert!(torque_to_activation(1.0, 0.0).is_err());
        assert!(torque_to_activation(1.0, -3.0).is_err());
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let items: Vec<usize> = (0..10).collect();
        let (a_train, a_test) = split_train_test(&items, 0.8, 7).unwrap();
        let (b_train, b_test) = split_train_test(&items, 0.8, 7).unwrap();
        assert_eq!((a_train.len(), a_test.len()), (8, 2));
        assert_eq!(a_train, b_train);
        assert_eq!(a_test, b_test);
        let (c_train, c_test) = split_train_test(&items, 0.8, 8).unwrap();
        assert_eq!((c_train.len(), c_test.len()), (8, 2));
        let mut all: Vec<usize> = a_train.iter().chain(&a_test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, items);
        assert!(matches!(split_train_test(&items[..1], 0.8, 7), Err(Error::CannotSplit(1))));
        assert!(split_train_test(&items, 1.0, 7).is_err());
    }

    proptest! {
        #[test]
        fn normalize_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..20)) {
            let seq = Sequence::from_rows(SequenceKind::Torque, &["a", "b", "c"], 0.02, &rows).unwrap();
            if let Ok(p) = NormalizationParams::fit(&seq) {
                let norm = p.normalize(&seq).unwrap();
                prop_assert!(norm.as_flat().iter().all(|v| (0.0..=1.0).contains(v)));
                let back = p.denormalize(&norm).unwrap();
                for (x, y) in seq.as_flat().iter().zip(back.as_flat()) {
                    prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
                }
            }
        }

        #[test]
        fn activation_is_even_and_bounded(tau in -1e4f64..1e4, tau_max in 1e-3f64..1e3) {
            let a = torque_to_activation(tau, tau_max).unwrap();
            prop_assert!((0.0..=100.0).contains(&a));
            prop_assert_eq!(a, torque_to_activation(-tau, tau_max).unwrap());
        }
    }
}
