//! Trajectory and frame types, the joint-angle channel layout, channel
//! masking and reconstruction-error metrics.
//!
//! Angles are radians everywhere except in the reporting helpers, which
//! convert to degrees.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::TrialGroundTruth;

/// Generalized-coordinate vector length: pelvis position (3), pelvis
/// orientation quaternion (4), joint angles (34).
pub const Q_LEN: usize = 41;
/// Velocity vector length: linear (3), rotational (3), joint (34).
pub const QDOT_LEN: usize = 40;
pub const NUM_JOINTS: usize = 34;
/// Offset of the first joint angle inside `q`.
pub const JOINT_OFFSET: usize = 7;
/// Offset of the first joint velocity inside `qdot`.
pub const JOINT_VEL_OFFSET: usize = 6;

pub const FRAME_RATE_HZ: f64 = 30.0;

/// Joint-angle channel names, indexed by channel. Left side, right side,
/// trunk and neck, then left and right upper limb.
pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "hip_flexion_l",
    "hip_adduction_l",
    "hip_rotation_l",
    "knee_angle_l",
    "ankle_angle_l",
    "subtalar_angle_l",
    "mtp_angle_l",
    "hip_flexion_r",
    "hip_adduction_r",
    "hip_rotation_r",
    "knee_angle_r",
    "ankle_angle_r",
    "subtalar_angle_r",
    "mtp_angle_r",
    "lumbar_extension",
    "lumbar_bending",
    "lumbar_rotation",
    "neck_flexion",
    "neck_bending",
    "neck_rotation",
    "arm_flex_l",
    "arm_add_l",
    "arm_rot_l",
    "elbow_flex_l",
    "pro_sup_l",
    "wrist_flex_l",
    "wrist_dev_l",
    "arm_flex_r",
    "arm_add_r",
    "arm_rot_r",
    "elbow_flex_r",
    "pro_sup_r",
    "wrist_flex_r",
    "wrist_dev_r",
];

pub mod joint {
    pub const HIP_FLEXION_L: usize = 0;
    pub const HIP_ADDUCTION_L: usize = 1;
    pub const HIP_ROTATION_L: usize = 2;
    pub const KNEE_L: usize = 3;
    pub const ANKLE_L: usize = 4;
    pub const SUBTALAR_L: usize = 5;
    pub const MTP_L: usize = 6;
    pub const HIP_FLEXION_R: usize = 7;
    pub const HIP_ADDUCTION_R: usize = 8;
    pub const HIP_ROTATION_R: usize = 9;
    pub const KNEE_R: usize = 10;
    pub const ANKLE_R: usize = 11;
    pub const SUBTALAR_R: usize = 12;
    pub const MTP_R: usize = 13;
    pub const LUMBAR_EXTENSION: usize = 14;
    pub const LUMBAR_BENDING: usize = 15;
    pub const LUMBAR_ROTATION: usize = 16;
    pub const NECK_FLEXION: usize = 17;
    pub const NECK_BENDING: usize = 18;
    pub const NECK_ROTATION: usize = 19;
    pub const ARM_FLEX_L: usize = 20;
    pub const ARM_ADD_L: usize = 21;
    pub const ARM_ROT_L: usize = 22;
    pub const ELBOW_L: usize = 23;
    pub const PRO_SUP_L: usize = 24;
    pub const WRIST_FLEX_L: usize = 25;
    pub const WRIST_DEV_L: usize = 26;
    pub const ARM_FLEX_R: usize = 27;
    pub const ARM_ADD_R: usize = 28;
    pub const ARM_ROT_R: usize = 29;
    pub const ELBOW_R: usize = 30;
    pub const PRO_SUP_R: usize = 31;
    pub const WRIST_FLEX_R: usize = 32;
    pub const WRIST_DEV_R: usize = 33;
}

/// Left/right channel pairs `(left, right)`.
pub const BILATERAL_PAIRS: [(usize, usize); 14] = [
    (0, 7),
    (1, 8),
    (2, 9),
    (3, 10),
    (4, 11),
    (5, 12),
    (6, 13),
    (20, 27),
    (21, 28),
    (22, 29),
    (23, 30),
    (24, 31),
    (25, 32),
    (26, 33),
];

pub fn is_right_channel(j: usize) -> bool {
    (7..14).contains(&j) || (27..34).contains(&j)
}

/// Counterpart of a bilateral channel, `None` for trunk and neck.
pub fn contralateral(j: usize) -> Option<usize> {
    BILATERAL_PAIRS.iter().find_map(|&(l, r)| {
        if l == j {
            Some(r)
        } else if r == j {
            Some(l)
        } else {
            None
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub q: [f64; Q_LEN],
    pub qdot: [f64; QDOT_LEN],
}

impl Frame {
    pub fn new(q: [f64; Q_LEN], qdot: [f64; QDOT_LEN]) -> Result<Self> {
        let norm = q[3..7].iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!(
                "pelvis quaternion norm {norm} is not 1"
            )));
        }
        Ok(Frame { q, qdot })
    }

    pub fn from_slices(q: &[f64], qdot: &[f64]) -> Result<Self> {
        let q: [f64; Q_LEN] = q.try_into().map_err(|_| {
            Error::Contract(format!("q has {} elements, expected {Q_LEN}", q.len()))
        })?;
        let qdot: [f64; QDOT_LEN] = qdot.try_into().map_err(|_| {
            Error::Contract(format!(
                "qdot has {} elements, expected {QDOT_LEN}",
                qdot.len()
            ))
        })?;
        Frame::new(q, qdot)
    }

    pub fn pelvis_position(&self) -> &[f64] {
        &self.q[0..3]
    }

    pub fn pelvis_orientation(&self) -> &[f64] {
        &self.q[3..7]
    }

    pub fn joints(&self) -> &[f64] {
        &self.q[JOINT_OFFSET..]
    }

    pub fn joints_mut(&mut self) -> &mut [f64] {
        &mut self.q[JOINT_OFFSET..]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub participant_id: String,
    pub trial_id: String,
    pub frame_rate_hz: f64,
    pub frames: Vec<Frame>,
    pub ground_truth: TrialGroundTruth,
    /// Body-shape parameters, carried through when present in a file and
    /// otherwise ignored.
    pub beta: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn new(
        participant_id: impl Into<String>,
        trial_id: impl Into<String>,
        frame_rate_hz: f64,
        frames: Vec<Frame>,
        ground_truth: TrialGroundTruth,
    ) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptyInput("trajectory has no frames".into()));
        }
        if !(frame_rate_hz > 0.0) || !frame_rate_hz.is_finite() {
            return Err(Error::Contract(format!(
                "frame rate must be positive, got {frame_rate_hz}"
            )));
        }
        Ok(Trajectory {
            participant_id: participant_id.into(),
            trial_id: trial_id.into(),
            frame_rate_hz,
            frames,
            ground_truth,
            beta: None,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.frames.len() as f64 / self.frame_rate_hz
    }
}

/// Set of joint channels forced to zero before tokenization.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChannelMask {
    zeroed: BTreeSet<usize>,
}

impl ChannelMask {
    pub fn new(channels: impl IntoIterator<Item = usize>) -> Result<Self> {
        let zeroed: BTreeSet<usize> = channels.into_iter().collect();
        if let Some(&bad) = zeroed.iter().find(|&&c| c >= NUM_JOINTS) {
            return Err(Error::Contract(format!(
                "mask channel {bad} outside joint range 0..{NUM_JOINTS}"
            )));
        }
        Ok(ChannelMask { zeroed })
    }

    pub fn empty() -> Self {
        ChannelMask::default()
    }

    /// Wrist flexion, wrist deviation, forearm supination and metatarsal
    /// channels on both sides.
    pub fn default_zeroed() -> Self {
        use joint::*;
        ChannelMask {
            zeroed: [
                WRIST_FLEX_L,
                WRIST_DEV_L,
                PRO_SUP_L,
                MTP_L,
                WRIST_FLEX_R,
                WRIST_DEV_R,
                PRO_SUP_R,
                MTP_R,
            ]
            .into_iter()
            .collect(),
        }
    }

    pub fn all_joints() -> Self {
        ChannelMask {
            zeroed: (0..NUM_JOINTS).collect(),
        }
    }

    pub fn channels(&self) -> impl Iterator<Item = usize> + '_ {
        self.zeroed.iter().copied()
    }

    pub fn contains(&self, channel: usize) -> bool {
        self.zeroed.contains(&channel)
    }

    pub fn len(&self) -> usize {
        self.zeroed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zeroed.is_empty()
    }
}

pub fn apply_channel_mask(traj: &Trajectory, mask: &ChannelMask) -> Trajectory {
    let mut out = traj.clone();
    for frame in &mut out.frames {
        let joints = frame.joints_mut();
        for c in mask.channels() {
            joints[c] = 0.0;
        }
    }
    out
}

/// L×34 matrix of joint angles; pelvis pose and all velocities are dropped.
pub fn strip_to_joint_matrix(traj: &Trajectory) -> Result<Array2<f64>> {
    if traj.frames.is_empty() {
        return Err(Error::EmptyInput("trajectory has no frames".into()));
    }
    let mut out = Array2::zeros((traj.frames.len(), NUM_JOINTS));
    for (mut row, frame) in out.outer_iter_mut().zip(&traj.frames) {
        for (dst, src) in row.iter_mut().zip(frame.joints()) {
            *dst = *src;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub overall_deg: f64,
    pub per_joint_deg: Vec<f64>,
}

/// Per-joint RMSE in degrees between two L×34 radian matrices; the overall
/// figure is the mean of the per-joint values.
pub fn rmse_per_joint_degrees(a: &Array2<f64>, b: &Array2<f64>) -> Result<RmseReport> {
    if a.dim() != b.dim() {
        return Err(Error::Contract(format!(
            "shape mismatch: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let (rows, cols) = a.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyInput("empty matrices".into()));
    }
    let per_joint_deg: Vec<f64> = (0..cols)
        .map(|j| {
            let sse: f64 = a
                .column(j)
                .iter()
                .zip(b.column(j).iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            (sse / rows as f64).sqrt().to_degrees()
        })
        .collect();
    let overall_deg = per_joint_deg.iter().sum::<f64>() / cols as f64;
    Ok(RmseReport {
        overall_deg,
        per_joint_deg,
    })
}

/// Accumulates squared errors across many trials so the RMSE is taken over
/// all frames at once.
#[derive(Debug, Clone)]
pub struct RmseAccumulator {
    sse: Vec<f64>,
    rows: usize,
}

impl Default for RmseAccumulator {
    fn default() -> Self {
        RmseAccumulator {
            sse: vec![0.0; NUM_JOINTS],
            rows: 0,
        }
    }
}

impl RmseAccumulator {
    pub fn add(&mut self, a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
        if a.dim() != b.dim() || a.ncols() != NUM_JOINTS {
            return Err(Error::Contract(format!(
                "shape mismatch: {:?} vs {:?}",
                a.dim(),
                b.dim()
            )));
        }
        for (ra, rb) in a.outer_iter().zip(b.outer_iter()) {
            for (j, (x, y)) in ra.iter().zip(rb.iter()).enumerate() {
                self.sse[j] += (x - y) * (x - y);
            }
        }
        self.rows += a.nrows();
        Ok(())
    }

    pub fn finish(&self) -> Result<RmseReport> {
        if self.rows == 0 {
            return Err(Error::EmptyInput("no frames accumulated".into()));
        }
        let per_joint_deg: Vec<f64> = self
            .sse
            .iter()
            .map(|s| (s / self.rows as f64).sqrt().to_degrees())
            .collect();
        let overall_deg = per_joint_deg.iter().sum::<f64>() / NUM_JOINTS as f64;
        Ok(RmseReport {
            overall_deg,
            per_joint_deg,
        })
    }
}

/// Round to nine significant digits.
fn round_sig9(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.8e}").parse().unwrap_or(v)
}

#[derive(Serialize, Deserialize)]
struct TrialFile {
    participant_id: String,
    trial_id: String,
    frame_rate_hz: f64,
    ground_truth: TrialGroundTruth,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<Vec<f64>>,
    q: Vec<Vec<f64>>,
    qdot: Vec<Vec<f64>>,
}

pub fn trial_to_json(traj: &Trajectory) -> String {
    let file = TrialFile {
        participant_id: traj.participant_id.clone(),
        trial_id: traj.trial_id.clone(),
        frame_rate_hz: traj.frame_rate_hz,
        ground_truth: traj.ground_truth.clone(),
        beta: traj.beta.clone(),
        q: traj
            .frames
            .iter()
            .map(|f| f.q.iter().map(|v| round_sig9(*v)).collect())
            .collect(),
        qdot: traj
            .frames
            .iter()
            .map(|f| f.qdot.iter().map(|v| round_sig9(*v)).collect())
            .collect(),
    };
    serde_json::to_string(&file).expect("trial serialization cannot fail")
}

pub fn trial_from_json(text: &str, origin: &Path) -> Result<Trajectory> {
    let file: TrialFile = serde_json::from_str(text).map_err(|e| Error::json(origin, e))?;
    if file.q.len() != file.qdot.len() {
        return Err(Error::Contract(format!(
            "{}: {} q rows but {} qdot rows",
            origin.display(),
            file.q.len(),
            file.qdot.len()
        )));
    }
    let frames = file
        .q
        .iter()
        .zip(&file.qdot)
        .map(|(q, qd)| Frame::from_slices(q, qd))
        .collect::<Result<Vec<_>>>()?;
    let mut traj = Trajectory::new(
        file.participant_id,
        file.trial_id,
        file.frame_rate_hz,
        frames,
        file.ground_truth,
    )?;
    traj.beta = file.beta;
    Ok(traj)
}

pub fn write_trial(path: &Path, traj: &Trajectory) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, trial_to_json(traj)).map_err(|e| Error::io(path, e))
}

pub fn read_trial(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    trial_from_json(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{Activity, AssistiveDevice, Diagnosis};
    use proptest::prelude::*;

    fn gt() -> TrialGroundTruth {
        TrialGroundTruth {
            activity: Activity::QuietStanding,
            impaired: false,
            diagnosis: Diagnosis::None,
            assistive_device: AssistiveDevice::None,
            fall_history: None,
            on_walkway: false,
            cadence_steps_per_min: None,
            speed_m_s: None,
            completion_time_s: None,
        }
    }

    fn frame_with(joints: &[f64], pelvis_x: f64, vel: f64) -> Frame {
        let mut q = [0.0; Q_LEN];
        q[0] = pelvis_x;
        q[3] = 1.0;
        q[JOINT_OFFSET..].copy_from_slice(joints);
        Frame::new(q, [vel; QDOT_LEN]).unwrap()
    }

    fn traj_from_rows(rows: &[Vec<f64>]) -> Trajectory {
        let frames = rows
            .iter()
            .enumerate()
            .map(|(t, r)| frame_with(r, t as f64 * 0.1, 0.5))
            .collect();
        Trajectory::new("P1", "P1-T00", FRAME_RATE_HZ, frames, gt()).unwrap()
    }

    #[test]
    fn joint_table_is_consistent() {
        assert_eq!(JOINT_NAMES.len(), NUM_JOINTS);
        assert_eq!(JOINT_NAMES[joint::WRIST_DEV_R], "wrist_dev_r");
        assert_eq!(JOINT_NAMES[joint::MTP_L], "mtp_angle_l");
        for &(l, r) in &BILATERAL_PAIRS {
            assert_eq!(
                JOINT_NAMES[l].trim_end_matches("_l"),
                JOINT_NAMES[r].trim_end_matches("_r")
            );
            assert!(!is_right_channel(l) && is_right_channel(r));
            assert_eq!(contralateral(l), Some(r));
        }
        assert_eq!(contralateral(joint::LUMBAR_ROTATION), None);
    }

    #[test]
    fn frame_rejects_bad_layout_and_quaternion() {
        assert!(Frame::from_slices(&[0.0; 40], &[0.0; 40]).is_err());
        assert!(Frame::from_slices(&[0.0; 41], &[0.0; 41]).is_err());
        // zero quaternion
        assert!(Frame::from_slices(&[0.0; 41], &[0.0; 40]).is_err());
        let mut q = [0.0; 41];
        q[4] = 1.0;
        assert!(Frame::from_slices(&q, &[0.0; 40]).is_ok());
    }

    #[test]
    fn trajectory_rejects_empty_and_bad_rate() {
        assert!(matches!(
            Trajectory::new("P", "T", 30.0, vec![], gt()),
            Err(Error::EmptyInput(_))
        ));
        let f = frame_with(&[0.0; 34], 0.0, 0.0);
        assert!(Trajectory::new("P", "T", 0.0, vec![f], gt()).is_err());
    }

    #[test]
    fn default_mask_zeroes_wrist_flexion() {
        let mut joints = [0.1; NUM_JOINTS];
        joints[joint::WRIST_FLEX_L] = 0.3;
        let traj = traj_from_rows(&[joints.to_vec()]);
        let masked = apply_channel_mask(&traj, &ChannelMask::default_zeroed());
        assert_eq!(masked.frames[0].joints()[joint::WRIST_FLEX_L], 0.0);
        assert_eq!(masked.frames[0].joints()[joint::HIP_FLEXION_L], 0.1);
        // input untouched
        assert_eq!(traj.frames[0].joints()[joint::WRIST_FLEX_L], 0.3);
        assert_eq!(ChannelMask::default_zeroed().len(), 8);
    }

    #[test]
    fn empty_mask_is_identity_and_full_mask_keeps_pelvis() {
        let traj = traj_from_rows(&[vec![0.2; 34], vec![-0.4; 34]]);
        assert_eq!(apply_channel_mask(&traj, &ChannelMask::empty()), traj);
        let all = apply_channel_mask(&traj, &ChannelMask::all_joints());
        for (a, b) in all.frames.iter().zip(&traj.frames) {
            assert!(a.joints().iter().all(|v| *v == 0.0));
            assert_eq!(a.q[..JOINT_OFFSET], b.q[..JOINT_OFFSET]);
            assert_eq!(a.qdot, b.qdot);
        }
    }

    #[test]
    fn mask_rejects_out_of_range() {
        assert!(matches!(ChannelMask::new([3, 34]), Err(Error::Contract(_))));
    }

    #[test]
    fn strip_shape_and_pelvis_independence() {
        let rows: Vec<Vec<f64>> = (0..10).map(|_| vec![0.25; 34]).collect();
        let traj = traj_from_rows(&rows);
        let m = strip_to_joint_matrix(&traj).unwrap();
        assert_eq!(m.dim(), (10, 34));
        for r in m.outer_iter() {
            assert_eq!(r, m.row(0));
        }
    }

    #[test]
    fn strip_matches_per_frame_slicing() {
        let rows: Vec<Vec<f64>> = (0..7)
            .map(|t| (0..34).map(|j| (t * 34 + j) as f64 * 0.01).collect())
            .collect();
        let traj = traj_from_rows(&rows);
        let m = strip_to_joint_matrix(&traj).unwrap();
        for (t, frame) in traj.frames.iter().enumerate() {
            for j in 0..NUM_JOINTS {
                assert_eq!(m[[t, j]], frame.q[7 + j]);
            }
        }
    }

    #[test]
    fn strip_ignores_velocity_values() {
        let rows: Vec<Vec<f64>> = (0..5).map(|t| vec![t as f64 * 0.1; 34]).collect();
        let clean = traj_from_rows(&rows);
        let mut poisoned = clean.clone();
        for f in &mut poisoned.frames {
            f.qdot = [f64::NAN; QDOT_LEN];
        }
        assert_eq!(
            strip_to_joint_matrix(&clean).unwrap(),
            strip_to_joint_matrix(&poisoned).unwrap()
        );
    }

    #[test]
    fn rmse_identity_and_constant_offset() {
        let a = Array2::from_shape_fn((12, 34), |(t, j)| ((t * j) as f64).sin());
        assert_eq!(rmse_per_joint_degrees(&a, &a).unwrap().overall_deg, 0.0);
        let b = &a + 1f64.to_radians();
        let r = rmse_per_joint_degrees(&a, &b).unwrap();
        assert!((r.overall_deg - 1.0).abs() < 1e-9);
        assert!(rmse_per_joint_degrees(&a, &Array2::zeros((11, 34))).is_err());
    }

    #[test]
    fn rmse_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = Array2::from_shape_fn((9, 34), |_| rng.random_range(-1.0..1.0));
        let b = Array2::from_shape_fn((9, 34), |_| rng.random_range(-1.0..1.0));
        let r = rmse_per_joint_degrees(&a, &b).unwrap();
        let mut overall = 0.0;
        for j in 0..34 {
            let mut s = 0.0;
            for t in 0..9 {
                s += (a[[t, j]] - b[[t, j]]).powi(2);
            }
            let v = (s / 9.0).sqrt() * 180.0 / std::f64::consts::PI;
            assert!((r.per_joint_deg[j] - v).abs() < 1e-9);
            overall += v / 34.0;
        }
        assert!((r.overall_deg - overall).abs() < 1e-9);

        let mut acc = RmseAccumulator::default();
        acc.add(
            &a.slice(ndarray::s![..4, ..]).to_owned(),
            &b.slice(ndarray::s![..4, ..]).to_owned(),
        )
        .unwrap();
        acc.add(
            &a.slice(ndarray::s![4.., ..]).to_owned(),
            &b.slice(ndarray::s![4.., ..]).to_owned(),
        )
        .unwrap();
        assert!((acc.finish().unwrap().overall_deg - r.overall_deg).abs() < 1e-9);
    }

    #[test]
    fn trial_file_round_trip_keeps_nine_digits_and_beta() {
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|t| vec![0.123456789123 * t as f64; 34])
            .collect();
        let mut traj = traj_from_rows(&rows);
        traj.beta = Some(vec![1.0, 2.0]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("P1/P1-T00.json");
        write_trial(&path, &traj).unwrap();
        let back = read_trial(&path).unwrap();
        assert_eq!(back.beta, Some(vec![1.0, 2.0]));
        assert_eq!(back.ground_truth, traj.ground_truth);
        for (a, b) in back.frames.iter().zip(&traj.frames) {
            for (x, y) in a.q.iter().zip(b.q.iter()) {
                assert!((x - y).abs() <= 1e-9 * y.abs().max(1e-300));
            }
        }
    }

    fn matrix_strategy() -> impl Strategy<Value = (Array2<f64>, Array2<f64>)> {
        (1usize..6).prop_flat_map(|rows| {
            (
                proptest::collection::vec(-3.0f64..3.0, rows * 34),
                proptest::collection::vec(-3.0f64..3.0, rows * 34),
            )
                .prop_map(move |(a, b)| {
                    (
                        Array2::from_shape_vec((rows, 34), a).unwrap(),
                        Array2::from_shape_vec((rows, 34), b).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn rmse_is_symmetric((a, b) in matrix_strategy()) {
            let ab = rmse_per_joint_degrees(&a, &b).unwrap();
            let ba = rmse_per_joint_degrees(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
        }

        #[test]
        fn rmse_of_constant_offset_is_offset((a, _b) in matrix_strategy(), c in -2.0f64..2.0) {
            let shifted = &a + c;
            let r = rmse_per_joint_degrees(&a, &shifted).unwrap();
            prop_assert!((r.overall_deg - c.abs().to_degrees()).abs() < 1e-9);
        }

        #[test]
        fn masking_is_idempotent(chans in proptest::collection::btree_set(0usize..34, 0..34),
                                 vals in proptest::collection::vec(-2.0f64..2.0, 34)) {
            let traj = traj_from_rows(&[vals.clone(), vals]);
            let mask = ChannelMask::new(chans).unwrap();
            let once = apply_channel_mask(&traj, &mask);
            let twice = apply_channel_mask(&once, &mask);
            prop_assert_eq!(once, twice);
        }
    }
}
