//! Synthetic labeled gait cohort.
//!
//! Participants carry a gait signature from which every trial is generated
//! by a closed-form pose model. Diagnoses, assistive devices and fall risk
//! leave deterministic kinematic fingerprints so every downstream label is
//! learnable from joint angles alone.

use std::f64::consts::{PI, TAU};
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{
    is_right_channel, joint, Frame, Trajectory, FRAME_RATE_HZ, JOINT_OFFSET, JOINT_VEL_OFFSET,
    NUM_JOINTS, QDOT_LEN, Q_LEN,
};
use crate::seed::SeedDeriver;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Diagnosis {
    None,
    ProsthesisUser,
    Stroke,
    #[serde(rename = "SCI")]
    Sci,
    #[serde(rename = "TBI")]
    Tbi,
}

impl Diagnosis {
    pub const IMPAIRMENTS: [Diagnosis; 4] = [
        Diagnosis::ProsthesisUser,
        Diagnosis::Stroke,
        Diagnosis::Sci,
        Diagnosis::Tbi,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Diagnosis::None => "None",
            Diagnosis::ProsthesisUser => "Prosthesis User",
            Diagnosis::Stroke => "Stroke",
            Diagnosis::Sci => "SCI",
            Diagnosis::Tbi => "TBI",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AssistiveDevice {
    None,
    Cane,
    Walker,
    Rollator,
    Crutches,
}

impl AssistiveDevice {
    pub const ALL: [AssistiveDevice; 5] = [
        AssistiveDevice::None,
        AssistiveDevice::Cane,
        AssistiveDevice::Walker,
        AssistiveDevice::Rollator,
        AssistiveDevice::Crutches,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AssistiveDevice::None => "None",
            AssistiveDevice::Cane => "Cane",
            AssistiveDevice::Walker => "Walker",
            AssistiveDevice::Rollator => "Rollator",
            AssistiveDevice::Crutches => "Crutches",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Activity {
    OvergroundWalk,
    TimedUpAndGo,
    FourSquareStepTest,
    LTest,
    FunctionalGaitAssessment,
    SitToStand,
    QuietStanding,
    TurningInPlace,
}

impl Activity {
    pub const ALL: [Activity; 8] = [
        Activity::OvergroundWalk,
        Activity::TimedUpAndGo,
        Activity::FourSquareStepTest,
        Activity::LTest,
        Activity::FunctionalGaitAssessment,
        Activity::SitToStand,
        Activity::QuietStanding,
        Activity::TurningInPlace,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Activity::OvergroundWalk => "Overground Walking",
            Activity::TimedUpAndGo => "Timed Up and Go",
            Activity::FourSquareStepTest => "Four Square Step Test",
            Activity::LTest => "L-Test",
            Activity::FunctionalGaitAssessment => "Functional Gait Assessment",
            Activity::SitToStand => "Sit to Stand",
            Activity::QuietStanding => "Quiet Standing",
            Activity::TurningInPlace => "Turning in Place",
        }
    }

    pub fn is_timed_test(self) -> bool {
        matches!(self, Activity::TimedUpAndGo | Activity::FourSquareStepTest)
    }
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Closed-form gait signature of one participant (or one trial, once
/// per-trial variation has been applied).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitParams {
    pub cadence_steps_per_min: f64,
    pub stride_length_m: f64,
    /// Per-joint oscillation amplitude, radians.
    pub amplitude: Vec<f64>,
    /// Per-joint phase offset, radians.
    pub phase: Vec<f64>,
    pub asymmetry: f64,
    /// Per-frame noise scale, radians; also drives phase drift, sway and
    /// stride-to-stride amplitude modulation.
    pub variability: f64,
    pub trunk_lean_rad: f64,
    /// Static per-joint offsets added to the neutral pose (device and
    /// diagnosis postures).
    pub posture_offset: Vec<f64>,
}

impl GaitParams {
    pub fn validate(&self) -> Result<()> {
        let ok = (40.0..=160.0).contains(&self.cadence_steps_per_min)
            && (0.3..=1.8).contains(&self.stride_length_m)
            && (0.0..=1.0).contains(&self.asymmetry)
            && self.variability >= 0.0
            && self.amplitude.len() == NUM_JOINTS
            && self.phase.len() == NUM_JOINTS
            && self.posture_offset.len() == NUM_JOINTS;
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "invalid gait parameters: {self:?}"
            )))
        }
    }

    pub fn speed_m_s(&self) -> f64 {
        self.stride_length_m * self.cadence_steps_per_min / 120.0
    }

    /// Stride frequency in Hz (one stride is two steps).
    pub fn stride_hz(&self) -> f64 {
        self.cadence_steps_per_min / 120.0
    }
}

/// Standing neutral pose, radians.
pub const NEUTRAL_POSE: [f64; NUM_JOINTS] = {
    let mut p = [0.0; NUM_JOINTS];
    p[joint::KNEE_L] = 0.15;
    p[joint::KNEE_R] = 0.15;
    p[joint::ELBOW_L] = 0.25;
    p[joint::ELBOW_R] = 0.25;
    p[joint::ARM_ADD_L] = -0.05;
    p[joint::ARM_ADD_R] = -0.05;
    p
};

/// Walking oscillation amplitudes at the reference stride length, left side
/// values mirrored to the right.
const BASE_AMPLITUDE: [f64; NUM_JOINTS] = {
    let left: [f64; 7] = [0.40, 0.06, 0.08, 0.45, 0.25, 0.05, 0.15];
    let arm: [f64; 7] = [0.30, 0.03, 0.05, 0.15, 0.05, 0.05, 0.03];
    let mut p = [0.0; NUM_JOINTS];
    let mut i = 0;
    while i < 7 {
        p[i] = left[i];
        p[i + 7] = left[i];
        p[20 + i] = arm[i];
        p[27 + i] = arm[i];
        i += 1;
    }
    p[joint::LUMBAR_EXTENSION] = 0.03;
    p[joint::LUMBAR_BENDING] = 0.05;
    p[joint::LUMBAR_ROTATION] = 0.08;
    p[joint::NECK_FLEXION] = 0.02;
    p[joint::NECK_BENDING] = 0.02;
    p[joint::NECK_ROTATION] = 0.03;
    p
};

const BASE_PHASE: [f64; NUM_JOINTS] = {
    let left: [f64; 7] = [0.0, 1.57, 0.3, -1.0, 2.0, 1.0, 2.5];
    let arm: [f64; 7] = [3.14, 0.5, 0.2, 3.6, 0.4, 0.6, 0.8];
    let mut p = [0.0; NUM_JOINTS];
    let mut i = 0;
    while i < 7 {
        p[i] = left[i];
        p[i + 7] = left[i];
        p[20 + i] = arm[i];
        p[27 + i] = arm[i];
        i += 1;
    }
    p[joint::LUMBAR_BENDING] = 1.57;
    p[joint::LUMBAR_ROTATION] = 3.14;
    p[joint::NECK_BENDING] = 1.2;
    p[joint::NECK_ROTATION] = 0.4;
    p
};

const REFERENCE_STRIDE_M: f64 = 1.3;

/// Pose offsets of a seated participant relative to standing.
const SIT_DELTA: [f64; NUM_JOINTS] = {
    let mut p = [0.0; NUM_JOINTS];
    p[joint::HIP_FLEXION_L] = 1.45;
    p[joint::HIP_FLEXION_R] = 1.45;
    p[joint::KNEE_L] = 1.45;
    p[joint::KNEE_R] = 1.45;
    p[joint::ANKLE_L] = 0.15;
    p[joint::ANKLE_R] = 0.15;
    p[joint::LUMBAR_EXTENSION] = -0.1;
    p[joint::ARM_FLEX_L] = 0.25;
    p[joint::ARM_FLEX_R] = 0.25;
    p[joint::ELBOW_L] = 0.6;
    p[joint::ELBOW_R] = 0.6;
    p
};

/// Joint angles for one gait phase: neutral pose plus posture offsets plus
/// `amplitude * sin(phase + joint_phase)`, with right-side amplitudes scaled
/// by `1 - asymmetry` and right-side phases offset by pi.
pub fn gait_kinematics(params: &GaitParams, phase: f64) -> [f64; NUM_JOINTS] {
    let mut out = [0.0; NUM_JOINTS];
    for (j, v) in out.iter_mut().enumerate() {
        let mut neutral = NEUTRAL_POSE[j] + params.posture_offset[j];
        if j == joint::LUMBAR_EXTENSION {
            neutral -= params.trunk_lean_rad;
        }
        let (amp, offset) = if is_right_channel(j) {
            (params.amplitude[j] * (1.0 - params.asymmetry), PI)
        } else {
            (params.amplitude[j], 0.0)
        };
        *v = neutral + amp * (phase + params.phase[j] + offset).sin();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantProfile {
    pub participant_id: String,
    pub impaired: bool,
    pub diagnosis: Diagnosis,
    pub assistive_device: AssistiveDevice,
    #[serde(default)]
    pub fall_history: Option<bool>,
    pub gait_signature: GaitParams,
}

impl ParticipantProfile {
    pub fn validate(&self) -> Result<()> {
        if (self.diagnosis != Diagnosis::None) != self.impaired {
            return Err(Error::Contract(format!(
                "{}: impaired flag disagrees with diagnosis",
                self.participant_id
            )));
        }
        if self.fall_history.is_some() && self.diagnosis != Diagnosis::ProsthesisUser {
            return Err(Error::Contract(format!(
                "{}: fall history is only recorded for prosthesis users",
                self.participant_id
            )));
        }
        self.gait_signature.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialGroundTruth {
    pub activity: Activity,
    pub impaired: bool,
    pub diagnosis: Diagnosis,
    pub assistive_device: AssistiveDevice,
    #[serde(default)]
    pub fall_history: Option<bool>,
    pub on_walkway: bool,
    #[serde(default)]
    pub cadence_steps_per_min: Option<f64>,
    #[serde(default)]
    pub speed_m_s: Option<f64>,
    #[serde(default)]
    pub completion_time_s: Option<f64>,
}

impl TrialGroundTruth {
    pub fn validate(&self) -> Result<()> {
        let walkway_ok = self.on_walkway
            == (self.cadence_steps_per_min.is_some() && self.speed_m_s.is_some())
            && (self.cadence_steps_per_min.is_some() == self.speed_m_s.is_some());
        let timed_ok = self.completion_time_s.is_some() == self.activity.is_timed_test();
        if walkway_ok && timed_ok {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "inconsistent ground truth: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub impaired_prevalence: f64,
    /// Weights over the four impairment diagnoses; must sum to 1.
    pub diagnosis_weights: Vec<(Diagnosis, f64)>,
    /// Device weights applied to impaired participants; must sum to 1.
    /// Unimpaired participants never use a device.
    pub device_weights: Vec<(AssistiveDevice, f64)>,
    /// Fraction of prosthesis users with a history of falls.
    pub fall_prevalence: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            impaired_prevalence: 0.55,
            diagnosis_weights: vec![
                (Diagnosis::ProsthesisUser, 0.4),
                (Diagnosis::Stroke, 0.3),
                (Diagnosis::Sci, 0.15),
                (Diagnosis::Tbi, 0.15),
            ],
            device_weights: vec![
                (AssistiveDevice::None, 0.6),
                (AssistiveDevice::Cane, 0.15),
                (AssistiveDevice::Walker, 0.1),
                (AssistiveDevice::Rollator, 0.1),
                (AssistiveDevice::Crutches, 0.05),
            ],
            fall_prevalence: 0.5,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !unit(self.impaired_prevalence) || !unit(self.fall_prevalence) {
            return Err(Error::Config("prevalences must lie in [0, 1]".into()));
        }
        let check = |name: &str, ws: &mut dyn Iterator<Item = f64>| -> Result<()> {
            let ws: Vec<f64> = ws.collect();
            if ws.is_empty() || ws.iter().any(|w| !unit(*w)) {
                return Err(Error::Config(format!("{name} weights must lie in [0, 1]")));
            }
            let total: f64 = ws.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "{name} weights sum to {total}, expected 1"
                )));
            }
            Ok(())
        };
        check("diagnosis", &mut self.diagnosis_weights.iter().map(|w| w.1))?;
        check("device", &mut self.device_weights.iter().map(|w| w.1))?;
        if self
            .diagnosis_weights
            .iter()
            .any(|(d, _)| *d == Diagnosis::None)
        {
            return Err(Error::Config(
                "diagnosis weights cover impairments only".into(),
            ));
        }
        Ok(())
    }
}

fn pick<T: Copy>(rng: &mut impl Rng, weights: &[(T, f64)]) -> T {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (item, w) in weights {
        acc += w;
        if u < acc {
            return *item;
        }
    }
    weights.last().expect("non-empty weights").0
}

fn normal(rng: &mut impl Rng, sd: f64) -> f64 {
    Normal::new(0.0, sd).expect("finite sd").sample(rng)
}

const PROSTHESIS_VARIABILITY: (f64, f64) = (0.01, 0.06);
/// Step length over cadence, metres per (steps/min).
const WALK_RATIO: f64 = 0.006;

/// Participant ids are `P0001`, `P0002`, ...
pub fn participant_id(index: usize) -> String {
    format!("P{:04}", index + 1)
}

pub fn sample_cohort(
    seed: u64,
    n_participants: usize,
    config: &CohortConfig,
) -> Result<Vec<ParticipantProfile>> {
    config.validate()?;
    (0..n_participants)
        .map(|i| {
            let pid = participant_id(i);
            let mut rng = SeedDeriver::new(seed).str("participant").str(&pid).rng();
            sample_profile(&mut rng, pid, config)
        })
        .collect()
}

fn sample_profile(
    rng: &mut impl Rng,
    participant_id: String,
    config: &CohortConfig,
) -> Result<ParticipantProfile> {
    use joint::*;

    let impaired = rng.random::<f64>() < config.impaired_prevalence;
    let diagnosis = if impaired {
        pick(rng, &config.diagnosis_weights)
    } else {
        Diagnosis::None
    };
    let device = if impaired {
        pick(rng, &config.device_weights)
    } else {
        AssistiveDevice::None
    };

    let vigor = normal(rng, 1.0);
    let mut cadence = 108.0 + 10.0 * vigor + normal(rng, 2.5);
    // step length per unit cadence; impairments shorten it
    let mut walk_ratio = WALK_RATIO * (1.0 + normal(rng, 0.04));

    let mut amplitude = BASE_AMPLITUDE;
    let mut phase = BASE_PHASE;
    for (a, p) in amplitude.iter_mut().zip(phase.iter_mut()).take(20) {
        *a *= rng.random_range(0.85..1.15);
        *p += normal(rng, 0.1);
    }
    // keep bilateral channels symmetric before any impairment effect
    for j in 0..7 {
        amplitude[j + 7] = amplitude[j];
        phase[j + 7] = phase[j];
    }
    for j in 20..27 {
        let s = rng.random_range(0.85..1.15);
        amplitude[j] *= s;
        amplitude[j + 7] = amplitude[j];
        phase[j] += normal(rng, 0.1);
        phase[j + 7] = phase[j];
    }

    let mut posture = [0.0; NUM_JOINTS];
    let mut trunk_lean = normal(rng, 0.02);
    let mut asymmetry = rng.random_range(0.0..0.08);
    let mut variability = if impaired {
        rng.random_range(0.01..0.025)
    } else {
        rng.random_range(0.005..0.015)
    };

    match diagnosis {
        Diagnosis::None => {}
        Diagnosis::ProsthesisUser => {
            asymmetry = rng.random_range(0.15..0.3);
            amplitude[ANKLE_R] *= 0.1;
            amplitude[KNEE_R] *= 0.6;
            amplitude[HIP_ADDUCTION_L] *= 2.0;
            amplitude[HIP_ADDUCTION_R] *= 2.5;
            amplitude[LUMBAR_BENDING] += 0.08;
            variability = rng.random_range(PROSTHESIS_VARIABILITY.0..PROSTHESIS_VARIABILITY.1);
            cadence -= 10.0;
            walk_ratio *= 0.95;
        }
        Diagnosis::Stroke => {
            asymmetry = rng.random_range(0.35..0.65);
            posture[ELBOW_R] += 0.9;
            posture[ARM_FLEX_R] += 0.2;
            posture[ARM_ADD_R] += 0.25;
            posture[ANKLE_R] -= 0.2;
            posture[HIP_ADDUCTION_R] -= 0.1;
            for j in ARM_FLEX_R..=WRIST_DEV_R {
                amplitude[j] *= 0.2;
            }
            cadence -= 18.0;
            walk_ratio *= 0.92;
        }
        Diagnosis::Sci => {
            asymmetry = rng.random_range(0.0..0.1);
            for j in [KNEE_L, KNEE_R] {
                posture[j] += 0.35;
                amplitude[j] *= 0.7;
            }
            for j in [HIP_FLEXION_L, HIP_FLEXION_R] {
                posture[j] += 0.25;
            }
            for j in [ANKLE_L, ANKLE_R] {
                posture[j] += 0.2;
                amplitude[j] *= 0.4;
            }
            trunk_lean += 0.15;
            cadence -= 15.0;
            walk_ratio *= 0.92;
        }
        Diagnosis::Tbi => {
            asymmetry = rng.random_range(0.0..0.15);
            posture[HIP_ADDUCTION_L] -= 0.12;
            posture[HIP_ADDUCTION_R] -= 0.12;
            posture[NECK_FLEXION] += 0.2;
            posture[ARM_ADD_L] -= 0.2;
            posture[ARM_ADD_R] -= 0.2;
            amplitude[LUMBAR_BENDING] *= 3.0;
            variability = rng.random_range(0.02..0.04);
            cadence -= 8.0;
            walk_ratio *= 0.97;
        }
    }

    match device {
        AssistiveDevice::None => {}
        AssistiveDevice::Cane => {
            posture[ELBOW_R] += 0.4;
            posture[ARM_FLEX_R] += 0.25;
            posture[ARM_ADD_R] -= 0.1;
            posture[LUMBAR_BENDING] += 0.06;
            amplitude[ARM_FLEX_R] *= 0.5;
            trunk_lean += 0.05;
            cadence -= 6.0;
        }
        AssistiveDevice::Walker => {
            for j in [ELBOW_L, ELBOW_R] {
                posture[j] += 0.5;
            }
            for j in [ARM_FLEX_L, ARM_FLEX_R] {
                posture[j] += 0.55;
            }
            for j in (ARM_FLEX_L..=WRIST_DEV_L).chain(ARM_FLEX_R..=WRIST_DEV_R) {
                amplitude[j] *= 0.05;
            }
            posture[NECK_FLEXION] += 0.15;
            trunk_lean += 0.3;
            cadence -= 15.0;
        }
        AssistiveDevice::Rollator => {
            for j in [ELBOW_L, ELBOW_R] {
                posture[j] += 0.8;
            }
            for j in [ARM_FLEX_L, ARM_FLEX_R] {
                posture[j] += 0.3;
            }
            for j in (ARM_FLEX_L..=WRIST_DEV_L).chain(ARM_FLEX_R..=WRIST_DEV_R) {
                amplitude[j] *= 0.1;
            }
            trunk_lean += 0.12;
            cadence -= 10.0;
        }
        AssistiveDevice::Crutches => {
            for j in [ARM_FLEX_L, ARM_FLEX_R] {
                posture[j] += 0.35;
                amplitude[j] = 0.45;
            }
            // both crutches swing together: cancel the contralateral offset
            phase[ARM_FLEX_L] = phase[HIP_FLEXION_L];
            phase[ARM_FLEX_R] = phase[HIP_FLEXION_L] - PI;
            for j in [ELBOW_L, ELBOW_R] {
                posture[j] += 0.2;
            }
            posture[ARM_ADD_L] -= 0.15;
            posture[ARM_ADD_R] -= 0.15;
            cadence -= 8.0;
        }
    }

    let cadence = cadence.clamp(60.0, 140.0);
    let stride = (2.0 * walk_ratio * cadence).clamp(0.45, 1.7);
    let stride_scale = stride / REFERENCE_STRIDE_M;
    for j in leg_and_arm_channels() {
        amplitude[j] *= stride_scale;
    }

    let fall_history = if diagnosis == Diagnosis::ProsthesisUser {
        // fall risk tracks gait variability so the label is learnable
        let (lo, hi) = PROSTHESIS_VARIABILITY;
        let threshold = lo + (1.0 - config.fall_prevalence) * (hi - lo);
        let p = 1.0 / (1.0 + (-(variability - threshold) / 0.002).exp());
        Some(rng.random::<f64>() < p)
    } else {
        None
    };

    let profile = ParticipantProfile {
        participant_id,
        impaired,
        diagnosis,
        assistive_device: device,
        fall_history,
        gait_signature: GaitParams {
            cadence_steps_per_min: cadence,
            stride_length_m: stride,
            amplitude: amplitude.to_vec(),
            phase: phase.to_vec(),
            asymmetry,
            variability,
            trunk_lean_rad: trunk_lean,
            posture_offset: posture.to_vec(),
        },
    };
    profile.validate()?;
    Ok(profile)
}

fn leg_and_arm_channels() -> impl Iterator<Item = usize> {
    (0..14).chain(20..34)
}

/// One trial to synthesize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub trial_id: String,
    pub activity: Activity,
    pub duration_s: f64,
    pub on_walkway: bool,
}

/// Lead-in and lead-out around timed clinical tests, excluded from the
/// completion time.
const TIMED_TEST_PADDING_S: f64 = 1.0;

fn slowness(params: &GaitParams) -> f64 {
    110.0 / params.cadence_steps_per_min
}

/// Activity schedule every participant performs: five overground walks (the
/// first four on the instrumented walkway) and one of each other activity.
pub fn trial_plan(profile: &ParticipantProfile) -> Vec<TrialPlan> {
    let p = &profile.gait_signature;
    let slow = slowness(p);
    let tug =
        0.5 + 1.4 * slow + 2.0 * 3.0 / p.speed_m_s() + 1.8 * slow + 1.0 * slow + 1.5 * slow + 0.5;
    let fsst = TIMED_TEST_PADDING_S + 8.0 * 0.9 * slow;
    let mut specs: Vec<(Activity, f64, bool)> = (0..5)
        .map(|i| (Activity::OvergroundWalk, 10.0, i < 4))
        .collect();
    specs.extend([
        (Activity::TimedUpAndGo, tug, false),
        (Activity::FourSquareStepTest, fsst, false),
        (Activity::LTest, 14.0, false),
        (Activity::FunctionalGaitAssessment, 14.0, false),
        (Activity::SitToStand, 12.0, false),
        (Activity::QuietStanding, 8.0, false),
        (Activity::TurningInPlace, 8.0, false),
    ]);
    specs
        .into_iter()
        .enumerate()
        .map(|(i, (activity, duration_s, on_walkway))| TrialPlan {
            trial_id: format!("{}-T{:02}", profile.participant_id, i),
            activity,
            // whole frames keep the completion time consistent with the data
            duration_s: (duration_s * FRAME_RATE_HZ).round() / FRAME_RATE_HZ,
            on_walkway,
        })
        .collect()
}

/// Per-trial copy of a profile with small cadence and stride variation;
/// amplitudes follow the stride change.
pub fn vary_for_trial(profile: &ParticipantProfile, rng: &mut impl Rng) -> ParticipantProfile {
    let mut out = profile.clone();
    let p = &mut out.gait_signature;
    let cadence = (p.cadence_steps_per_min * (1.0 + normal(rng, 0.03))).clamp(40.0, 160.0);
    // stride follows cadence at a near-constant walk ratio
    let ratio = cadence / p.cadence_steps_per_min;
    let stride = (p.stride_length_m * ratio * (1.0 + normal(rng, 0.01))).clamp(0.3, 1.8);
    let scale = stride / p.stride_length_m;
    for j in leg_and_arm_channels() {
        p.amplitude[j] *= scale;
    }
    p.cadence_steps_per_min = cadence;
    p.stride_length_m = stride;
    out
}

/// Generates trial `index` of a participant: per-trial variation and
/// synthesis both draw from a seed derived from (cohort seed, participant id,
/// trial index).
pub fn generate_trial(
    cohort_seed: u64,
    profile: &ParticipantProfile,
    index: usize,
    plan: &TrialPlan,
) -> Result<Trajectory> {
    let seed = SeedDeriver::new(cohort_seed)
        .str(&profile.participant_id)
        .int(index as u64)
        .finish();
    let mut rng = crate::seed::rng_from_seed(seed);
    let varied = vary_for_trial(profile, &mut rng);
    let synth_seed = rng.random();
    synthesize_trial(&varied, plan, synth_seed)
}

#[derive(Debug, Clone, Copy)]
enum StepDir {
    Forward,
    Right,
    Back,
    Left,
}

#[derive(Debug, Clone, Copy)]
enum Segment {
    Walk {
        turn_rate: f64,
        head_turns: bool,
        narrow: bool,
    },
    Sit,
    Rise,
    SitDown,
    Stand,
    TurnInPlace {
        rate: f64,
    },
    Step(StepDir),
}

const WALK: Segment = Segment::Walk {
    turn_rate: 0.0,
    head_turns: false,
    narrow: false,
};

/// Segment schedule with relative lengths, plus fixed lead-in/out in seconds.
fn schedule(activity: Activity, params: &GaitParams) -> (Vec<(Segment, f64)>, f64) {
    let slow = slowness(params);
    let walk_3m = 3.0 / params.speed_m_s();
    match activity {
        Activity::OvergroundWalk => (vec![(WALK, 1.0)], 0.0),
        Activity::TimedUpAndGo => (
            vec![
                (Segment::Rise, 1.4 * slow),
                (WALK, walk_3m),
                (Segment::TurnInPlace { rate: PI / 1.8 }, 1.8 * slow),
                (WALK, walk_3m),
                (Segment::TurnInPlace { rate: PI / 1.0 }, 1.0 * slow),
                (Segment::SitDown, 1.5 * slow),
            ],
            0.5,
        ),
        Activity::FourSquareStepTest => {
            use StepDir::*;
            let steps = [Forward, Right, Back, Left, Right, Forward, Left, Back];
            (
                steps.iter().map(|d| (Segment::Step(*d), 1.0)).collect(),
                0.5,
            )
        }
        Activity::LTest => {
            let turn = |rate| Segment::Walk {
                turn_rate: rate,
                head_turns: false,
                narrow: false,
            };
            (
                vec![
                    (WALK, 0.2),
                    (turn(PI / 2.0), 0.12),
                    (WALK, 0.2),
                    (Segment::TurnInPlace { rate: PI / 1.5 }, 0.12),
                    (WALK, 0.2),
                    (turn(-PI / 2.0), 0.12),
                    (Segment::Stand, 0.04),
                ],
                0.0,
            )
        }
        Activity::FunctionalGaitAssessment => (
            vec![
                (Segment::Stand, 0.06),
                (
                    Segment::Walk {
                        turn_rate: 0.0,
                        head_turns: true,
                        narrow: false,
                    },
                    0.4,
                ),
                (Segment::Stand, 0.06),
                (
                    Segment::Walk {
                        turn_rate: 0.0,
                        head_turns: false,
                        narrow: true,
                    },
                    0.3,
                ),
                (WALK, 0.18),
            ],
            0.0,
        ),
        Activity::SitToStand => {
            let mut segs = Vec::new();
            for _ in 0..4 {
                segs.push((Segment::Sit, 0.8));
                segs.push((Segment::Rise, 1.2 * slow));
                segs.push((Segment::Stand, 0.6));
                segs.push((Segment::SitDown, 1.3 * slow));
            }
            (segs, 0.0)
        }
        Activity::QuietStanding => (vec![(Segment::Stand, 1.0)], 0.0),
        Activity::TurningInPlace => (vec![(Segment::TurnInPlace { rate: PI / 2.0 }, 1.0)], 0.0),
    }
}

/// Per-frame modulation produced by a segment.
struct FrameState {
    /// Scale on oscillation amplitudes.
    locomotion: f64,
    /// Phase advance rate relative to the gait cadence.
    step_rate: f64,
    /// 0 standing, 1 seated.
    sit: f64,
    heading_rate: f64,
    forward_speed: f64,
    extra: [f64; NUM_JOINTS],
}

fn segment_state(seg: Segment, u: f64, t: f64, params: &GaitParams) -> FrameState {
    use joint::*;
    let mut st = FrameState {
        locomotion: 0.0,
        step_rate: 0.0,
        sit: 0.0,
        heading_rate: 0.0,
        forward_speed: 0.0,
        extra: [0.0; NUM_JOINTS],
    };
    let bump = (PI * u).sin();
    match seg {
        Segment::Walk {
            turn_rate,
            head_turns,
            narrow,
        } => {
            st.locomotion = 1.0;
            st.step_rate = 1.0;
            st.forward_speed = params.speed_m_s();
            st.heading_rate = turn_rate;
            if turn_rate != 0.0 {
                let s = turn_rate.signum();
                st.extra[HIP_ROTATION_L] += 0.2 * s;
                st.extra[HIP_ROTATION_R] += 0.2 * s;
                st.extra[LUMBAR_ROTATION] += 0.2 * s;
                st.extra[NECK_ROTATION] += 0.3 * s;
            }
            if head_turns {
                st.extra[NECK_ROTATION] += 0.7 * (TAU * t / 2.5).sin();
            }
            if narrow {
                st.extra[HIP_ADDUCTION_L] += 0.08;
                st.extra[HIP_ADDUCTION_R] += 0.08;
            }
        }
        Segment::Sit => st.sit = 1.0,
        Segment::Rise | Segment::SitDown => {
            let w = 0.5 * (1.0 + (PI * u).cos());
            st.sit = if matches!(seg, Segment::Rise) {
                w
            } else {
                1.0 - w
            };
            st.extra[LUMBAR_EXTENSION] -= 0.5 * bump;
            st.extra[NECK_FLEXION] += 0.2 * bump;
        }
        Segment::Stand => {
            st.extra[LUMBAR_BENDING] += 0.02 * (TAU * t / 3.3).sin();
            st.extra[LUMBAR_EXTENSION] += 0.015 * (TAU * t / 4.1).sin();
        }
        Segment::TurnInPlace { rate } => {
            st.locomotion = 0.35;
            st.step_rate = 0.8;
            st.heading_rate = rate;
            st.extra[LUMBAR_ROTATION] += 0.25;
            st.extra[NECK_ROTATION] += 0.35;
            st.extra[HIP_ADDUCTION_L] += 0.06;
            st.extra[HIP_ADDUCTION_R] += 0.06;
        }
        Segment::Step(dir) => {
            st.forward_speed = 0.0;
            st.extra[NECK_FLEXION] += 0.3;
            st.extra[LUMBAR_EXTENSION] -= 0.1;
            // lead leg for the first half, trailing leg for the second
            let lead = (PI * (2.0 * u).min(1.0)).sin();
            let trail = (PI * (2.0 * u - 1.0).max(0.0)).sin();
            let (lead_side, trail_side) = match dir {
                StepDir::Right => (7, 0),
                _ => (0, 7),
            };
            for (side, w) in [(lead_side, lead), (trail_side, trail)] {
                match dir {
                    StepDir::Forward => {
                        st.extra[side + HIP_FLEXION_L] += 0.5 * w;
                        st.extra[side + KNEE_L] += 0.8 * w;
                    }
                    StepDir::Back => {
                        st.extra[side + HIP_FLEXION_L] -= 0.3 * w;
                        st.extra[side + KNEE_L] += 0.9 * w;
                    }
                    StepDir::Left | StepDir::Right => {
                        st.extra[side + HIP_ADDUCTION_L] -= 0.35 * w;
                        st.extra[side + KNEE_L] += 0.5 * w;
                    }
                }
                st.extra[side + ANKLE_L] += 0.2 * w;
            }
        }
    }
    st
}

/// Synthesizes one trial at 30 Hz with `floor(duration_s * 30)` frames.
/// Noise, phase drift and sway all scale with the profile's variability,
/// so a zero-variability profile yields an exactly periodic walk.
pub fn synthesize_trial(
    profile: &ParticipantProfile,
    plan: &TrialPlan,
    seed: u64,
) -> Result<Trajectory> {
    if !plan.duration_s.is_finite() || plan.duration_s < 2.0 {
        return Err(Error::Contract(format!(
            "trial duration must be at least 2 s, got {}",
            plan.duration_s
        )));
    }
    if plan.on_walkway && plan.activity != Activity::OvergroundWalk {
        return Err(Error::Contract(format!(
            "{:?} trials are not recorded on the walkway",
            plan.activity
        )));
    }
    let params = &profile.gait_signature;
    params.validate()?;

    let mut rng = crate::seed::rng_from_seed(seed);
    let n_frames = (plan.duration_s * FRAME_RATE_HZ + 1e-9).floor() as usize;
    let dt = 1.0 / FRAME_RATE_HZ;

    // lay the segment schedule onto frames
    let (segments, pad_s) = schedule(plan.activity, params);
    let pad_frames = (pad_s * FRAME_RATE_HZ).round() as usize;
    let inner = n_frames.saturating_sub(2 * pad_frames).max(1);
    let total_w: f64 = segments.iter().map(|s| s.1).sum();
    let mut bounds = Vec::with_capacity(segments.len());
    let mut acc = 0.0;
    for (seg, w) in &segments {
        let start = (acc / total_w * inner as f64).round() as usize;
        acc += w;
        let end = (acc / total_w * inner as f64).round() as usize;
        bounds.push((*seg, start + pad_frames, end + pad_frames));
    }
    let (pre, post) = match plan.activity {
        Activity::TimedUpAndGo => (Segment::Sit, Segment::Sit),
        _ => (Segment::Stand, Segment::Stand),
    };

    let v = params.variability;
    let drift_amp = 5.0 * v;
    let drift_period = rng.random_range(6.0..12.0);
    let drift_psi = rng.random_range(0.0..TAU);
    let sway_psi = rng.random_range(0.0..TAU);
    let mod_psi = rng.random_range(0.0..TAU);
    let noise = Normal::new(0.0, v.max(0.0)).map_err(|e| Error::Contract(e.to_string()))?;

    let mut phase = rng.random_range(0.0..TAU);
    let mut heading: f64 = 0.0;
    let mut pos = [0.0f64, 0.0, 0.95];
    let mut qs: Vec<[f64; Q_LEN]> = Vec::with_capacity(n_frames);
    let mut heading_rates = Vec::with_capacity(n_frames);
    let mut seg_idx = 0;

    for f in 0..n_frames {
        let t = f as f64 * dt;
        while seg_idx + 1 < bounds.len() && f >= bounds[seg_idx].2 {
            seg_idx += 1;
        }
        let (seg, start, end) = bounds[seg_idx];
        let (seg, u) = if f < pad_frames {
            (pre, 0.0)
        } else if f >= n_frames - pad_frames.min(n_frames) && pad_frames > 0 {
            (post, 0.0)
        } else {
            let len = end.saturating_sub(start).max(1);
            (
                seg,
                ((f - start.min(f)) as f64 / len as f64).clamp(0.0, 1.0),
            )
        };
        let st = segment_state(seg, u, t, params);

        let drift = drift_amp * (TAU * t / drift_period + drift_psi).sin();
        let mut p = params.clone();
        let modulation = 1.0 + 3.0 * v * (TAU * t / 3.7 + mod_psi).sin();
        for a in p.amplitude.iter_mut() {
            *a *= st.locomotion * modulation;
        }
        let mut joints = gait_kinematics(&p, phase + drift);
        for j in 0..NUM_JOINTS {
            joints[j] += st.sit * SIT_DELTA[j] + st.extra[j];
            if v > 0.0 {
                joints[j] += noise.sample(&mut rng);
            }
        }
        joints[joint::LUMBAR_BENDING] += 4.0 * v * (TAU * t / 2.3 + sway_psi).sin();

        let mut q = [0.0; Q_LEN];
        q[0] = pos[0];
        q[1] = pos[1];
        q[2] = pos[2] - 0.4 * st.sit + 0.01 * st.locomotion * (2.0 * (phase + drift)).cos();
        q[3] = (heading / 2.0).cos();
        q[6] = (heading / 2.0).sin();
        q[JOINT_OFFSET..].copy_from_slice(&joints);
        qs.push(q);
        heading_rates.push(st.heading_rate);

        phase += TAU * params.stride_hz() * st.step_rate * dt;
        heading += st.heading_rate * dt;
        pos[0] += st.forward_speed * heading.cos() * dt;
        pos[1] += st.forward_speed * heading.sin() * dt;
    }

    let frames = (0..n_frames)
        .map(|f| {
            let (a, b) = if n_frames == 1 {
                (0, 0)
            } else if f == 0 {
                (0, 1)
            } else if f == n_frames - 1 {
                (f - 1, f)
            } else {
                (f - 1, f + 1)
            };
            let span = (b - a).max(1) as f64 * dt;
            let mut qdot = [0.0; QDOT_LEN];
            for k in 0..3 {
                qdot[k] = (qs[b][k] - qs[a][k]) / span;
            }
            qdot[5] = heading_rates[f];
            for j in 0..NUM_JOINTS {
                qdot[JOINT_VEL_OFFSET + j] =
                    (qs[b][JOINT_OFFSET + j] - qs[a][JOINT_OFFSET + j]) / span;
            }
            Frame::new(qs[f], qdot)
        })
        .collect::<Result<Vec<_>>>()?;

    let on_walkway = plan.on_walkway;
    let ground_truth = TrialGroundTruth {
        activity: plan.activity,
        impaired: profile.impaired,
        diagnosis: profile.diagnosis,
        assistive_device: profile.assistive_device,
        fall_history: profile.fall_history,
        on_walkway,
        cadence_steps_per_min: on_walkway.then_some(params.cadence_steps_per_min),
        speed_m_s: on_walkway.then(|| params.speed_m_s()),
        completion_time_s: plan
            .activity
            .is_timed_test()
            .then_some(plan.duration_s - TIMED_TEST_PADDING_S),
    };
    ground_truth.validate()?;
    Trajectory::new(
        profile.participant_id.clone(),
        plan.trial_id.clone(),
        FRAME_RATE_HZ,
        frames,
        ground_truth,
    )
}

/// Every trial of a cohort in (participant, trial index) order.
pub fn generate_cohort_trials<'a>(
    cohort_seed: u64,
    profiles: &'a [ParticipantProfile],
) -> impl Iterator<Item = Result<Trajectory>> + 'a {
    profiles.iter().flat_map(move |profile| {
        trial_plan(profile)
            .into_iter()
            .enumerate()
            .map(move |(i, plan)| generate_trial(cohort_seed, profile, i, &plan))
    })
}

pub fn cohort_to_ndjson(profiles: &[ParticipantProfile]) -> String {
    let mut out = String::new();
    for p in profiles {
        out.push_str(&serde_json::to_string(p).expect("profile serialization cannot fail"));
        out.push('\n');
    }
    out
}

pub fn cohort_from_ndjson(text: &str, origin: &std::path::Path) -> Result<Vec<ParticipantProfile>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let p: ParticipantProfile =
                serde_json::from_str(l).map_err(|e| Error::json(origin, e))?;
            p.validate()?;
            Ok(p)
        })
        .collect()
}
