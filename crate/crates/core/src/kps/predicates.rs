//! The eight deterministic kinematic predicates.
//!
//! Every predicate reads a [`JointSequence`], resolves the height axis and the
//! shoulder-width body scale, and reports the measured statistics next to the
//! thresholds it compared them against.

use std::collections::BTreeMap;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{cumulative_yaw, detect_axes, shoulder_width, BodyAxes, JointSequence, Vec3};
use crate::synth::Primitive;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredicateThresholds {
    pub walk_disp_floor: f64,
    pub walk_disp_sigma_mult: f64,
    pub walk_min_crossings: usize,
    pub jump_lift: f64,
    pub jump_peak_vel: f64,
    pub turn_deg: f64,
    pub crouch_floor: f64,
    pub crouch_rest_mult: f64,
    pub handsup_both_frac: f64,
    pub handsup_either_frac: f64,
    pub kick_lift: f64,
    pub kick_dominance: f64,
    pub clap_dist_mult: f64,
    pub clap_frac: f64,
    pub wave_amp_mult: f64,
    pub wave_min_crossings: usize,
    pub wave_freq_lo: f64,
    pub wave_freq_hi: f64,
    pub baseline_frames: usize,
}

impl Default for PredicateThresholds {
    fn default() -> Self {
        Self {
            walk_disp_floor: 0.25,
            walk_disp_sigma_mult: 1.0,
            walk_min_crossings: 2,
            jump_lift: 0.12,
            jump_peak_vel: 0.6,
            turn_deg: 90.0,
            crouch_floor: 0.08,
            crouch_rest_mult: 0.15,
            handsup_both_frac: 0.08,
            handsup_either_frac: 0.16,
            kick_lift: 0.30,
            kick_dominance: 0.08,
            clap_dist_mult: 0.60,
            clap_frac: 0.10,
            wave_amp_mult: 0.40,
            wave_min_crossings: 3,
            wave_freq_lo: 0.5,
            wave_freq_hi: 2.5,
            baseline_frames: 10,
        }
    }
}

impl PredicateThresholds {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            self.walk_disp_floor,
            self.walk_disp_sigma_mult,
            self.jump_lift,
            self.jump_peak_vel,
            self.turn_deg,
            self.crouch_floor,
            self.crouch_rest_mult,
            self.handsup_both_frac,
            self.handsup_either_frac,
            self.kick_lift,
            self.kick_dominance,
            self.clap_dist_mult,
            self.clap_frac,
            self.wave_amp_mult,
            self.wave_freq_lo,
            self.wave_freq_hi,
        ];
        if reals.iter().any(|v| !(*v > 0.0) || !v.is_finite())
            || self.walk_min_crossings == 0
            || self.wave_min_crossings == 0
            || self.baseline_frames == 0
        {
            return Err(Error::InvalidArgument("all predicate thresholds must be positive".into()));
        }
        if self.wave_freq_lo >= self.wave_freq_hi {
            return Err(Error::InvalidArgument("wave_freq_lo must be below wave_freq_hi".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredicateResult {
    pub name: String,
    pub passed: bool,
    pub measured: BTreeMap<String, f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    Pose,
    Trajectory,
    Rotation,
    Temporal,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Pose, Family::Trajectory, Family::Rotation, Family::Temporal];

    pub fn of(primitive: Primitive) -> Option<Family> {
        match primitive {
            Primitive::Crouch | Primitive::HandsUp | Primitive::Kick | Primitive::Clap => Some(Family::Pose),
            Primitive::WalkMove | Primitive::Jump => Some(Family::Trajectory),
            Primitive::Turn => Some(Family::Rotation),
            Primitive::Wave => Some(Family::Temporal),
            Primitive::Idle => None,
        }
    }

    pub fn members(&self) -> Vec<Primitive> {
        Primitive::SCORED.iter().copied().filter(|&p| Family::of(p) == Some(*self)).collect()
    }

    pub fn label(&self) -> &'static str {
        match self {
            Family::Pose => "Pose-level",
            Family::Trajectory => "Trajectory-level",
            Family::Rotation => "Rotation-level",
            Family::Temporal => "Temporal-level",
        }
    }
}

/// Resolve a predicate name to its primitive; `idle` has no predicate.
pub fn predicate_primitive(name: &str) -> Result<Primitive> {
    match name.parse::<Primitive>() {
        Ok(Primitive::Idle) | Err(_) => Err(Error::UnknownPredicate(name.to_string())),
        Ok(p) => Ok(p),
    }
}

pub fn eval_predicate(name: &str, seq: &JointSequence, th: &PredicateThresholds) -> Result<PredicateResult> {
    let primitive = predicate_primitive(name)?;
    evaluate(primitive, seq, th)
}

pub fn evaluate(primitive: Primitive, seq: &JointSequence, th: &PredicateThresholds) -> Result<PredicateResult> {
    if seq.frames() < th.baseline_frames.max(2) {
        return Err(Error::TooShort { needed: th.baseline_frames.max(2), got: seq.frames() });
    }
    let ctx = Context::new(seq, th)?;
    let mut m = BTreeMap::new();
    let passed = match primitive {
        Primitive::WalkMove => ctx.walk(&mut m),
        Primitive::Jump => ctx.jump(&mut m),
        Primitive::Turn => ctx.turn(&mut m)?,
        Primitive::Crouch => ctx.crouch(&mut m),
        Primitive::HandsUp => ctx.hands_up(&mut m),
        Primitive::Kick => ctx.kick(&mut m),
        Primitive::Clap => ctx.clap(&mut m),
        Primitive::Wave => ctx.wave(&mut m),
        Primitive::Idle => return Err(Error::UnknownPredicate("idle".into())),
    };
    m.insert("shoulder_width".into(), ctx.sigma);
    Ok(PredicateResult { name: primitive.as_str().to_string(), passed, measured: m })
}

/// Evaluate all eight predicates.
pub fn evaluate_all(seq: &JointSequence, th: &PredicateThresholds) -> Result<Vec<PredicateResult>> {
    Primitive::SCORED.iter().map(|&p| evaluate(p, seq, th)).collect()
}

struct Context<'a> {
    seq: &'a JointSequence,
    th: &'a PredicateThresholds,
    axes: BodyAxes,
    sigma: f64,
}

impl<'a> Context<'a> {
    fn new(seq: &'a JointSequence, th: &'a PredicateThresholds) -> Result<Self> {
        let axes = detect_axes(seq)?;
        let sigma = shoulder_width(seq, &axes);
        Ok(Self { seq, th, axes, sigma })
    }

    fn heights(&self, joint: usize) -> Vec<f64> {
        (0..self.seq.frames()).map(|f| self.axes.height(self.seq.at(f, joint))).collect()
    }

    fn baseline(&self, values: &[f64]) -> f64 {
        let n = self.th.baseline_frames.min(values.len());
        values[..n].iter().sum::<f64>() / n as f64
    }

    fn walk(&self, m: &mut BTreeMap<String, f64>) -> bool {
        let j = self.seq.joints();
        let last = self.seq.frames() - 1;
        let start = self.axes.ground(self.seq.at(0, j.pelvis));
        let end = self.axes.ground(self.seq.at(last, j.pelvis));
        let delta = [end[0] - start[0], end[1] - start[1]];
        let disp = delta[0].hypot(delta[1]);
        let crossings = if disp > 0.0 {
            let dir = [delta[0] / disp, delta[1] / disp];
            let along: Vec<f64> = (0..self.seq.frames())
                .map(|f| {
                    let l = self.axes.ground(self.seq.at(f, j.left_ankle));
                    let r = self.axes.ground(self.seq.at(f, j.right_ankle));
                    (l[0] - r[0]) * dir[0] + (l[1] - r[1]) * dir[1]
                })
                .collect();
            sign_changes(&along)
        } else {
            0
        };
        let threshold = self.th.walk_disp_floor.max(self.th.walk_disp_sigma_mult * self.sigma);
        m.insert("displacement".into(), disp);
        m.insert("displacement_threshold".into(), threshold);
        m.insert("step_crossings".into(), crossings as f64);
        m.insert("min_step_crossings".into(), self.th.walk_min_crossings as f64);
        disp > threshold && crossings >= self.th.walk_min_crossings
    }

    fn jump(&self, m: &mut BTreeMap<String, f64>) -> bool {
        let h = self.heights(self.seq.joints().pelvis);
        let lift = max(&h) - self.baseline(&h);
        let fps = self.seq.fps() as f64;
        let peak_velocity = h.windows(2).map(|w| (w[1] - w[0]) * fps).fold(f64::NEG_INFINITY, f64::max);
        m.insert("lift".into(), lift);
        m.insert("lift_threshold".into(), self.th.jump_lift);
        m.insert("peak_velocity".into(), peak_velocity);
        m.insert("peak_velocity_threshold".into(), self.th.jump_peak_vel);
        lift > self.th.jump_lift && peak_velocity > self.th.jump_peak_vel
    }

    fn turn(&self, m: &mut BTreeMap<String, f64>) -> Result<bool> {
        let yaw = cumulative_yaw(self.seq, &self.axes)?;
        m.insert("cumulative_yaw_deg".into(), yaw);
        m.insert("cumulative_yaw_threshold_deg".into(), self.th.turn_deg);
        Ok(yaw > self.th.turn_deg)
    }

    fn crouch(&self, m: &mut BTreeMap<String, f64>) -> bool {
        let h = self.heights(self.seq.joints().pelvis);
        let rest = self.baseline(&h);
        let depth = rest - min(&h);
        let threshold = self.th.crouch_floor.max(self.th.crouch_rest_mult * rest.abs());
        m.insert("rest_height".into(), rest);
        m.insert("depth".into(), depth);
        m.insert("depth_threshold".into(), threshold);
        depth > threshold
    }

    fn hands_up(&self, m: &mut BTreeMap<String, f64>) -> bool {
        let j = self.seq.joints();
        let frac = |wrist: usize, shoulder: usize| -> f64 {
            let above = (0..self.seq.frames())
                .filter(|&f| self.axes.height(self.seq.at(f, wrist)) > self.axes.height(self.seq.at(f, shoulder)))
                .count();
            above as f64 / self.seq.frames() as f64
        };
        let left = frac(j.left_wrist, j.left_shoulder);
        let right = frac(j.right_wrist, j.right_shoulder);
        m.insert("left_fraction".into(), left);
        m.insert("right_fraction".into(), right);
        m.insert("both_threshold".into(), self.th.handsup_both_frac);
        m.insert("either_threshold".into(), self.th.handsup_either_frac);
        (left >= self.th.handsup_both_frac && right >= self.th.handsup_both_frac)
            || left.max(right) >= self.th.handsup_either_frac
    }

    fn kick(&self, m: &mut BTreeMap<String, f64>) -> bool {
        let j = self.seq.joints();
        let lift = |ankle: usize| {
            let h = self.heights(ankle);
            max(&h) - self.baseline(&h)
        };
        let (left, right) = (lift(j.left_ankle), lift(j.right_ankle));
        let (hi, lo) = (left.max(right), left.min(right));
        m.insert("left_lift".into(), left);
        m.insert("right_lift".into(), right);
        m.insert("lift_threshold".into(), self.th.kick_lift);
        m.insert("dominance_gap".into(), hi - lo);
        m.insert("dominance_threshold".into(), self.th.kick_dominance);
        hi > self.th.kick_lift && hi - lo > self.th.kick_dominance
    }

    fn clap(&self, m: &mut BTreeMap<String, f64>) -> bool {
        let j = self.seq.joints();
        let limit = self.th.clap_dist_mult * self.sigma;
        let close = (0..self.seq.frames())
            .filter(|&f| dist(self.seq.at(f, j.left_wrist), self.seq.at(f, j.right_wrist)) < limit)
            .count();
        let frac = close as f64 / self.seq.frames() as f64;
        m.insert("distance_threshold".into(), limit);
        m.insert("close_fraction".into(), frac);
        m.insert("fraction_threshold".into(), self.th.clap_frac);
        frac >= self.th.clap_frac
    }

    fn wave(&self, m: &mut BTreeMap<String, f64>) -> bool {
        let j = self.seq.joints();
        let sides = [
            ("left", self.wave_side(j.left_wrist, j.left_shoulder)),
            ("right", self.wave_side(j.right_wrist, j.right_shoulder)),
        ];
        // Report the passing side if any, otherwise the one with larger amplitude.
        let (side, best) = sides
            .iter()
            .max_by(|a, b| {
                (a.1.passed, a.1.amplitude)
                    .partial_cmp(&(b.1.passed, b.1.amplitude))
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .expect("two sides");
        m.insert("side_is_right".into(), if *side == "right" { 1.0 } else { 0.0 });
        m.insert("axis".into(), best.axis as f64);
        m.insert("amplitude".into(), best.amplitude);
        m.insert("amplitude_threshold".into(), self.th.wave_amp_mult * self.sigma);
        m.insert("zero_crossings".into(), best.crossings as f64);
        m.insert("min_zero_crossings".into(), self.th.wave_min_crossings as f64);
        m.insert("dominant_freq_hz".into(), best.frequency);
        m.insert("freq_lo_hz".into(), self.th.wave_freq_lo);
        m.insert("freq_hi_hz".into(), self.th.wave_freq_hi);
        best.passed
    }

    fn wave_side(&self, wrist: usize, shoulder: usize) -> WaveSide {
        let n = self.seq.frames();
        let rel: Vec<Vec3> = (0..n)
            .map(|f| {
                let (w, s) = (self.seq.at(f, wrist), self.seq.at(f, shoulder));
                [w[0] - s[0], w[1] - s[1], w[2] - s[2]]
            })
            .collect();
        let range = |a: usize| {
            let v: Vec<f64> = rel.iter().map(|p| p[a]).collect();
            max(&v) - min(&v)
        };
        let axis = (0..3).fold(0, |best, a| if range(a) > range(best) { a } else { best });
        let signal: Vec<f64> = rel.iter().map(|p| p[axis]).collect();
        let amplitude = 0.5 * range(axis);
        let mean = signal.iter().sum::<f64>() / n as f64;
        let windowed: Vec<f64> = signal.iter().zip(hann(n)).map(|(x, w)| (x - mean) * w).collect();
        let crossings = sign_changes(&windowed);
        let frequency = dominant_frequency(&windowed, self.seq.fps() as f64);
        let passed = amplitude > self.th.wave_amp_mult * self.sigma
            && crossings >= self.th.wave_min_crossings
            && frequency >= self.th.wave_freq_lo
            && frequency <= self.th.wave_freq_hi;
        WaveSide { axis, amplitude, crossings, frequency, passed }
    }
}

struct WaveSide {
    axis: usize,
    amplitude: f64,
    crossings: usize,
    frequency: f64,
    passed: bool,
}

/// Symmetric Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Frequency of the strongest non-DC bin; ties resolve to the lower frequency.
pub fn dominant_frequency(signal: &[f64], sample_rate: f64) -> f64 {
    let n = signal.len();
    if n < 2 {
        return 0.0;
    }
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mut best = (1, f64::NEG_INFINITY);
    for (k, c) in buf.iter().enumerate().take(n / 2 + 1).skip(1) {
        let mag = c.norm();
        if mag > best.1 {
            best = (k, mag);
        }
    }
    best.0 as f64 * sample_rate / n as f64
}

/// Sign changes between consecutive non-zero samples.
pub fn sign_changes(values: &[f64]) -> usize {
    let mut last = 0.0f64;
    let mut count = 0;
    for &v in values {
        if v == 0.0 {
            continue;
        }
        if last != 0.0 && (v > 0.0) != (last > 0.0) {
            count += 1;
        }
        last = v;
    }
    count
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn dist(a: Vec3, b: Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synthesize, PrimitiveSpec};

    #[test]
    fn defaults_validate() {
        PredicateThresholds::default().validate().unwrap();
        let bad = PredicateThresholds { wave_freq_lo: 3.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unknown_and_short_inputs() {
        let seq = synthesize(&PrimitiveSpec::calibrated(Primitive::Idle, 0), 30).unwrap();
        let th = PredicateThresholds::default();
        assert!(matches!(eval_predicate("moonwalk", &seq, &th), Err(Error::UnknownPredicate(_))));
        assert!(matches!(eval_predicate("idle", &seq, &th), Err(Error::UnknownPredicate(_))));
        let short = JointSequence::with_standard_joints(30, seq.positions()[..22 * 5].to_vec()).unwrap();
        assert!(matches!(eval_predicate("turn", &short, &th), Err(Error::TooShort { .. })));
    }

    #[test]
    fn sign_changes_skip_exact_zeros() {
        assert_eq!(sign_changes(&[0.0, 1.0, 0.0, -1.0, -2.0, 3.0]), 2);
        assert_eq!(sign_changes(&[0.0, 0.0]), 0);
    }

    #[test]
    fn dominant_frequency_of_pure_tone() {
        // 120 samples at 30 Hz: bins are 0.25 Hz wide; 1.5 Hz is bin 6.
        let x: Vec<f64> = (0..120).map(|i| (2.0 * std::f64::consts::PI * 1.5 * i as f64 / 30.0).sin()).collect();
        assert_eq!(dominant_frequency(&x, 30.0), 1.5);
        // Equal-power bins resolve downwards.
        let y: Vec<f64> = (0..120)
            .map(|i| {
                let t = i as f64 / 30.0;
                (2.0 * std::f64::consts::PI * 1.0 * t).cos() + (2.0 * std::f64::consts::PI * 2.0 * t).cos()
            })
            .collect();
        assert_eq!(dominant_frequency(&y, 30.0), 1.0);
    }

    #[test]
    fn crouch_too_shallow_fails() {
        let th = PredicateThresholds::default();
        let mut spec = PrimitiveSpec::calibrated(Primitive::Crouch, 4);
        spec.magnitude = 0.05;
        let r = evaluate(Primitive::Crouch, &synthesize(&spec, 30).unwrap(), &th).unwrap();
        assert!(!r.passed);
        assert!(r.measured["depth"] < r.measured["depth_threshold"]);
    }

    #[test]
    fn turn_at_120_degrees_passes() {
        let th = PredicateThresholds::default();
        let seq = synthesize(&PrimitiveSpec::calibrated(Primitive::Turn, 9), 30).unwrap();
        let r = evaluate(Primitive::Turn, &seq, &th).unwrap();
        assert!(r.passed);
        assert!((r.measured["cumulative_yaw_deg"] - 120.0).abs() < 15.0, "{:?}", r.measured);
    }

    #[test]
    fn idle_fails_everything() {
        let th = PredicateThresholds::default();
        for seed in 0..5 {
            let seq = synthesize(&PrimitiveSpec::calibrated(Primitive::Idle, seed), 30).unwrap();
            for r in evaluate_all(&seq, &th).unwrap() {
                assert!(!r.passed, "idle passed {} ({:?})", r.name, r.measured);
            }
        }
    }
}
