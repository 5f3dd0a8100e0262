//! Axis detection and body-frame measurements on joint sequences.

use serde::{Deserialize, Serialize};

use super::{JointSequence, Vec3};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BodyAxes {
    pub height_axis: usize,
    pub ground_axes: [usize; 2],
}

impl BodyAxes {
    pub fn new(height_axis: usize) -> Result<Self> {
        let ground_axes = match height_axis {
            0 => [1, 2],
            1 => [0, 2],
            2 => [0, 1],
            other => return Err(Error::InvalidArgument(format!("height axis {other} out of range"))),
        };
        Ok(Self { height_axis, ground_axes })
    }

    #[inline]
    pub fn height(&self, p: Vec3) -> f64 {
        p[self.height_axis]
    }

    #[inline]
    pub fn ground(&self, p: Vec3) -> [f64; 2] {
        [p[self.ground_axes[0]], p[self.ground_axes[1]]]
    }

    /// Ground-plane distance between two points.
    pub fn ground_distance(&self, a: Vec3, b: Vec3) -> f64 {
        let (ga, gb) = (self.ground(a), self.ground(b));
        (ga[0] - gb[0]).hypot(ga[1] - gb[1])
    }
}

/// Height axis = coordinate with the largest positive mean head-minus-pelvis offset.
pub fn detect_axes(seq: &JointSequence) -> Result<BodyAxes> {
    let (head, pelvis) = (seq.joints().head, seq.joints().pelvis);
    let mut mean = [0.0; 3];
    for f in 0..seq.frames() {
        let (h, p) = (seq.at(f, head), seq.at(f, pelvis));
        for a in 0..3 {
            mean[a] += h[a] - p[a];
        }
    }
    let mut best: Option<usize> = None;
    for a in 0..3 {
        if mean[a] > 0.0 && best.is_none_or(|b| mean[a] > mean[b]) {
            best = Some(a);
        }
    }
    match best {
        Some(axis) => BodyAxes::new(axis),
        None => Err(Error::AmbiguousAxes),
    }
}

/// Mean ground-plane distance between the shoulders.
pub fn shoulder_width(seq: &JointSequence, axes: &BodyAxes) -> f64 {
    let (l, r) = (seq.joints().left_shoulder, seq.joints().right_shoulder);
    let total: f64 = (0..seq.frames()).map(|f| axes.ground_distance(seq.at(f, l), seq.at(f, r))).sum();
    total / seq.frames() as f64
}

/// Per-frame yaw of the left-hip → right-hip ground vector, in radians.
///
/// A frame whose hip vector collapses reuses the previous frame's yaw; a
/// collapse on the first frame is an error.
pub fn yaw_series(seq: &JointSequence, axes: &BodyAxes) -> Result<Vec<f64>> {
    let (l, r) = (seq.joints().left_hip, seq.joints().right_hip);
    let mut out: Vec<f64> = Vec::with_capacity(seq.frames());
    for f in 0..seq.frames() {
        let (gl, gr) = (axes.ground(seq.at(f, l)), axes.ground(seq.at(f, r)));
        let (d0, d1) = (gr[0] - gl[0], gr[1] - gl[1]);
        if d0 == 0.0 && d1 == 0.0 {
            match out.last() {
                Some(&prev) => out.push(prev),
                None => return Err(Error::DegenerateYaw { frame: f }),
            }
        } else {
            out.push(d1.atan2(d0));
        }
    }
    Ok(out)
}

/// Wrap an angle difference to `[-π, π]`.
pub fn wrap_angle(mut a: f64) -> f64 {
    use std::f64::consts::PI;
    a = (a + PI).rem_euclid(2.0 * PI) - PI;
    a
}

/// Sum of absolute wrapped frame-to-frame yaw changes, in degrees.
pub fn cumulative_yaw(seq: &JointSequence, axes: &BodyAxes) -> Result<f64> {
    if seq.frames() < 2 {
        return Err(Error::TooShort { needed: 2, got: seq.frames() });
    }
    let yaw = yaw_series(seq, axes)?;
    let total: f64 = yaw.windows(2).map(|w| wrap_angle(w[1] - w[0]).abs()).sum();
    Ok(total.to_degrees())
}

/// Rigidly move `seq` so that frame 0 has its pelvis above the ground origin
/// and its left-hip → right-hip vector along the first ground axis.
pub fn canonicalize(seq: &JointSequence) -> Result<JointSequence> {
    let axes = detect_axes(seq)?;
    let yaw0 = yaw_series(seq, &axes)?[0];
    let origin = axes.ground(seq.at(0, seq.joints().pelvis));
    let (s, c) = (-yaw0).sin_cos();
    let [g0, g1] = axes.ground_axes;
    Ok(seq.map_positions(|p| {
        let (x, y) = (p[g0] - origin[0], p[g1] - origin[1]);
        let mut out = p;
        out[g0] = c * x - s * y;
        out[g1] = s * x + c * y;
        out
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{joint, NUM_JOINTS};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn upright_frame() -> Vec<Vec3> {
        let mut f = vec![[0.0, 0.9, 0.0]; NUM_JOINTS];
        f[joint::PELVIS] = [0.0, 0.9, 0.0];
        f[joint::HEAD] = [0.0, 1.5, 0.0];
        f[joint::LEFT_SHOULDER] = [0.2, 1.4, 0.0];
        f[joint::RIGHT_SHOULDER] = [-0.2, 1.4, 0.0];
        f[joint::LEFT_HIP] = [0.1, 0.88, 0.0];
        f[joint::RIGHT_HIP] = [-0.1, 0.88, 0.0];
        f
    }

    fn repeat(frame: &[Vec3], n: usize) -> JointSequence {
        let positions = (0..n).flat_map(|_| frame.iter().copied()).collect();
        JointSequence::with_standard_joints(30, positions).unwrap()
    }

    /// Upright body rotated so that the hip yaw follows `yaw[f]`.
    fn yawing(yaw: &[f64]) -> JointSequence {
        let base = upright_frame();
        let positions = yaw
            .iter()
            .flat_map(|&a| {
                let (s, c) = a.sin_cos();
                base.iter()
                    .map(move |p| [c * p[0] - s * p[2], p[1], s * p[0] + c * p[2]])
                    .collect::<Vec<_>>()
            })
            .collect();
        JointSequence::with_standard_joints(30, positions).unwrap()
    }

    #[test]
    fn axis_detection_follows_the_head() {
        let seq = repeat(&upright_frame(), 5);
        assert_eq!(detect_axes(&seq).unwrap().height_axis, 1);
        let permuted = seq.map_positions(|p| [p[0], p[2], p[1]]);
        let axes = detect_axes(&permuted).unwrap();
        assert_eq!(axes.height_axis, 2);
        assert_eq!(axes.ground_axes, [0, 1]);
    }

    #[test]
    fn axis_detection_under_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut positions = Vec::new();
        for _ in 0..60 {
            let mut f = vec![[0.0; 3]; NUM_JOINTS];
            f[joint::HEAD] = [rng.gen_range(-0.01..0.01), 0.6 + rng.gen_range(-0.01..0.01), rng.gen_range(-0.01..0.01)];
            positions.extend(f);
        }
        let seq = JointSequence::with_standard_joints(30, positions).unwrap();
        assert_eq!(detect_axes(&seq).unwrap().height_axis, 1);
    }

    #[test]
    fn axis_detection_rejects_inverted_bodies() {
        let seq = repeat(&upright_frame(), 3).map_positions(|p| [-p[0], -p[1], -p[2]]);
        // Head-minus-pelvis is (0, -0.6, 0): nothing positive.
        assert!(matches!(detect_axes(&seq), Err(Error::AmbiguousAxes)));
    }

    #[test]
    fn shoulder_width_examples() {
        let axes = BodyAxes::new(1).unwrap();
        let mut f = upright_frame();
        f[joint::LEFT_SHOULDER] = [0.2, 1.4, 0.0];
        f[joint::RIGHT_SHOULDER] = [-0.2, 1.4, 0.0];
        assert!((shoulder_width(&repeat(&f, 4), &axes) - 0.4).abs() < 1e-12);

        let mut g = f.clone();
        g[joint::LEFT_SHOULDER] = [0.15, 1.4, 0.0];
        g[joint::RIGHT_SHOULDER] = [-0.15, 1.4, 0.0];
        let mut h = f.clone();
        h[joint::LEFT_SHOULDER] = [0.25, 1.4, 0.0];
        h[joint::RIGHT_SHOULDER] = [-0.25, 1.4, 0.0];
        let alternating: Vec<Vec3> = (0..6).flat_map(|i| if i % 2 == 0 { g.clone() } else { h.clone() }).collect();
        let seq = JointSequence::with_standard_joints(30, alternating).unwrap();
        assert!((shoulder_width(&seq, &axes) - 0.4).abs() < 1e-12);

        let mut v = f.clone();
        v[joint::LEFT_SHOULDER] = [0.0, 1.6, 0.0];
        v[joint::RIGHT_SHOULDER] = [0.0, 1.2, 0.0];
        assert_eq!(shoulder_width(&repeat(&v, 3), &axes), 0.0);
    }

    #[test]
    fn yaw_examples() {
        let axes = BodyAxes::new(1).unwrap();
        assert_eq!(cumulative_yaw(&repeat(&upright_frame(), 10), &axes).unwrap(), 0.0);

        // 90°/s for 2 s at 30 fps: 61 frames spanning exactly 180°.
        let yaw: Vec<f64> = (0..61).map(|f| (90.0f64 * f as f64 / 30.0).to_radians()).collect();
        assert!((cumulative_yaw(&yawing(&yaw), &axes).unwrap() - 180.0).abs() < 0.5);

        // Frame-to-frame changes of +30°, -30°, +30°.
        let osc: Vec<f64> = [0.0f64, 30.0, 0.0, 30.0].iter().map(|d| d.to_radians()).collect();
        assert!((cumulative_yaw(&yawing(&osc), &axes).unwrap() - 90.0).abs() < 1e-9);

        // Crossing the ±180° seam is wrapped.
        let seam: Vec<f64> = [170.0f64, -170.0].iter().map(|d| d.to_radians()).collect();
        assert!((cumulative_yaw(&yawing(&seam), &axes).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_hips() {
        let axes = BodyAxes::new(1).unwrap();
        let mut bad = upright_frame();
        bad[joint::LEFT_HIP] = [0.0, 0.8, 0.0];
        bad[joint::RIGHT_HIP] = [0.0, 0.9, 0.0];
        let good = upright_frame();
        let positions: Vec<Vec3> = good.iter().chain(bad.iter()).copied().collect();
        let seq = JointSequence::with_standard_joints(30, positions).unwrap();
        assert_eq!(cumulative_yaw(&seq, &axes).unwrap(), 0.0);

        let positions: Vec<Vec3> = bad.iter().chain(good.iter()).copied().collect();
        let seq = JointSequence::with_standard_joints(30, positions).unwrap();
        assert!(matches!(cumulative_yaw(&seq, &axes), Err(Error::DegenerateYaw { frame: 0 })));
    }

    #[test]
    fn canonical_frame_is_heading_free() {
        let yaw: Vec<f64> = (0..5).map(|f| 0.7 + 0.1 * f as f64).collect();
        let seq = yawing(&yaw).map_positions(|p| [p[0] + 3.0, p[1], p[2] - 1.0]);
        let canon = canonicalize(&seq).unwrap();
        let axes = detect_axes(&canon).unwrap();
        let y = yaw_series(&canon, &axes).unwrap();
        assert!(y[0].abs() < 1e-12);
        assert!((y[4] - 0.4).abs() < 1e-9);
        let pelvis = canon.at(0, joint::PELVIS);
        assert!(pelvis[0].abs() < 1e-12 && pelvis[2].abs() < 1e-12);
        assert!((cumulative_yaw(&canon, &axes).unwrap() - cumulative_yaw(&seq, &axes).unwrap()).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn yaw_invariant_under_rigid_ground_rotation(
            yaws in prop::collection::vec(-3.0f64..3.0, 2..30),
            offset in -3.0f64..3.0,
        ) {
            let axes = BodyAxes::new(1).unwrap();
            let base = cumulative_yaw(&yawing(&yaws), &axes).unwrap();
            let shifted: Vec<f64> = yaws.iter().map(|y| y + offset).collect();
            let moved = cumulative_yaw(&yawing(&shifted), &axes).unwrap();
            prop_assert!((base - moved).abs() < 1e-6);
        }

        #[test]
        fn scaling_properties(scale in 0.1f64..10.0) {
            let mut f = upright_frame();
            f[joint::LEFT_SHOULDER] = [0.21, 1.4, 0.05];
            let seq = repeat(&f, 4);
            let scaled = seq.map_positions(|p| [p[0] * scale, p[1] * scale, p[2] * scale]);
            let axes = detect_axes(&seq).unwrap();
            prop_assert_eq!(axes, detect_axes(&scaled).unwrap());
            let w = shoulder_width(&seq, &axes);
            prop_assert!((shoulder_width(&scaled, &axes) - scale * w).abs() < 1e-9 * scale.max(1.0));
        }
    }
}
