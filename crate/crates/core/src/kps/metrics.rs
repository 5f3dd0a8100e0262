//! Beat alignment and diversity.

use crate::error::{Error, Result};
use crate::motion::JointSequence;

pub const DEFAULT_BAS_SIGMA_S: f64 = 0.1;

/// Mean over music beats of `exp(-d² / 2σ²)`, `d` the distance to the nearest kinematic beat.
pub fn beat_alignment_score(kinematic_beats: &[f64], music_beats: &[f64], sigma_s: f64) -> Result<f64> {
    if music_beats.is_empty() {
        return Err(Error::Empty("music beat list"));
    }
    if !(sigma_s > 0.0) {
        return Err(Error::InvalidArgument(format!("BAS sigma must be > 0, got {sigma_s}")));
    }
    let total: f64 = music_beats
        .iter()
        .map(|&tb| {
            let d2 = kinematic_beats.iter().map(|&tk| (tk - tb).powi(2)).fold(f64::INFINITY, f64::min);
            (-d2 / (2.0 * sigma_s * sigma_s)).exp()
        })
        .sum();
    Ok(total / music_beats.len() as f64)
}

/// Mean joint speed between consecutive frames; entry `i` covers frames `i → i+1`.
pub fn mean_joint_speed(seq: &JointSequence) -> Vec<f64> {
    let fps = seq.fps() as f64;
    (0..seq.frames().saturating_sub(1))
        .map(|f| {
            let (a, b) = (seq.frame(f), seq.frame(f + 1));
            let sum: f64 = a
                .iter()
                .zip(b)
                .map(|(p, q)| ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2)).sqrt())
                .sum();
            sum / a.len() as f64 * fps
        })
        .collect()
}

/// Times (s) of local minima of mean joint speed that lie below the median speed.
pub fn kinematic_beats(seq: &JointSequence) -> Vec<f64> {
    let speed = mean_joint_speed(seq);
    beats_from_speed(&speed, seq.fps() as f64)
}

/// Beat extraction on a precomputed speed profile. A flat-bottomed dip yields one beat at its first frame.
pub fn beats_from_speed(speed: &[f64], fps: f64) -> Vec<f64> {
    if speed.len() < 3 {
        return Vec::new();
    }
    let med = median(speed);
    // Rounding noise on a constant profile must not register as a dip.
    let tol = 1e-9 * speed.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (1..speed.len() - 1)
        .filter(|&i| speed[i] < speed[i - 1] && speed[i] <= speed[i + 1] && speed[i] < med - tol)
        .map(|i| i as f64 / fps)
        .collect()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Mean pairwise Euclidean distance over all unordered pairs.
pub fn diversity(features: &[Vec<f64>]) -> Result<f64> {
    if features.len() < 2 {
        return Err(Error::TooShort { needed: 2, got: features.len() });
    }
    let dim = features[0].len();
    if let Some(bad) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::dim("diversity feature vector", dim, bad.len()));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..features.len() {
        for j in i + 1..features.len() {
            let d2: f64 = features[i].iter().zip(&features[j]).map(|(a, b)| (a - b).powi(2)).sum();
            total += d2.sqrt();
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}
