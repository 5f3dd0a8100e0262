use serde::{Deserialize, Serialize};

use super::model::DataNorm;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::motion::ChannelLayout;
use crate::nn::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w_diff: f64,
    pub w_joint: f64,
    pub w_vel: f64,
    pub w_contact: f64,
    /// Weight of the music–dance stream during fine-tuning.
    pub lambda_p: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_diff: 1.0, w_joint: 0.5, w_vel: 0.5, w_contact: 0.2, lambda_p: 0.5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_diff, self.w_joint, self.w_vel, self.w_contact];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidArgument("loss weights must be finite and non-negative".into()));
        }
        if w.iter().all(|x| *x == 0.0) {
            return Err(Error::InvalidArgument("at least one loss weight must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_p) {
            return Err(Error::InvalidArgument(format!("λ_p = {} outside [0, 1]", self.lambda_p)));
        }
        Ok(())
    }
}

/// Which channels feed the joint term and which contacts feed the sliding term.
#[derive(Clone, Debug, PartialEq)]
pub struct LossLayout {
    dim: usize,
    pose: Vec<usize>,
    contacts: Vec<(usize, Vec<[usize; 3]>)>,
}

impl LossLayout {
    pub fn from_channels(layout: &ChannelLayout) -> Self {
        Self {
            dim: layout.dim(),
            pose: layout.pose_channels(),
            contacts: layout.contact_channels().iter().copied().zip(layout.contact_tracks().iter().cloned()).collect(),
        }
    }

    /// Every channel is a pose channel; no contacts.
    pub fn plain(dim: usize) -> Self {
        Self { dim, pose: (0..dim).collect(), contacts: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub diff: f64,
    pub joint: f64,
    pub vel: f64,
    pub contact: f64,
    pub total: f64,
}

/// Weighted loss between a target clip and a prediction, both as plain matrices.
pub fn dance_loss(x0: &Mat, x_hat: &Mat, weights: &LossWeights, layout: &LossLayout) -> Result<LossTerms> {
    if x0.shape() != x_hat.shape() {
        return Err(Error::dim("dance loss", format!("{:?}", x0.shape()), format!("{:?}", x_hat.shape())));
    }
    let mut tape = Tape::new();
    let v = tape.constant(x_hat.clone());
    Ok(dance_loss_graph(&mut tape, x0, v, weights, layout, None)?.1)
}

/// Record the loss on `tape`. With `norm`, both clips are in normalised space
/// and the contact term is measured after denormalisation.
pub fn dance_loss_graph(
    tape: &mut Tape,
    x0: &Mat,
    x_hat: Var,
    weights: &LossWeights,
    layout: &LossLayout,
    norm: Option<&DataNorm>,
) -> Result<(Var, LossTerms)> {
    weights.validate()?;
    let shape = tape.value(x_hat).shape();
    if x0.shape() != shape {
        return Err(Error::dim("dance loss", format!("{:?}", x0.shape()), format!("{shape:?}")));
    }
    if shape.1 != layout.dim {
        return Err(Error::dim("dance loss layout", layout.dim, shape.1));
    }
    let k = shape.0;
    let zero = || Mat::scalar(0.0);

    let target = tape.constant(x0.clone());
    let d = tape.sub(x_hat, target);
    let l_diff = tape.mean_square(d);

    let l_joint = if layout.pose.is_empty() {
        tape.constant(zero())
    } else {
        let p = tape.gather_cols(d, &layout.pose);
        tape.mean_square(p)
    };

    let l_vel = if k < 2 {
        tape.constant(zero())
    } else {
        let d1 = temporal_diff(tape, d);
        let first = tape.mean_square(d1);
        if k < 3 {
            first
        } else {
            let d2 = temporal_diff(tape, d1);
            let second = tape.mean_square(d2);
            tape.add(first, second)
        }
    };

    let l_contact = contact_term(tape, x0, x_hat, layout, norm);

    let mut total = tape.scale(l_diff, weights.w_diff);
    for (term, w) in [(l_joint, weights.w_joint), (l_vel, weights.w_vel), (l_contact, weights.w_contact)] {
        let s = tape.scale(term, w);
        total = tape.add(total, s);
    }
    let terms = LossTerms {
        diff: tape.scalar(l_diff),
        joint: tape.scalar(l_joint),
        vel: tape.scalar(l_vel),
        contact: tape.scalar(l_contact),
        total: tape.scalar(total),
    };
    Ok((total, terms))
}

fn temporal_diff(tape: &mut Tape, x: Var) -> Var {
    let k = tape.value(x).rows();
    let later = tape.slice_rows(x, 1, k - 1);
    let earlier = tape.slice_rows(x, 0, k - 1);
    tape.sub(later, earlier)
}

/// Mean squared excess frame-to-frame displacement of each tracked foot,
/// relative to the target, over frame pairs the target marks in contact.
fn contact_term(tape: &mut Tape, x0: &Mat, x_hat: Var, layout: &LossLayout, norm: Option<&DataNorm>) -> Var {
    let k = x0.rows();
    if layout.contacts.is_empty() || k < 2 {
        return tape.constant(Mat::scalar(0.0));
    }
    let (raw_target, raw_pred) = match norm {
        Some(n) => (n.denormalize(x0), n.denormalize_graph(tape, x_hat)),
        None => (x0.clone(), x_hat),
    };
    let mut count = 0usize;
    let mut parts = Vec::new();
    for (channel, tracks) in &layout.contacts {
        let mask = Mat::from_fn(k - 1, 3, |r, _| {
            let on = raw_target.get(r, *channel) >= 0.5 && raw_target.get(r + 1, *channel) >= 0.5;
            f64::from(u8::from(on))
        });
        let pairs = (0..k - 1).filter(|&r| mask.get(r, 0) > 0.0).count();
        if pairs == 0 {
            continue;
        }
        count += pairs;
        let mut pos = tape.gather_cols(raw_pred, &tracks[0]);
        for t in &tracks[1..] {
            let p = tape.gather_cols(raw_pred, t);
            pos = tape.add(pos, p);
        }
        let moved = temporal_diff(tape, pos);
        let at = |r: usize, j: usize| tracks[1..].iter().fold(raw_target.get(r, tracks[0][j]), |acc, t| acc + raw_target.get(r, t[j]));
        let target = Mat::from_fn(k - 1, 3, |r, j| at(r + 1, j) - at(r, j));
        let target = tape.constant(target);
        let slide = tape.sub(moved, target);
        let masked = tape.mul_const(slide, mask);
        let sq = tape.mul(masked, masked);
        parts.push(tape.sum(sq));
    }
    if parts.is_empty() {
        return tape.constant(Mat::scalar(0.0));
    }
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = tape.add(acc, p);
    }
    tape.scale(acc, 1.0 / (3 * count) as f64)
}
