//! Attack objective: push the car score of matched candidates down, the
//! target-class score up, and keep the patch smooth.
//!
//! ```text
//! total = l1 * decrease_car + (1 - l1) * increase_target + l2 * tv
//! ```
//!
//! Every term comes with an analytic gradient; the detector-side terms return
//! gradients with respect to the candidate class scores and the trainer
//! chains those back through the detector.

use serde::{Deserialize, Serialize};

use crate::detection::{Candidate, DetectorProfile};
use crate::error::{Error, Result};
use crate::image::Patch;
use crate::matching::CandidateSet;

pub const BCE_EPS: f64 = 1e-7;
pub const TV_DELTA: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.2,
            lambda2: 3.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda1) {
            return Err(Error::InvalidArgument(format!("lambda1 must lie in [0,1], got {}", self.lambda1)));
        }
        if !(self.lambda2 >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda2 must be >= 0, got {}", self.lambda2)));
        }
        Ok(())
    }
}

/// One-hot "desired" candidate: score 1 for class `t`, 0 elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetVector {
    pub class_id: usize,
}

impl TargetVector {
    pub fn score(&self, class: usize) -> f64 {
        if class == self.class_id {
            1.0
        } else {
            0.0
        }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(BCE_EPS, 1.0 - BCE_EPS)
}

/// Binary cross-entropy of probability `p` against a 0/1 target.
pub fn bce(p: f64, q: f64) -> f64 {
    let p = clamp_prob(p);
    -(q * p.ln() + (1.0 - q) * (1.0 - p).ln())
}

/// `d bce / d p`; zero where the clamp is active.
pub fn bce_grad(p: f64, q: f64) -> f64 {
    if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
        return 0.0;
    }
    -(q / p) + (1.0 - q) / (1.0 - p)
}

/// Mean `bce(car score, 0)` over the candidates currently classified as car;
/// 0 when there are none.
pub fn decrease_car_loss(relevant: &CandidateSet, profile: &DetectorProfile) -> f64 {
    detection_terms(&relevant.candidates, profile, profile.car_class).decrease_car
}

/// Mean `bce(target score, 1)` over every relevant candidate; 0 on an empty
/// set.
pub fn increase_target_loss(relevant: &CandidateSet, target: usize) -> f64 {
    let c = &relevant.candidates;
    if c.is_empty() {
        return 0.0;
    }
    c.iter().map(|c| bce(c.class_scores[target], 1.0)).sum::<f64>() / c.len() as f64
}

/// Loss values of the two detector terms and their gradient with respect to
/// each candidate's class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionTerms {
    pub decrease_car: f64,
    pub increase_target: f64,
    /// `d decrease_car / d car score`, one entry per candidate.
    pub d_car: Vec<f64>,
    /// `d increase_target / d target score`, one entry per candidate.
    pub d_target: Vec<f64>,
}

pub fn detection_terms(candidates: &[Candidate], profile: &DetectorProfile, target: usize) -> DetectionTerms {
    let car = profile.car_class;
    let n = candidates.len();
    let cars: Vec<bool> = candidates.iter().map(|c| c.class_id() == car).collect();
    let n_car = cars.iter().filter(|&&b| b).count();

    let mut out = DetectionTerms {
        decrease_car: 0.0,
        increase_target: 0.0,
        d_car: vec![0.0; n],
        d_target: vec![0.0; n],
    };
    if n_car > 0 {
        let scale = 1.0 / n_car as f64;
        for (i, c) in candidates.iter().enumerate().filter(|(i, _)| cars[*i]) {
            let p = c.class_scores[car];
            out.decrease_car += bce(p, 0.0) * scale;
            out.d_car[i] = bce_grad(p, 0.0) * scale;
        }
    }
    if n > 0 {
        let scale = 1.0 / n as f64;
        for (i, c) in candidates.iter().enumerate() {
            let p = c.class_scores[target];
            out.increase_target += bce(p, 1.0) * scale;
            out.d_target[i] = bce_grad(p, 1.0) * scale;
        }
    }
    out
}

/// Total variation over a row-major interleaved RGB buffer of a `size x size`
/// patch: the sum over interior texels and channels of the magnitude of the
/// (down, right) difference pair.
pub fn tv_values(values: &[f64], size: usize) -> f64 {
    tv_with_grad(values, size, None)
}

/// TV value, adding its gradient into `grad` when given. The gradient uses
/// `sqrt(s + TV_DELTA)` in the denominator so flat regions stay finite.
pub fn tv_with_grad(values: &[f64], size: usize, mut grad: Option<&mut [f64]>) -> f64 {
    assert_eq!(values.len(), size * size * 3);
    let at = |y: usize, x: usize, c: usize| (y * size + x) * 3 + c;
    let mut total = 0.0;
    for y in 0..size.saturating_sub(1) {
        for x in 0..size - 1 {
            for c in 0..3 {
                let p = values[at(y, x, c)];
                let dy = p - values[at(y + 1, x, c)];
                let dx = p - values[at(y, x + 1, c)];
                let s = dy * dy + dx * dx;
                total += s.sqrt();
                if let Some(g) = grad.as_deref_mut() {
                    let inv = 1.0 / (s + TV_DELTA).sqrt();
                    g[at(y, x, c)] += (dy + dx) * inv;
                    g[at(y + 1, x, c)] -= dy * inv;
                    g[at(y, x + 1, c)] -= dx * inv;
                }
            }
        }
    }
    total
}

pub fn tv_loss(patch: &Patch) -> f64 {
    tv_values(&patch.as_f64(), patch.size())
}

pub fn total_loss(
    relevant: &CandidateSet,
    patch: &Patch,
    weights: &LossWeights,
    target: usize,
    profile: &DetectorProfile,
) -> f64 {
    let terms = detection_terms(&relevant.candidates, profile, target);
    weights.lambda1 * terms.decrease_car
        + (1.0 - weights.lambda1) * terms.increase_target
        + weights.lambda2 * tv_loss(patch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::BoundingBox;
    use crate::matching::{Origin, Stage};

    fn profile() -> DetectorProfile {
        DetectorProfile::new(vec!["car".into(), "bus".into(), "truck".into()], 0, 0.25, 0.45).unwrap()
    }

    fn cand(scores: [f64; 3]) -> Candidate {
        Candidate {
            bbox: BoundingBox { cx: 0.5, cy: 0.5, w: 0.2, h: 0.2 },
            objectness: 0.9,
            class_scores: scores.to_vec(),
        }
    }

    fn set(c: Vec<Candidate>) -> CandidateSet {
        CandidateSet::new(c, Origin::Attacked, Stage::PreNms)
    }

    const LN2: f64 = std::f64::consts::LN_2;
    const LN10: f64 = std::f64::consts::LN_10;

    #[test]
    fn bce_hand_values() {
        assert!(bce(1.0, 1.0) < 1e-6);
        assert!((bce(0.5, 1.0) - LN2).abs() < 1e-12);
        assert!((bce(0.9, 0.0) - LN10).abs() < 1e-9);
        assert!(bce(0.0, 1.0).is_finite());
    }

    #[test]
    fn decrease_car_hand_values() {
        let p = profile();
        assert!((decrease_car_loss(&set(vec![cand([0.9, 0.05, 0.05])]), &p) - std::f64::consts::LN_10).abs() < 1e-6);
        assert_eq!(decrease_car_loss(&set(vec![cand([0.1, 0.8, 0.1])]), &p), 0.0);
        let two = set(vec![cand([0.9, 0.05, 0.05]), cand([0.5, 0.2, 0.1])]);
        assert!((decrease_car_loss(&two, &p) - 1.497866).abs() < 1e-6);
    }

    #[test]
    fn increase_target_hand_values() {
        assert!(increase_target_loss(&set(vec![cand([0.0, 1.0, 0.0])]), 1) < 1e-6);
        assert!((increase_target_loss(&set(vec![cand([0.4, 0.5, 0.0])]), 1) - LN2).abs() < 1e-12);
        assert_eq!(increase_target_loss(&set(vec![]), 1), 0.0);
        // a bus-argmax candidate counts here but not in the car term
        let mixed = set(vec![cand([0.9, 0.5, 0.0]), cand([0.1, 0.5, 0.0])]);
        assert!((increase_target_loss(&mixed, 1) - LN2).abs() < 1e-12);
        assert!((decrease_car_loss(&mixed, &profile()) - LN10).abs() < 1e-9);
    }

    #[test]
    fn tv_hand_values() {
        assert_eq!(tv_loss(&Patch::filled(5, 0.3)), 0.0);
        // one channel [[0,1],[0,1]], other channels constant
        let mut px = vec![0.2f32; 12];
        px[0] = 0.0;
        px[3] = 1.0;
        px[6] = 0.0;
        px[9] = 1.0;
        let patch = Patch::from_pixels(2, px).unwrap();
        assert!((tv_loss(&patch) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn total_loss_combinations() {
        let p = profile();
        let patch = Patch::random(4, 2).unwrap();
        let rel = set(vec![cand([0.9, 0.5, 0.0])]);
        let zero = LossWeights { lambda1: 0.0, lambda2: 0.0 };
        assert_eq!(total_loss(&rel, &patch, &zero, 1, &p), increase_target_loss(&rel, 1));
        assert_eq!(total_loss(&set(vec![]), &Patch::filled(4, 0.5), &LossWeights::default(), 1, &p), 0.0);
    }

    #[test]
    fn score_gradients_have_the_right_sign() {
        let p = profile();
        let c = vec![cand([0.7, 0.2, 0.1]), cand([0.3, 0.6, 0.1])];
        let t = detection_terms(&c, &p, 1);
        assert!(t.d_car[0] > 0.0);
        assert_eq!(t.d_car[1], 0.0);
        assert!(t.d_target.iter().all(|&g| g < 0.0));
    }

    #[test]
    fn tv_gradient_matches_finite_differences() {
        let size = 4;
        let vals: Vec<f64> = (0..size * size * 3).map(|i| ((i * 37) % 23) as f64 / 23.0).collect();
        let mut grad = vec![0.0; vals.len()];
        tv_with_grad(&vals, size, Some(&mut grad));
        let h = 1e-6;
        for i in 0..vals.len() {
            let mut a = vals.clone();
            a[i] += h;
            let mut b = vals.clone();
            b[i] -= h;
            let fd = (tv_values(&a, size) - tv_values(&b, size)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-5, "{i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn weight_validation() {
        assert!(LossWeights { lambda1: 1.5, lambda2: 0.0 }.validate().is_err());
        assert!(LossWeights { lambda1: 0.5, lambda2: -1.0 }.validate().is_err());
        assert!(LossWeights::default().validate().is_ok());
    }
}
