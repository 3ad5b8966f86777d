//! Brute-force oracles and random scene builders shared by the integration
//! tests. Nothing here calls into the code under test except for types.

#![allow(dead_code)]

use labelswitch::detection::{BoundingBox, Candidate, Detection, DetectorProfile};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn profile(t_conf: f64, t_iou: f64) -> DetectorProfile {
    DetectorProfile::new(
        vec!["car".into(), "bus".into(), "truck".into()],
        0,
        t_conf,
        t_iou,
    )
    .unwrap()
}

/// Intersection over union computed from corner coordinates.
pub fn iou_oracle(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = (a.cx - a.w / 2.0, a.cy - a.h / 2.0, a.cx + a.w / 2.0, a.cy + a.h / 2.0);
    let (bx1, by1, bx2, by2) = (b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0, b.cy + b.h / 2.0);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = a.w * a.h + b.w * b.h - inter;
    if union <= 0.0 { 0.0 } else { inter / union }
}

pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn conf(c: &Candidate) -> f64 {
    c.objectness * c.class_scores[argmax(&c.class_scores)]
}

/// Exhaustive greedy suppression: repeatedly take the most confident
/// surviving candidate (earliest on ties) and strike every same-class
/// candidate that overlaps it by more than `t_iou`.
pub fn nms_oracle(cands: &[Candidate], t_iou: f64) -> Vec<usize> {
    let mut alive = vec![true; cands.len()];
    let mut kept = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..cands.len() {
            if alive[i] && best.is_none_or(|b| conf(&cands[i]) > conf(&cands[b])) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        alive[b] = false;
        kept.push(b);
        for j in 0..cands.len() {
            if alive[j]
                && argmax(&cands[j].class_scores) == argmax(&cands[b].class_scores)
                && iou_oracle(&cands[b].bbox, &cands[j].bbox) > t_iou
            {
                alive[j] = false;
            }
        }
    }
    kept
}

/// Double loop over (car, candidate) pairs.
pub fn relevant_oracle(cars: &[Detection], attacked: &[Candidate], car_class: usize, t_iou: f64) -> Vec<usize> {
    let mut out = Vec::new();
    for (j, c) in attacked.iter().enumerate() {
        let mut hit = false;
        for car in cars {
            if car.class_id == car_class && iou_oracle(&car.bbox, &c.bbox) >= t_iou {
                hit = true;
            }
        }
        if hit {
            out.push(j);
        }
    }
    out
}

pub fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    // a coarse lattice makes exact overlaps and IoU ties common
    let q = |rng: &mut ChaCha8Rng, lo: u32, hi: u32| rng.random_range(lo..=hi) as f64 / 20.0;
    BoundingBox {
        cx: q(rng, 2, 18),
        cy: q(rng, 2, 18),
        w: q(rng, 1, 6),
        h: q(rng, 1, 6),
    }
}

pub fn random_candidate(rng: &mut ChaCha8Rng, classes: usize) -> Candidate {
    let q = |rng: &mut ChaCha8Rng| rng.random_range(0..=10) as f64 / 10.0;
    Candidate {
        bbox: random_box(rng),
        objectness: q(rng),
        class_scores: (0..classes).map(|_| q(rng)).collect(),
    }
}

pub fn random_detection(rng: &mut ChaCha8Rng, classes: usize) -> Detection {
    Detection {
        bbox: random_box(rng),
        class_id: rng.random_range(0..classes),
        confidence: rng.random_range(0.25..1.0),
    }
}
