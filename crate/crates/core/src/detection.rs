//! Box geometry, candidate and detection types, confidence filtering and
//! class-aware greedy non-maximum suppression.
//!
//! All coordinates are fractions of the frame: `cx`/`w` of the width and
//! `cy`/`h` of the height.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Center-form rectangle in normalized frame coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = BoundingBox { cx, cy, w, h };
        if !b.is_valid() {
            return Err(Error::InvalidArgument(format!(
                "bounding box out of range: cx {cx}, cy {cy}, w {w}, h {h}"
            )));
        }
        Ok(b)
    }

    /// Builds a box from `(x1, y1, x2, y2)` corners.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BoundingBox {
            cx: (x1 + x2) / 2.0,
            cy: (y1 + y2) / 2.0,
            w: x2 - x1,
            h: y2 - y1,
        }
    }

    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.cx)
            && (0.0..=1.0).contains(&self.cy)
            && self.w > 0.0
            && self.h > 0.0
            && self.w.is_finite()
            && self.h.is_finite()
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    /// Width over height.
    pub fn aspect_ratio(&self) -> f64 {
        self.w / self.h
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        iou(self, other)
    }
}

/// Intersection over union. Returns 0 when the union has no area.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    // areas from the same corner arithmetic so iou(a, a) is exactly 1
    let area_a = (ax2 - ax1).max(0.0) * (ay2 - ay1).max(0.0);
    let area_b = (bx2 - bx1).max(0.0) * (by2 - by1).max(0.0);
    let union = area_a + area_b - inter;
    if union <= 0.0 || area_a <= 0.0 || area_b <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// One raw detector prediction before filtering and suppression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub bbox: BoundingBox,
    pub objectness: f64,
    pub class_scores: Vec<f64>,
}

impl Candidate {
    /// Argmax of the class scores, ties resolved to the lowest index.
    pub fn class_id(&self) -> usize {
        argmax(&self.class_scores)
    }

    pub fn max_class_score(&self) -> f64 {
        self.class_scores.get(self.class_id()).copied().unwrap_or(0.0)
    }

    pub fn confidence(&self) -> f64 {
        self.objectness * self.max_class_score()
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// A final post-NMS prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub class_id: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorProfile {
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub car_class: usize,
    pub t_conf: f64,
    pub t_iou: f64,
}

impl DetectorProfile {
    pub fn new(class_names: Vec<String>, car_class: usize, t_conf: f64, t_iou: f64) -> Result<Self> {
        let profile = DetectorProfile {
            num_classes: class_names.len(),
            class_names,
            car_class,
            t_conf,
            t_iou,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument("a detector needs at least two classes".into()));
        }
        if self.class_names.len() != self.num_classes {
            return Err(Error::InvalidArgument(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.num_classes
            )));
        }
        if self.car_class >= self.num_classes {
            return Err(Error::InvalidArgument(format!(
                "car class {} out of range",
                self.car_class
            )));
        }
        for (name, t) in [("t_conf", self.t_conf), ("t_iou", self.t_iou)] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidArgument(format!("{name} must lie in (0,1), got {t}")));
            }
        }
        Ok(())
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    pub fn class_name(&self, id: usize) -> &str {
        self.class_names.get(id).map(String::as_str).unwrap_or("?")
    }

    pub fn with_thresholds(&self, t_conf: f64, t_iou: f64) -> Self {
        DetectorProfile {
            t_conf,
            t_iou,
            ..self.clone()
        }
    }
}

/// Indices of the candidates that pass [`confidence_filter`].
pub fn confidence_filter_indices(candidates: &[Candidate], profile: &DetectorProfile) -> Vec<usize> {
    candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.confidence() > profile.t_conf)
        .map(|(i, _)| i)
        .collect()
}

/// Keeps candidates whose objectness times best class score is strictly
/// above `t_conf`, preserving order.
pub fn confidence_filter(candidates: &[Candidate], profile: &DetectorProfile) -> Vec<Candidate> {
    candidates
        .iter()
        .filter(|c| c.confidence() > profile.t_conf)
        .cloned()
        .collect()
}

/// Indices (into `candidates`) of the candidates that survive class-aware
/// greedy NMS, in the order they were kept.
pub fn nms_indices(candidates: &[Candidate], t_iou: f64) -> Vec<usize> {
    let classes: Vec<usize> = candidates.iter().map(Candidate::class_id).collect();
    let confs: Vec<f64> = candidates.iter().map(Candidate::confidence).collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    // stable: equal confidences keep input order
    order.sort_by(|&a, &b| confs[b].total_cmp(&confs[a]));

    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let suppressed = kept.iter().any(|&k| {
            classes[k] == classes[i] && iou(&candidates[k].bbox, &candidates[i].bbox) > t_iou
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}

/// Class-aware greedy NMS over already confidence-filtered candidates.
pub fn nms(candidates: &[Candidate], profile: &DetectorProfile) -> Vec<Detection> {
    nms_indices(candidates, profile.t_iou)
        .into_iter()
        .map(|i| {
            let c = &candidates[i];
            Detection {
                bbox: c.bbox,
                class_id: c.class_id(),
                confidence: c.confidence(),
            }
        })
        .collect()
}

/// `confidence_filter` followed by `nms`.
pub fn postprocess(candidates: &[Candidate], profile: &DetectorProfile) -> Vec<Detection> {
    nms(&confidence_filter(candidates, profile), profile)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> DetectorProfile {
        DetectorProfile::new(
            vec!["car".into(), "bus".into(), "truck".into()],
            0,
            0.25,
            0.45,
        )
        .unwrap()
    }

    fn cand(x1: f64, y1: f64, x2: f64, y2: f64, obj: f64, scores: Vec<f64>) -> Candidate {
        Candidate {
            bbox: BoundingBox::from_corners(x1, y1, x2, y2),
            objectness: obj,
            class_scores: scores,
        }
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let a = BoundingBox::new(0.5, 0.5, 0.2, 0.2).unwrap();
        assert_eq!(iou(&a, &a), 1.0);
        let b = BoundingBox::new(0.1, 0.1, 0.1, 0.1).unwrap();
        let c = BoundingBox::new(0.9, 0.9, 0.1, 0.1).unwrap();
        assert_eq!(iou(&b, &c), 0.0);
    }

    #[test]
    fn iou_overlapping_squares() {
        // intersection 1, union 4 + 4 - 1 = 7
        let a = BoundingBox::from_corners(0.0, 0.0, 2.0, 2.0);
        let b = BoundingBox::from_corners(1.0, 1.0, 3.0, 3.0);
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn iou_zero_area_is_zero() {
        let a = BoundingBox { cx: 0.5, cy: 0.5, w: 0.0, h: 0.2 };
        assert_eq!(iou(&a, &a), 0.0);
    }

    #[test]
    fn corner_round_trip_on_dyadic_values() {
        let b = BoundingBox::new(0.375, 0.625, 0.25, 0.125).unwrap();
        let (x1, y1, x2, y2) = b.corners();
        assert_eq!(BoundingBox::from_corners(x1, y1, x2, y2), b);
    }

    #[test]
    fn box_validation() {
        assert!(BoundingBox::new(1.1, 0.5, 0.1, 0.1).is_err());
        assert!(BoundingBox::new(0.5, 0.5, 0.0, 0.1).is_err());
        assert!(BoundingBox::new(0.5, 0.5, 0.1, -0.1).is_err());
    }

    #[test]
    fn confidence_filter_is_strict_and_ordered() {
        let p = profile();
        let kept = cand(0.0, 0.0, 0.1, 0.1, 0.6, vec![0.5, 0.1, 0.1]);
        let dropped = cand(0.0, 0.0, 0.1, 0.1, 0.5, vec![0.4, 0.1, 0.1]);
        // 0.5 * 0.5 == 0.25 exactly, not strictly above
        let boundary = cand(0.0, 0.0, 0.1, 0.1, 0.5, vec![0.5, 0.1, 0.1]);
        let out = confidence_filter(&[kept.clone(), dropped, boundary], &p);
        assert_eq!(out, vec![kept]);
        assert!(confidence_filter(&[], &p).is_empty());
    }

    #[test]
    fn nms_suppresses_same_class_overlap() {
        let p = profile();
        let a = cand(0.0, 0.0, 10.0, 10.0, 1.0, vec![0.9, 0.0, 0.0]);
        let b = cand(1.0, 1.0, 11.0, 11.0, 1.0, vec![0.8, 0.0, 0.0]);
        let c = cand(20.0, 20.0, 25.0, 25.0, 1.0, vec![0.7, 0.0, 0.0]);
        assert!((iou(&a.bbox, &b.bbox) - 81.0 / 119.0).abs() < 1e-12);
        let out = nms(&[b, c.clone(), a.clone()], &p);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].bbox, a.bbox);
        assert_eq!(out[1].bbox, c.bbox);
        assert!((out[0].confidence - 0.9).abs() < 1e-12);
    }

    #[test]
    fn nms_keeps_different_classes() {
        let p = profile();
        let a = cand(0.0, 0.0, 10.0, 10.0, 1.0, vec![0.9, 0.1, 0.0]);
        let b = cand(0.0, 0.0, 10.0, 9.0, 1.0, vec![0.1, 0.8, 0.0]);
        assert!((iou(&a.bbox, &b.bbox) - 0.9).abs() < 1e-12);
        let out = nms(&[a, b], &p);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].class_id, 0);
        assert_eq!(out[1].class_id, 1);
    }

    #[test]
    fn nms_single_and_ties() {
        let p = profile();
        let a = cand(0.0, 0.0, 0.2, 0.2, 0.9, vec![0.5, 0.5, 0.0]);
        let out = nms(std::slice::from_ref(&a), &p);
        assert_eq!(out.len(), 1);
        // class tie resolves to the lowest index
        assert_eq!(out[0].class_id, 0);
        // equal confidences: input order wins
        let b = cand(0.01, 0.0, 0.21, 0.2, 0.9, vec![0.5, 0.5, 0.0]);
        assert_eq!(nms_indices(&[a, b], 0.45), vec![0]);
    }

    #[test]
    fn profile_validation() {
        assert!(DetectorProfile::new(vec!["car".into()], 0, 0.25, 0.45).is_err());
        assert!(DetectorProfile::new(vec!["car".into(), "bus".into()], 2, 0.25, 0.45).is_err());
        assert!(DetectorProfile::new(vec!["car".into(), "bus".into()], 0, 1.0, 0.45).is_err());
        assert_eq!(profile().class_index("bus"), Some(1));
    }
}
