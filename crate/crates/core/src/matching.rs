//! Finding the attacked-frame candidates that belong to the clean frame's
//! car objects.
//!
//! Matching is done against the attacked frame's candidates *before* NMS and
//! ignores the class they are currently assigned: once the patch starts
//! flipping a car, its candidates may already score highest for another
//! class and would be missed by a class-based lookup. Candidate identity is
//! the index into the attacked pre-NMS list.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::detection::{iou, Candidate, Detection, DetectorProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Clean,
    Attacked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    PreNms,
    PostNms,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub origin: Origin,
    pub stage: Stage,
}

impl CandidateSet {
    pub fn new(candidates: Vec<Candidate>, origin: Origin, stage: Stage) -> Self {
        CandidateSet {
            candidates,
            origin,
            stage,
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Subset at the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> CandidateSet {
        CandidateSet {
            candidates: indices.iter().map(|&i| self.candidates[i].clone()).collect(),
            origin: self.origin,
            stage: self.stage,
        }
    }
}

/// Indices of candidates whose highest class score is the car score.
pub fn car_indices(candidates: &[Candidate], profile: &DetectorProfile) -> Vec<usize> {
    candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.class_id() == profile.car_class)
        .map(|(i, _)| i)
        .collect()
}

pub fn car_candidates(set: &CandidateSet, profile: &DetectorProfile) -> CandidateSet {
    set.select(&car_indices(&set.candidates, profile))
}

/// Indices of candidates overlapping `object` with IoU at or above `t_iou`,
/// whatever their class.
pub fn relevant_indices_for_object(object: &Detection, attacked: &[Candidate], t_iou: f64) -> Vec<usize> {
    attacked
        .iter()
        .enumerate()
        .filter(|(_, c)| iou(&object.bbox, &c.bbox) >= t_iou)
        .map(|(i, _)| i)
        .collect()
}

pub fn relevant_for_object(object: &Detection, attacked_pre_nms: &CandidateSet, t_iou: f64) -> CandidateSet {
    attacked_pre_nms.select(&relevant_indices_for_object(object, &attacked_pre_nms.candidates, t_iou))
}

/// Sorted, de-duplicated union of [`relevant_indices_for_object`] over the
/// clean frame's final car detections.
pub fn relevant_indices(
    clean_final: &[Detection],
    attacked: &[Candidate],
    profile: &DetectorProfile,
    t_iou: f64,
) -> Vec<usize> {
    let mut union = BTreeSet::new();
    for object in clean_final.iter().filter(|d| d.class_id == profile.car_class) {
        union.extend(relevant_indices_for_object(object, attacked, t_iou));
    }
    union.into_iter().collect()
}

pub fn relevant_candidates(
    clean_final: &[Detection],
    attacked_pre_nms: &CandidateSet,
    profile: &DetectorProfile,
    t_iou: f64,
) -> CandidateSet {
    attacked_pre_nms.select(&relevant_indices(
        clean_final,
        &attacked_pre_nms.candidates,
        profile,
        t_iou,
    ))
}

/// How the trainer chooses the candidates its losses act on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSelection {
    /// IoU match against clean-frame car objects, class ignored.
    #[default]
    IouMatched,
    /// Only attacked-frame candidates currently classified as car (the
    /// ablation baseline).
    AttackedCarOnly,
}

impl CandidateSelection {
    pub fn indices(
        self,
        clean_final: &[Detection],
        attacked: &[Candidate],
        profile: &DetectorProfile,
        t_iou: f64,
    ) -> Vec<usize> {
        match self {
            CandidateSelection::IouMatched => relevant_indices(clean_final, attacked, profile, t_iou),
            CandidateSelection::AttackedCarOnly => car_indices(attacked, profile),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{nms, BoundingBox};

    fn profile() -> DetectorProfile {
        DetectorProfile::new(vec!["car".into(), "bus".into(), "truck".into()], 0, 0.25, 0.45).unwrap()
    }

    fn cand(cx: f64, cy: f64, w: f64, h: f64, scores: [f64; 3]) -> Candidate {
        Candidate {
            bbox: BoundingBox { cx, cy, w, h },
            objectness: 0.9,
            class_scores: scores.to_vec(),
        }
    }

    fn car(cx: f64, cy: f64, w: f64, h: f64) -> Detection {
        Detection {
            bbox: BoundingBox { cx, cy, w, h },
            class_id: 0,
            confidence: 0.8,
        }
    }

    fn pre(c: Vec<Candidate>) -> CandidateSet {
        CandidateSet::new(c, Origin::Attacked, Stage::PreNms)
    }

    #[test]
    fn car_candidates_by_argmax() {
        let set = pre(vec![
            cand(0.5, 0.5, 0.1, 0.1, [0.6, 0.3, 0.1]),
            cand(0.5, 0.5, 0.1, 0.1, [0.4, 0.5, 0.1]),
        ]);
        let cars = car_candidates(&set, &profile());
        assert_eq!(cars.candidates, vec![set.candidates[0].clone()]);
        assert!(car_candidates(&pre(vec![]), &profile()).is_empty());
    }

    #[test]
    fn relevant_for_object_boundary_and_class_blind() {
        let object = car(0.5, 0.5, 0.25, 0.25);
        // same height, half the width, left-aligned: IoU exactly 0.5
        let half = cand(0.4375, 0.5, 0.125, 0.25, [0.9, 0.0, 0.0]);
        assert_eq!(iou(&object.bbox, &half.bbox), 0.5);
        let bus = cand(0.5, 0.5, 0.25, 0.25, [0.1, 0.9, 0.0]);
        let far = cand(0.1, 0.1, 0.05, 0.05, [0.9, 0.0, 0.0]);
        let set = pre(vec![half.clone(), bus.clone(), far]);
        let out = relevant_for_object(&object, &set, 0.5);
        assert_eq!(out.candidates, vec![half, bus]);
    }

    #[test]
    fn union_is_deduplicated() {
        let p = profile();
        let shared = cand(0.5, 0.5, 0.2, 0.2, [0.2, 0.7, 0.0]);
        let clean = vec![car(0.5, 0.5, 0.2, 0.2), car(0.51, 0.5, 0.2, 0.2)];
        assert_eq!(relevant_indices(&clean, &[shared], &p, 0.45), vec![0]);
        assert!(relevant_indices(&[], &[cand(0.5, 0.5, 0.2, 0.2, [1.0, 0.0, 0.0])], &p, 0.45).is_empty());
    }

    #[test]
    fn non_car_clean_detections_are_ignored() {
        let p = profile();
        let mut bus = car(0.5, 0.5, 0.2, 0.2);
        bus.class_id = 1;
        let c = cand(0.5, 0.5, 0.2, 0.2, [1.0, 0.0, 0.0]);
        assert!(relevant_indices(&[bus], &[c], &p, 0.45).is_empty());
    }

    #[test]
    fn matching_uses_candidates_that_nms_would_drop() {
        let p = profile();
        let object = car(0.5, 0.5, 0.2, 0.2);
        let strong_bus = cand(0.5, 0.5, 0.2, 0.2, [0.1, 0.95, 0.0]);
        let weak_bus = cand(0.51, 0.5, 0.2, 0.2, [0.2, 0.6, 0.0]);
        let set = pre(vec![strong_bus, weak_bus.clone()]);
        let after_nms = nms(&set.candidates, &p);
        assert_eq!(after_nms.len(), 1);
        let rel = relevant_candidates(&[object], &set, &p, p.t_iou);
        assert!(rel.candidates.contains(&weak_bus));
        assert_eq!(rel.len(), 2);
    }

    #[test]
    fn ablation_selection_ignores_geometry() {
        let p = profile();
        let attacked = vec![
            cand(0.5, 0.5, 0.2, 0.2, [0.1, 0.9, 0.0]),
            cand(0.1, 0.1, 0.1, 0.1, [0.9, 0.1, 0.0]),
        ];
        let clean = vec![car(0.5, 0.5, 0.2, 0.2)];
        assert_eq!(CandidateSelection::IouMatched.indices(&clean, &attacked, &p, 0.45), vec![0]);
        assert_eq!(CandidateSelection::AttackedCarOnly.indices(&clean, &attacked, &p, 0.45), vec![1]);
    }
}
