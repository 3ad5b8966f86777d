//! Hand-scripted detector for exercising the attack path with exactly
//! predictable scores.

use crate::detection::{BoundingBox, Candidate, DetectorProfile};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::sigmoid;

use super::{DetectorAdapter, ScoreGradient, TracedForward};

/// Makes one class score of a slot follow the mean intensity of a region:
/// `score = sigmoid(logit(base) + gain * (mean - 0.5))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivity {
    pub class_id: usize,
    pub region: BoundingBox,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockSlot {
    pub bbox: BoundingBox,
    pub objectness: f64,
    pub scores: Vec<f64>,
    pub sensitivity: Option<Sensitivity>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockDetector {
    pub profile: DetectorProfile,
    pub width: usize,
    pub height: usize,
    pub slots: Vec<MockSlot>,
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

impl MockDetector {
    pub fn new(profile: DetectorProfile, width: usize, height: usize, slots: Vec<MockSlot>) -> Result<Self> {
        for s in &slots {
            if s.scores.len() != profile.num_classes {
                return Err(Error::InvalidArgument("mock slot score count differs from class count".into()));
            }
        }
        Ok(MockDetector {
            profile,
            width,
            height,
            slots,
        })
    }

    fn region_pixels(&self, region: &BoundingBox) -> (usize, usize, usize, usize) {
        let (x1, y1, x2, y2) = region.corners();
        let px = |v: f64, n: usize| ((v * n as f64).round().max(0.0) as usize).min(n);
        (px(x1, self.width), px(y1, self.height), px(x2, self.width), px(y2, self.height))
    }

    fn region_mean(&self, image: &Image, region: &BoundingBox) -> (f64, usize) {
        let (x0, y0, x1, y1) = self.region_pixels(region);
        let mut sum = 0.0;
        let mut n = 0;
        for c in 0..3 {
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += image.get(c, y, x);
                    n += 1;
                }
            }
        }
        (if n == 0 { 0.0 } else { sum / n as f64 }, n)
    }
}

impl DetectorAdapter for MockDetector {
    fn profile(&self) -> &DetectorProfile {
        &self.profile
    }

    fn input_size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn candidate_count(&self) -> usize {
        self.slots.len()
    }

    fn forward_traced(&self, image: &Image) -> Result<TracedForward> {
        self.check_input(image)?;
        let candidates = self
            .slots
            .iter()
            .map(|slot| {
                let mut scores = slot.scores.clone();
                if let Some(s) = &slot.sensitivity {
                    let (mean, _) = self.region_mean(image, &s.region);
                    scores[s.class_id] = sigmoid(logit(slot.scores[s.class_id]) + s.gain * (mean - 0.5));
                }
                Candidate {
                    bbox: slot.bbox,
                    objectness: slot.objectness,
                    class_scores: scores,
                }
            })
            .collect();
        Ok(TracedForward::new(candidates, Box::new(())))
    }

    fn backward(&self, traced: &TracedForward, grads: &[ScoreGradient]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; 3 * self.width * self.height];
        for ((slot, cand), g) in self.slots.iter().zip(&traced.candidates).zip(grads) {
            let Some(s) = &slot.sensitivity else { continue };
            let score = cand.class_scores[s.class_id];
            let (x0, y0, x1, y1) = self.region_pixels(&s.region);
            let n = 3 * (x1 - x0) * (y1 - y0);
            if n == 0 {
                continue;
            }
            let d = g.class_scores[s.class_id] * score * (1.0 - score) * s.gain / n as f64;
            for c in 0..3 {
                for y in y0..y1 {
                    for x in x0..x1 {
                        out[(c * self.height + y) * self.width + x] += d;
                    }
                }
            }
        }
        Ok(out)
    }
}
