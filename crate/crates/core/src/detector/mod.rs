//! The contract a detector must satisfy to be attacked, plus a self-contained
//! grid detector and synthetic traffic scenes to train it on.

use std::any::Any;

use crate::detection::{Candidate, DetectorProfile};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::matching::{CandidateSet, Origin, Stage};

pub mod checkpoint;
pub mod mock;
pub mod scenes;
pub mod toy;
pub mod train;

pub use mock::MockDetector;
pub use scenes::{generate_scenes, SceneObject, SceneParams, SyntheticScene};
pub use toy::{ToyConfig, ToyDetector};
pub use train::{evaluate_detector, train_toy_detector, ClassReport, DetectorReport, TrainHyperparams};

/// Gradient of some scalar with respect to one candidate's scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGradient {
    pub objectness: f64,
    pub class_scores: Vec<f64>,
}

impl ScoreGradient {
    pub fn zeros(num_classes: usize) -> Self {
        ScoreGradient {
            objectness: 0.0,
            class_scores: vec![0.0; num_classes],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.objectness == 0.0 && self.class_scores.iter().all(|&g| g == 0.0)
    }
}

/// A forward pass that kept what its backward pass needs.
pub struct TracedForward {
    pub candidates: Vec<Candidate>,
    pub(crate) tape: Box<dyn Any + Send + Sync>,
}

impl TracedForward {
    pub fn new(candidates: Vec<Candidate>, tape: Box<dyn Any + Send + Sync>) -> Self {
        TracedForward { candidates, tape }
    }

    pub fn tape<T: 'static>(&self) -> Option<&T> {
        self.tape.downcast_ref()
    }
}

/// Anything that maps a frame to a fixed-size pool of pre-NMS candidates
/// whose scores are differentiable with respect to the frame pixels.
pub trait DetectorAdapter: Send + Sync {
    fn profile(&self) -> &DetectorProfile;

    /// Expected `(width, height)` of input frames.
    fn input_size(&self) -> (usize, usize);

    /// Number of candidates produced per frame.
    fn candidate_count(&self) -> usize;

    fn forward_traced(&self, image: &Image) -> Result<TracedForward>;

    /// Gradient with respect to the input pixels (planar, same layout as
    /// [`Image`]) given one score gradient per candidate.
    fn backward(&self, traced: &TracedForward, grads: &[ScoreGradient]) -> Result<Vec<f64>>;

    fn forward(&self, image: &Image) -> Result<CandidateSet> {
        Ok(CandidateSet::new(
            self.forward_traced(image)?.candidates,
            Origin::Clean,
            Stage::PreNms,
        ))
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        let (w, h) = self.input_size();
        if image.width() != w || image.height() != h {
            return Err(Error::SizeMismatch {
                expected_w: w,
                expected_h: h,
                got_w: image.width(),
                got_h: image.height(),
            });
        }
        Ok(())
    }
}
