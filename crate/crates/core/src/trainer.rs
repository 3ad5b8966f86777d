//! Patch optimization: per step, every frame of a batch is patched on its
//! clean-frame cars, run through each detector, and the patch moves down the
//! gradient of the averaged label-switch loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augmentation::{AugmentDraw, AugmentationRanges};
use crate::detection::{confidence_filter_indices, postprocess, Candidate, Detection, DetectorProfile};
use crate::detector::{DetectorAdapter, ScoreGradient};
use crate::error::{Error, Result};
use crate::image::{Image, Patch};
use crate::losses::{detection_terms, tv_with_grad, LossWeights};
use crate::matching::CandidateSelection;
use crate::nn::Adam;
use crate::projection::{make_placement, select_target_objects, CompositeMap, ProjectionParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub projection: ProjectionParams,
    pub augmentation: AugmentationRanges,
    pub weights: LossWeights,
    pub t_conf: f64,
    pub t_iou: f64,
    /// IoU used to match attacked detections to patched objects when
    /// scoring.
    pub eval_iou: f64,
    pub target_class: String,
    pub patch_size: usize,
    pub learning_rate: f64,
    pub iterations: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub candidate_selection: CandidateSelection,
    /// Steps between state checkpoints; 0 disables them.
    pub checkpoint_every: u64,
    /// Detector checkpoint paths; the command line may supply them instead.
    pub models: Vec<String>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            projection: ProjectionParams::default(),
            augmentation: AugmentationRanges::default(),
            weights: LossWeights::default(),
            t_conf: 0.25,
            t_iou: 0.45,
            eval_iou: 0.45,
            target_class: "bus".into(),
            patch_size: 300,
            learning_rate: 0.01,
            iterations: 1000,
            batch_size: 8,
            seed: 0,
            candidate_selection: CandidateSelection::IouMatched,
            checkpoint_every: 0,
            models: Vec::new(),
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.projection.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.augmentation.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.weights.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.t_conf >= 0.0 && self.t_conf < 1.0) {
            return bad(format!("t_conf must lie in [0,1), got {}", self.t_conf));
        }
        if !(self.t_iou > 0.0 && self.t_iou <= 1.0) {
            return bad(format!("t_iou must lie in (0,1], got {}", self.t_iou));
        }
        if !(self.eval_iou > 0.0 && self.eval_iou <= 1.0) {
            return bad(format!("eval_iou must lie in (0,1], got {}", self.eval_iou));
        }
        if self.patch_size < 8 {
            return bad(format!("patch_size must be at least 8, got {}", self.patch_size));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.target_class.is_empty() {
            return bad("target_class is empty".into());
        }
        Ok(())
    }

    /// Checks the detectors against the config and returns one view per
    /// detector with the configured thresholds applied.
    pub fn bind<'a>(&self, adapters: &[&'a dyn DetectorAdapter]) -> Result<Vec<BoundAdapter<'a>>> {
        self.validate()?;
        let Some(first) = adapters.first() else {
            return Err(Error::Config("at least one detector is required".into()));
        };
        let car_name = first.profile().class_name(first.profile().car_class).to_string();
        let size = first.input_size();
        adapters
            .iter()
            .enumerate()
            .map(|(k, &adapter)| {
                let profile = adapter.profile().with_thresholds(self.t_conf, self.t_iou);
                if profile.class_name(profile.car_class) != car_name {
                    return Err(Error::Config(format!(
                        "detector {k} calls its car class {:?}, detector 0 calls it {car_name:?}",
                        profile.class_name(profile.car_class)
                    )));
                }
                let target = profile.class_index(&self.target_class).ok_or_else(|| {
                    Error::Config(format!("detector {k} has no class named {:?}", self.target_class))
                })?;
                if target == profile.car_class {
                    return Err(Error::Config("target class must differ from the car class".into()));
                }
                if adapter.input_size() != size {
                    return Err(Error::Config(format!("detector {k} expects a different input size")));
                }
                Ok(BoundAdapter {
                    adapter,
                    profile,
                    target,
                })
            })
            .collect()
    }
}

/// A detector together with the thresholds and target index used against it.
#[derive(Clone)]
pub struct BoundAdapter<'a> {
    pub adapter: &'a dyn DetectorAdapter,
    pub profile: DetectorProfile,
    pub target: usize,
}

impl BoundAdapter<'_> {
    pub fn detect(&self, frame: &Image) -> Result<Vec<Detection>> {
        Ok(postprocess(&self.adapter.forward(frame)?.candidates, &self.profile))
    }
}

/// Uniform random patch, the same distribution as the trainer's starting
/// point.
pub fn make_random_patch(patch_size: usize, seed: u64) -> Result<Patch> {
    Patch::random(patch_size, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossStats {
    pub steps: u64,
    pub last: f64,
    pub mean: f64,
    pub min: f64,
}

impl LossStats {
    fn push(&mut self, loss: f64) {
        self.steps += 1;
        self.last = loss;
        self.mean += (loss - self.mean) / self.steps as f64;
        self.min = if self.steps == 1 { loss } else { self.min.min(loss) };
    }
}

/// Everything needed to continue an attack exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub patch: Patch,
    pub iteration: u64,
    pub stats: LossStats,
    pub rng: ChaCha8Rng,
    pub optimizer: Adam,
    /// Current pass over the training frames and the position in it.
    pub order: Vec<u32>,
    pub cursor: usize,
}

impl TrainState {
    pub fn new(config: &AttackConfig) -> Result<Self> {
        config.validate()?;
        let patch = make_random_patch(config.patch_size, config.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(config.augmentation.seed);
        let len = patch.pixels().len();
        Ok(TrainState {
            patch,
            iteration: 0,
            stats: LossStats::default(),
            rng,
            optimizer: Adam::new(len, config.learning_rate),
            order: Vec::new(),
            cursor: 0,
        })
    }

    /// Next `batch` frame indices; a new shuffled pass starts whenever the
    /// current one runs out.
    pub fn next_batch(&mut self, frame_count: usize, batch: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(batch);
        while out.len() < batch.min(frame_count) {
            if self.cursor >= self.order.len() {
                self.order = (0..frame_count as u32).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor] as usize);
            self.cursor += 1;
        }
        out
    }
}

/// Loss value and patch gradient for fixed frames and augmentation draws.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub loss: f64,
    /// Mean detection term per detector, before the TV term is added.
    pub detection_per_adapter: Vec<f64>,
    pub tv: f64,
    pub gradient: Vec<f64>,
    pub patched_objects: usize,
    pub relevant_candidates: usize,
}

impl Objective {
    /// The loss one detector alone would report for the same inputs.
    pub fn adapter_loss(&self, k: usize, weights: &LossWeights) -> f64 {
        self.detection_per_adapter[k] + weights.lambda2 * self.tv
    }
}

/// Clean-frame car objects that received a non-degenerate placement, and
/// the map that writes the patch onto all of them.
pub fn plan_frame(
    bound: &BoundAdapter,
    frame: &Image,
    projection: &ProjectionParams,
    patch_size: usize,
) -> Result<(Vec<Detection>, CompositeMap)> {
    let clean = bound.detect(frame)?;
    let selected = select_target_objects(&clean, &bound.profile, projection);
    let mut map = CompositeMap::new(frame.width(), frame.height(), patch_size);
    let mut kept = Vec::with_capacity(selected.len());
    for object in selected {
        match map.add(&make_placement(&object, projection)) {
            Ok(_) => kept.push(object),
            Err(Error::DegeneratePlacement) => {}
            Err(e) => return Err(e),
        }
    }
    Ok((kept, map))
}

/// Evaluates the averaged loss and its gradient with respect to the patch
/// values (row-major interleaved RGB). Frames without patched cars count as
/// zero detection loss; the TV term is added once.
pub fn attack_objective(
    patch_values: &[f64],
    frames: &[&Image],
    bound: &[BoundAdapter],
    draws: &[AugmentDraw],
    config: &AttackConfig,
) -> Result<Objective> {
    let p = config.patch_size;
    if patch_values.len() != p * p * 3 || draws.len() != frames.len() {
        return Err(Error::InvalidArgument("patch, frame and draw counts disagree".into()));
    }
    if frames.is_empty() || bound.is_empty() {
        return Err(Error::InvalidArgument("need at least one frame and one detector".into()));
    }
    let w = &config.weights;
    let scale = 1.0 / frames.len() as f64;
    let mut gradient = vec![0.0; patch_values.len()];
    let mut per_adapter = vec![0.0; bound.len()];
    let mut patched_objects = 0;
    let mut relevant_total = 0;

    for (frame, draw) in frames.iter().zip(draws) {
        for b in bound {
            b.adapter.check_input(frame)?;
        }
        let augmented = draw.apply(patch_values);
        let mut aug_grad = vec![0.0; patch_values.len()];
        let mut touched = false;
        for (k, b) in bound.iter().enumerate() {
            let (objects, map) = plan_frame(b, frame, &config.projection, p)?;
            if objects.is_empty() {
                continue;
            }
            patched_objects += objects.len();
            let attacked = map.apply(frame, &augmented)?;
            let traced = b.adapter.forward_traced(&attacked)?;
            let filtered = confidence_filter_indices(&traced.candidates, &b.profile);
            let pool: Vec<Candidate> = filtered.iter().map(|&i| traced.candidates[i].clone()).collect();
            let chosen = config
                .candidate_selection
                .indices(&objects, &pool, &b.profile, b.profile.t_iou);
            if chosen.is_empty() {
                continue;
            }
            relevant_total += chosen.len();
            let relevant: Vec<Candidate> = chosen.iter().map(|&j| pool[j].clone()).collect();
            let terms = detection_terms(&relevant, &b.profile, b.target);
            per_adapter[k] += scale * (w.lambda1 * terms.decrease_car + (1.0 - w.lambda1) * terms.increase_target);

            let g_scale = scale / bound.len() as f64;
            let mut grads = vec![ScoreGradient::zeros(b.profile.num_classes); traced.candidates.len()];
            for (j, &pj) in chosen.iter().enumerate() {
                let g = &mut grads[filtered[pj]].class_scores;
                g[b.profile.car_class] += g_scale * w.lambda1 * terms.d_car[j];
                g[b.target] += g_scale * (1.0 - w.lambda1) * terms.d_target[j];
            }
            let frame_grad = b.adapter.backward(&traced, &grads)?;
            map.backward(&frame_grad, &mut aug_grad);
            touched = true;
        }
        if touched {
            for (g, d) in gradient.iter_mut().zip(draw.backward(patch_values, &aug_grad)) {
                *g += d;
            }
        }
    }

    let mut tv_grad = vec![0.0; patch_values.len()];
    let tv = tv_with_grad(patch_values, p, Some(&mut tv_grad));
    for (g, t) in gradient.iter_mut().zip(&tv_grad) {
        *g += w.lambda2 * t;
    }
    let detection = per_adapter.iter().sum::<f64>() / bound.len() as f64;
    Ok(Objective {
        loss: detection + w.lambda2 * tv,
        detection_per_adapter: per_adapter,
        tv,
        gradient,
        patched_objects,
        relevant_candidates: relevant_total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub iteration: u64,
    pub loss: f64,
    pub adapter_losses: Vec<f64>,
    pub tv: f64,
    pub patched_objects: usize,
    pub relevant_candidates: usize,
}

/// One optimizer step on `frames`. Draws one augmentation per frame from
/// the state's generator (shared by all detectors), then applies Adam and
/// clamps the patch to `[0,1]`.
pub fn attack_step(
    mut state: TrainState,
    frames: &[&Image],
    adapters: &[&dyn DetectorAdapter],
    config: &AttackConfig,
) -> Result<(TrainState, StepReport)> {
    let bound = config.bind(adapters)?;
    let mut values = state.patch.as_f64();
    if values.len() != config.patch_size * config.patch_size * 3 {
        return Err(Error::Config(format!(
            "state holds a {0}x{0} patch but the config asks for {1}x{1}",
            state.patch.size(),
            config.patch_size
        )));
    }
    let draws: Vec<AugmentDraw> = frames
        .iter()
        .map(|_| config.augmentation.draw(values.len(), &mut state.rng))
        .collect();
    let obj = attack_objective(&values, frames, &bound, &draws, config)?;
    let iteration = state.iteration;
    if !obj.loss.is_finite() || obj.gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss {
            iteration,
            detail: format!(
                "loss {} (tv {}, per detector {:?})",
                obj.loss, obj.tv, obj.detection_per_adapter
            ),
        });
    }
    state.optimizer.lr = config.learning_rate;
    state.optimizer.update(&mut values, &obj.gradient);
    state.patch.assign_clamped(&values);
    state.iteration += 1;
    state.stats.push(obj.loss);
    let report = StepReport {
        iteration,
        loss: obj.loss,
        adapter_losses: (0..bound.len()).map(|k| obj.adapter_loss(k, &config.weights)).collect(),
        tv: obj.tv,
        patched_objects: obj.patched_objects,
        relevant_candidates: obj.relevant_candidates,
    };
    Ok((state, report))
}

/// Runs steps until `config.iterations` is reached, calling `on_step` after
/// each one (for logging and checkpoints).
pub fn continue_training(
    mut state: TrainState,
    config: &AttackConfig,
    frames: &[Image],
    adapters: &[&dyn DetectorAdapter],
    mut on_step: impl FnMut(&TrainState, &StepReport) -> Result<()>,
) -> Result<TrainState> {
    if frames.is_empty() {
        return Err(Error::Dataset("no training frames".into()));
    }
    config.bind(adapters)?;
    while state.iteration < config.iterations {
        let batch: Vec<&Image> = state
            .next_batch(frames.len(), config.batch_size)
            .into_iter()
            .map(|i| &frames[i])
            .collect();
        let (next, report) = attack_step(state, &batch, adapters, config)?;
        state = next;
        on_step(&state, &report)?;
    }
    Ok(state)
}

pub fn train_patch(config: &AttackConfig, frames: &[Image], adapters: &[&dyn DetectorAdapter]) -> Result<Patch> {
    let state = TrainState::new(config)?;
    Ok(continue_training(state, config, frames, adapters, |_, _| Ok(()))?.patch)
}
