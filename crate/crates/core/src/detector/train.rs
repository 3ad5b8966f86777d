//! Supervised training and held-out scoring of the toy detector.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detection::{iou, postprocess, Detection};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, Adam};

use super::scenes::{SceneObject, SyntheticScene};
use super::toy::{ToyConfig, ToyDetector};
use super::DetectorAdapter;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainHyperparams {
    pub seed: u64,
    pub max_epochs: usize,
    /// Epochs always run before early stopping is considered.
    pub min_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the box regression terms.
    pub coord_weight: f64,
    /// Weight of the objectness term on slots without an object.
    pub noobj_weight: f64,
    /// Non-responsible slots whose box already overlaps a ground truth by
    /// more than this are not pushed toward zero objectness.
    pub ignore_iou: f64,
    /// Held-out precision and recall both have to reach this.
    pub accuracy_floor: f64,
    /// Stop as soon as the floor is met on the held-out set.
    pub early_stop: bool,
}

impl Default for TrainHyperparams {
    fn default() -> Self {
        TrainHyperparams {
            seed: 0,
            max_epochs: 30,
            min_epochs: 10,
            batch_size: 16,
            learning_rate: 3e-3,
            coord_weight: 2.0,
            noobj_weight: 0.5,
            ignore_iou: 0.6,
            accuracy_floor: 0.9,
            early_stop: true,
        }
    }
}

impl TrainHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidArgument("batch size and epoch count must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.accuracy_floor) {
            return Err(Error::InvalidArgument("accuracy floor must lie in [0,1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_name: String,
    pub true_positives: usize,
    pub false_positives: usize,
    pub ground_truth: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorReport {
    pub frames: usize,
    pub precision: f64,
    pub recall: f64,
    pub per_class: Vec<ClassReport>,
    pub epochs_run: usize,
}

impl DetectorReport {
    pub fn meets(&self, floor: f64) -> bool {
        self.precision >= floor && self.recall >= floor
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Greedy class-aware matching at IoU 0.5, highest confidence first.
/// Returns per-class `(tp, fp, gt)`.
pub fn match_detections(dets: &[Detection], truth: &[SceneObject], num_classes: usize) -> Vec<(usize, usize, usize)> {
    let mut counts = vec![(0, 0, 0); num_classes];
    for o in truth {
        counts[o.class_id].2 += 1;
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    let mut used = vec![false; truth.len()];
    for i in order {
        let d = &dets[i];
        let best = truth
            .iter()
            .enumerate()
            .filter(|(j, o)| !used[*j] && o.class_id == d.class_id)
            .map(|(j, o)| (j, iou(&d.bbox, &o.bbox)))
            .filter(|&(_, v)| v >= 0.5)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((j, _)) => {
                used[j] = true;
                counts[d.class_id].0 += 1;
            }
            None => counts[d.class_id].1 += 1,
        }
    }
    counts
}

/// Post-NMS precision and recall over `scenes`.
pub fn evaluate_detector(detector: &dyn DetectorAdapter, scenes: &[SyntheticScene]) -> Result<DetectorReport> {
    let profile = detector.profile();
    let nc = profile.num_classes;
    let mut totals = vec![(0usize, 0usize, 0usize); nc];
    for scene in scenes {
        let cands = detector.forward(&scene.image)?;
        let dets = postprocess(&cands.candidates, profile);
        for (t, c) in totals.iter_mut().zip(match_detections(&dets, &scene.objects, nc)) {
            t.0 += c.0;
            t.1 += c.1;
            t.2 += c.2;
        }
    }
    let tp: usize = totals.iter().map(|t| t.0).sum();
    let fp: usize = totals.iter().map(|t| t.1).sum();
    let gt: usize = totals.iter().map(|t| t.2).sum();
    Ok(DetectorReport {
        frames: scenes.len(),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, gt),
        per_class: totals
            .iter()
            .enumerate()
            .map(|(k, &(tp, fp, gt))| ClassReport {
                class_name: profile.class_name(k).to_string(),
                true_positives: tp,
                false_positives: fp,
                ground_truth: gt,
                precision: ratio(tp, tp + fp),
                recall: ratio(tp, gt),
            })
            .collect(),
        epochs_run: 0,
    })
}

fn shape_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = a.0.min(b.0) * a.1.min(b.1);
    inter / (a.0 * a.1 + b.0 * b.1 - inter)
}

struct Assignment {
    slot: usize,
    cell: usize,
    object: usize,
}

fn assign(config: &ToyConfig, objects: &[SceneObject]) -> Vec<Assignment> {
    let s = config.grid;
    let mut out: Vec<Assignment> = Vec::new();
    for (i, o) in objects.iter().enumerate() {
        let gx = ((o.bbox.cx * s as f64) as usize).min(s - 1);
        let gy = ((o.bbox.cy * s as f64) as usize).min(s - 1);
        let cell = gy * s + gx;
        let slot = (0..config.anchors.len())
            .max_by(|&a, &b| {
                shape_iou(config.anchors[a], (o.bbox.w, o.bbox.h))
                    .total_cmp(&shape_iou(config.anchors[b], (o.bbox.w, o.bbox.h)))
            })
            .expect("at least one anchor");
        out.retain(|a| !(a.cell == cell && a.slot == slot));
        out.push(Assignment { slot, cell, object: i });
    }
    out
}

/// Loss and gradient with respect to the raw head outputs for one frame.
fn head_loss(det: &ToyDetector, raw: &[f64], objects: &[SceneObject], hp: &TrainHyperparams) -> (f64, Vec<f64>) {
    let config = &det.config;
    let s = config.grid;
    let nc = config.num_classes();
    let mut grad = vec![0.0; raw.len()];
    let mut loss = 0.0;
    let bce = |p: f64, t: f64| -(t * p.max(1e-12).ln() + (1.0 - t) * (1.0 - p).max(1e-12).ln());
    let assignments = assign(config, objects);
    let candidates = det.decode(raw);

    for cell in 0..s * s {
        for slot in 0..config.anchors.len() {
            if assignments.iter().any(|a| a.cell == cell && a.slot == slot) {
                continue;
            }
            let n = cell * config.anchors.len() + slot;
            let overlaps = objects
                .iter()
                .any(|o| iou(&candidates[n].bbox, &o.bbox) > hp.ignore_iou);
            if overlaps {
                continue;
            }
            let i = det.raw_index(slot, cell, 4);
            let o = sigmoid(raw[i]);
            loss += hp.noobj_weight * bce(o, 0.0);
            grad[i] += hp.noobj_weight * o;
        }
    }

    for a in &assignments {
        let obj = &objects[a.object];
        let (gy, gx) = (a.cell / s, a.cell % s);
        let (aw, ah) = config.anchors[a.slot];
        let idx = |ch: usize| det.raw_index(a.slot, a.cell, ch);
        // small boxes get a larger regression weight
        let scale = hp.coord_weight * (2.0 - obj.bbox.w * obj.bbox.h);
        let tx = obj.bbox.cx * s as f64 - gx as f64;
        let ty = obj.bbox.cy * s as f64 - gy as f64;
        for (ch, t) in [(0, tx), (1, ty)] {
            let p = sigmoid(raw[idx(ch)]);
            loss += scale * bce(p, t);
            grad[idx(ch)] += scale * (p - t);
        }
        let tw = (obj.bbox.w / aw).ln();
        let th = (obj.bbox.h / ah).ln();
        for (ch, t) in [(2, tw), (3, th)] {
            let d = raw[idx(ch)] - t;
            loss += scale * 0.5 * d * d;
            grad[idx(ch)] += scale * d;
        }
        let o = sigmoid(raw[idx(4)]);
        loss += bce(o, 1.0);
        grad[idx(4)] += o - 1.0;
        for k in 0..nc {
            let t = if k == obj.class_id { 1.0 } else { 0.0 };
            let p = sigmoid(raw[idx(5 + k)]);
            loss += bce(p, t);
            grad[idx(5 + k)] += p - t;
        }
    }
    (loss, grad)
}

fn round_to_f32(det: &mut ToyDetector) {
    for layer in &mut det.net.layers {
        for v in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }
}

fn flatten(det: &ToyDetector) -> Vec<f64> {
    det.net
        .layers
        .iter()
        .flat_map(|l| l.weight.iter().chain(&l.bias).copied())
        .collect()
}

fn unflatten(det: &mut ToyDetector, params: &[f64]) {
    let mut at = 0;
    for l in &mut det.net.layers {
        let nw = l.weight.len();
        l.weight.copy_from_slice(&params[at..at + nw]);
        at += nw;
        let nb = l.bias.len();
        l.bias.copy_from_slice(&params[at..at + nb]);
        at += nb;
    }
}

/// Trains a fresh detector on `train` and scores it on `holdout`.
///
/// Weights are rounded to `f32` after training so a checkpoint round trip
/// reproduces the returned detector exactly. Fails with
/// [`Error::AccuracyFloor`] if the held-out floor is not reached.
pub fn train_toy_detector(
    config: ToyConfig,
    train: &[SyntheticScene],
    holdout: &[SyntheticScene],
    hp: &TrainHyperparams,
) -> Result<(ToyDetector, DetectorReport)> {
    hp.validate()?;
    if train.len() < 200 {
        return Err(Error::Dataset(format!(
            "detector training needs at least 200 scenes, got {}",
            train.len()
        )));
    }
    if holdout.is_empty() {
        return Err(Error::Dataset("held-out set is empty".into()));
    }
    let mut det = ToyDetector::new(config, hp.seed)?;
    let n = det.config.input_size;
    for s in train.iter().chain(holdout) {
        det.check_input(&s.image)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed ^ 0x5eed_0fde_7ec7);
    let mut params = flatten(&det);
    let mut adam = Adam::new(params.len(), hp.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = None;

    for epoch in 0..hp.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hp.batch_size) {
            let mut grads = det.net.zero_grads();
            for &i in batch {
                let scene = &train[i];
                let (raw, trace) = det.net.forward(scene.image.data(), n, n);
                let (_, d_raw) = head_loss(&det, &raw, &scene.objects, hp);
                det.net.backward(&trace, &d_raw, Some(&mut grads), false);
            }
            let k = 1.0 / batch.len() as f64;
            let flat: Vec<f64> = grads
                .iter()
                .flat_map(|g| g.weight.iter().chain(&g.bias).map(|v| v * k))
                .collect();
            adam.update(&mut params, &flat);
            unflatten(&mut det, &params);
        }
        let last = epoch + 1 == hp.max_epochs;
        if (hp.early_stop && epoch + 1 >= hp.min_epochs) || last {
            let mut candidate = det.clone();
            round_to_f32(&mut candidate);
            let mut r = evaluate_detector(&candidate, holdout)?;
            r.epochs_run = epoch + 1;
            if r.meets(hp.accuracy_floor) || last {
                det = candidate;
                report = Some(r);
                break;
            }
        }
    }
    let report = report.expect("final epoch always evaluates");
    if !report.meets(hp.accuracy_floor) {
        return Err(Error::AccuracyFloor {
            precision: report.precision,
            recall: report.recall,
            floor: hp.accuracy_floor,
        });
    }
    Ok((det, report))
}

/// Total training loss of `det` over `scenes` (mean per frame).
pub fn detector_loss(det: &ToyDetector, scenes: &[SyntheticScene], hp: &TrainHyperparams) -> Result<f64> {
    let mut total = 0.0;
    for s in scenes {
        let (raw, _) = det.forward_raw(&s.image)?;
        total += head_loss(det, &raw, &s.objects, hp).0;
    }
    Ok(total / scenes.len().max(1) as f64)
}
