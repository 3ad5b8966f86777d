//! Single-scale YOLO-style grid detector.
//!
//! An `S x S` grid where each cell predicts `B` boxes relative to fixed
//! anchors. Per box the head emits `tx, ty, tw, th, objectness` followed by
//! one logit per class; objectness and class scores are independent
//! sigmoids, so a candidate's confidence is `objectness * class score`.

use crate::detection::{BoundingBox, Candidate, DetectorProfile};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{sigmoid, Conv2d, ConvNet, NetTrace};

use super::{DetectorAdapter, ScoreGradient, TracedForward};

pub const DEFAULT_CLASSES: [&str; 4] = ["car", "bus", "truck", "person"];

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    /// Side of the square input frame in pixels.
    pub input_size: usize,
    pub grid: usize,
    /// `(w, h)` anchor shapes in frame fractions; one per box slot.
    pub anchors: Vec<(f64, f64)>,
    /// Backbone channel widths; the first `log2(input_size / grid)` layers
    /// have stride 2.
    pub widths: Vec<usize>,
    pub class_names: Vec<String>,
    pub car_class: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            input_size: 104,
            grid: 13,
            anchors: vec![(0.20, 0.14), (0.24, 0.30)],
            widths: vec![12, 24, 32, 48, 48],
            class_names: DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
            car_class: 0,
        }
    }
}

impl ToyConfig {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn boxes_per_cell(&self) -> usize {
        self.anchors.len()
    }

    /// Head channels per box slot.
    pub fn slot_channels(&self) -> usize {
        5 + self.num_classes()
    }

    pub fn downsampling_layers(&self) -> Result<usize> {
        if self.grid == 0 || !self.input_size.is_multiple_of(self.grid) {
            return Err(Error::InvalidArgument(format!(
                "input size {} is not a multiple of grid {}",
                self.input_size, self.grid
            )));
        }
        let factor = self.input_size / self.grid;
        if !factor.is_power_of_two() {
            return Err(Error::InvalidArgument(format!("downsampling factor {factor} is not a power of two")));
        }
        Ok(factor.trailing_zeros() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let downs = self.downsampling_layers()?;
        if self.widths.len() < downs.max(1) {
            return Err(Error::InvalidArgument(format!(
                "{} backbone layers cannot downsample {} times",
                self.widths.len(),
                downs
            )));
        }
        if self.anchors.is_empty() || self.anchors.iter().any(|&(w, h)| !(w > 0.0 && h > 0.0)) {
            return Err(Error::InvalidArgument("anchors must have positive sizes".into()));
        }
        if self.num_classes() < 3 {
            return Err(Error::InvalidArgument("the toy detector needs at least three classes".into()));
        }
        DetectorProfile::new(self.class_names.clone(), self.car_class, 0.25, 0.45)?;
        Ok(())
    }

    pub fn build_net(&self) -> Result<ConvNet> {
        self.validate()?;
        let downs = self.downsampling_layers()?;
        let mut layers = Vec::new();
        let mut in_ch = 3;
        for (i, &w) in self.widths.iter().enumerate() {
            let stride = if i < downs { 2 } else { 1 };
            layers.push(Conv2d::new(in_ch, w, 3, stride, 1));
            in_ch = w;
        }
        layers.push(Conv2d::new(in_ch, self.boxes_per_cell() * self.slot_channels(), 1, 1, 0));
        Ok(ConvNet { layers })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDetector {
    pub config: ToyConfig,
    pub profile: DetectorProfile,
    pub net: ConvNet,
}

pub(crate) struct ToyTape {
    pub(crate) trace: NetTrace,
    pub(crate) raw: Vec<f64>,
}

const LOG_SCALE_LIMIT: f64 = 4.0;

impl ToyDetector {
    /// Freshly initialized (untrained) detector.
    pub fn new(config: ToyConfig, seed: u64) -> Result<Self> {
        let mut net = config.build_net()?;
        net.init(seed);
        // start with a low objectness and class prior so an untrained model
        // reports nothing
        let head = net.layers.last_mut().expect("head layer");
        let slot = config.slot_channels();
        for b in 0..config.boxes_per_cell() {
            head.bias[b * slot + 4] = -4.0;
            for k in 5..slot {
                head.bias[b * slot + k] = -2.0;
            }
        }
        let profile = DetectorProfile::new(config.class_names.clone(), config.car_class, 0.25, 0.45)?;
        Ok(ToyDetector { config, profile, net })
    }

    pub fn from_parts(config: ToyConfig, net: ConvNet) -> Result<Self> {
        let expected = config.build_net()?;
        if expected.layers.len() != net.layers.len()
            || expected
                .layers
                .iter()
                .zip(&net.layers)
                .any(|(a, b)| (a.in_ch, a.out_ch, a.kernel, a.stride, a.pad) != (b.in_ch, b.out_ch, b.kernel, b.stride, b.pad))
        {
            return Err(Error::InvalidArgument("network layers do not match the detector configuration".into()));
        }
        let profile = DetectorProfile::new(config.class_names.clone(), config.car_class, 0.25, 0.45)?;
        Ok(ToyDetector { config, profile, net })
    }

    /// Replaces the profile thresholds used by downstream filtering.
    pub fn with_thresholds(mut self, t_conf: f64, t_iou: f64) -> Self {
        self.profile = self.profile.with_thresholds(t_conf, t_iou);
        self
    }

    pub(crate) fn forward_raw(&self, image: &Image) -> Result<(Vec<f64>, NetTrace)> {
        self.check_input(image)?;
        let n = self.config.input_size;
        Ok(self.net.forward(image.data(), n, n))
    }

    #[inline]
    pub(crate) fn raw_index(&self, slot: usize, cell: usize, channel: usize) -> usize {
        let s2 = self.config.grid * self.config.grid;
        (slot * self.config.slot_channels() + channel) * s2 + cell
    }

    pub(crate) fn decode(&self, raw: &[f64]) -> Vec<Candidate> {
        let s = self.config.grid;
        let nc = self.config.num_classes();
        let mut out = Vec::with_capacity(self.candidate_count());
        for cell in 0..s * s {
            let (gy, gx) = (cell / s, cell % s);
            for (b, &(aw, ah)) in self.config.anchors.iter().enumerate() {
                let at = |ch: usize| raw[self.raw_index(b, cell, ch)];
                let cx = (gx as f64 + sigmoid(at(0))) / s as f64;
                let cy = (gy as f64 + sigmoid(at(1))) / s as f64;
                let w = (aw * at(2).clamp(-LOG_SCALE_LIMIT, LOG_SCALE_LIMIT).exp()).min(1.0);
                let h = (ah * at(3).clamp(-LOG_SCALE_LIMIT, LOG_SCALE_LIMIT).exp()).min(1.0);
                out.push(Candidate {
                    bbox: BoundingBox { cx, cy, w, h },
                    objectness: sigmoid(at(4)),
                    class_scores: (0..nc).map(|k| sigmoid(at(5 + k))).collect(),
                });
            }
        }
        out
    }

    /// `(cell, slot)` of candidate `index`.
    pub fn candidate_location(&self, index: usize) -> (usize, usize) {
        let b = self.config.boxes_per_cell();
        (index / b, index % b)
    }
}

impl DetectorAdapter for ToyDetector {
    fn profile(&self) -> &DetectorProfile {
        &self.profile
    }

    fn input_size(&self) -> (usize, usize) {
        (self.config.input_size, self.config.input_size)
    }

    fn candidate_count(&self) -> usize {
        self.config.grid * self.config.grid * self.config.boxes_per_cell()
    }

    fn forward_traced(&self, image: &Image) -> Result<TracedForward> {
        let (raw, trace) = self.forward_raw(image)?;
        let candidates = self.decode(&raw);
        Ok(TracedForward::new(candidates, Box::new(ToyTape { trace, raw })))
    }

    fn backward(&self, traced: &TracedForward, grads: &[ScoreGradient]) -> Result<Vec<f64>> {
        let tape: &ToyTape = traced
            .tape()
            .ok_or_else(|| Error::InvalidArgument("trace was not produced by this detector".into()))?;
        if grads.len() != traced.candidates.len() {
            return Err(Error::InvalidArgument(format!(
                "{} score gradients for {} candidates",
                grads.len(),
                traced.candidates.len()
            )));
        }
        let mut d_raw = vec![0.0; tape.raw.len()];
        for (n, (g, c)) in grads.iter().zip(&traced.candidates).enumerate() {
            if g.is_zero() {
                continue;
            }
            let (cell, slot) = self.candidate_location(n);
            let o = c.objectness;
            d_raw[self.raw_index(slot, cell, 4)] += g.objectness * o * (1.0 - o);
            for (k, (&gk, &sk)) in g.class_scores.iter().zip(&c.class_scores).enumerate() {
                d_raw[self.raw_index(slot, cell, 5 + k)] += gk * sk * (1.0 - sk);
            }
        }
        Ok(self
            .net
            .backward(&tape.trace, &d_raw, None, true)
            .expect("input gradient requested"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ToyDetector {
        let config = ToyConfig {
            input_size: 16,
            grid: 4,
            widths: vec![4, 6, 6],
            ..ToyConfig::default()
        };
        ToyDetector::new(config, 3).unwrap()
    }

    #[test]
    fn candidate_count_matches_grid() {
        let det = ToyDetector::new(ToyConfig::default(), 1).unwrap();
        let img = Image::filled(104, 104, [0.4, 0.4, 0.4]);
        let set = det.forward(&img).unwrap();
        assert_eq!(set.len(), 13 * 13 * 2);
        assert_eq!(det.candidate_count(), 338);
        for c in &set.candidates {
            assert!((0.0..=1.0).contains(&c.objectness));
            assert!(c.class_scores.iter().all(|s| (0.0..=1.0).contains(s)));
            assert_eq!(c.class_scores.len(), 4);
            assert!(c.bbox.is_valid());
        }
    }

    #[test]
    fn wrong_size_is_rejected() {
        let det = tiny();
        let err = det.forward(&Image::new(15, 16)).unwrap_err();
        assert!(matches!(err, Error::SizeMismatch { .. }));
    }

    #[test]
    fn config_validation() {
        let bad = ToyConfig {
            input_size: 100,
            ..ToyConfig::default()
        };
        assert!(bad.validate().is_err());
        let few = ToyConfig {
            widths: vec![8, 8],
            ..ToyConfig::default()
        };
        assert!(few.validate().is_err());
    }

    #[test]
    fn score_gradient_matches_finite_differences() {
        let det = tiny();
        let img_data: Vec<f64> = (0..3 * 16 * 16).map(|i| ((i * 17) % 29) as f64 / 29.0).collect();
        let img = Image::from_planar(16, 16, img_data).unwrap();
        let traced = det.forward_traced(&img).unwrap();
        let nc = det.profile.num_classes;
        let grads: Vec<ScoreGradient> = (0..traced.candidates.len())
            .map(|n| ScoreGradient {
                objectness: (n % 3) as f64 - 1.0,
                class_scores: (0..nc).map(|k| ((n + k) % 5) as f64 - 2.0).collect(),
            })
            .collect();
        let objective = |im: &Image| -> f64 {
            det.forward(im)
                .unwrap()
                .candidates
                .iter()
                .zip(&grads)
                .map(|(c, g)| {
                    c.objectness * g.objectness
                        + c.class_scores.iter().zip(&g.class_scores).map(|(a, b)| a * b).sum::<f64>()
                })
                .sum()
        };
        let analytic = det.backward(&traced, &grads).unwrap();
        let h = 1e-5;
        for i in (0..img.data().len()).step_by(5) {
            let mut a = img.clone();
            a.data_mut()[i] += h;
            let mut b = img.clone();
            b.data_mut()[i] -= h;
            let fd = (objective(&a) - objective(&b)) / (2.0 * h);
            assert!((fd - analytic[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", analytic[i]);
        }
    }
}
