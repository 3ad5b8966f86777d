//! Label-switch success rate and double-detection rate of a patch, plus
//! annotated renders of attacked frames.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detection::{iou, Detection};
use crate::detector::DetectorAdapter;
use crate::error::{Error, Result};
use crate::image::{Image, Patch};
use crate::trainer::{plan_frame, AttackConfig, BoundAdapter};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// What the attacked frame's final detections say about one patched car.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectOutcome {
    pub source: Detection,
    pub matched_target: bool,
    pub matched_car: bool,
}

impl ObjectOutcome {
    pub fn double_detection(&self) -> bool {
        self.matched_target && self.matched_car
    }
}

pub fn evaluate_object(source: &Detection, attacked_final: &[Detection], target: usize, car: usize, t_iou: f64) -> ObjectOutcome {
    let hit = |class: usize| {
        attacked_final
            .iter()
            .any(|d| d.class_id == class && iou(&source.bbox, &d.bbox) >= t_iou)
    };
    ObjectOutcome {
        source: source.clone(),
        matched_target: hit(target),
        matched_car: hit(car),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameBreakdown {
    pub frame: usize,
    pub patched_objects: usize,
    pub switched: usize,
    pub double_detections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    /// Set when no object was patched; both percentages are then 0.
    pub empty: bool,
    pub target_class: String,
    pub total_patched_objects: usize,
    pub switched_objects: usize,
    pub double_detections: usize,
    /// Objects with a target-class detection, whether or not a car
    /// detection survives next to it.
    pub c_t_percent: f64,
    pub double_detection_percent: f64,
    pub frames: Vec<FrameBreakdown>,
    pub config: Option<AttackConfig>,
    pub seed: Option<u64>,
}

impl MetricsReport {
    /// Checks the documented invariants; used when reading reports back.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("metrics report: {m}")));
        if self.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::VersionMismatch {
                kind: "metrics report",
                found: self.schema_version,
                expected: REPORT_SCHEMA_VERSION,
            });
        }
        for p in [self.c_t_percent, self.double_detection_percent] {
            if !(0.0..=100.0).contains(&p) {
                return bad("percentage outside [0,100]");
            }
        }
        let sum = |f: fn(&FrameBreakdown) -> usize| self.frames.iter().map(f).sum::<usize>();
        if sum(|f| f.patched_objects) != self.total_patched_objects
            || sum(|f| f.switched) != self.switched_objects
            || sum(|f| f.double_detections) != self.double_detections
        {
            return bad("per-frame counts do not add up to the totals");
        }
        if self.switched_objects > self.total_patched_objects || self.double_detections > self.switched_objects {
            return bad("inconsistent counts");
        }
        if self.empty != (self.total_patched_objects == 0) {
            return bad("empty flag disagrees with the object count");
        }
        Ok(())
    }
}

fn percent(n: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * n as f64 / total as f64
    }
}

/// Aggregates per-frame outcome lists (one list per frame).
pub fn compute_metrics(frames: &[Vec<ObjectOutcome>], target_class: &str) -> MetricsReport {
    let breakdown: Vec<FrameBreakdown> = frames
        .iter()
        .enumerate()
        .map(|(i, outcomes)| FrameBreakdown {
            frame: i,
            patched_objects: outcomes.len(),
            switched: outcomes.iter().filter(|o| o.matched_target).count(),
            double_detections: outcomes.iter().filter(|o| o.double_detection()).count(),
        })
        .collect();
    let total: usize = breakdown.iter().map(|f| f.patched_objects).sum();
    let switched: usize = breakdown.iter().map(|f| f.switched).sum();
    let double: usize = breakdown.iter().map(|f| f.double_detections).sum();
    MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        empty: total == 0,
        target_class: target_class.to_string(),
        total_patched_objects: total,
        switched_objects: switched,
        double_detections: double,
        c_t_percent: percent(switched, total),
        double_detection_percent: percent(double, total),
        frames: breakdown,
        config: None,
        seed: None,
    }
}

/// Clean pass, placement on every eligible car, attacked pass, NMS.
/// Returns the patched objects and the attacked frame's final detections.
fn attack_frame(
    bound: &BoundAdapter,
    frame: &Image,
    patch_values: &[f64],
    config: &AttackConfig,
) -> Result<(Vec<Detection>, Image, Vec<Detection>)> {
    let (objects, map) = plan_frame(bound, frame, &config.projection, config.patch_size)?;
    if objects.is_empty() {
        return Ok((objects, frame.clone(), bound.detect(frame)?));
    }
    let attacked = map.apply(frame, patch_values)?;
    let dets = bound.detect(&attacked)?;
    Ok((objects, attacked, dets))
}

fn bind_for_eval<'a>(patch: &Patch, adapter: &'a dyn DetectorAdapter, config: &AttackConfig) -> Result<BoundAdapter<'a>> {
    if patch.size() != config.patch_size {
        return Err(Error::Config(format!(
            "patch is {0}x{0} but the config says patch_size = {1}",
            patch.size(),
            config.patch_size
        )));
    }
    Ok(config.bind(&[adapter])?.remove(0))
}

/// Scores `patch` on `frames` without any augmentation. Outcomes are matched
/// at `config.eval_iou`.
pub fn run_evaluation(
    patch: &Patch,
    frames: &[Image],
    adapter: &dyn DetectorAdapter,
    config: &AttackConfig,
) -> Result<MetricsReport> {
    let bound = bind_for_eval(patch, adapter, config)?;
    let values = patch.as_f64();
    let car = bound.profile.car_class;
    let mut per_frame = Vec::with_capacity(frames.len());
    for frame in frames {
        let (objects, _, dets) = attack_frame(&bound, frame, &values, config)?;
        per_frame.push(
            objects
                .iter()
                .map(|o| evaluate_object(o, &dets, bound.target, car, config.eval_iou))
                .collect(),
        );
    }
    let mut report = compute_metrics(&per_frame, &config.target_class);
    report.config = Some(config.clone());
    report.seed = Some(config.seed);
    Ok(report)
}

/// Fixed per-class outline colors; classes past the table cycle.
const PALETTE: [[u8; 3]; 6] = [
    [255, 64, 64],
    [255, 220, 0],
    [0, 200, 255],
    [200, 0, 255],
    [0, 255, 96],
    [255, 140, 0],
];

pub fn class_color(class_id: usize) -> [u8; 3] {
    PALETTE[class_id % PALETTE.len()]
}

/// Inclusive pixel corners `(x0, y0, x1, y1)` of the outline drawn for a
/// detection.
pub fn outline_rect(d: &Detection, width: usize, height: usize) -> (usize, usize, usize, usize) {
    let (x1, y1, x2, y2) = d.bbox.corners();
    let px = |v: f64, n: usize| (v * n as f64).round().clamp(0.0, n as f64) as usize;
    let lo = |v: f64, n: usize| px(v, n).min(n - 1);
    let hi = |v: f64, n: usize| px(v, n).saturating_sub(1).min(n - 1);
    let (a, b) = (lo(x1, width), hi(x2, width).max(lo(x1, width)));
    let (c, e) = (lo(y1, height), hi(y2, height).max(lo(y1, height)));
    (a, c, b, e)
}

/// 3x5 glyphs, one row per nibble (bit 2 is the left column).
fn glyph(ch: char) -> Option<[u8; 5]> {
    Some(match ch.to_ascii_lowercase() {
        'a' => [2, 5, 7, 5, 5],
        'b' => [6, 5, 6, 5, 6],
        'c' => [3, 4, 4, 4, 3],
        'd' => [6, 5, 5, 5, 6],
        'e' => [7, 4, 6, 4, 7],
        'f' => [7, 4, 6, 4, 4],
        'g' => [3, 4, 5, 5, 3],
        'h' => [5, 5, 7, 5, 5],
        'i' => [7, 2, 2, 2, 7],
        'j' => [1, 1, 1, 5, 2],
        'k' => [5, 5, 6, 5, 5],
        'l' => [4, 4, 4, 4, 7],
        'm' => [5, 7, 7, 5, 5],
        'n' => [6, 5, 5, 5, 5],
        'o' => [2, 5, 5, 5, 2],
        'p' => [6, 5, 6, 4, 4],
        'q' => [2, 5, 5, 6, 3],
        'r' => [6, 5, 6, 5, 5],
        's' => [3, 4, 2, 1, 6],
        't' => [7, 2, 2, 2, 2],
        'u' => [5, 5, 5, 5, 7],
        'v' => [5, 5, 5, 5, 2],
        'w' => [5, 5, 7, 7, 5],
        'x' => [5, 5, 2, 5, 5],
        'y' => [5, 5, 2, 2, 2],
        'z' => [7, 1, 2, 4, 7],
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [6, 1, 2, 4, 7],
        '3' => [6, 1, 2, 1, 6],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 6, 1, 6],
        '6' => [3, 4, 7, 5, 7],
        '7' => [7, 1, 2, 2, 2],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 6],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        _ => return None,
    })
}

fn put(img: &mut image::RgbImage, x: usize, y: usize, rgb: [u8; 3]) {
    if (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, image::Rgb(rgb));
    }
}

fn draw_text(img: &mut image::RgbImage, x: usize, y: usize, text: &str, rgb: [u8; 3]) {
    let mut cx = x;
    for ch in text.chars() {
        if let Some(rows) = glyph(ch) {
            for (dy, row) in rows.iter().enumerate() {
                for dx in 0..3 {
                    if row & (4 >> dx) != 0 {
                        put(img, cx + dx, y + dy, rgb);
                    }
                }
            }
        }
        cx += 4;
    }
}

/// Draws outlines and `name confidence` labels onto an 8-bit copy of `frame`.
pub fn annotate(frame: &Image, detections: &[Detection], class_names: &[String]) -> image::RgbImage {
    let mut img = frame.to_rgb8();
    let (w, h) = (frame.width(), frame.height());
    for d in detections {
        let rgb = class_color(d.class_id);
        let (x0, y0, x1, y1) = outline_rect(d, w, h);
        for x in x0..=x1 {
            put(&mut img, x, y0, rgb);
            put(&mut img, x, y1, rgb);
        }
        for y in y0..=y1 {
            put(&mut img, x0, y, rgb);
            put(&mut img, x1, y, rgb);
        }
        let name = class_names.get(d.class_id).map_or("?", String::as_str);
        let label = format!("{name} {:.2}", d.confidence);
        let label = label.replace("0.", ".");
        let ty = if y0 >= 6 { y0 - 6 } else { (y1 + 2).min(h.saturating_sub(5)) };
        draw_text(&mut img, x0, ty, &label, rgb);
    }
    img
}

/// Writes one annotated attacked frame per input frame to `out_dir`, named
/// after `names`.
pub fn render_annotated(
    frames: &[Image],
    names: &[String],
    patch: &Patch,
    adapter: &dyn DetectorAdapter,
    config: &AttackConfig,
    out_dir: &Path,
) -> Result<Vec<std::path::PathBuf>> {
    if names.len() != frames.len() {
        return Err(Error::InvalidArgument("one file name per frame is required".into()));
    }
    let bound = bind_for_eval(patch, adapter, config)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let values = patch.as_f64();
    let mut written = Vec::with_capacity(frames.len());
    for (frame, name) in frames.iter().zip(names) {
        let (_, attacked, dets) = attack_frame(&bound, frame, &values, config)?;
        let img = annotate(&attacked, &dets, &bound.profile.class_names);
        let path = out_dir.join(name);
        img.save_with_format(&path, image::ImageFormat::Png)
            .map_err(|e| Error::image(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
