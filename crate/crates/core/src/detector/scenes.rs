//! Procedural traffic frames seen from a raised, forward-facing camera.
//!
//! Objects further down the frame are closer to the camera and therefore
//! larger. Cars are drawn with a roof, windshield, hood and grille; the hood
//! center is displaced from the box center with the same geometry the patch
//! projection assumes, so placing a patch with matching `alpha`/`beta` lands
//! it on the hood.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::detection::{iou, BoundingBox};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::projection::{project_x, project_y};

pub const CAR: usize = 0;
pub const BUS: usize = 1;
pub const TRUCK: usize = 2;
pub const PERSON: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Relative frequency of car, bus, truck, person.
    pub class_weights: [f64; 4],
    /// Car width range (frame fraction) at perspective scale 1.
    pub car_width: (f64, f64),
    pub horizon: f64,
    /// Range of object center heights (frame fraction).
    pub center_y: (f64, f64),
    /// Probability that a car straddles the left or right frame edge.
    pub cutout_prob: f64,
    pub hood_alpha: f64,
    pub hood_beta: f64,
    /// Hood extent as a fraction of the car box.
    pub hood_w: f64,
    pub hood_h: f64,
    /// Probability that a bus is seen from the side (a wide box) rather
    /// than head-on.
    pub bus_side_prob: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            width: 104,
            height: 104,
            min_objects: 1,
            max_objects: 4,
            class_weights: [0.6, 0.15, 0.15, 0.1],
            car_width: (0.22, 0.28),
            horizon: 0.16,
            center_y: (0.32, 0.84),
            cutout_prob: 0.08,
            hood_alpha: 0.2,
            hood_beta: 0.15,
            hood_w: 0.8,
            hood_h: 0.45,
            bus_side_prob: 0.5,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("scene params: {m}")));
        if self.width < 8 || self.height < 8 {
            return bad("frame must be at least 8x8");
        }
        if self.min_objects > self.max_objects {
            return bad("min_objects > max_objects");
        }
        if self.class_weights.iter().any(|&w| !(w >= 0.0)) || self.class_weights.iter().sum::<f64>() <= 0.0 {
            return bad("class weights must be non-negative with a positive sum");
        }
        if !(self.car_width.0 > 0.0 && self.car_width.0 <= self.car_width.1 && self.car_width.1 < 0.6) {
            return bad("car width range must satisfy 0 < lo <= hi < 0.6");
        }
        if !(self.center_y.0 > self.horizon && self.center_y.0 <= self.center_y.1 && self.center_y.1 < 1.0) {
            return bad("center_y must lie below the horizon and inside the frame");
        }
        if !(0.0..=1.0).contains(&self.cutout_prob) || !(0.0..=1.0).contains(&self.bus_side_prob) {
            return bad("probabilities must lie in [0,1]");
        }
        if !(self.hood_w > 0.0 && self.hood_w <= 1.0 && self.hood_h > 0.0 && self.hood_h <= 0.6) {
            return bad("hood size out of range");
        }
        if !(self.hood_alpha >= 0.0 && self.hood_beta >= 0.0) {
            return bad("hood displacement factors must be >= 0");
        }
        Ok(())
    }

    fn perspective_scale(&self, cy: f64) -> f64 {
        0.35 + cy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class_id: usize,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub image: Image,
    pub objects: Vec<SceneObject>,
}

/// Renders `count` frames; identical seeds give bit-identical scenes.
pub fn generate_scenes(count: usize, seed: u64, params: &SceneParams) -> Result<Vec<SyntheticScene>> {
    if count == 0 {
        return Err(Error::InvalidArgument("scene count must be at least 1".into()));
    }
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| render_scene(params, &mut rng)).collect())
}

/// Object as drawn (may extend past the frame) plus its visible box.
struct Placed {
    class_id: usize,
    drawn: (f64, f64, f64, f64),
    visible: BoundingBox,
    color: [f64; 3],
    accent: [f64; 3],
    side_view: bool,
}

fn jitter(rng: &mut ChaCha8Rng, base: [f64; 3], amount: f64) -> [f64; 3] {
    base.map(|v| (v + rng.random_range(-amount..=amount)).clamp(0.0, 1.0))
}

const CAR_COLORS: [[f64; 3]; 6] = [
    [0.75, 0.12, 0.12],
    [0.15, 0.25, 0.70],
    [0.90, 0.90, 0.90],
    [0.62, 0.64, 0.68],
    [0.12, 0.12, 0.14],
    [0.10, 0.45, 0.22],
];
const BUS_COLORS: [[f64; 3]; 3] = [[0.95, 0.80, 0.10], [0.95, 0.50, 0.10], [0.10, 0.60, 0.60]];
const CARGO_COLORS: [[f64; 3]; 3] = [[0.86, 0.86, 0.86], [0.55, 0.55, 0.58], [0.50, 0.35, 0.20]];
const CAB_COLORS: [[f64; 3]; 3] = [[0.70, 0.10, 0.10], [0.10, 0.20, 0.60], [0.20, 0.50, 0.20]];
const SHIRT_COLORS: [[f64; 3]; 4] = [[0.8, 0.2, 0.2], [0.2, 0.6, 0.3], [0.9, 0.9, 0.3], [0.3, 0.3, 0.8]];

fn pick(rng: &mut ChaCha8Rng, palette: &[[f64; 3]], amount: f64) -> [f64; 3] {
    let base = palette[rng.random_range(0..palette.len())];
    jitter(rng, base, amount)
}

fn sample_class(rng: &mut ChaCha8Rng, weights: &[f64; 4]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut r = rng.random_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if r < w {
            return i;
        }
        r -= w;
    }
    weights.len() - 1
}

fn try_place(params: &SceneParams, rng: &mut ChaCha8Rng) -> Option<Placed> {
    let class_id = sample_class(rng, &params.class_weights);
    let cy = rng.random_range(params.center_y.0..=params.center_y.1);
    let s = params.perspective_scale(cy);
    let aspect = params.width as f64 / params.height as f64;
    let base = rng.random_range(params.car_width.0..=params.car_width.1);
    let side_view = class_id == BUS && rng.random_bool(params.bus_side_prob);
    // (w, h) in frame fractions; h is scaled by the frame aspect so the
    // width/height ratio holds in pixels
    let (w, h_px_ratio) = match class_id {
        CAR => (base * s, rng.random_range(1.3..=1.6)),
        BUS if side_view => (base * 1.5 * s, rng.random_range(1.8..=2.3)),
        BUS => (base * 1.1 * s, rng.random_range(0.78..=0.92)),
        TRUCK => (base * 1.05 * s, rng.random_range(0.98..=1.12)),
        _ => (base * 0.26 * s, rng.random_range(0.36..=0.44)),
    };
    let h = w / h_px_ratio * aspect;
    let y1 = cy - h / 2.0;
    let y2 = cy + h / 2.0;
    if y1 < params.horizon || y2 > 1.0 {
        return None;
    }
    let cutout = class_id == CAR && rng.random_bool(params.cutout_prob);
    let cx = if cutout {
        let visible = rng.random_range(0.45..=0.7);
        if rng.random_bool(0.5) {
            w * visible - w / 2.0
        } else {
            1.0 - w * visible + w / 2.0
        }
    } else {
        rng.random_range(w / 2.0..=1.0 - w / 2.0)
    };
    let drawn = (cx - w / 2.0, y1, cx + w / 2.0, y2);
    let visible = BoundingBox::from_corners(drawn.0.max(0.0), y1, drawn.2.min(1.0), y2);
    let (color, accent) = match class_id {
        CAR => (pick(rng, &CAR_COLORS, 0.05), [0.0; 3]),
        BUS => (pick(rng, &BUS_COLORS, 0.05), [0.0; 3]),
        TRUCK => (
            pick(rng, &CARGO_COLORS, 0.04),
            pick(rng, &CAB_COLORS, 0.05),
        ),
        _ => (
            pick(rng, &SHIRT_COLORS, 0.05),
            jitter(rng, [0.85, 0.65, 0.5], 0.05),
        ),
    };
    Some(Placed {
        class_id,
        drawn,
        visible,
        color,
        accent,
        side_view,
    })
}

fn render_scene(params: &SceneParams, rng: &mut ChaCha8Rng) -> SyntheticScene {
    let mut image = render_background(params, rng);
    let target = rng.random_range(params.min_objects..=params.max_objects);
    let mut placed: Vec<Placed> = Vec::new();
    let mut attempts = 0;
    while placed.len() < target && attempts < 60 {
        attempts += 1;
        let Some(p) = try_place(params, rng) else { continue };
        let d = BoundingBox::from_corners(p.drawn.0, p.drawn.1, p.drawn.2, p.drawn.3);
        let clash = placed.iter().any(|q| {
            let e = BoundingBox::from_corners(q.drawn.0, q.drawn.1, q.drawn.2, q.drawn.3);
            iou(&d, &e) > 0.0 || touches(&d, &e)
        });
        if !clash {
            placed.push(p);
        }
    }
    // far objects first so nearer ones are drawn over them
    placed.sort_by(|a, b| a.drawn.3.total_cmp(&b.drawn.3));
    for p in &placed {
        draw_object(&mut image, params, p);
    }
    let gain = rng.random_range(0.88..=1.08);
    for v in image.data_mut() {
        *v = (*v * gain).clamp(0.0, 1.0);
    }
    SyntheticScene {
        image,
        objects: placed
            .iter()
            .map(|p| SceneObject {
                class_id: p.class_id,
                bbox: p.visible,
            })
            .collect(),
    }
}

fn touches(a: &BoundingBox, b: &BoundingBox) -> bool {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let gap = 0.02;
    ax1 < bx2 + gap && bx1 < ax2 + gap && ay1 < by2 + gap && by1 < ay2 + gap
}

fn render_background(params: &SceneParams, rng: &mut ChaCha8Rng) -> Image {
    let (w, h) = (params.width, params.height);
    let mut img = Image::new(w, h);
    let tone = rng.random_range(0.34..=0.44);
    let sky = jitter(rng, [0.62, 0.76, 0.90], 0.04);
    let grass = jitter(rng, [0.30, 0.48, 0.24], 0.04);
    let dash_phase = rng.random_range(0.0..1.0);
    for y in 0..h {
        let fy = (y as f64 + 0.5) / h as f64;
        for x in 0..w {
            let fx = (x as f64 + 0.5) / w as f64;
            let rgb = if fy < params.horizon {
                sky
            } else if fy < params.horizon + 0.04 {
                grass
            } else {
                let depth = (fy - params.horizon) / (1.0 - params.horizon);
                let noise: f64 = rng.sample::<f64, _>(StandardNormal) * 0.015;
                let mut v = tone + noise;
                // lane lines converge on the horizon center
                for lane in [-0.35, 0.0, 0.35] {
                    let lx = 0.5 + lane * depth * 1.4;
                    let half = 0.004 + 0.006 * depth;
                    let dashed = lane == 0.0 && ((depth * 8.0 + dash_phase).fract() > 0.5);
                    if (fx - lx).abs() < half && !dashed {
                        v = 0.85;
                    }
                }
                [v, v, v * 1.02]
            };
            img.set_rgb(y, x, rgb.map(|c| c.clamp(0.0, 1.0)));
        }
    }
    img
}

/// Fills the pixels whose centers fall in the frame-fraction rectangle.
fn fill(img: &mut Image, rect: (f64, f64, f64, f64), rgb: [f64; 3]) {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let x0 = (rect.0 * w - 0.5).ceil().max(0.0) as usize;
    let x1 = ((rect.2 * w - 0.5).floor() + 1.0).clamp(0.0, w) as usize;
    let y0 = (rect.1 * h - 0.5).ceil().max(0.0) as usize;
    let y1 = ((rect.3 * h - 0.5).floor() + 1.0).clamp(0.0, h) as usize;
    for y in y0..y1 {
        for x in x0..x1 {
            img.set_rgb(y, x, rgb);
        }
    }
}

fn shade(c: [f64; 3], k: f64) -> [f64; 3] {
    c.map(|v| (v * k).clamp(0.0, 1.0))
}

/// Sub-rectangle in box-relative coordinates.
fn sub(drawn: (f64, f64, f64, f64), u0: f64, v0: f64, u1: f64, v1: f64) -> (f64, f64, f64, f64) {
    let (x1, y1, x2, y2) = drawn;
    let (bw, bh) = (x2 - x1, y2 - y1);
    (x1 + u0 * bw, y1 + v0 * bh, x1 + u1 * bw, y1 + v1 * bh)
}

const GLASS: [f64; 3] = [0.14, 0.18, 0.26];
const GRILLE: [f64; 3] = [0.22, 0.22, 0.23];
const LAMP: [f64; 3] = [0.97, 0.96, 0.82];

fn draw_object(img: &mut Image, params: &SceneParams, p: &Placed) {
    let d = p.drawn;
    match p.class_id {
        CAR => draw_car(img, params, p),
        BUS if p.side_view => {
            fill(img, d, p.color);
            fill(img, sub(d, 0.0, 0.0, 1.0, 0.07), shade(p.color, 0.6));
            fill(img, sub(d, 0.03, 0.14, 0.97, 0.52), GLASS);
            for k in 1..6 {
                let u = k as f64 / 6.0;
                fill(img, sub(d, u - 0.012, 0.14, u + 0.012, 0.52), p.color);
            }
            fill(img, sub(d, 0.0, 0.6, 1.0, 0.66), [0.92, 0.92, 0.92]);
            fill(img, sub(d, 0.1, 0.82, 0.24, 1.0), [0.08, 0.08, 0.08]);
            fill(img, sub(d, 0.74, 0.82, 0.88, 1.0), [0.08, 0.08, 0.08]);
            fill(img, sub(d, 0.92, 0.7, 1.0, 0.78), LAMP);
        }
        BUS => {
            fill(img, d, p.color);
            fill(img, sub(d, 0.08, 0.02, 0.92, 0.1), [0.1, 0.1, 0.1]);
            fill(img, sub(d, 0.2, 0.04, 0.8, 0.08), [1.0, 0.65, 0.1]);
            fill(img, sub(d, 0.05, 0.13, 0.95, 0.5), GLASS);
            fill(img, sub(d, 0.0, 0.68, 1.0, 0.74), [0.92, 0.92, 0.92]);
            fill(img, sub(d, 0.0, 0.9, 1.0, 1.0), GRILLE);
            fill(img, sub(d, 0.06, 0.8, 0.18, 0.87), LAMP);
            fill(img, sub(d, 0.82, 0.8, 0.94, 0.87), LAMP);
        }
        TRUCK => {
            fill(img, sub(d, 0.0, 0.0, 1.0, 0.55), p.color);
            fill(img, sub(d, 0.0, 0.5, 1.0, 0.55), shade(p.color, 0.7));
            fill(img, sub(d, 0.06, 0.55, 0.94, 1.0), p.accent);
            fill(img, sub(d, 0.14, 0.59, 0.86, 0.74), GLASS);
            fill(img, sub(d, 0.1, 0.82, 0.9, 1.0), GRILLE);
            fill(img, sub(d, 0.12, 0.85, 0.24, 0.91), LAMP);
            fill(img, sub(d, 0.76, 0.85, 0.88, 0.91), LAMP);
        }
        _ => {
            fill(img, sub(d, 0.3, 0.0, 0.7, 0.18), p.accent);
            fill(img, sub(d, 0.05, 0.18, 0.95, 0.6), p.color);
            fill(img, sub(d, 0.15, 0.6, 0.45, 1.0), [0.15, 0.15, 0.3]);
            fill(img, sub(d, 0.55, 0.6, 0.85, 1.0), [0.15, 0.15, 0.3]);
        }
    }
}

fn draw_car(img: &mut Image, params: &SceneParams, p: &Placed) {
    let d = p.drawn;
    let (x1, y1, x2, y2) = d;
    let (bw, bh) = (x2 - x1, y2 - y1);
    let (cx, cy) = ((x1 + x2) / 2.0, (y1 + y2) / 2.0);
    // the visible side panels show through wherever the hood is displaced
    fill(img, d, shade(p.color, 0.72));
    let hx = project_x(cx.clamp(0.0, 1.0), cy, params.hood_alpha);
    let hy = project_y(cy, params.hood_beta);
    let hood_w = params.hood_w * bw;
    let hood_h = params.hood_h * bh;
    let hx = hx.clamp(x1 + hood_w / 2.0, x2 - hood_w / 2.0);
    let hy = hy.clamp(y1 + 0.3 * bh + hood_h / 2.0, y2 - 0.12 * bh - hood_h / 2.0);
    let hood = (hx - hood_w / 2.0, hy - hood_h / 2.0, hx + hood_w / 2.0, hy + hood_h / 2.0);
    let shift = hx - cx;

    fill(img, (x1 + 0.16 * bw + shift * 0.5, y1, x2 - 0.16 * bw + shift * 0.5, y1 + 0.16 * bh), shade(p.color, 0.9));
    fill(img, (hood.0 + 0.04 * bw, y1 + 0.16 * bh, hood.2 - 0.04 * bw, hood.1), GLASS);
    fill(img, hood, p.color);
    fill(img, (hood.0, hood.3, hood.2, y2), GRILLE);
    let lamp_w = 0.14 * bw;
    let lamp_top = hood.3 + 0.03 * bh;
    let lamp_bottom = (hood.3 + 0.1 * bh).min(y2);
    fill(img, (hood.0 + 0.02 * bw, lamp_top, hood.0 + 0.02 * bw + lamp_w, lamp_bottom), LAMP);
    fill(img, (hood.2 - 0.02 * bw - lamp_w, lamp_top, hood.2 - 0.02 * bw, lamp_bottom), LAMP);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let p = SceneParams::default();
        let a = generate_scenes(2, 7, &p).unwrap();
        let b = generate_scenes(2, 7, &p).unwrap();
        assert_eq!(a, b);
        let c = generate_scenes(2, 8, &p).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_objects_gives_background_only() {
        let p = SceneParams {
            min_objects: 0,
            max_objects: 0,
            ..SceneParams::default()
        };
        let s = generate_scenes(3, 1, &p).unwrap();
        assert!(s.iter().all(|s| s.objects.is_empty()));
    }

    #[test]
    fn invalid_params_rejected() {
        let p = SceneParams {
            car_width: (0.0, 0.0),
            ..SceneParams::default()
        };
        assert!(generate_scenes(1, 1, &p).is_err());
        assert!(generate_scenes(0, 1, &SceneParams::default()).is_err());
    }

    #[test]
    fn boxes_stay_inside_the_frame() {
        let scenes = generate_scenes(500, 11, &SceneParams::default()).unwrap();
        let mut counts = [0usize; 4];
        for s in &scenes {
            for o in &s.objects {
                let (x1, y1, x2, y2) = o.bbox.corners();
                assert!(x1 >= -1e-12 && y1 >= -1e-12 && x2 <= 1.0 + 1e-12 && y2 <= 1.0 + 1e-12, "{:?}", o);
                assert!(o.bbox.is_valid());
                counts[o.class_id] += 1;
            }
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
    }
}
