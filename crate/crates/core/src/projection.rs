//! Choosing which cars get a patch, where the patch lands on each of them,
//! and writing the stretched patch into the frame.
//!
//! The horizontal placement pushes the patch away from the middle of the
//! frame for cars that are both near a side edge and near the camera:
//!
//! ```text
//! x_proj = x + alpha * (y * max(x, 1 - x))^2 * (x - 0.5)
//! y_proj = y + beta * y^2 * (y - 0.5)
//! ```
//!
//! Compositing keeps an explicit record of which patch texels feed each
//! frame pixel so the gradient with respect to the patch is an exact
//! scatter of the frame gradient.

use serde::{Deserialize, Serialize};

use crate::detection::{Detection, DetectorProfile};
use crate::error::{Error, Result};
use crate::image::{Image, Patch};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub alpha: f64,
    pub beta: f64,
    /// Patch width as a fraction of the object box width.
    pub rho_w: f64,
    /// Patch height as a fraction of the object box height.
    pub rho_h: f64,
    pub min_area_frac: f64,
    pub ar_min: f64,
    pub ar_max: f64,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        ProjectionParams {
            alpha: 0.2,
            beta: 1.0,
            rho_w: 0.40,
            rho_h: 0.15,
            min_area_frac: 0.002,
            ar_min: 0.8,
            ar_max: 2.5,
        }
    }
}

impl ProjectionParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return bad(format!("alpha/beta must be >= 0 (got {}, {})", self.alpha, self.beta));
        }
        for (name, v) in [("rho_w", self.rho_w), ("rho_h", self.rho_h), ("min_area_frac", self.min_area_frac)] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} must lie in (0,1], got {v}"));
            }
        }
        if !(self.ar_min > 0.0 && self.ar_min < self.ar_max) {
            return bad(format!("need 0 < ar_min < ar_max, got [{}, {}]", self.ar_min, self.ar_max));
        }
        Ok(())
    }
}

/// Where the patch lands on one object, in frame fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementSpec {
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    pub source: Detection,
}

/// Clean-frame car detections that are large enough and not cut off by the
/// frame border (judged by their aspect ratio).
pub fn select_target_objects(
    clean_detections: &[Detection],
    profile: &DetectorProfile,
    params: &ProjectionParams,
) -> Vec<Detection> {
    clean_detections
        .iter()
        .filter(|d| {
            let ratio = d.bbox.aspect_ratio();
            d.class_id == profile.car_class
                && d.bbox.area() >= params.min_area_frac
                && ratio >= params.ar_min
                && ratio <= params.ar_max
        })
        .cloned()
        .collect()
}

pub fn project_x(x: f64, y: f64, alpha: f64) -> f64 {
    let reach = y * x.max(1.0 - x);
    x + alpha * reach * reach * (x - 0.5)
}

pub fn project_y(y: f64, beta: f64) -> f64 {
    y + beta * y * y * (y - 0.5)
}

/// Unclamped patch center for an object box center.
pub fn projected_center(cx: f64, cy: f64, params: &ProjectionParams) -> (f64, f64) {
    (project_x(cx, cy, params.alpha), project_y(cy, params.beta))
}

pub fn make_placement(object: &Detection, params: &ProjectionParams) -> PlacementSpec {
    let (px, py) = projected_center(object.bbox.cx, object.bbox.cy, params);
    let width = (params.rho_w * object.bbox.w).min(1.0);
    let height = (params.rho_h * object.bbox.h).min(1.0);
    PlacementSpec {
        cx: clamp_center(px, width),
        cy: clamp_center(py, height),
        width,
        height,
        source: object.clone(),
    }
}

fn clamp_center(c: f64, extent: f64) -> f64 {
    let half = extent / 2.0;
    c.clamp(half, 1.0 - half)
}

/// Integer pixel rectangle `[x0, x1) x [y0, y1)` covered by a placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    pub fn of(placement: &PlacementSpec, frame_w: usize, frame_h: usize) -> Result<Self> {
        let to_px = |v: f64, n: usize| ((v * n as f64).round().max(0.0) as usize).min(n);
        let x0 = to_px(placement.cx - placement.width / 2.0, frame_w);
        let x1 = to_px(placement.cx + placement.width / 2.0, frame_w);
        let y0 = to_px(placement.cy - placement.height / 2.0, frame_h);
        let y1 = to_px(placement.cy + placement.height / 2.0, frame_h);
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::DegeneratePlacement);
        }
        Ok(PixelRect { x0, y0, x1, y1 })
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Bilinear taps: four patch texel indices (row-major, no channel) and
/// their weights.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Taps {
    texel: [u32; 4],
    weight: [f64; 4],
}

fn axis_taps(offset: usize, extent: usize, patch_size: usize) -> (usize, usize, f64) {
    let u = ((offset as f64 + 0.5) * patch_size as f64 / extent as f64 - 0.5)
        .clamp(0.0, (patch_size - 1) as f64);
    let i0 = u.floor() as usize;
    let i1 = (i0 + 1).min(patch_size - 1);
    (i0, i1, u - i0 as f64)
}

/// Per-frame-pixel sampling record for any number of placements; later
/// placements overwrite earlier ones where they overlap.
#[derive(Debug, Clone)]
pub struct CompositeMap {
    frame_w: usize,
    frame_h: usize,
    patch_size: usize,
    taps: Vec<Option<Taps>>,
    rects: Vec<PixelRect>,
}

impl CompositeMap {
    pub fn new(frame_w: usize, frame_h: usize, patch_size: usize) -> Self {
        CompositeMap {
            frame_w,
            frame_h,
            patch_size,
            taps: vec![None; frame_w * frame_h],
            rects: Vec::new(),
        }
    }

    pub fn add(&mut self, placement: &PlacementSpec) -> Result<PixelRect> {
        let rect = PixelRect::of(placement, self.frame_w, self.frame_h)?;
        let (rw, rh) = (rect.x1 - rect.x0, rect.y1 - rect.y0);
        let p = self.patch_size;
        for y in rect.y0..rect.y1 {
            let (v0, v1, fv) = axis_taps(y - rect.y0, rh, p);
            for x in rect.x0..rect.x1 {
                let (u0, u1, fu) = axis_taps(x - rect.x0, rw, p);
                self.taps[y * self.frame_w + x] = Some(Taps {
                    texel: [
                        (v0 * p + u0) as u32,
                        (v0 * p + u1) as u32,
                        (v1 * p + u0) as u32,
                        (v1 * p + u1) as u32,
                    ],
                    weight: [
                        (1.0 - fv) * (1.0 - fu),
                        (1.0 - fv) * fu,
                        fv * (1.0 - fu),
                        fv * fu,
                    ],
                });
            }
        }
        self.rects.push(rect);
        Ok(rect)
    }

    pub fn rects(&self) -> &[PixelRect] {
        &self.rects
    }

    pub fn is_empty(&self) -> bool {
        self.rects.is_empty()
    }

    /// Writes the patch (row-major interleaved RGB values) into a copy of
    /// `frame`.
    pub fn apply(&self, frame: &Image, patch_values: &[f64]) -> Result<Image> {
        self.check(frame, patch_values.len())?;
        let mut out = frame.clone();
        let plane = self.frame_w * self.frame_h;
        let data = out.data_mut();
        for (pix, taps) in self.taps.iter().enumerate() {
            if let Some(t) = taps {
                for c in 0..3 {
                    let mut v = 0.0;
                    for k in 0..4 {
                        v += t.weight[k] * patch_values[t.texel[k] as usize * 3 + c];
                    }
                    data[c * plane + pix] = v;
                }
            }
        }
        Ok(out)
    }

    /// Adjoint of [`apply`](Self::apply): accumulates `d loss / d frame`
    /// into a patch-shaped gradient.
    pub fn backward(&self, frame_grad: &[f64], patch_grad: &mut [f64]) {
        let plane = self.frame_w * self.frame_h;
        assert_eq!(frame_grad.len(), 3 * plane);
        assert_eq!(patch_grad.len(), self.patch_size * self.patch_size * 3);
        for (pix, taps) in self.taps.iter().enumerate() {
            if let Some(t) = taps {
                for c in 0..3 {
                    let g = frame_grad[c * plane + pix];
                    if g == 0.0 {
                        continue;
                    }
                    for k in 0..4 {
                        patch_grad[t.texel[k] as usize * 3 + c] += t.weight[k] * g;
                    }
                }
            }
        }
    }

    fn check(&self, frame: &Image, patch_len: usize) -> Result<()> {
        if frame.width() != self.frame_w || frame.height() != self.frame_h {
            return Err(Error::SizeMismatch {
                expected_w: self.frame_w,
                expected_h: self.frame_h,
                got_w: frame.width(),
                got_h: frame.height(),
            });
        }
        if patch_len != self.patch_size * self.patch_size * 3 {
            return Err(Error::InvalidArgument(format!(
                "patch buffer of {patch_len} values for a {0}x{0} patch",
                self.patch_size
            )));
        }
        Ok(())
    }
}

/// Bilinearly stretches `patch` onto the placement rectangle of a copy of
/// `frame`. Pixels outside the rectangle are copied unchanged.
pub fn composite_patch(frame: &Image, patch: &Patch, placement: &PlacementSpec) -> Result<Image> {
    let mut map = CompositeMap::new(frame.width(), frame.height(), patch.size());
    map.add(placement)?;
    map.apply(frame, &patch.as_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::BoundingBox;

    fn det(cx: f64, cy: f64, w: f64, h: f64, class_id: usize) -> Detection {
        Detection {
            bbox: BoundingBox { cx, cy, w, h },
            class_id,
            confidence: 0.9,
        }
    }

    fn profile() -> DetectorProfile {
        DetectorProfile::new(vec!["car".into(), "bus".into(), "truck".into()], 0, 0.25, 0.45).unwrap()
    }

    #[test]
    fn projection_hand_values() {
        assert_eq!(project_x(0.5, 0.7, 3.0), 0.5);
        assert!((project_x(0.9, 0.8, 0.2) - 0.941472).abs() < 1e-12);
        assert_eq!(project_x(0.3, 0.0, 0.2), 0.3);
        assert_eq!(project_y(0.5, 2.0), 0.5);
        assert!((project_y(0.6, 1.0) - 0.636).abs() < 1e-12);
        assert!((project_y(0.4, 1.0) - 0.384).abs() < 1e-12);
    }

    #[test]
    fn selection_rules() {
        let p = profile();
        let params = ProjectionParams::default();
        let keep = det(0.5, 0.5, 0.2, 0.1, 0);
        let sliver = det(0.5, 0.5, 0.3, 0.05, 0);
        let bus = det(0.5, 0.5, 0.3, 0.3, 1);
        let tiny = det(0.5, 0.5, 0.04, 0.04, 0);
        let out = select_target_objects(&[keep.clone(), sliver, bus, tiny], &p, &params);
        assert_eq!(out, vec![keep]);
    }

    #[test]
    fn placement_center_and_size() {
        let params = ProjectionParams::default();
        let pl = make_placement(&det(0.5, 0.5, 0.2, 0.1, 0), &params);
        assert_eq!((pl.cx, pl.cy), (0.5, 0.5));
        assert!((pl.width - 0.08).abs() < 1e-12);
        assert!((pl.height - 0.015).abs() < 1e-12);

        let (x, y) = projected_center(0.9, 0.8, &params);
        assert!((x - 0.941472).abs() < 1e-12);
        assert!((y - 0.992).abs() < 1e-12);
    }

    #[test]
    fn placement_clamps_to_right_edge() {
        let params = ProjectionParams::default();
        let pl = make_placement(&det(0.95, 0.8, 0.2, 0.1, 0), &params);
        assert!((pl.cx + pl.width / 2.0 - 1.0).abs() < 1e-12);
        assert!(pl.cy + pl.height / 2.0 <= 1.0 + 1e-12);
    }

    fn placement(cx: f64, cy: f64, w: f64, h: f64) -> PlacementSpec {
        PlacementSpec {
            cx,
            cy,
            width: w,
            height: h,
            source: det(cx, cy, w, h, 0),
        }
    }

    #[test]
    fn degenerate_rect_is_rejected() {
        let frame = Image::filled(20, 20, [0.3, 0.3, 0.3]);
        let patch = Patch::filled(4, 0.5);
        let err = composite_patch(&frame, &patch, &placement(0.5, 0.5, 0.01, 0.2)).unwrap_err();
        assert!(matches!(err, Error::DegeneratePlacement));
    }

    #[test]
    fn constant_patch_fills_rect_exactly() {
        let mut frame = Image::new(20, 16);
        for (i, v) in frame.data_mut().iter_mut().enumerate() {
            *v = (i % 17) as f64 / 17.0;
        }
        let patch = Patch::filled(5, 0.5);
        let pl = placement(0.5, 0.5, 0.4, 0.25);
        let out = composite_patch(&frame, &patch, &pl).unwrap();
        let rect = PixelRect::of(&pl, 20, 16).unwrap();
        assert_eq!(rect, PixelRect { x0: 6, y0: 6, x1: 14, y1: 10 });
        for c in 0..3 {
            for y in 0..16 {
                for x in 0..20 {
                    if rect.contains(x, y) {
                        assert!((out.get(c, y, x) - 0.5).abs() < 1e-15);
                    } else {
                        assert_eq!(out.get(c, y, x).to_bits(), frame.get(c, y, x).to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn identity_scale_copies_texels() {
        let frame = Image::new(8, 8);
        let vals: Vec<f32> = (0..4 * 4 * 3).map(|i| i as f32 / 48.0).collect();
        let patch = Patch::from_pixels(4, vals).unwrap();
        let out = composite_patch(&frame, &patch, &placement(0.5, 0.5, 0.5, 0.5)).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                for c in 0..3 {
                    assert!((out.get(c, y + 2, x + 2) - patch.get(y, x, c) as f64).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let frame = Image::filled(16, 12, [0.1, 0.2, 0.3]);
        let size = 5;
        let base: Vec<f64> = (0..size * size * 3).map(|i| ((i * 7) % 11) as f64 / 11.0).collect();
        let mut map = CompositeMap::new(16, 12, size);
        map.add(&placement(0.45, 0.5, 0.6, 0.5)).unwrap();
        map.add(&placement(0.7, 0.6, 0.3, 0.4)).unwrap();
        // objective: weighted sum over all pixels so every channel matters
        let weights: Vec<f64> = (0..3 * 16 * 12).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let objective = |vals: &[f64]| -> f64 {
            let img = map.apply(&frame, vals).unwrap();
            img.data().iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let mut grad = vec![0.0; base.len()];
        map.backward(&weights, &mut grad);
        let h = 1e-4;
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let denom = grad[i].abs().max(fd.abs()).max(1e-8);
            assert!((grad[i] - fd).abs() / denom < 1e-3, "texel {i}: {} vs {fd}", grad[i]);
        }
    }
}
