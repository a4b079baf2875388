//! Attribute classifiers and the sprite detector used by evaluation.
//!
//! Two small learned trunks cover appearance attributes: crops (identity
//! attributes and windowed sprite detection) and whole frames (background,
//! occlusion). Both are trained on rendered data with known labels and then
//! frozen; evaluation trusts their argmax and softmax confidence. Scale and
//! motion come straight from the sprite detector's boxes instead — the tiny
//! trunks have no translation invariance and memorize appearance when asked
//! to learn geometry, while box area and centroid shift read it off exactly.

use idsprite_core::nn::{Linear, Mlp2, ParamStore};
use idsprite_core::{rng, Graph};
use idsprite_world::{
    BgColor, ColorName, FaceCrop, Marking, Motion, Occlusion, PixelBox, Shape,
};
use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::resize::{flatten_image, resize_bilinear};
use crate::EncoderConfig;

/// Class index of each attribute value, fixed by the enum declaration order.
pub fn shape_class(s: Shape) -> usize {
    Shape::ALL.iter().position(|&x| x == s).unwrap()
}

pub fn color_class(c: ColorName) -> usize {
    ColorName::ALL.iter().position(|&x| x == c).unwrap()
}

pub fn marking_class(m: Marking) -> usize {
    Marking::ALL.iter().position(|&x| x == m).unwrap()
}

pub fn bg_class(b: BgColor) -> usize {
    BgColor::ALL.iter().position(|&x| x == b).unwrap()
}

pub fn motion_class(m: Motion) -> usize {
    Motion::ALL.iter().position(|&x| x == m).unwrap()
}

pub fn occlusion_class(o: Occlusion) -> usize {
    match o {
        Occlusion::None => 0,
        Occlusion::Bar => 1,
        Occlusion::Corner => 2,
    }
}

/// 0 = small, 1 = large, split at the caption boundary.
pub fn scale_class(sprite_scale: f64) -> usize {
    usize::from(sprite_scale >= 0.55)
}

/// One classified attribute: argmax class and its softmax probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttrPrediction {
    pub class: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropClasses {
    pub shape: AttrPrediction,
    pub color: AttrPrediction,
    pub marking: AttrPrediction,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameClasses {
    pub background: AttrPrediction,
    pub scale: AttrPrediction,
    pub occlusion: AttrPrediction,
}

/// A located sprite: tight pixel box and detector confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub box_: PixelBox,
    pub confidence: f64,
}

/// Held-out accuracy of every classifier head, measured at training time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttrAccuracy {
    pub shape: f64,
    pub color: f64,
    pub marking: f64,
    pub object: f64,
    pub background: f64,
    pub scale: f64,
    pub occlusion: f64,
    pub motion: f64,
}

/// The classifier family behind evaluation, in one parameter store.
pub struct AttrNets {
    pub store: ParamStore,
    pub(crate) crop_trunk: Mlp2,
    pub(crate) shape: Linear,
    pub(crate) color: Linear,
    pub(crate) marking: Linear,
    pub(crate) object: Linear,
    pub(crate) frame_trunk: Mlp2,
    pub(crate) bg: Linear,
    pub(crate) occl: Linear,
    pub input_size: usize,
    /// Frame-level heads see a larger resize than crop-level heads: sprite
    /// scale and motion displacement survive it.
    pub frame_size: usize,
}

const TRUNK_OUT: usize = 64;

impl AttrNets {
    pub fn new(cfg: &EncoderConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut r = rng::stream(seed, "attr/init", &[]);
        let d_in = cfg.flat_input();
        let crop_trunk = Mlp2::new(&mut store, "attr.crop_trunk", d_in, cfg.trunk_hidden, TRUNK_OUT, &mut r);
        let shape = Linear::new(&mut store, "attr.shape", TRUNK_OUT, Shape::ALL.len(), &mut r);
        let color = Linear::new(&mut store, "attr.color", TRUNK_OUT, ColorName::ALL.len(), &mut r);
        let marking = Linear::new(&mut store, "attr.marking", TRUNK_OUT, Marking::ALL.len(), &mut r);
        let object = Linear::new(&mut store, "attr.object", TRUNK_OUT, 2, &mut r);
        let frame_size = cfg.input_size * 2;
        let d_frame = 3 * frame_size * frame_size;
        let frame_trunk =
            Mlp2::new(&mut store, "attr.frame_trunk", d_frame, cfg.trunk_hidden, TRUNK_OUT, &mut r);
        let bg = Linear::new(&mut store, "attr.bg", TRUNK_OUT, BgColor::ALL.len(), &mut r);
        let occl = Linear::new(&mut store, "attr.occl", TRUNK_OUT, 3, &mut r);
        AttrNets {
            store,
            crop_trunk,
            shape,
            color,
            marking,
            object,
            frame_trunk,
            bg,
            occl,
            input_size: cfg.input_size,
            frame_size,
        }
    }

    /// Resize-and-flatten an image into a crop-trunk input row.
    pub fn image_row(&self, img: &Array3<f64>) -> Array1<f64> {
        flatten_image(&resize_bilinear(img, self.input_size, self.input_size))
    }

    /// Resize-and-flatten a whole frame into a frame-trunk input row.
    pub fn frame_row(&self, img: &Array3<f64>) -> Array1<f64> {
        flatten_image(&resize_bilinear(img, self.frame_size, self.frame_size))
    }

    pub(crate) fn head_logits(&self, trunk: &Mlp2, head: &Linear, rows: &Array2<f64>) -> Array2<f64> {
        let mut g = Graph::new();
        let x = g.constant(rows.clone().into_dyn());
        let h = trunk.forward(&mut g, &self.store, x);
        let l = head.forward(&mut g, &self.store, h);
        let v = g.value(l);
        Array2::from_shape_vec((rows.nrows(), v.shape()[1]), v.iter().cloned().collect())
            .expect("logit shape")
    }

    pub fn classify_crop(&self, crop: &FaceCrop) -> CropClasses {
        let row = self.image_row(&crop.to_array3());
        let rows = row.insert_axis(ndarray::Axis(0));
        let shape = predict(&self.head_logits(&self.crop_trunk, &self.shape, &rows), 0);
        let color = predict(&self.head_logits(&self.crop_trunk, &self.color, &rows), 0);
        let marking = predict(&self.head_logits(&self.crop_trunk, &self.marking, &rows), 0);
        CropClasses { shape, color, marking }
    }

    pub fn classify_frame(&self, frame: &Array3<f64>) -> FrameClasses {
        let rows = self.frame_row(frame).insert_axis(ndarray::Axis(0));
        let background = predict(&self.head_logits(&self.frame_trunk, &self.bg, &rows), 0);
        let occlusion = predict(&self.head_logits(&self.frame_trunk, &self.occl, &rows), 0);
        FrameClasses { background, scale: self.classify_scale(frame), occlusion }
    }

    /// Sprite scale read off the detected bounding box: the box area sits
    /// well on one side of the midpoint between the two known sprite
    /// diameters, so no learned head is involved. Confidence is the
    /// detector's; zero when nothing is detected.
    pub fn classify_scale(&self, frame: &Array3<f64>) -> AttrPrediction {
        let (_, h, w) = frame.dim();
        let sizes = default_window_sizes(h, w);
        match self.detect_sprite(frame, &sizes, 2, 0.3) {
            Some(det) => {
                let area = det.box_.area() as f64;
                let mid_scale = (idsprite_world::SCALE_SMALL + idsprite_world::SCALE_LARGE) / 2.0;
                let side = 2.0 * mid_scale * h.min(w) as f64 / 4.0;
                AttrPrediction { class: usize::from(area > side * side), confidence: det.confidence }
            }
            None => AttrPrediction { class: 0, confidence: 0.0 },
        }
    }

    /// Motion from the first and last frame of a clip, read off the shift
    /// between the detected sprite boxes. A centered sprite whose pixels
    /// still change is spinning in place; one whose pixels hold is still.
    pub fn classify_motion(&self, first: &Array3<f64>, last: &Array3<f64>) -> AttrPrediction {
        let (_, h, w) = first.dim();
        let sizes = default_window_sizes(h, w);
        let (Some(a), Some(b)) = (
            self.detect_sprite(first, &sizes, 2, 0.3),
            self.detect_sprite(last, &sizes, 2, 0.3),
        ) else {
            return AttrPrediction { class: motion_class(Motion::Still), confidence: 0.0 };
        };
        let confidence = a.confidence.min(b.confidence);
        let center = |bx: &PixelBox| {
            ((bx.x0 + bx.x1) as f64 / 2.0, (bx.y0 + bx.y1) as f64 / 2.0)
        };
        let (ax, ay) = center(&a.box_);
        let (bx, by) = center(&b.box_);
        let (dx, dy) = (bx - ax, by - ay);
        let motion = if dx.abs().max(dy.abs()) < 1.5 {
            // in place: split spin from rest by pixel change within the box
            let y0 = a.box_.y0.min(b.box_.y0) as usize;
            let x0 = a.box_.x0.min(b.box_.x0) as usize;
            let y1 = (a.box_.y1.max(b.box_.y1) as usize).min(h);
            let x1 = (a.box_.x1.max(b.box_.x1) as usize).min(w);
            let mut diff = 0.0;
            let mut n = 0.0;
            for c in 0..3 {
                for y in y0..y1 {
                    for x in x0..x1 {
                        diff += (first[[c, y, x]] - last[[c, y, x]]).abs();
                        n += 1.0;
                    }
                }
            }
            if n > 0.0 && diff / n > 0.03 {
                Motion::Rotate
            } else {
                Motion::Still
            }
        } else if dx.abs() >= dy.abs() {
            if dx > 0.0 { Motion::Right } else { Motion::Left }
        } else if dy > 0.0 {
            Motion::Down
        } else {
            Motion::Up
        };
        AttrPrediction { class: motion_class(motion), confidence }
    }

    /// Slide square windows over the frame, score each for sprite presence
    /// in one batch, take the best, and tighten it to the pixels that
    /// deviate from the estimated background. `None` when nothing clears
    /// `min_conf`.
    pub fn detect_sprite(
        &self,
        frame: &Array3<f64>,
        window_sizes: &[usize],
        stride: usize,
        min_conf: f64,
    ) -> Option<Detection> {
        let (_, h, w) = frame.dim();
        let mut rows: Vec<Array1<f64>> = Vec::new();
        let mut meta: Vec<(usize, usize, usize)> = Vec::new();
        for &s in window_sizes {
            if s == 0 || s > h || s > w {
                continue;
            }
            for y0 in (0..=h - s).step_by(stride.max(1)) {
                for x0 in (0..=w - s).step_by(stride.max(1)) {
                    let win = frame
                        .slice(ndarray::s![.., y0..y0 + s, x0..x0 + s])
                        .to_owned();
                    rows.push(self.image_row(&win));
                    meta.push((y0, x0, s));
                }
            }
        }
        if rows.is_empty() {
            return None;
        }
        let mut batch = Array2::zeros((rows.len(), rows[0].len()));
        for (i, r) in rows.iter().enumerate() {
            batch.row_mut(i).assign(r);
        }
        let logits = self.head_logits(&self.crop_trunk, &self.object, &batch);
        let mut best = 0usize;
        let mut best_p = f64::NEG_INFINITY;
        for i in 0..logits.nrows() {
            let p = softmax_pair(logits[[i, 0]], logits[[i, 1]]);
            if p > best_p {
                best_p = p;
                best = i;
            }
        }
        if best_p < min_conf {
            return None;
        }
        let (y0, x0, s) = meta[best];
        let margin = 2usize;
        let region = PixelBox {
            x0: x0.saturating_sub(margin) as u32,
            y0: y0.saturating_sub(margin) as u32,
            x1: (x0 + s + margin).min(w) as u32,
            y1: (y0 + s + margin).min(h) as u32,
        };
        let bg = estimate_background(frame);
        let window_box = PixelBox {
            x0: x0 as u32,
            y0: y0 as u32,
            x1: (x0 + s) as u32,
            y1: (y0 + s) as u32,
        };
        let tight = tight_box(frame, region, bg, 0.06).unwrap_or(window_box);
        Some(Detection { box_: tight, confidence: best_p })
    }
}

/// Window edge lengths that cover both sprite scales in this frame geometry.
pub fn default_window_sizes(h: usize, w: usize) -> Vec<usize> {
    let m = h.min(w) as f64;
    let small = 2.0 * (idsprite_world::SCALE_SMALL * m / 4.0 + 1.0);
    let large = 2.0 * (idsprite_world::SCALE_LARGE * m / 4.0 + 1.0);
    let mut v = vec![small.round() as usize, large.round() as usize];
    v.dedup();
    v
}

/// Intersection-over-union of two half-open pixel boxes.
pub fn iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let ix0 = a.x0.max(b.x0);
    let iy0 = a.y0.max(b.y0);
    let ix1 = a.x1.min(b.x1);
    let iy1 = a.y1.min(b.y1);
    let inter = (ix1.saturating_sub(ix0) as u64) * (iy1.saturating_sub(iy0) as u64);
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

fn predict(logits: &Array2<f64>, row: usize) -> AttrPrediction {
    let r = logits.row(row);
    let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let (class, _) = r
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    AttrPrediction { class, confidence: exps[class] / z }
}

fn softmax_pair(l0: f64, l1: f64) -> f64 {
    let m = l0.max(l1);
    let e0 = (l0 - m).exp();
    let e1 = (l1 - m).exp();
    e1 / (e0 + e1)
}

/// Per-channel median of the frame's border pixels; the sprite never covers
/// the whole border, so this recovers the background color.
pub(crate) fn estimate_background(frame: &Array3<f64>) -> [f64; 3] {
    let (_, h, w) = frame.dim();
    let mut out = [0.0; 3];
    for c in 0..3 {
        let mut vals = Vec::with_capacity(2 * (h + w));
        for x in 0..w {
            vals.push(frame[[c, 0, x]]);
            vals.push(frame[[c, h - 1, x]]);
        }
        for y in 1..h.saturating_sub(1) {
            vals.push(frame[[c, y, 0]]);
            vals.push(frame[[c, y, w - 1]]);
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out[c] = vals[vals.len() / 2];
    }
    out
}

/// Tight bounding box of pixels inside `region` whose color deviates from
/// `bg` by more than `thresh` in any channel; `None` when nothing deviates.
pub(crate) fn tight_box(
    frame: &Array3<f64>,
    region: PixelBox,
    bg: [f64; 3],
    thresh: f64,
) -> Option<PixelBox> {
    let (mut x0, mut y0) = (u32::MAX, u32::MAX);
    let (mut x1, mut y1) = (0u32, 0u32);
    for y in region.y0..region.y1 {
        for x in region.x0..region.x1 {
            let dev = (0..3)
                .map(|c| (frame[[c, y as usize, x as usize]] - bg[c]).abs())
                .fold(0.0, f64::max);
            if dev > thresh {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    if x0 == u32::MAX {
        None
    } else {
        Some(PixelBox { x0, y0, x1, y1 })
    }
}
