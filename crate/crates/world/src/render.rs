//! Deterministic sprite renderer: anti-aliased shapes with identity-defining
//! markings, scene-driven motion/lighting/occlusion, tight per-frame boxes,
//! and per-frame visible-sprite fractions.

use crate::frames::{Frames, PixelBox, SpriteVideo};
use crate::identity::{IdentitySpec, Marking, Shape};
use crate::scene::{sprite_outer_radius, sprite_radius, Motion, Occlusion, SceneSpec};
use crate::WorldError;

const SUBSAMPLES: [f64; 3] = [-1.0 / 3.0, 0.0, 1.0 / 3.0];
const OCCLUDER_COLOR: [f64; 3] = [0.25, 0.25, 0.25];
/// Markings are drawn in a darkened version of the base color.
const MARKING_SHADE: f64 = 0.45;

fn shape_contains(shape: Shape, u: f64, v: f64) -> bool {
    match shape {
        Shape::Circle => u * u + v * v <= 1.0,
        Shape::Square => u.abs().max(v.abs()) <= 0.82,
        Shape::Triangle => {
            // equilateral, apex at the top of the sprite (screen y grows down)
            const A: (f64, f64) = (0.0, -1.0);
            const B: (f64, f64) = (0.866_025_403_784_438_6, 0.5);
            const C: (f64, f64) = (-0.866_025_403_784_438_6, 0.5);
            same_side_as_centroid(A, B, (u, v))
                && same_side_as_centroid(B, C, (u, v))
                && same_side_as_centroid(C, A, (u, v))
        }
        // concave diamond: a four-pointed star
        Shape::Star => u.abs().sqrt() + v.abs().sqrt() <= 1.0,
    }
}

fn same_side_as_centroid(p: (f64, f64), q: (f64, f64), t: (f64, f64)) -> bool {
    let f = |r: (f64, f64)| (q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0);
    f(t) * f((0.0, 0.0)) >= 0.0
}

fn marking_contains(marking: Marking, u: f64, v: f64) -> bool {
    match marking {
        Marking::Stripe => ((v + 1.0) * 2.0).floor() as i64 % 2 == 0,
        Marking::Dot => u * u + v * v <= 0.45 * 0.45,
        Marking::Ring => {
            let r2 = u * u + v * v;
            (0.6 * 0.6..=0.85 * 0.85).contains(&r2)
        }
        Marking::None => false,
    }
}

fn occluder_contains(occ: Occlusion, px: f64, py: f64, h: usize, w: usize) -> bool {
    match occ {
        Occlusion::None => false,
        Occlusion::Bar => px >= 0.40 * w as f64 && px < 0.65 * w as f64,
        Occlusion::Corner => px < 0.30 * w as f64 && py < 0.30 * h as f64,
    }
}

/// Render F frames of one identity in one scene. Pure function of its
/// arguments; boxes are tight to the anti-aliased sprite extent.
pub fn render_video(
    identity: &IdentitySpec,
    scene: &SceneSpec,
    f: usize,
    h: usize,
    w: usize,
) -> Result<SpriteVideo, WorldError> {
    if f == 0 {
        return Err(WorldError::NoFrames);
    }
    if h < 16 || w < 16 {
        return Err(WorldError::FrameTooSmall { h, w });
    }
    let r = sprite_radius(scene.sprite_scale, h, w);
    let pad = sprite_outer_radius(scene.sprite_scale, h, w);
    if 2.0 * pad >= h.min(w) as f64 {
        return Err(WorldError::SpriteDoesNotFit { radius: pad, h, w });
    }
    let (sx, sy) = scene.start_position;
    if sx < pad || sx > w as f64 - 1.0 - pad || sy < pad || sy > h as f64 - 1.0 - pad {
        return Err(WorldError::StartOutOfBounds { x: sx, y: sy });
    }

    let (vx, vy) = scene.motion.velocity();
    let omega = if scene.motion == Motion::Rotate {
        (1.2 / r).clamp(0.15, 0.7)
    } else {
        0.0
    };
    let base = identity.base_color;
    let shade = [base[0] * MARKING_SHADE, base[1] * MARKING_SHADE, base[2] * MARKING_SHADE];
    let bg = scene.background_color();
    let gain = scene.lighting_gain;

    let mut frames = Frames::new(f, h, w);
    let mut boxes = Vec::with_capacity(f);
    let mut visibility = Vec::with_capacity(f);

    for fi in 0..f {
        let cx = (sx + vx * fi as f64).clamp(pad, w as f64 - 1.0 - pad);
        let cy = (sy + vy * fi as f64).clamp(pad, h as f64 - 1.0 - pad);
        let theta = omega * fi as f64;
        let (cos_t, sin_t) = (theta.cos(), theta.sin());

        let mut xmin = w;
        let mut xmax = 0usize;
        let mut ymin = h;
        let mut ymax = 0usize;
        let mut sprite_subs = 0u64;
        let mut visible_subs = 0u64;

        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0f64; 3];
                let mut covered = false;
                for dy in SUBSAMPLES {
                    for dx in SUBSAMPLES {
                        let px = x as f64 + dx;
                        let py = y as f64 + dy;
                        let rx = px - cx;
                        let ry = py - cy;
                        // rotate into sprite-local coordinates
                        let u = (rx * cos_t + ry * sin_t) / r;
                        let v = (-rx * sin_t + ry * cos_t) / r;
                        let in_sprite = shape_contains(identity.shape, u, v);
                        let occluded = occluder_contains(scene.occlusion, px, py, h, w);
                        if in_sprite {
                            covered = true;
                            sprite_subs += 1;
                            if !occluded {
                                visible_subs += 1;
                            }
                        }
                        let color = if occluded {
                            &OCCLUDER_COLOR
                        } else if in_sprite {
                            if marking_contains(identity.marking, u, v) {
                                &shade
                            } else {
                                &base
                            }
                        } else {
                            &bg
                        };
                        for c in 0..3 {
                            acc[c] += color[c];
                        }
                    }
                }
                for c in 0..3 {
                    frames.set(fi, c, y, x, acc[c] / 9.0 * gain);
                }
                if covered {
                    xmin = xmin.min(x);
                    xmax = xmax.max(x);
                    ymin = ymin.min(y);
                    ymax = ymax.max(y);
                }
            }
        }
        // the sprite center is clamped inside the frame, so coverage is
        // never empty
        debug_assert!(xmin <= xmax && ymin <= ymax);
        boxes.push(PixelBox {
            x0: xmin as u32,
            y0: ymin as u32,
            x1: xmax as u32 + 1,
            y1: ymax as u32 + 1,
        });
        visibility.push(if sprite_subs == 0 {
            0.0
        } else {
            visible_subs as f64 / sprite_subs as f64
        });
    }

    Ok(SpriteVideo { frames, identity: *identity, scene: *scene, boxes, visibility })
}
