//! Latent-space face masks and the masked reconstruction term.
//!
//! A pixel face box maps onto the latent grid conservatively: every latent
//! cell whose pixel footprint intersects the box is set. The alternative
//! construction — resize a pixel mask and threshold it — is kept alongside
//! because the two disagree near cell borders, and that disagreement is the
//! reason the box mapping exists.

use idsprite_diffusion::{ddpm_loss, NoiseDraw};
use idsprite_world::PixelBox;
use ndarray::{Array2, Array4};

use crate::TrainError;

/// Binary mask over the latent grid, `[F, 1, h, w]`, broadcast over channels.
/// Cells are 1 exactly where the face region supervises the reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxMask {
    data: Array4<f64>,
}

impl BoxMask {
    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    /// Number of set cells across all frames.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn shape(&self) -> [usize; 4] {
        let (f, c, h, w) = self.data.dim();
        [f, c, h, w]
    }
}

fn check_geometry(
    boxes: &[PixelBox],
    visibility: &[f64],
    frame_h: usize,
    frame_w: usize,
    f: usize,
) -> Result<(), TrainError> {
    if f == 0 || frame_h % f != 0 || frame_w % f != 0 {
        return Err(TrainError::Config(format!(
            "downsample factor {f} does not divide the {frame_h}x{frame_w} frame"
        )));
    }
    if boxes.len() != visibility.len() {
        return Err(TrainError::Shape(format!(
            "{} boxes but {} visibility entries",
            boxes.len(),
            visibility.len()
        )));
    }
    for (fr, (b, &vis)) in boxes.iter().zip(visibility).enumerate() {
        if vis <= 0.0 {
            continue;
        }
        if b.x1 <= b.x0 || b.y1 <= b.y0 {
            return Err(TrainError::EmptyBox { frame: fr });
        }
        if b.x1 as usize > frame_w || b.y1 as usize > frame_h {
            return Err(TrainError::Shape(format!(
                "frame {fr} box ({},{})-({},{}) exceeds the {frame_h}x{frame_w} frame",
                b.x0, b.y0, b.x1, b.y1
            )));
        }
    }
    Ok(())
}

/// Map per-frame pixel face boxes onto the latent grid.
///
/// A latent cell is set when its `f`x`f` pixel footprint intersects the box
/// — equivalently columns `floor(x0/f)..ceil(x1/f)` (half-open) and likewise
/// for rows — then the covered rectangle grows by `dilation` cells per side,
/// clamped to the grid. Frames with zero visibility contribute no cells; a
/// visible frame with an empty box is an error.
pub fn box_to_latent_mask(
    boxes: &[PixelBox],
    visibility: &[f64],
    frame_h: usize,
    frame_w: usize,
    f: usize,
    dilation: usize,
) -> Result<BoxMask, TrainError> {
    check_geometry(boxes, visibility, frame_h, frame_w, f)?;
    let (lh, lw) = (frame_h / f, frame_w / f);
    let mut data = Array4::zeros((boxes.len(), 1, lh, lw));
    for (fr, (b, &vis)) in boxes.iter().zip(visibility).enumerate() {
        if vis <= 0.0 {
            continue;
        }
        let cx0 = (b.x0 as usize / f).saturating_sub(dilation);
        let cx1 = ((b.x1 as usize).div_ceil(f) + dilation).min(lw);
        let cy0 = (b.y0 as usize / f).saturating_sub(dilation);
        let cy1 = ((b.y1 as usize).div_ceil(f) + dilation).min(lh);
        for y in cy0..cy1 {
            for x in cx0..cx1 {
                data[[fr, 0, y, x]] = 1.0;
            }
        }
    }
    Ok(BoxMask { data })
}

fn downscale_plane(src: &Array2<f64>, oh: usize, ow: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    Array2::from_shape_fn((oh, ow), |(oy, ox)| {
        let y = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let x = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (dy, dx) = (y - y0 as f64, x - x0 as f64);
        src[[y0, x0]] * (1.0 - dy) * (1.0 - dx)
            + src[[y0, x1]] * (1.0 - dy) * dx
            + src[[y1, x0]] * dy * (1.0 - dx)
            + src[[y1, x1]] * dy * dx
    })
}

/// The resize-then-threshold alternative: rasterize each box to a pixel
/// mask, bilinearly downscale it to the latent grid, and keep cells at or
/// above `threshold`. Point sampling can miss thin boxes entirely, which is
/// the misalignment the box mapping avoids; kept for comparison runs.
pub fn resized_latent_mask(
    boxes: &[PixelBox],
    visibility: &[f64],
    frame_h: usize,
    frame_w: usize,
    f: usize,
    threshold: f64,
) -> Result<BoxMask, TrainError> {
    check_geometry(boxes, visibility, frame_h, frame_w, f)?;
    let (lh, lw) = (frame_h / f, frame_w / f);
    let mut data = Array4::zeros((boxes.len(), 1, lh, lw));
    for (fr, (b, &vis)) in boxes.iter().zip(visibility).enumerate() {
        if vis <= 0.0 {
            continue;
        }
        let mut pixel = Array2::zeros((frame_h, frame_w));
        for y in b.y0 as usize..b.y1 as usize {
            for x in b.x0 as usize..b.x1 as usize {
                pixel[[y, x]] = 1.0;
            }
        }
        let small = downscale_plane(&pixel, lh, lw);
        for y in 0..lh {
            for x in 0..lw {
                if small[[y, x]] >= threshold {
                    data[[fr, 0, y, x]] = 1.0;
                }
            }
        }
    }
    Ok(BoxMask { data })
}

/// Mean squared latent error over masked cells only: the squared differences
/// under the mask, summed and divided by `channels * set-cell count`. An
/// empty mask contributes zero rather than dividing by zero.
pub fn masked_face_loss(
    z_video: &Array4<f64>,
    z_pred: &Array4<f64>,
    mask: &BoxMask,
) -> Result<f64, TrainError> {
    if z_video.dim() != z_pred.dim() {
        return Err(TrainError::Shape(format!(
            "latent {:?} vs prediction {:?}",
            z_video.dim(),
            z_pred.dim()
        )));
    }
    let (f, c, h, w) = z_video.dim();
    let [mf, _, mh, mw] = mask.shape();
    if (mf, mh, mw) != (f, h, w) {
        return Err(TrainError::Shape(format!(
            "mask {:?} vs latent {:?}",
            mask.shape(),
            z_video.dim()
        )));
    }
    let count = mask.count();
    if count == 0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for fr in 0..f {
        for y in 0..h {
            for x in 0..w {
                if mask.data[[fr, 0, y, x]] == 0.0 {
                    continue;
                }
                for ch in 0..c {
                    let d = z_video[[fr, ch, y, x]] - z_pred[[fr, ch, y, x]];
                    sum += d * d;
                }
            }
        }
    }
    Ok(sum / (c * count) as f64)
}

/// The two objective terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub ddpm: f64,
    pub face_box: f64,
    pub total: f64,
}

/// Combined objective: noise-prediction error plus `lambda` times the
/// masked reconstruction of the clean latent. `lambda = 0` reduces to the
/// noise term exactly.
pub fn total_loss(
    eps_true: &NoiseDraw,
    eps_pred: &Array4<f64>,
    z_video: &Array4<f64>,
    z_pred: &Array4<f64>,
    mask: &BoxMask,
    lambda: f64,
) -> Result<LossBreakdown, TrainError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(TrainError::Config(format!("mask weight {lambda} must be finite and >= 0")));
    }
    let ddpm = ddpm_loss(eps_true, eps_pred)?;
    let face_box = masked_face_loss(z_video, z_pred, mask)?;
    Ok(LossBreakdown { ddpm, face_box, total: ddpm + lambda * face_box })
}

#[cfg(test)]
mod tests {
    use super::*;
    use idsprite_core::rng;
    use rand::Rng;

    fn full(frames: usize) -> (Vec<PixelBox>, Vec<f64>) {
        (vec![PixelBox { x0: 0, y0: 0, x1: 32, y1: 32 }; frames], vec![1.0; frames])
    }

    /// Reference construction: enumerate every cell's pixel footprint, then
    /// grow the covered set by the dilation radius.
    fn oracle(
        boxes: &[PixelBox],
        visibility: &[f64],
        frame_h: usize,
        frame_w: usize,
        f: usize,
        d: usize,
    ) -> Array4<f64> {
        let (lh, lw) = (frame_h / f, frame_w / f);
        let mut out = Array4::zeros((boxes.len(), 1, lh, lw));
        for (fr, (b, &vis)) in boxes.iter().zip(visibility).enumerate() {
            if vis <= 0.0 {
                continue;
            }
            let mut base = vec![vec![false; lw]; lh];
            for (cy, row) in base.iter_mut().enumerate() {
                for (cx, cell) in row.iter_mut().enumerate() {
                    let (py0, py1) = (cy * f, cy * f + f);
                    let (px0, px1) = (cx * f, cx * f + f);
                    *cell = px0 < b.x1 as usize
                        && px1 > b.x0 as usize
                        && py0 < b.y1 as usize
                        && py1 > b.y0 as usize;
                }
            }
            for cy in 0..lh {
                for cx in 0..lw {
                    let hit = (cy.saturating_sub(d)..(cy + d + 1).min(lh)).any(|by| {
                        (cx.saturating_sub(d)..(cx + d + 1).min(lw)).any(|bx| base[by][bx])
                    });
                    if hit {
                        out[[fr, 0, cy, cx]] = 1.0;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn full_frame_box_sets_every_cell() {
        let (boxes, vis) = full(3);
        let m = box_to_latent_mask(&boxes, &vis, 32, 32, 4, 0).unwrap();
        assert_eq!(m.count(), 3 * 8 * 8);
    }

    #[test]
    fn box_maps_to_the_ceil_bounded_cell_range() {
        let boxes = [PixelBox { x0: 8, y0: 8, x1: 16, y1: 16 }];
        let m = box_to_latent_mask(&boxes, &[1.0], 32, 32, 4, 0).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let want = (2..4).contains(&y) && (2..4).contains(&x);
                assert_eq!(m.data()[[0, 0, y, x]] == 1.0, want, "cell ({y},{x})");
            }
        }
    }

    #[test]
    fn one_pixel_box_covers_one_cell_plus_dilation() {
        let boxes = [PixelBox { x0: 13, y0: 21, x1: 14, y1: 22 }];
        let m = box_to_latent_mask(&boxes, &[1.0], 32, 32, 4, 0).unwrap();
        assert_eq!(m.count(), 1);
        assert_eq!(m.data()[[0, 0, 5, 3]], 1.0);
        let m = box_to_latent_mask(&boxes, &[1.0], 32, 32, 4, 1).unwrap();
        assert_eq!(m.count(), 9);
    }

    #[test]
    fn mapping_matches_footprint_enumeration() {
        let mut r = rng::stream(41, "test/mask-oracle", &[]);
        for trial in 0..200 {
            let f = [2usize, 4, 8][trial % 3];
            let (h, w) = (32, 64);
            let d = trial % 3;
            let x0 = r.gen_range(0..w as u32 - 1);
            let y0 = r.gen_range(0..h as u32 - 1);
            let x1 = r.gen_range(x0 + 1..=w as u32);
            let y1 = r.gen_range(y0 + 1..=h as u32);
            let boxes = [PixelBox { x0, y0, x1, y1 }];
            let got = box_to_latent_mask(&boxes, &[1.0], h, w, f, d).unwrap();
            let want = oracle(&boxes, &[1.0], h, w, f, d);
            assert_eq!(got.data(), &want, "trial {trial} box {boxes:?} f={f} d={d}");
        }
    }

    #[test]
    fn hidden_frames_contribute_no_cells() {
        let boxes = vec![PixelBox { x0: 4, y0: 4, x1: 12, y1: 12 }; 2];
        let m = box_to_latent_mask(&boxes, &[0.0, 1.0], 32, 32, 4, 0).unwrap();
        assert!(m.data().index_axis(ndarray::Axis(0), 0).iter().all(|&v| v == 0.0));
        assert!(m.data().index_axis(ndarray::Axis(0), 1).iter().any(|&v| v == 1.0));
    }

    #[test]
    fn empty_box_on_a_visible_frame_is_rejected() {
        let boxes = [PixelBox { x0: 5, y0: 5, x1: 5, y1: 9 }];
        let err = box_to_latent_mask(&boxes, &[1.0], 32, 32, 4, 0).unwrap_err();
        assert!(matches!(err, TrainError::EmptyBox { frame: 0 }));
        // the same box on a hidden frame is fine
        assert!(box_to_latent_mask(&boxes, &[0.0], 32, 32, 4, 0).is_ok());
    }

    #[test]
    fn out_of_bounds_box_is_rejected() {
        let boxes = [PixelBox { x0: 28, y0: 0, x1: 36, y1: 8 }];
        assert!(matches!(
            box_to_latent_mask(&boxes, &[1.0], 32, 32, 4, 0),
            Err(TrainError::Shape(_))
        ));
    }

    #[test]
    fn resized_mask_misses_a_sliver_the_box_mapping_keeps() {
        // one pixel column pokes into the cells at x=8..9: the box mapping
        // covers that cell column, point-sampled resizing reads ~1/4 there
        let boxes = [PixelBox { x0: 4, y0: 4, x1: 9, y1: 12 }];
        let cons = box_to_latent_mask(&boxes, &[1.0], 32, 32, 4, 0).unwrap();
        let rsz = resized_latent_mask(&boxes, &[1.0], 32, 32, 4, 0.5).unwrap();
        assert!(cons.data()[[0, 0, 1, 2]] == 1.0);
        assert!(rsz.data()[[0, 0, 1, 2]] == 0.0);
        assert!(rsz.count() < cons.count());
    }

    #[test]
    fn resized_mask_agrees_on_cell_aligned_boxes() {
        let boxes = [PixelBox { x0: 8, y0: 8, x1: 24, y1: 24 }];
        let cons = box_to_latent_mask(&boxes, &[1.0], 32, 32, 4, 0).unwrap();
        let rsz = resized_latent_mask(&boxes, &[1.0], 32, 32, 4, 0.5).unwrap();
        assert_eq!(cons, rsz);
    }

    fn top_row_mask() -> BoxMask {
        // 2x2 latent grid with the top row set
        let boxes = [PixelBox { x0: 0, y0: 0, x1: 8, y1: 4 }];
        box_to_latent_mask(&boxes, &[1.0], 8, 8, 4, 0).unwrap()
    }

    #[test]
    fn masked_loss_matches_the_hand_case() {
        let mask = top_row_mask();
        let z = Array4::zeros((1, 1, 2, 2));
        let mut p = Array4::zeros((1, 1, 2, 2));
        p[[0, 0, 0, 0]] = 1.0;
        p[[0, 0, 0, 1]] = 2.0;
        p[[0, 0, 1, 0]] = 99.0;
        p[[0, 0, 1, 1]] = 99.0;
        let got = masked_face_loss(&z, &p, &mask).unwrap();
        assert!((got - 2.5).abs() < 1e-15);
    }

    #[test]
    fn masked_loss_degenerate_cases() {
        let mask = top_row_mask();
        let z = Array4::from_elem((1, 1, 2, 2), 0.7);
        assert_eq!(masked_face_loss(&z, &z, &mask).unwrap(), 0.0);

        let empty = box_to_latent_mask(
            &[PixelBox { x0: 0, y0: 0, x1: 8, y1: 8 }],
            &[0.0],
            8,
            8,
            4,
            0,
        )
        .unwrap();
        let p = Array4::from_elem((1, 1, 2, 2), 123.0);
        assert_eq!(masked_face_loss(&z, &p, &empty).unwrap(), 0.0);

        let wrong = Array4::zeros((1, 1, 4, 4));
        assert!(matches!(masked_face_loss(&z, &wrong, &mask), Err(TrainError::Shape(_))));
    }

    #[test]
    fn gradient_of_masked_loss_is_local_to_the_mask() {
        let mask = top_row_mask();
        let z = Array4::zeros((1, 1, 2, 2));
        let mut p = Array4::from_elem((1, 1, 2, 2), 0.3);
        let base = masked_face_loss(&z, &p, &mask).unwrap();

        p[[0, 0, 1, 1]] += 1e-3; // outside the mask
        assert_eq!(masked_face_loss(&z, &p, &mask).unwrap(), base);

        p[[0, 0, 0, 1]] += 1e-3; // inside the mask
        assert!(masked_face_loss(&z, &p, &mask).unwrap() != base);
    }

    #[test]
    fn objective_is_affine_in_the_mask_weight() {
        let mut r = rng::stream(9, "test/total-loss", &[]);
        let shape = [1usize, 1, 2, 2];
        let eps = NoiseDraw::standard(5, "test/loss-noise", &[0], shape);
        let to4 = |a: idsprite_core::Arr| a.into_dimensionality::<ndarray::Ix4>().unwrap();
        let eps_pred = to4(rng::normal(&mut r, &shape));
        let z = to4(rng::normal(&mut r, &shape));
        let zp = to4(rng::normal(&mut r, &shape));
        let mask = top_row_mask();

        let l0 = total_loss(&eps, &eps_pred, &z, &zp, &mask, 0.0).unwrap();
        let l1 = total_loss(&eps, &eps_pred, &z, &zp, &mask, 1.0).unwrap();
        let l2 = total_loss(&eps, &eps_pred, &z, &zp, &mask, 2.0).unwrap();
        assert_eq!(l0.total, l0.ddpm);
        assert_eq!(l1.total, l1.ddpm + l1.face_box);
        assert!(((l2.total - l1.total) - (l1.total - l0.total)).abs() < 1e-12);
        assert!(total_loss(&eps, &eps_pred, &z, &zp, &mask, -0.5).is_err());
    }
}
