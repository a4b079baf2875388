//! Deterministic bilinear resampling, used to bring variable-size crops and
//! frames to the fixed encoder input size.

use ndarray::{Array1, Array3};

/// Resize a `[C, H, W]` image with bilinear sampling (half-pixel centers,
/// edges clamped).
pub fn resize_bilinear(img: &Array3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (c, h, w) = img.dim();
    let mut out = Array3::zeros((c, out_h, out_w));
    for oy in 0..out_h {
        let sy = ((oy as f64 + 0.5) * h as f64 / out_h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx =
                ((ox as f64 + 0.5) * w as f64 / out_w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = sx - x0 as f64;
            for ch in 0..c {
                let a = img[[ch, y0, x0]] * (1.0 - wx) + img[[ch, y0, x1]] * wx;
                let b = img[[ch, y1, x0]] * (1.0 - wx) + img[[ch, y1, x1]] * wx;
                out[[ch, oy, ox]] = a * (1.0 - wy) + b * wy;
            }
        }
    }
    out
}

/// Flatten a `[C, H, W]` image into a feature row (channel-major order).
pub fn flatten_image(img: &Array3<f64>) -> Array1<f64> {
    Array1::from_iter(img.iter().cloned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn same_size_resize_is_identity() {
        let mut img = Array3::zeros((3, 4, 4));
        for (i, v) in img.iter_mut().enumerate() {
            *v = i as f64 * 0.01;
        }
        let out = resize_bilinear(&img, 4, 4);
        for (a, b) in img.iter().zip(out.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_image_stays_constant_under_scaling() {
        let img = Array3::from_elem((3, 5, 7), 0.4);
        let out = resize_bilinear(&img, 16, 16);
        assert!(out.iter().all(|&v| (v - 0.4).abs() < 1e-12));
    }

    #[test]
    fn downscale_averages_locally() {
        // 2x2 blocks of a checkerboard average to 0.5 at half resolution
        let mut img = Array3::zeros((3, 4, 4));
        for y in 0..4 {
            for x in 0..4 {
                let v = if (y + x) % 2 == 0 { 1.0 } else { 0.0 };
                for c in 0..3 {
                    img[[c, y, x]] = v;
                }
            }
        }
        let out = resize_bilinear(&img, 2, 2);
        for &v in out.iter() {
            assert_abs_diff_eq!(v, 0.5, epsilon = 1e-12);
        }
    }
}
