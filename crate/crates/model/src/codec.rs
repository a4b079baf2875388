//! Per-frame patch codec between pixel space and the diffusion latent space.
//!
//! Each frame is cut into non-overlapping f x f patches; an MLP maps every
//! patch to a C-channel latent cell and a second MLP maps it back. Frames
//! never mix, so perturbing frame j cannot change latent frame i != j.

use idsprite_core::nn::{Mlp2, ParamStore};
use idsprite_core::{rng, Graph};
use idsprite_world::FaceCrop;
use ndarray::{Array2, Array3, Array4};

use crate::EncoderConfig;
use crate::ModelError;

pub(crate) fn build_codec<R: rand::Rng>(
    store: &mut ParamStore,
    cfg: &EncoderConfig,
    rng_: &mut R,
) -> (Mlp2, Mlp2) {
    let d_patch = 3 * cfg.f * cfg.f;
    let enc = Mlp2::new(store, "codec.enc", d_patch, cfg.codec_hidden, cfg.latent_channels, rng_);
    let dec = Mlp2::new(store, "codec.dec", cfg.latent_channels, cfg.codec_hidden, d_patch, rng_);
    (enc, dec)
}

/// Flatten [F, 3, H, W] frames into patch rows [F*hp*wp, 3*f*f], channel-major
/// within each patch. Row order: frame, then patch row, then patch column.
pub(crate) fn patch_rows(frames: &Array4<f64>, f: usize) -> Result<Array2<f64>, ModelError> {
    let (nf, c, h, w) = frames.dim();
    if c != 3 {
        return Err(ModelError::Shape(format!("expected 3 channels, got {c}")));
    }
    if h % f != 0 || w % f != 0 {
        return Err(ModelError::Shape(format!(
            "frame size {h}x{w} not divisible by downsample factor {f}"
        )));
    }
    let (hp, wp) = (h / f, w / f);
    let mut rows = Array2::zeros((nf * hp * wp, 3 * f * f));
    for fi in 0..nf {
        for py in 0..hp {
            for px in 0..wp {
                let row = (fi * hp + py) * wp + px;
                for ch in 0..3 {
                    for y in 0..f {
                        for x in 0..f {
                            rows[[row, (ch * f + y) * f + x]] =
                                frames[[fi, ch, py * f + y, px * f + x]];
                        }
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// Inverse of [`patch_rows`]: scatter patch rows back into [F, 3, H, W].
pub(crate) fn rows_to_frames(
    rows: &Array2<f64>,
    f: usize,
    nf: usize,
    h: usize,
    w: usize,
) -> Array4<f64> {
    let (hp, wp) = (h / f, w / f);
    let mut frames = Array4::zeros((nf, 3, h, w));
    for fi in 0..nf {
        for py in 0..hp {
            for px in 0..wp {
                let row = (fi * hp + py) * wp + px;
                for ch in 0..3 {
                    for y in 0..f {
                        for x in 0..f {
                            frames[[fi, ch, py * f + y, px * f + x]] =
                                rows[[row, (ch * f + y) * f + x]];
                        }
                    }
                }
            }
        }
    }
    frames
}

/// Frozen pixel<->latent codec with a measured normalization scale.
pub struct LatentCodec {
    pub store: ParamStore,
    pub(crate) enc: Mlp2,
    pub(crate) dec: Mlp2,
    pub f: usize,
    pub channels: usize,
    /// Latents are divided by this on encode and multiplied back on decode;
    /// measured during pretraining so unit-variance noise matches the data.
    pub latent_scale: f64,
}

impl LatentCodec {
    pub fn new(cfg: &EncoderConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut r = rng::stream(seed, "codec/init", &[]);
        let (enc, dec) = build_codec(&mut store, cfg, &mut r);
        LatentCodec { store, enc, dec, f: cfg.f, channels: cfg.latent_channels, latent_scale: 1.0 }
    }

    pub fn latent_size(&self, h: usize, w: usize) -> Result<(usize, usize), ModelError> {
        if h % self.f != 0 || w % self.f != 0 {
            return Err(ModelError::Shape(format!(
                "frame size {h}x{w} not divisible by downsample factor {}",
                self.f
            )));
        }
        Ok((h / self.f, w / self.f))
    }

    /// [F, 3, H, W] pixels in [0,1] -> [F, C, H/f, W/f] normalized latents.
    pub fn encode_frames(&self, frames: &Array4<f64>) -> Result<Array4<f64>, ModelError> {
        let (nf, _, h, w) = frames.dim();
        let (hp, wp) = self.latent_size(h, w)?;
        let rows = patch_rows(frames, self.f)?;
        let out = self.run(&self.enc, &rows);
        let mut z = Array4::zeros((nf, self.channels, hp, wp));
        for fi in 0..nf {
            for py in 0..hp {
                for px in 0..wp {
                    let row = (fi * hp + py) * wp + px;
                    for c in 0..self.channels {
                        z[[fi, c, py, px]] = out[[row, c]] / self.latent_scale;
                    }
                }
            }
        }
        Ok(z)
    }

    /// [F, C, h, w] latents -> [F, 3, H, W] pixel estimates (unclamped).
    pub fn decode_frames(&self, z: &Array4<f64>) -> Result<Array4<f64>, ModelError> {
        let (nf, c, hp, wp) = z.dim();
        if c != self.channels {
            return Err(ModelError::Shape(format!(
                "expected {} latent channels, got {c}",
                self.channels
            )));
        }
        let mut rows = Array2::zeros((nf * hp * wp, self.channels));
        for fi in 0..nf {
            for py in 0..hp {
                for px in 0..wp {
                    let row = (fi * hp + py) * wp + px;
                    for ch in 0..self.channels {
                        rows[[row, ch]] = z[[fi, ch, py, px]] * self.latent_scale;
                    }
                }
            }
        }
        let out = self.run(&self.dec, &rows);
        Ok(rows_to_frames(&out, self.f, nf, hp * self.f, wp * self.f))
    }

    /// Encode one frame [3, H, W] -> [C, h, w].
    pub fn encode_frame(&self, frame: &Array3<f64>) -> Result<Array3<f64>, ModelError> {
        let (c, h, w) = frame.dim();
        let mut stack = Array4::zeros((1, c, h, w));
        stack.index_axis_mut(ndarray::Axis(0), 0).assign(frame);
        let z = self.encode_frames(&stack)?;
        Ok(z.index_axis(ndarray::Axis(0), 0).to_owned())
    }

    /// Face-latent path: paste the crop centered on a zero canvas of the
    /// working frame size, then encode that single frame.
    pub fn encode_face(
        &self,
        crop: &FaceCrop,
        frame_h: usize,
        frame_w: usize,
    ) -> Result<Array3<f64>, ModelError> {
        let img = crop.to_array3();
        let (_, ch, cw) = img.dim();
        if ch > frame_h || cw > frame_w {
            return Err(ModelError::Shape(format!(
                "crop {ch}x{cw} larger than frame {frame_h}x{frame_w}"
            )));
        }
        let y0 = (frame_h - ch) / 2;
        let x0 = (frame_w - cw) / 2;
        let mut canvas = Array3::zeros((3, frame_h, frame_w));
        for c in 0..3 {
            for y in 0..ch {
                for x in 0..cw {
                    canvas[[c, y0 + y, x0 + x]] = img[[c, y, x]];
                }
            }
        }
        self.encode_frame(&canvas)
    }

    fn run(&self, mlp: &Mlp2, rows: &Array2<f64>) -> Array2<f64> {
        let mut g = Graph::new();
        let x = g.constant(rows.clone().into_dyn());
        let y = mlp.forward(&mut g, &self.store, x);
        let v = g.value(y);
        Array2::from_shape_vec((rows.nrows(), v.shape()[1]), v.iter().cloned().collect())
            .expect("codec output shape")
    }
}
