//! Pixel storage and crop extraction. Frames are stored as 8-bit channels
//! (the same representation they have on disk), so the in-memory pipeline
//! and the image-file pipeline see bit-identical values.

use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::identity::IdentitySpec;
use crate::scene::SceneSpec;
use crate::WorldError;

/// Half-open axis-aligned pixel box: x in [x0, x1), y in [y0, y1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelBox {
    pub fn width(&self) -> u32 {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> u32 {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }
}

/// 8-bit RGB frame stack of shape [F, 3, H, W]. Values quantize the real
/// color x to round(x * 255); `value` maps back to k / 255.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frames {
    f: usize,
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl Frames {
    pub fn new(f: usize, h: usize, w: usize) -> Self {
        Frames { f, h, w, data: vec![0; f * 3 * h * w] }
    }

    pub fn from_raw(f: usize, h: usize, w: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), f * 3 * h * w, "raw frame buffer has wrong length");
        Frames { f, h, w, data }
    }

    pub fn count(&self) -> usize {
        self.f
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    fn index(&self, f: usize, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(f < self.f && c < 3 && y < self.h && x < self.w);
        ((f * 3 + c) * self.h + y) * self.w + x
    }

    pub fn byte(&self, f: usize, c: usize, y: usize, x: usize) -> u8 {
        self.data[self.index(f, c, y, x)]
    }

    pub fn value(&self, f: usize, c: usize, y: usize, x: usize) -> f64 {
        self.byte(f, c, y, x) as f64 / 255.0
    }

    pub fn set(&mut self, f: usize, c: usize, y: usize, x: usize, value: f64) {
        let q = (value.clamp(0.0, 1.0) * 255.0).round() as u8;
        let i = self.index(f, c, y, x);
        self.data[i] = q;
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    /// Real-valued copy, shape [F, 3, H, W], entries in [0, 1].
    pub fn to_array4(&self) -> Array4<f64> {
        Array4::from_shape_fn((self.f, 3, self.h, self.w), |(f, c, y, x)| {
            self.value(f, c, y, x)
        })
    }

    /// One frame as [3, H, W].
    pub fn frame_array(&self, f: usize) -> Array3<f64> {
        Array3::from_shape_fn((3, self.h, self.w), |(c, y, x)| self.value(f, c, y, x))
    }
}

/// A rendered clip with its identity, scene, per-frame tight sprite boxes,
/// and per-frame visible sprite fraction (0 = fully occluded).
#[derive(Debug, Clone)]
pub struct SpriteVideo {
    pub frames: Frames,
    pub identity: IdentitySpec,
    pub scene: SceneSpec,
    pub boxes: Vec<PixelBox>,
    pub visibility: Vec<f64>,
}

impl SpriteVideo {
    pub fn frame_count(&self) -> usize {
        self.frames.count()
    }
}

/// A boxed region cut from one frame, carrying its identity label and
/// source coordinates.
#[derive(Debug, Clone)]
pub struct FaceCrop {
    pub pixels: Frames,
    pub source_box: PixelBox,
    pub source_identity_id: u32,
    pub source_video_id: String,
    pub frame_index: usize,
}

impl FaceCrop {
    /// Real-valued copy, shape [3, H', W'].
    pub fn to_array3(&self) -> Array3<f64> {
        self.pixels.frame_array(0)
    }
}

/// Cut the boxed sprite region out of one frame. Fails when the sprite is
/// fully occluded or out of view on that frame.
pub fn extract_face(
    video: &SpriteVideo,
    frame_index: usize,
    video_id: &str,
) -> Result<FaceCrop, WorldError> {
    let n = video.frame_count();
    if frame_index >= n {
        return Err(WorldError::FrameIndexOutOfRange { index: frame_index, frames: n });
    }
    let b = video.boxes[frame_index];
    if b.area() == 0 || video.visibility[frame_index] <= 0.0 {
        return Err(WorldError::NoDetection { frame: frame_index });
    }
    let (h, w) = (b.height() as usize, b.width() as usize);
    let mut pixels = Frames::new(1, h, w);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let v = video.frames.value(
                    frame_index,
                    c,
                    b.y0 as usize + y,
                    b.x0 as usize + x,
                );
                pixels.set(0, c, y, x, v);
            }
        }
    }
    Ok(FaceCrop {
        pixels,
        source_box: b,
        source_identity_id: video.identity.identity_id,
        source_video_id: video_id.to_string(),
        frame_index,
    })
}
