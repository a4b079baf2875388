//! Corpus disk layout: a manifest line file plus one directory per sample
//! holding lossless frame and crop images. Because frames are stored as
//! 8-bit values in memory, the disk round trip is bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::{Dataset, Manifest, PairSample};
use crate::frames::{FaceCrop, Frames, SpriteVideo};
use crate::WorldError;

fn sample_dir(root: &Path, sample_id: u32) -> PathBuf {
    root.join("samples").join(format!("s{sample_id:05}"))
}

fn write_png(path: &Path, frames: &Frames, frame: usize) -> Result<(), WorldError> {
    let (h, w) = (frames.height(), frames.width());
    // channel-planar -> interleaved RGB
    let mut buf = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                buf.push(frames.byte(frame, c, y, x));
            }
        }
    }
    image::save_buffer(path, &buf, w as u32, h as u32, image::ExtendedColorType::Rgb8)
        .map_err(|e| WorldError::Image(format!("{}: {e}", path.display())))
}

fn read_png(path: &Path) -> Result<Frames, WorldError> {
    let img = image::open(path)
        .map_err(|e| WorldError::Image(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut raw = vec![0u8; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let p = img.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                raw[(c * h + y) * w + x] = p[c];
            }
        }
    }
    Ok(Frames::from_raw(1, h, w, raw))
}

/// Write manifest and per-sample images under `root`.
pub fn write_corpus(root: &Path, dataset: &Dataset) -> Result<(), WorldError> {
    fs::create_dir_all(root)?;
    fs::write(root.join("manifest.jsonl"), dataset.manifest.to_jsonl())?;
    for s in &dataset.samples {
        let dir = sample_dir(root, s.sample_id);
        fs::create_dir_all(&dir)?;
        for f in 0..s.video.frame_count() {
            write_png(&dir.join(format!("frame_{f:03}.png")), &s.video.frames, f)?;
        }
        for (i, crop) in s.reference_crops.iter().enumerate() {
            write_png(&dir.join(format!("crop_{i}.png")), &crop.pixels, 0)?;
        }
    }
    Ok(())
}

/// Rebuild the in-memory dataset from `root`. Everything except pixel data
/// comes from the manifest; pixels come from the lossless images.
pub fn read_corpus(root: &Path) -> Result<Dataset, WorldError> {
    let manifest_text = fs::read_to_string(root.join("manifest.jsonl"))?;
    let manifest = Manifest::from_jsonl(&manifest_text)?;
    let world = manifest.header.world;
    let mut samples = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let dir = sample_dir(root, e.sample_id);
        let mut raw = Vec::with_capacity(world.frames * 3 * world.height * world.width);
        for f in 0..world.frames {
            let one = read_png(&dir.join(format!("frame_{f:03}.png")))?;
            if one.height() != world.height || one.width() != world.width {
                return Err(WorldError::Manifest(format!(
                    "frame {f} of sample {} has geometry {}x{}, manifest says {}x{}",
                    e.sample_id,
                    one.height(),
                    one.width(),
                    world.height,
                    world.width
                )));
            }
            raw.extend_from_slice(one.raw());
        }
        let frames = Frames::from_raw(world.frames, world.height, world.width, raw);
        let video = SpriteVideo {
            frames,
            identity: e.identity,
            scene: e.scene,
            boxes: e.boxes.clone(),
            visibility: e.visibility.clone(),
        };
        let mut reference_crops = Vec::with_capacity(e.crops.len());
        for (i, cr) in e.crops.iter().enumerate() {
            let pixels = read_png(&dir.join(format!("crop_{i}.png")))?;
            reference_crops.push(FaceCrop {
                pixels,
                source_box: cr.source_box,
                source_identity_id: e.identity.identity_id,
                source_video_id: cr.source_video_id.clone(),
                frame_index: cr.frame_index,
            });
        }
        samples.push(PairSample {
            sample_id: e.sample_id,
            video_id: e.video_id.clone(),
            video,
            reference_crops,
            caption: e.caption.clone(),
            pair_kind: e.pair_kind,
        });
    }
    Ok(Dataset { samples, manifest })
}
