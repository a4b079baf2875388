//! Corpus construction: render videos per identity, attach captions, and
//! build reference crops under the three pairing regimes — same-video
//! (paired), different video of the same identity (cross-paired), and a
//! fresh re-render under a new scene (generated-cross-paired).

use rand::Rng;
use serde::{Deserialize, Serialize};

use idsprite_core::rng;

use crate::caption::{caption, CaptionStyle};
use crate::frames::{extract_face, FaceCrop, PixelBox, SpriteVideo};
use crate::identity::{allocate_identities, IdentitySpec};
use crate::render::render_video;
use crate::scene::{sample_scene, SceneSpec};
use crate::WorldError;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
const SCENE_RETRIES: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairKind {
    Paired,
    CrossPaired,
    GeneratedCrossPaired,
}

/// World geometry and caption policy for a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldParams {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub caption_style: CaptionStyle,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            frames: 16,
            height: 64,
            width: 64,
            caption_style: CaptionStyle::SCENE_ONLY,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PairSample {
    pub sample_id: u32,
    pub video_id: String,
    pub video: SpriteVideo,
    pub reference_crops: Vec<FaceCrop>,
    pub caption: String,
    pub pair_kind: PairKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropRef {
    pub source_video_id: String,
    pub frame_index: usize,
    pub source_box: PixelBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: u32,
    pub pair_kind: PairKind,
    pub identity_id: u32,
    pub identity: IdentitySpec,
    pub video_id: String,
    pub scene: SceneSpec,
    pub caption: String,
    pub crops: Vec<CropRef>,
    pub boxes: Vec<PixelBox>,
    pub visibility: Vec<f64>,
    pub scene_attempt: u32,
    pub regen_attempt: Option<u32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub paired: usize,
    pub cross_paired: usize,
    pub generated_cross_paired: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format_version: u32,
    pub corpus_seed: u64,
    pub n_identities: usize,
    pub videos_per_identity: usize,
    pub mix: [f64; 3],
    pub world: WorldParams,
    pub counts: KindCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Line-delimited serialization: header line, then one line per sample.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        out.push_str(&serde_json::to_string(&self.header).expect("serializable header"));
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("serializable entry"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, WorldError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header_line = lines
            .next()
            .ok_or_else(|| WorldError::Manifest("empty manifest".into()))?;
        let header: ManifestHeader = serde_json::from_str(header_line)
            .map_err(|e| WorldError::Manifest(format!("bad header: {e}")))?;
        if header.format_version != MANIFEST_FORMAT_VERSION {
            return Err(WorldError::Manifest(format!(
                "unsupported manifest format version {}",
                header.format_version
            )));
        }
        let mut entries = Vec::new();
        for line in lines {
            entries.push(
                serde_json::from_str(line)
                    .map_err(|e| WorldError::Manifest(format!("bad entry: {e}")))?,
            );
        }
        Ok(Manifest { header, entries })
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<PairSample>,
    pub manifest: Manifest,
}

/// Five uniformly spaced frame indices across a clip (first and last always
/// included when the clip has at least five frames).
pub fn crop_indices(frame_count: usize) -> [usize; 5] {
    std::array::from_fn(|i| {
        (i as f64 * (frame_count as f64 - 1.0) / 4.0).round() as usize
    })
}

fn nearest_visible(video: &SpriteVideo, want: usize) -> Option<usize> {
    (0..video.frame_count())
        .filter(|&f| video.visibility[f] > 0.0)
        .min_by_key(|&f| ((f as i64 - want as i64).abs(), f))
}

/// The five reference crops of a clip, taken at [`crop_indices`] (snapped to
/// the nearest visible frame when the sprite is occluded on a chosen one).
pub fn five_crops(
    video: &SpriteVideo,
    video_id: &str,
) -> Result<Vec<FaceCrop>, WorldError> {
    let mut crops = Vec::with_capacity(5);
    for want in crop_indices(video.frame_count()) {
        let f = nearest_visible(video, want).ok_or(WorldError::NoVisibleFrames)?;
        crops.push(extract_face(video, f, video_id)?);
    }
    Ok(crops)
}

/// Render a scene for (identity, indices) that leaves the sprite visible on
/// at least one frame, retrying with fresh scene draws when occlusion hides
/// it everywhere. Returns the video and the accepted attempt index.
fn render_visible(
    identity: &crate::identity::IdentitySpec,
    seed: u64,
    label: &str,
    indices: &[u64],
    params: &WorldParams,
) -> Result<(SpriteVideo, u32), WorldError> {
    for attempt in 0..SCENE_RETRIES {
        let mut idx = indices.to_vec();
        idx.push(attempt);
        let scene = sample_scene(seed, label, &idx, params.height, params.width);
        let video = render_video(identity, &scene, params.frames, params.height, params.width)?;
        if video.visibility.iter().any(|&v| v > 0.0) {
            return Ok((video, attempt as u32));
        }
    }
    Err(WorldError::NoVisibleFrames)
}

/// Build the corpus: `n_identities * videos_per_identity` samples, one per
/// rendered video, each with five reference crops whose source is chosen by
/// the pair-kind mix (paired / cross-paired / generated-cross-paired).
pub fn build_dataset(
    n_identities: usize,
    videos_per_identity: usize,
    mix: [f64; 3],
    seed: u64,
    params: &WorldParams,
) -> Result<Dataset, WorldError> {
    if mix.iter().any(|&m| m < 0.0) {
        return Err(WorldError::BadMix(format!("negative ratio in {mix:?}")));
    }
    let total: f64 = mix.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(WorldError::BadMix(format!("ratios {mix:?} sum to {total}, not 1")));
    }
    if mix[1] > 0.0 && videos_per_identity < 2 {
        return Err(WorldError::NeedsMultipleVideos);
    }
    if videos_per_identity == 0 {
        return Err(WorldError::BadMix("videos_per_identity must be >= 1".into()));
    }

    let identities = allocate_identities(n_identities, seed)?;

    // render the library of corpus videos
    let mut videos: Vec<Vec<(SpriteVideo, u32)>> = Vec::with_capacity(n_identities);
    for identity in &identities {
        let mut per_id = Vec::with_capacity(videos_per_identity);
        for v in 0..videos_per_identity {
            per_id.push(render_visible(
                identity,
                seed,
                "world/scene",
                &[identity.identity_id as u64, v as u64],
                params,
            )?);
        }
        videos.push(per_id);
    }

    let mut samples = Vec::new();
    let mut entries = Vec::new();
    let mut counts = KindCounts::default();
    let mut sample_id: u32 = 0;

    for (ii, identity) in identities.iter().enumerate() {
        for v in 0..videos_per_identity {
            let (video, scene_attempt) = &videos[ii][v];
            let video_id = format!("id{:02}-v{}", identity.identity_id, v);

            let u: f64 = rng::stream(seed, "world/kind", &[sample_id as u64]).gen_range(0.0..1.0);
            let pair_kind = if u < mix[0] {
                PairKind::Paired
            } else if u < mix[0] + mix[1] {
                PairKind::CrossPaired
            } else {
                PairKind::GeneratedCrossPaired
            };

            let mut regen_attempt = None;
            let reference_crops = match pair_kind {
                PairKind::Paired => {
                    counts.paired += 1;
                    five_crops(video, &video_id)?
                }
                PairKind::CrossPaired => {
                    counts.cross_paired += 1;
                    let mut r = rng::stream(seed, "world/crossvid", &[sample_id as u64]);
                    let mut other = r.gen_range(0..videos_per_identity - 1);
                    if other >= v {
                        other += 1;
                    }
                    let other_id = format!("id{:02}-v{}", identity.identity_id, other);
                    five_crops(&videos[ii][other].0, &other_id)?
                }
                PairKind::GeneratedCrossPaired => {
                    counts.generated_cross_paired += 1;
                    let (fresh, attempt) = render_visible(
                        identity,
                        seed,
                        "world/regen",
                        &[sample_id as u64],
                        params,
                    )?;
                    regen_attempt = Some(attempt);
                    let gen_id = format!("id{:02}-gen{}", identity.identity_id, sample_id);
                    five_crops(&fresh, &gen_id)?
                }
            };

            let text = caption(identity, &video.scene, params.caption_style, None);
            entries.push(ManifestEntry {
                sample_id,
                pair_kind,
                identity_id: identity.identity_id,
                identity: *identity,
                video_id: video_id.clone(),
                scene: video.scene,
                caption: text.clone(),
                boxes: video.boxes.clone(),
                visibility: video.visibility.clone(),
                crops: reference_crops
                    .iter()
                    .map(|c| CropRef {
                        source_video_id: c.source_video_id.clone(),
                        frame_index: c.frame_index,
                        source_box: c.source_box,
                    })
                    .collect(),
                scene_attempt: *scene_attempt,
                regen_attempt,
            });
            samples.push(PairSample {
                sample_id,
                video_id,
                video: video.clone(),
                reference_crops,
                caption: text,
                pair_kind,
            });
            sample_id += 1;
        }
    }

    let manifest = Manifest {
        header: ManifestHeader {
            format_version: MANIFEST_FORMAT_VERSION,
            corpus_seed: seed,
            n_identities,
            videos_per_identity,
            mix,
            world: *params,
            counts,
        },
        entries,
    };
    Ok(Dataset { samples, manifest })
}
