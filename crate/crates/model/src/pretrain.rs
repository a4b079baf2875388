//! One-shot training of the frozen encoder family on a rendered corpus.
//!
//! Five phases, each deterministic in the seed: the patch codec (pixel
//! reconstruction), the vision/text pair (symmetric contrastive loss over
//! crop-caption pairs), the identity encoder (classification over identity
//! ids, head discarded), the attribute classifiers, and finally measurement:
//! reconstruction error, feature margins, retrieval accuracy, and linear
//! probes, all on held-out videos. The contrastive phase always builds
//! identity-bearing captions for its pairs, whatever caption style the
//! corpus itself uses, because text must be able to name the sprite there.

use std::collections::BTreeMap;

use idsprite_core::nn::{Embedding, Linear, Mlp2, ParamStore};
use idsprite_core::opt::Adam;
use idsprite_core::{rng, Graph, NodeId};
use idsprite_world::{caption, CaptionStyle, Dataset, IDENTITY_SPACE};
use ndarray::{Array1, Array2, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{EncoderHeader, EncoderSet, ENCODER_FORMAT_VERSION};
use crate::classifier::{
    bg_class, color_class, default_window_sizes, iou, marking_class, motion_class,
    occlusion_class, scale_class, shape_class, AttrAccuracy, AttrNets,
};
use crate::codec::{patch_rows, LatentCodec};
use crate::encoders::{
    build_identity, build_vision, crop_features, cosine, IdentityEncoder, VisionEncoder,
};
use crate::resize::{flatten_image, resize_bilinear};
use crate::text::{build_text, tokenize, vocabulary, TextEncoder};
use crate::{EncoderConfig, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub encoder: EncoderConfig,
    pub seed: u64,
    /// Every k-th video is held out of all training phases.
    pub holdout_every: usize,
    pub codec_steps: usize,
    pub codec_batch: usize,
    pub codec_lr: f64,
    pub contrastive_steps: usize,
    pub contrastive_batch: usize,
    pub contrastive_lr: f64,
    /// Softmax temperature of the contrastive loss.
    pub temperature: f64,
    pub identity_steps: usize,
    pub identity_batch: usize,
    pub identity_lr: f64,
    pub attr_steps: usize,
    pub attr_batch: usize,
    pub attr_lr: f64,
    pub probe_steps: usize,
    pub probe_lr: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            encoder: EncoderConfig::default(),
            seed: 0,
            holdout_every: 5,
            codec_steps: 300,
            codec_batch: 64,
            codec_lr: 3e-3,
            contrastive_steps: 600,
            contrastive_batch: 12,
            contrastive_lr: 2e-3,
            temperature: 0.07,
            identity_steps: 800,
            identity_batch: 32,
            identity_lr: 2e-3,
            attr_steps: 800,
            attr_batch: 24,
            attr_lr: 2e-3,
            probe_steps: 300,
            probe_lr: 5e-2,
        }
    }
}

/// Quantities measured on held-out videos at the end of pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Mean per-pixel squared reconstruction error of the codec.
    pub tau_codec: f64,
    pub latent_scale: f64,
    /// Mean intra-identity minus mean inter-identity cosine of the identity
    /// embedding.
    pub identity_margin: f64,
    /// Mean matching-caption minus mean other-caption cosine between crop
    /// features and caption vectors.
    pub text_margin: f64,
    /// Fraction of held-out crops whose nearest training crop (by identity
    /// embedding cosine) shares their identity.
    pub retrieval_accuracy: f64,
    pub attr: AttrAccuracy,
    /// Held-out accuracy of a linear background probe on each feature space;
    /// the vision space should beat the identity space.
    pub probe_bg_from_vision: f64,
    pub probe_bg_from_identity: f64,
    pub holdout_crops: usize,
    pub final_codec_loss: f64,
    pub final_contrastive_loss: f64,
    pub final_identity_loss: f64,
    pub final_attr_loss: f64,
}

struct CropRec {
    row: Array1<f64>,
    identity: u32,
    shape: usize,
    color: usize,
    marking: usize,
    bg: usize,
    caption: String,
    token_ids: Vec<usize>,
    holdout: bool,
}

struct FrameRec {
    row: Array1<f64>,
    bg: usize,
    occl: usize,
    holdout: bool,
}

struct WindowRec {
    row: Array1<f64>,
    sprite: bool,
    holdout: bool,
}

struct Data {
    crops: Vec<CropRec>,
    frames: Vec<FrameRec>,
    windows: Vec<WindowRec>,
    patch_pool: Array2<f64>,
    holdout_videos: Vec<Array4<f64>>,
}

fn check_finite(step: usize, loss: f64) -> Result<f64, ModelError> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(ModelError::Divergence { step, loss })
    }
}

/// Light pixel-noise augmentation; the corpora are small enough that the
/// classification phases memorize exact pixels without it.
fn add_noise<R: Rng>(rows: &mut Array2<f64>, r: &mut R, sigma: f64) {
    let noise = rng::normal(r, &[rows.nrows(), rows.ncols()]);
    rows.zip_mut_with(&noise.into_dimensionality::<ndarray::Ix2>().expect("2-d"), |a, b| {
        *a += sigma * b
    });
}

fn image_row(img: &ndarray::Array3<f64>, input_size: usize) -> Array1<f64> {
    flatten_image(&resize_bilinear(img, input_size, input_size))
}

fn collect_data(dataset: &Dataset, cfg: &PretrainConfig) -> Result<Data, ModelError> {
    let vocab = vocabulary();
    let s = cfg.encoder.input_size;
    let mut crops = Vec::new();
    let mut frames = Vec::new();
    let mut windows = Vec::new();
    let mut pool_rows: Vec<Array2<f64>> = Vec::new();
    let mut holdout_videos = Vec::new();

    for (vi, sample) in dataset.samples.iter().enumerate() {
        let holdout = vi % cfg.holdout_every == 0;
        let video = &sample.video;
        let id = &video.identity;
        let scene = &video.scene;
        let text = caption(id, scene, CaptionStyle::WITH_IDENTITY, None);
        let token_ids = tokenize(&text, &vocab)?;
        if token_ids.len() > cfg.encoder.max_tokens {
            return Err(ModelError::CaptionTooLong {
                len: token_ids.len(),
                max: cfg.encoder.max_tokens,
            });
        }

        let five = idsprite_world::five_crops(video, &sample.video_id)?;
        for crop in &five {
            let row = crop_features(crop, s)?;
            windows.push(WindowRec { row: row.clone(), sprite: true, holdout });
            crops.push(CropRec {
                row,
                identity: id.identity_id,
                shape: shape_class(id.shape),
                color: color_class(id.color),
                marking: marking_class(id.marking),
                bg: bg_class(scene.background),
                caption: text.clone(),
                token_ids: token_ids.clone(),
                holdout,
            });
        }

        let stack = video.frames.to_array4();
        let nf = video.frame_count();
        let fs = s * 2;
        for f in 0..nf {
            frames.push(FrameRec {
                row: image_row(&video.frames.frame_array(f), fs),
                bg: bg_class(scene.background),
                occl: occlusion_class(scene.occlusion),
                holdout,
            });
        }
        // sprite-free windows as detection negatives
        let (h, w) = (video.frames.height(), video.frames.width());
        let sizes = default_window_sizes(h, w);
        let mut r = rng::stream(cfg.seed, "pretrain/negwin", &[vi as u64]);
        for (k, &ws) in sizes.iter().enumerate() {
            if ws > h || ws > w {
                continue;
            }
            for _ in 0..2 {
                let f = (k * 2 + 1) % nf;
                let sprite_box = video.boxes[f];
                let visible = video.visibility[f] > 0.0;
                for _attempt in 0..20 {
                    let y0 = r.gen_range(0..=h - ws);
                    let x0 = r.gen_range(0..=w - ws);
                    let cand = idsprite_world::PixelBox {
                        x0: x0 as u32,
                        y0: y0 as u32,
                        x1: (x0 + ws) as u32,
                        y1: (y0 + ws) as u32,
                    };
                    if visible && iou(&cand, &sprite_box) >= 0.05 {
                        continue;
                    }
                    let win = video
                        .frames
                        .frame_array(f)
                        .slice(ndarray::s![.., y0..y0 + ws, x0..x0 + ws])
                        .to_owned();
                    windows.push(WindowRec { row: image_row(&win, s), sprite: false, holdout });
                    break;
                }
            }
        }

        if holdout {
            holdout_videos.push(stack);
        } else {
            pool_rows.push(patch_rows(&stack, cfg.encoder.f)?);
        }
    }

    if holdout_videos.is_empty() || pool_rows.len() < 2 {
        return Err(ModelError::ConfigMismatch(
            "corpus too small to split into training and holdout videos".into(),
        ));
    }

    // The patch pool gets a slab of all-zero rows so the codec also learns
    // the blank canvas that pads face latents.
    let d_patch = 3 * cfg.encoder.f * cfg.encoder.f;
    let n_data: usize = pool_rows.iter().map(|r| r.nrows()).sum();
    let n_zero = (n_data / 20).max(8);
    let mut patch_pool = Array2::zeros((n_data + n_zero, d_patch));
    let mut at = 0;
    for block in &pool_rows {
        for row in block.rows() {
            patch_pool.row_mut(at).assign(&row);
            at += 1;
        }
    }

    Ok(Data { crops, frames, windows, patch_pool, holdout_videos })
}

fn train_codec(
    codec: &mut LatentCodec,
    data: &Data,
    cfg: &PretrainConfig,
) -> Result<(f64, f64, f64), ModelError> {
    let enc = codec.enc;
    let dec = codec.dec;
    let pool = &data.patch_pool;
    let d = pool.ncols();
    let mut opt = Adam::new(&codec.store, cfg.codec_lr);
    let mut last = f64::NAN;
    for step in 0..cfg.codec_steps {
        let mut r = rng::stream(cfg.seed, "pretrain/codec", &[step as u64]);
        let mut batch = Array2::zeros((cfg.codec_batch, d));
        for i in 0..cfg.codec_batch {
            let j = r.gen_range(0..pool.nrows());
            batch.row_mut(i).assign(&pool.row(j));
        }
        let mut g = Graph::new();
        let x = g.constant(batch.into_dyn());
        let z = enc.forward(&mut g, &codec.store, x);
        let y = dec.forward(&mut g, &codec.store, z);
        let loss = g.mse(y, x);
        last = check_finite(step, g.scalar(loss))?;
        codec.store.zero_grads();
        g.backward(loss, &mut codec.store);
        opt.apply(&mut codec.store);
    }

    // normalization scale: standard deviation of raw latent values over the
    // training pool
    let mut g = Graph::new();
    let x = g.constant(pool.clone().into_dyn());
    let z = enc.forward(&mut g, &codec.store, x);
    let zv = g.value(z);
    let n = zv.len() as f64;
    let mean = zv.iter().sum::<f64>() / n;
    let var = zv.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    codec.latent_scale = var.sqrt().max(1e-6);

    // reconstruction quality on held-out videos (scale cancels round trip)
    let mut err = 0.0;
    let mut count = 0.0;
    for stack in &data.holdout_videos {
        let z = codec.encode_frames(stack)?;
        let back = codec.decode_frames(&z)?;
        for (a, b) in stack.iter().zip(back.iter()) {
            err += (a - b) * (a - b);
            count += 1.0;
        }
    }
    let tau = err / count;
    Ok((last, tau, codec.latent_scale))
}

fn pooled_caption(
    g: &mut Graph,
    store: &ParamStore,
    embed: &Embedding,
    pos: &Embedding,
    pool: &Linear,
    d_t: usize,
    ids: &[usize],
) -> NodeId {
    let e = embed.forward(g, store, ids);
    let positions: Vec<usize> = (0..ids.len()).collect();
    let p = pos.forward(g, store, &positions);
    let t = g.add(e, p);
    let m = g.mean_axis(t, 0);
    let row = g.reshape(m, &[1, d_t]);
    let v = pool.forward(g, store, row);
    g.l2_normalize_rows(v)
}

struct ContrastiveOut {
    store: ParamStore,
    final_loss: f64,
}

fn train_contrastive(data: &Data, cfg: &PretrainConfig) -> Result<ContrastiveOut, ModelError> {
    let mut store = ParamStore::new();
    let mut r0 = rng::stream(cfg.seed, "pretrain/contrastive-init", &[]);
    let vis = build_vision(&mut store, &cfg.encoder, &mut r0);
    let (embed, pos, pool) = build_text(&mut store, &cfg.encoder, &mut r0);

    // group training crops by caption so a batch never contains two crops
    // with the same caption (those would be false negatives)
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in data.crops.iter().enumerate() {
        if !c.holdout {
            groups.entry(c.caption.as_str()).or_default().push(i);
        }
    }
    let keys: Vec<&str> = groups.keys().cloned().collect();
    if keys.len() < 2 {
        return Err(ModelError::ConfigMismatch(
            "contrastive phase needs at least two distinct captions".into(),
        ));
    }
    let b = cfg.contrastive_batch.min(keys.len());
    let d_in = data.crops[0].row.len();
    let targets: Vec<usize> = (0..b).collect();

    let mut opt = Adam::new(&store, cfg.contrastive_lr);
    let mut last = f64::NAN;
    for step in 0..cfg.contrastive_steps {
        let mut r = rng::stream(cfg.seed, "pretrain/contrastive", &[step as u64]);
        let mut order: Vec<usize> = (0..keys.len()).collect();
        for i in 0..b {
            let j = r.gen_range(i..order.len());
            order.swap(i, j);
        }
        let mut rows = Array2::zeros((b, d_in));
        let mut caps: Vec<&[usize]> = Vec::with_capacity(b);
        for (slot, &gi) in order[..b].iter().enumerate() {
            let members = &groups[keys[gi]];
            let ci = members[r.gen_range(0..members.len())];
            rows.row_mut(slot).assign(&data.crops[ci].row);
            caps.push(&data.crops[ci].token_ids);
        }

        let mut g = Graph::new();
        let x = g.constant(rows.into_dyn());
        let u = vis.forward(&mut g, &store, x);
        let u = g.l2_normalize_rows(u);
        let parts: Vec<NodeId> = caps
            .iter()
            .map(|ids| pooled_caption(&mut g, &store, &embed, &pos, &pool, cfg.encoder.d_t, ids))
            .collect();
        let v = g.concat(&parts, 0);
        let vt = g.permute(v, &[1, 0]);
        let logits = g.matmul(u, vt);
        let logits = g.scale(logits, 1.0 / cfg.temperature);
        let ce_uv = g.cross_entropy(logits, &targets);
        let lt = g.permute(logits, &[1, 0]);
        let ce_vu = g.cross_entropy(lt, &targets);
        let sum = g.add(ce_uv, ce_vu);
        let loss = g.scale(sum, 0.5);
        last = check_finite(step, g.scalar(loss))?;
        store.zero_grads();
        g.backward(loss, &mut store);
        opt.apply(&mut store);
    }
    Ok(ContrastiveOut { store, final_loss: last })
}

fn train_identity(data: &Data, cfg: &PretrainConfig) -> Result<(ParamStore, f64), ModelError> {
    let mut store = ParamStore::new();
    let mut r0 = rng::stream(cfg.seed, "pretrain/identity-init", &[]);
    let mlp = build_identity(&mut store, &cfg.encoder, &mut r0);
    let head = Linear::new(&mut store, "idhead", cfg.encoder.d_id, IDENTITY_SPACE, &mut r0);

    let train_idx: Vec<usize> = (0..data.crops.len()).filter(|&i| !data.crops[i].holdout).collect();
    let d_in = data.crops[0].row.len();
    let mut opt = Adam::new(&store, cfg.identity_lr);
    let mut last = f64::NAN;
    for step in 0..cfg.identity_steps {
        let mut r = rng::stream(cfg.seed, "pretrain/identity", &[step as u64]);
        let bsz = cfg.identity_batch.min(train_idx.len());
        let mut rows = Array2::zeros((bsz, d_in));
        let mut labels = Vec::with_capacity(bsz);
        for i in 0..bsz {
            let c = &data.crops[train_idx[r.gen_range(0..train_idx.len())]];
            rows.row_mut(i).assign(&c.row);
            labels.push(c.identity as usize);
            // brightness jitter: identity must survive lighting changes
            let gain = 0.8 + 0.45 * r.gen::<f64>();
            rows.row_mut(i).mapv_inplace(|v| v * gain);
        }
        add_noise(&mut rows, &mut r, 0.05);
        let mut g = Graph::new();
        let x = g.constant(rows.into_dyn());
        let e = mlp.forward(&mut g, &store, x);
        let e = g.l2_normalize_rows(e);
        let raw = head.forward(&mut g, &store, e);
        // unit-norm features keep raw logits small; a fixed scale sharpens
        // the softmax enough for the classes to separate
        let logits = g.scale(raw, 10.0);
        let ce = g.cross_entropy(logits, &labels);
        let mut loss = ce;
        for w in [mlp.fc1.w, mlp.fc2.w] {
            let wn = g.param(&store, w);
            let sq = g.mul(wn, wn);
            let pen = g.sum_all(sq);
            let pen = g.scale(pen, 3e-4);
            loss = g.add(loss, pen);
        }
        last = check_finite(step, g.scalar(loss))?;
        store.zero_grads();
        g.backward(loss, &mut store);
        opt.apply(&mut store);
    }
    Ok((store, last))
}

fn train_attr(nets: &mut AttrNets, data: &Data, cfg: &PretrainConfig) -> Result<f64, ModelError> {
    let crop_trunk = nets.crop_trunk;
    let shape = nets.shape;
    let color = nets.color;
    let marking = nets.marking;
    let object = nets.object;
    let frame_trunk = nets.frame_trunk;
    let bg = nets.bg;
    let occl = nets.occl;

    let crop_idx: Vec<usize> = (0..data.crops.len()).filter(|&i| !data.crops[i].holdout).collect();
    let win_idx: Vec<usize> =
        (0..data.windows.len()).filter(|&i| !data.windows[i].holdout).collect();
    let frame_idx: Vec<usize> =
        (0..data.frames.len()).filter(|&i| !data.frames[i].holdout).collect();

    let mut opt = Adam::new(&nets.store, cfg.attr_lr);
    let mut last = f64::NAN;
    for step in 0..cfg.attr_steps {
        let mut r = rng::stream(cfg.seed, "pretrain/attr", &[step as u64]);
        let bsz = cfg.attr_batch;

        fn pick<R: Rng>(r: &mut R, idx: &[usize], n: usize) -> Vec<usize> {
            (0..n).map(|_| idx[r.gen_range(0..idx.len())]).collect()
        }

        let cb = pick(&mut r, &crop_idx, bsz);
        let wb = pick(&mut r, &win_idx, bsz);
        let fb = pick(&mut r, &frame_idx, bsz.min(frame_idx.len()).max(1));

        let stack = |rows: Vec<&Array1<f64>>| {
            let mut m = Array2::zeros((rows.len(), rows[0].len()));
            for (i, row) in rows.iter().enumerate() {
                m.row_mut(i).assign(*row);
            }
            m
        };
        let mut crop_rows = stack(cb.iter().map(|&i| &data.crops[i].row).collect());
        let mut win_rows = stack(wb.iter().map(|&i| &data.windows[i].row).collect());
        let mut frame_rows = stack(fb.iter().map(|&i| &data.frames[i].row).collect());
        add_noise(&mut crop_rows, &mut r, 0.02);
        add_noise(&mut win_rows, &mut r, 0.02);
        add_noise(&mut frame_rows, &mut r, 0.02);

        let mut g = Graph::new();
        let cx = g.constant(crop_rows.into_dyn());
        let ch = crop_trunk.forward(&mut g, &nets.store, cx);
        let l_shape = shape.forward(&mut g, &nets.store, ch);
        let l_color = color.forward(&mut g, &nets.store, ch);
        let l_marking = marking.forward(&mut g, &nets.store, ch);
        let wx = g.constant(win_rows.into_dyn());
        let wh = crop_trunk.forward(&mut g, &nets.store, wx);
        let l_obj = object.forward(&mut g, &nets.store, wh);
        let fx = g.constant(frame_rows.into_dyn());
        let fh = frame_trunk.forward(&mut g, &nets.store, fx);
        let l_bg = bg.forward(&mut g, &nets.store, fh);
        let l_occl = occl.forward(&mut g, &nets.store, fh);

        let t_shape: Vec<usize> = cb.iter().map(|&i| data.crops[i].shape).collect();
        let t_color: Vec<usize> = cb.iter().map(|&i| data.crops[i].color).collect();
        let t_marking: Vec<usize> = cb.iter().map(|&i| data.crops[i].marking).collect();
        let t_obj: Vec<usize> = wb.iter().map(|&i| usize::from(data.windows[i].sprite)).collect();
        let t_bg: Vec<usize> = fb.iter().map(|&i| data.frames[i].bg).collect();
        let t_occl: Vec<usize> = fb.iter().map(|&i| data.frames[i].occl).collect();

        let mut loss = g.cross_entropy(l_shape, &t_shape);
        for (l, t) in [
            (l_color, &t_color),
            (l_marking, &t_marking),
            (l_obj, &t_obj),
            (l_bg, &t_bg),
            (l_occl, &t_occl),
        ] {
            let ce = g.cross_entropy(l, t);
            loss = g.add(loss, ce);
        }
        last = check_finite(step, g.scalar(loss))?;
        nets.store.zero_grads();
        g.backward(loss, &mut nets.store);
        opt.apply(&mut nets.store);
    }
    Ok(last)
}

fn head_accuracy(
    nets: &AttrNets,
    trunk: &Mlp2,
    head: &Linear,
    rows: &Array2<f64>,
    labels: &[usize],
) -> f64 {
    if labels.is_empty() {
        return f64::NAN;
    }
    let logits = nets.head_logits(trunk, head, rows);
    let mut ok = 0usize;
    for (i, &t) in labels.iter().enumerate() {
        let row = logits.row(i);
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == t {
            ok += 1;
        }
    }
    ok as f64 / labels.len() as f64
}

fn stack_rows(rows: Vec<&Array1<f64>>) -> Array2<f64> {
    let mut m = Array2::zeros((rows.len(), rows[0].len()));
    for (i, row) in rows.iter().enumerate() {
        m.row_mut(i).assign(*row);
    }
    m
}

/// Detection-based scale classification, checked on the first fully visible
/// frame of each held-out video.
fn scale_accuracy(attr: &AttrNets, dataset: &Dataset, cfg: &PretrainConfig) -> f64 {
    let mut tried = 0usize;
    let mut hits = 0usize;
    for (vi, sample) in dataset.samples.iter().enumerate() {
        if vi % cfg.holdout_every != 0 {
            continue;
        }
        let video = &sample.video;
        let Some(f) = (0..video.frame_count()).find(|&f| video.visibility[f] >= 1.0) else {
            continue;
        };
        tried += 1;
        let pred = attr.classify_scale(&video.frames.frame_array(f));
        if pred.confidence > 0.0 && pred.class == scale_class(video.scene.sprite_scale) {
            hits += 1;
        }
    }
    if tried == 0 {
        f64::NAN
    } else {
        hits as f64 / tried as f64
    }
}

/// Detection-based motion classification between the first and last frames of
/// each held-out video, skipping videos where either endpoint is occluded.
fn motion_accuracy(attr: &AttrNets, dataset: &Dataset, cfg: &PretrainConfig) -> f64 {
    let mut tried = 0usize;
    let mut hits = 0usize;
    for (vi, sample) in dataset.samples.iter().enumerate() {
        if vi % cfg.holdout_every != 0 {
            continue;
        }
        let video = &sample.video;
        let nf = video.frame_count();
        if nf < 2 || video.visibility[0] < 1.0 || video.visibility[nf - 1] < 1.0 {
            continue;
        }
        tried += 1;
        let pred = attr
            .classify_motion(&video.frames.frame_array(0), &video.frames.frame_array(nf - 1));
        if pred.confidence > 0.0 && pred.class == motion_class(video.scene.motion) {
            hits += 1;
        }
    }
    if tried == 0 {
        f64::NAN
    } else {
        hits as f64 / tried as f64
    }
}

/// Train a linear softmax probe on `train` features and report holdout
/// accuracy. Measures how linearly decodable `labels` are from a space.
fn probe_accuracy(
    train: &Array2<f64>,
    train_labels: &[usize],
    hold: &Array2<f64>,
    hold_labels: &[usize],
    classes: usize,
    cfg: &PretrainConfig,
    salt: &str,
) -> Result<f64, ModelError> {
    let mut store = ParamStore::new();
    let mut r = rng::stream(cfg.seed, salt, &[]);
    let lin = Linear::new(&mut store, "probe", train.ncols(), classes, &mut r);
    let mut opt = Adam::new(&store, cfg.probe_lr);
    for step in 0..cfg.probe_steps {
        let mut g = Graph::new();
        let x = g.constant(train.clone().into_dyn());
        let logits = lin.forward(&mut g, &store, x);
        let loss = g.cross_entropy(logits, train_labels);
        check_finite(step, g.scalar(loss))?;
        store.zero_grads();
        g.backward(loss, &mut store);
        opt.apply(&mut store);
    }
    let mut g = Graph::new();
    let x = g.constant(hold.clone().into_dyn());
    let logits = lin.forward(&mut g, &store, x);
    let lv = g.value(logits);
    let mut ok = 0usize;
    for (i, &t) in hold_labels.iter().enumerate() {
        let mut best = 0;
        for j in 1..classes {
            if lv[[i, j]] > lv[[i, best]] {
                best = j;
            }
        }
        if best == t {
            ok += 1;
        }
    }
    Ok(ok as f64 / hold_labels.len() as f64)
}

/// Train every encoder on the corpus and freeze the result.
pub fn pretrain_encoders(
    dataset: &Dataset,
    cfg: &PretrainConfig,
) -> Result<EncoderSet, ModelError> {
    if cfg.holdout_every < 2 {
        return Err(ModelError::ConfigMismatch("holdout_every must be at least 2".into()));
    }
    cfg.encoder.validate()?;
    let data = collect_data(dataset, cfg)?;
    let corpus_hash = idsprite_core::io::sha256_hex(dataset.manifest.to_jsonl().as_bytes());

    let mut codec = LatentCodec::new(&cfg.encoder, cfg.seed);
    let (codec_loss, tau_codec, latent_scale) = train_codec(&mut codec, &data, cfg)?;

    let contrastive = train_contrastive(&data, cfg)?;
    let mut vision = VisionEncoder::new(&cfg.encoder, cfg.seed);
    vision.store.import(&contrastive.store.export()).map_err(ModelError::Artifact)?;
    let mut text = TextEncoder::new(&cfg.encoder, cfg.seed);
    text.store.import(&contrastive.store.export()).map_err(ModelError::Artifact)?;

    let (id_store, identity_loss) = train_identity(&data, cfg)?;
    let mut identity = IdentityEncoder::new(&cfg.encoder, cfg.seed);
    identity.store.import(&id_store.export()).map_err(ModelError::Artifact)?;

    let mut attr = AttrNets::new(&cfg.encoder, cfg.seed);
    let attr_loss = train_attr(&mut attr, &data, cfg)?;

    // --- measurement on holdout ---
    let hold_crops: Vec<&CropRec> = data.crops.iter().filter(|c| c.holdout).collect();
    let train_crops: Vec<&CropRec> = data.crops.iter().filter(|c| !c.holdout).collect();

    let hold_rows = stack_rows(hold_crops.iter().map(|c| &c.row).collect());
    let train_rows = stack_rows(train_crops.iter().map(|c| &c.row).collect());

    let u_hold = vision.encode_batch(&hold_rows);
    let id_hold = identity.encode_batch(&hold_rows);
    let id_train = identity.encode_batch(&train_rows);

    // text margin: matching caption vs other captions
    let mut cap_vecs: BTreeMap<&str, Array1<f64>> = BTreeMap::new();
    for c in data.crops.iter() {
        if !cap_vecs.contains_key(c.caption.as_str()) {
            cap_vecs.insert(c.caption.as_str(), text.caption_vector(&c.caption)?);
        }
    }
    let mut pos_sum = 0.0f64;
    let mut pos_n = 0.0f64;
    let mut neg_sum = 0.0f64;
    let mut neg_n = 0.0f64;
    for (i, c) in hold_crops.iter().enumerate() {
        let u = u_hold.row(i).to_owned();
        for (cap, v) in &cap_vecs {
            let cs = cosine(&u, v);
            if *cap == c.caption {
                pos_sum += cs;
                pos_n += 1.0;
            } else {
                neg_sum += cs;
                neg_n += 1.0;
            }
        }
    }
    let text_margin = pos_sum / pos_n.max(1.0) - neg_sum / neg_n.max(1.0);

    // identity margin and retrieval
    let mut intra = (0.0f64, 0.0f64);
    let mut inter = (0.0f64, 0.0f64);
    for i in 0..hold_crops.len() {
        for j in (i + 1)..hold_crops.len() {
            let cs = cosine(&id_hold.row(i).to_owned(), &id_hold.row(j).to_owned());
            if hold_crops[i].identity == hold_crops[j].identity {
                intra.0 += cs;
                intra.1 += 1.0;
            } else {
                inter.0 += cs;
                inter.1 += 1.0;
            }
        }
    }
    let identity_margin = intra.0 / intra.1.max(1.0) - inter.0 / inter.1.max(1.0);

    let mut hits = 0usize;
    for i in 0..hold_crops.len() {
        let q = id_hold.row(i).to_owned();
        let mut best = 0usize;
        let mut best_cs = f64::NEG_INFINITY;
        for j in 0..train_crops.len() {
            let cs = cosine(&q, &id_train.row(j).to_owned());
            if cs > best_cs {
                best_cs = cs;
                best = j;
            }
        }
        if train_crops[best].identity == hold_crops[i].identity {
            hits += 1;
        }
    }
    let retrieval_accuracy = hits as f64 / hold_crops.len().max(1) as f64;

    // attribute accuracies on holdout
    let hold_frames: Vec<&FrameRec> = data.frames.iter().filter(|f| f.holdout).collect();
    let hold_windows: Vec<&WindowRec> = data.windows.iter().filter(|w| w.holdout).collect();
    let frame_rows_h = stack_rows(hold_frames.iter().map(|f| &f.row).collect());
    let win_rows_h = stack_rows(hold_windows.iter().map(|w| &w.row).collect());
    let attr_acc = AttrAccuracy {
        shape: head_accuracy(
            &attr,
            &attr.crop_trunk,
            &attr.shape,
            &hold_rows,
            &hold_crops.iter().map(|c| c.shape).collect::<Vec<_>>(),
        ),
        color: head_accuracy(
            &attr,
            &attr.crop_trunk,
            &attr.color,
            &hold_rows,
            &hold_crops.iter().map(|c| c.color).collect::<Vec<_>>(),
        ),
        marking: head_accuracy(
            &attr,
            &attr.crop_trunk,
            &attr.marking,
            &hold_rows,
            &hold_crops.iter().map(|c| c.marking).collect::<Vec<_>>(),
        ),
        object: head_accuracy(
            &attr,
            &attr.crop_trunk,
            &attr.object,
            &win_rows_h,
            &hold_windows.iter().map(|w| usize::from(w.sprite)).collect::<Vec<_>>(),
        ),
        background: head_accuracy(
            &attr,
            &attr.frame_trunk,
            &attr.bg,
            &frame_rows_h,
            &hold_frames.iter().map(|f| f.bg).collect::<Vec<_>>(),
        ),
        scale: scale_accuracy(&attr, dataset, cfg),
        occlusion: head_accuracy(
            &attr,
            &attr.frame_trunk,
            &attr.occl,
            &frame_rows_h,
            &hold_frames.iter().map(|f| f.occl).collect::<Vec<_>>(),
        ),
        motion: motion_accuracy(&attr, dataset, cfg),
    };

    // space separation: background is linearly decodable from the vision
    // space but should not be from the identity space
    let u_train = vision.encode_batch(&train_rows);
    let train_bg: Vec<usize> = train_crops.iter().map(|c| c.bg).collect();
    let hold_bg: Vec<usize> = hold_crops.iter().map(|c| c.bg).collect();
    let probe_bg_from_vision = probe_accuracy(
        &u_train,
        &train_bg,
        &u_hold,
        &hold_bg,
        idsprite_world::BgColor::ALL.len(),
        cfg,
        "pretrain/probe-vision",
    )?;
    let probe_bg_from_identity = probe_accuracy(
        &id_train,
        &train_bg,
        &id_hold,
        &hold_bg,
        idsprite_world::BgColor::ALL.len(),
        cfg,
        "pretrain/probe-identity",
    )?;

    let report = PretrainReport {
        tau_codec,
        latent_scale,
        identity_margin,
        text_margin,
        retrieval_accuracy,
        attr: attr_acc,
        probe_bg_from_vision,
        probe_bg_from_identity,
        holdout_crops: hold_crops.len(),
        final_codec_loss: codec_loss,
        final_contrastive_loss: contrastive.final_loss,
        final_identity_loss: identity_loss,
        final_attr_loss: attr_loss,
    };

    let header = EncoderHeader {
        format_version: ENCODER_FORMAT_VERSION,
        config: cfg.encoder,
        seed: cfg.seed,
        corpus_hash,
        vocab: vocabulary().iter().map(|s| s.to_string()).collect(),
        tau_codec,
        latent_scale,
        report,
    };
    Ok(EncoderSet { vision, text, identity, codec, attr, header })
}
