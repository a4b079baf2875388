//! Transformer denoiser over spatio-temporal latent patches.
//!
//! The noisy latent video is channel-concatenated with a single-frame face
//! latent broadcast over time (a learned null latent when no face is given),
//! cut into patches, and processed by pre-norm transformer blocks. Every
//! block self-attends over all patch tokens and cross-attends into the
//! condition token stream; the timestep embedding is added to every token
//! before the first block. The output head predicts the noise per patch.

use idsprite_core::nn::{Attention, LayerNorm, Linear, Mlp2, ParamId, ParamStore};
use idsprite_core::{rng, Graph, NodeId};
use ndarray::{Array1, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::iitf::{ConditionStreams, FusedCondition};
use crate::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Frames per clip.
    pub frames: usize,
    /// Latent channels per frame.
    pub channels: usize,
    pub latent_h: usize,
    pub latent_w: usize,
    /// Square patch edge; must divide both latent dimensions.
    pub patch: usize,
    /// Token width.
    pub dim: usize,
    /// Number of transformer blocks.
    pub depth: usize,
    pub heads: usize,
    /// Feedforward hidden width as a multiple of `dim`.
    pub mlp_ratio: usize,
    /// Width of condition tokens arriving by cross-attention.
    pub cond_dim: usize,
    /// Width of the raw sinusoidal timestep features.
    pub time_dim: usize,
    /// Highest diffusion timestep the model accepts (t runs 1..=t_max).
    pub t_max: usize,
    /// Give each block a second cross-attention for a separate face-token
    /// stream (the dual-branch conditioner) instead of a single fused stream.
    pub dual_stream: bool,
    /// Start the output head at zero so the initial prediction is exactly
    /// zero noise. Tests probing an untrained model's sensitivity set this
    /// to false.
    pub zero_head: bool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            frames: 16,
            channels: 4,
            latent_h: 16,
            latent_w: 16,
            patch: 4,
            dim: 192,
            depth: 6,
            heads: 6,
            mlp_ratio: 4,
            cond_dim: 64,
            time_dim: 32,
            t_max: 1000,
            dual_stream: false,
            zero_head: true,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.patch == 0 || self.latent_h % self.patch != 0 || self.latent_w % self.patch != 0 {
            return Err(ModelError::ConfigMismatch(format!(
                "patch {} must divide latent {}x{}",
                self.patch, self.latent_h, self.latent_w
            )));
        }
        if self.dim % self.heads != 0 {
            return Err(ModelError::ConfigMismatch(format!(
                "token width {} must divide into {} heads",
                self.dim, self.heads
            )));
        }
        if self.time_dim % 2 != 0 {
            return Err(ModelError::ConfigMismatch("time_dim must be even".into()));
        }
        if self.frames == 0 || self.depth == 0 || self.t_max == 0 {
            return Err(ModelError::ConfigMismatch("zero-sized denoiser".into()));
        }
        Ok(())
    }

    /// Tokens per clip: frames x patch grid.
    pub fn n_tokens(&self) -> usize {
        self.frames * (self.latent_h / self.patch) * (self.latent_w / self.patch)
    }

    pub fn latent_shape(&self) -> (usize, usize, usize, usize) {
        (self.frames, self.channels, self.latent_h, self.latent_w)
    }
}

/// Everything the denoiser needs besides the noisy latent and the timestep.
/// `drop_flag` asserts that the face path was nulled; it must agree with how
/// the condition tokens were built.
#[derive(Debug, Clone)]
pub struct ConditioningBundle {
    pub cond: FusedCondition,
    pub z_face: Option<Array3<f64>>,
    pub drop_flag: bool,
}

struct Block {
    n1: LayerNorm,
    attn: Attention,
    n2: LayerNorm,
    cross: Attention,
    n2s: Option<LayerNorm>,
    cross2: Option<Attention>,
    n3: LayerNorm,
    mlp: Mlp2,
}

enum Stream {
    Primary,
    Secondary,
}

/// The trainable denoiser; its parameters live in a caller-owned store so
/// they can share one backward pass with the conditioner.
pub struct Denoiser {
    patch_embed: Linear,
    pos: ParamId,
    time_mlp: Mlp2,
    blocks: Vec<Block>,
    norm_out: LayerNorm,
    head: Linear,
    null_face: ParamId,
    cfg: DenoiserConfig,
}

/// Raw sinusoidal features of an integer timestep: half sines, half cosines
/// over a geometric frequency ladder.
pub fn time_features(t: usize, time_dim: usize) -> Array1<f64> {
    let half = time_dim / 2;
    let mut f = Array1::zeros(time_dim);
    for i in 0..half {
        let w = (10000f64).powf(-(i as f64) / half as f64);
        f[i] = (t as f64 * w).sin();
        f[half + i] = (t as f64 * w).cos();
    }
    f
}

impl Denoiser {
    pub fn new<R: rand::Rng>(
        store: &mut ParamStore,
        cfg: &DenoiserConfig,
        rng_: &mut R,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        let d_patch_in = 2 * cfg.channels * cfg.patch * cfg.patch;
        let d_patch_out = cfg.channels * cfg.patch * cfg.patch;
        let patch_embed = Linear::new(store, "den.patch", d_patch_in, cfg.dim, rng_);
        let pos = store.register(
            "den.pos",
            rng::normal(rng_, &[cfg.n_tokens(), cfg.dim]).mapv(|v| v * 0.02),
        );
        let time_mlp = Mlp2::new(store, "den.time", cfg.time_dim, cfg.dim, cfg.dim, rng_);
        let mut blocks = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            let p = |s: &str| format!("den.b{i}.{s}");
            let n1 = LayerNorm::new(store, &p("n1"), cfg.dim);
            let attn = Attention::new(store, &p("attn"), cfg.dim, cfg.dim, cfg.heads, rng_);
            let n2 = LayerNorm::new(store, &p("n2"), cfg.dim);
            let cross = Attention::new(store, &p("cross"), cfg.dim, cfg.cond_dim, cfg.heads, rng_);
            let (n2s, cross2) = if cfg.dual_stream {
                (
                    Some(LayerNorm::new(store, &p("n2s"), cfg.dim)),
                    Some(Attention::new(store, &p("cross2"), cfg.dim, cfg.cond_dim, cfg.heads, rng_)),
                )
            } else {
                (None, None)
            };
            let n3 = LayerNorm::new(store, &p("n3"), cfg.dim);
            let mlp = Mlp2::new(store, &p("mlp"), cfg.dim, cfg.dim * cfg.mlp_ratio, cfg.dim, rng_);
            blocks.push(Block { n1, attn, n2, cross, n2s, cross2, n3, mlp });
        }
        let norm_out = LayerNorm::new(store, "den.norm_out", cfg.dim);
        let head = Linear::new(store, "den.head", cfg.dim, d_patch_out, rng_);
        if cfg.zero_head {
            store.value_mut(head.w).fill(0.0);
        }
        let null_face = store.register(
            "den.null_face",
            rng::normal(rng_, &[cfg.channels, cfg.latent_h, cfg.latent_w]).mapv(|v| v * 0.02),
        );
        Ok(Denoiser { patch_embed, pos, time_mlp, blocks, norm_out, head, null_face, cfg: *cfg })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    fn check_latent(&self, z: &Array4<f64>) -> Result<(), ModelError> {
        if z.dim() != self.cfg.latent_shape() {
            return Err(ModelError::Shape(format!(
                "latent shape {:?}, expected {:?}",
                z.dim(),
                self.cfg.latent_shape()
            )));
        }
        Ok(())
    }

    fn check_t(&self, t: usize) -> Result<(), ModelError> {
        if t < 1 || t > self.cfg.t_max {
            return Err(ModelError::TimestepOutOfRange { t, t_max: self.cfg.t_max });
        }
        Ok(())
    }

    /// One face-latent channel block for one sample, tiled over frames:
    /// `[1, F, C, h, w]`.
    fn face_node(&self, g: &mut Graph, store: &ParamStore, face: Option<&Array3<f64>>) -> NodeId {
        let (f, c, h, w) = self.cfg.latent_shape();
        match face {
            Some(z) => {
                let mut tiled = Array4::zeros((f, c, h, w));
                for fi in 0..f {
                    tiled.index_axis_mut(ndarray::Axis(0), fi).assign(z);
                }
                let flat: Vec<f64> = tiled.iter().cloned().collect();
                g.constant(
                    ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[1, f, c, h, w]), flat)
                        .expect("face tile shape"),
                )
            }
            None => {
                let p = g.param(store, self.null_face);
                let p = g.reshape(p, &[1, 1, c, h, w]);
                let zeros = g.constant(ndarray::ArrayD::zeros(ndarray::IxDyn(&[1, f, 1, 1, 1])));
                g.add(p, zeros)
            }
        }
    }

    /// Cross-attention applied sample-by-sample so each clip can attend into
    /// a condition stream of its own length.
    fn cross_per_sample(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        attn: &Attention,
        x: NodeId,
        conds: &[ConditionStreams],
        which: Stream,
    ) -> Result<NodeId, ModelError> {
        let bsz = conds.len();
        let n = self.cfg.n_tokens();
        let dim = self.cfg.dim;
        let flat = g.reshape(x, &[bsz, n * dim]);
        let mut parts = Vec::with_capacity(bsz);
        for (b, c) in conds.iter().enumerate() {
            let hb = g.gather(flat, &[b]);
            let hb = g.reshape(hb, &[1, n, dim]);
            let kv = match which {
                Stream::Primary => c.primary,
                Stream::Secondary => c.secondary.ok_or_else(|| {
                    ModelError::ConfigMismatch(
                        "dual-stream denoiser needs a secondary condition stream".into(),
                    )
                })?,
            };
            let t = g.value(kv).shape()[0];
            let kv = g.reshape(kv, &[1, t, self.cfg.cond_dim]);
            parts.push(attn.forward(g, store, hb, kv));
        }
        Ok(g.concat(&parts, 0))
    }

    /// Batch forward pass predicting the noise, `[B, F, C, h, w]`.
    ///
    /// `faces[b] = None` routes sample `b` through the learned null face
    /// latent; that is the only difference between the dropped and kept
    /// conditioning paths on the latent side.
    pub fn forward_nodes(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        zs: &[Array4<f64>],
        ts: &[usize],
        faces: &[Option<&Array3<f64>>],
        conds: &[ConditionStreams],
    ) -> Result<NodeId, ModelError> {
        let bsz = zs.len();
        if bsz == 0 {
            return Err(ModelError::Shape("empty batch".into()));
        }
        if ts.len() != bsz || faces.len() != bsz || conds.len() != bsz {
            return Err(ModelError::Shape("batch arrays disagree in length".into()));
        }
        for z in zs {
            self.check_latent(z)?;
        }
        for &t in ts {
            self.check_t(t)?;
        }
        for c in conds {
            let width = g.value(c.primary).shape()[1];
            if width != self.cfg.cond_dim {
                return Err(ModelError::ConfigMismatch(format!(
                    "condition width {width}, denoiser expects {}",
                    self.cfg.cond_dim
                )));
            }
            if !self.cfg.dual_stream && c.secondary.is_some() {
                return Err(ModelError::ConfigMismatch(
                    "secondary condition stream on a single-stream denoiser".into(),
                ));
            }
        }
        let (f, c, h, w) = self.cfg.latent_shape();
        let (hp, wp) = (h / self.cfg.patch, w / self.cfg.patch);
        let p = self.cfg.patch;
        let n = self.cfg.n_tokens();
        let dim = self.cfg.dim;

        // [B, F, C, h, w] noisy latents (constants; gradients flow to params)
        let mut z_all = Array4::zeros((bsz * f, c, h, w));
        for (b, z) in zs.iter().enumerate() {
            for fi in 0..f {
                z_all
                    .index_axis_mut(ndarray::Axis(0), b * f + fi)
                    .assign(&z.index_axis(ndarray::Axis(0), fi));
            }
        }
        let z_flat: Vec<f64> = z_all.iter().cloned().collect();
        let z_node = g.constant(
            ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[bsz, f, c, h, w]), z_flat)
                .expect("latent batch shape"),
        );
        let face_parts: Vec<NodeId> = zs
            .iter()
            .zip(faces)
            .map(|(_, face)| self.face_node(g, store, *face))
            .collect();
        let face_all = g.concat(&face_parts, 0);
        let x = g.concat(&[z_node, face_all], 2); // [B, F, 2C, h, w]

        // patchify: [B, F, 2C, hp, p, wp, p] -> [B, n, 2C p^2]
        let x = g.reshape(x, &[bsz, f, 2 * c, hp, p, wp, p]);
        let x = g.permute(x, &[0, 1, 3, 5, 2, 4, 6]);
        let x = g.reshape(x, &[bsz, n, 2 * c * p * p]);
        let mut tokens = self.patch_embed.forward(g, store, x);
        let pos = g.param(store, self.pos);
        tokens = g.add(tokens, pos);

        // timestep embedding, added to every token
        let mut tf = ndarray::Array2::zeros((bsz, self.cfg.time_dim));
        for (b, &t) in ts.iter().enumerate() {
            tf.row_mut(b).assign(&time_features(t, self.cfg.time_dim));
        }
        let tf = g.constant(tf.into_dyn());
        let temb = self.time_mlp.forward(g, store, tf);
        let temb = g.reshape(temb, &[bsz, 1, dim]);
        tokens = g.add(tokens, temb);

        let mut xd = tokens;
        for blk in &self.blocks {
            let pre = blk.n1.forward(g, store, xd);
            let a = blk.attn.forward(g, store, pre, pre);
            xd = g.add(xd, a);

            let pre = blk.n2.forward(g, store, xd);
            let a = self.cross_per_sample(g, store, &blk.cross, pre, conds, Stream::Primary)?;
            xd = g.add(xd, a);

            if let (Some(n2s), Some(cross2)) = (&blk.n2s, &blk.cross2) {
                let pre = n2s.forward(g, store, xd);
                let a = self.cross_per_sample(g, store, cross2, pre, conds, Stream::Secondary)?;
                xd = g.add(xd, a);
            }

            let pre = blk.n3.forward(g, store, xd);
            let m = blk.mlp.forward(g, store, pre);
            xd = g.add(xd, m);
        }

        let out = self.norm_out.forward(g, store, xd);
        let out = self.head.forward(g, store, out); // [B, n, C p^2]
        let out = g.reshape(out, &[bsz, f, hp, wp, c, p, p]);
        let out = g.permute(out, &[0, 1, 4, 2, 5, 3, 6]);
        Ok(g.reshape(out, &[bsz, f, c, h, w]))
    }

    /// Deterministic single-clip noise prediction for sampling and tests.
    pub fn denoise(
        &self,
        store: &ParamStore,
        z_t: &Array4<f64>,
        t: usize,
        bundle: &ConditioningBundle,
    ) -> Result<Array4<f64>, ModelError> {
        self.check_latent(z_t)?;
        self.check_t(t)?;
        if bundle.drop_flag && bundle.cond.has_face {
            return Err(ModelError::ConfigMismatch(
                "drop flag set but condition tokens carry face features".into(),
            ));
        }
        if self.cfg.dual_stream != bundle.cond.side_tokens.is_some() {
            return Err(ModelError::ConfigMismatch(
                "condition streams do not match the denoiser's stream layout".into(),
            ));
        }
        let mut g = Graph::new();
        let primary = g.constant(bundle.cond.tokens.clone().into_dyn());
        let secondary = bundle
            .cond
            .side_tokens
            .as_ref()
            .map(|s| g.constant(s.clone().into_dyn()));
        let streams = ConditionStreams {
            primary,
            secondary,
            has_face: bundle.cond.has_face,
        };
        let face = if bundle.drop_flag { None } else { bundle.z_face.as_ref() };
        let out = self.forward_nodes(
            &mut g,
            store,
            std::slice::from_ref(z_t),
            &[t],
            &[face],
            &[streams],
        )?;
        let v = g.value(out);
        let (f, c, h, w) = self.cfg.latent_shape();
        Ok(Array4::from_shape_vec((f, c, h, w), v.iter().cloned().collect())
            .expect("denoise output shape"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iitf::{CondKind, Conditioner, IitfConfig};
    use idsprite_core::rng::stream;
    use ndarray::Array2;

    fn tiny_cfg() -> DenoiserConfig {
        DenoiserConfig {
            frames: 2,
            channels: 2,
            latent_h: 4,
            latent_w: 4,
            patch: 2,
            dim: 16,
            depth: 2,
            heads: 2,
            mlp_ratio: 2,
            cond_dim: 12,
            time_dim: 8,
            t_max: 20,
            dual_stream: false,
            zero_head: false,
        }
    }

    fn tiny_iitf() -> IitfConfig {
        IitfConfig { d_v: 10, d_t: 6, d_id: 5, d_f: 8, d_c: 12, face_tokens: 2 }
    }

    struct Rig {
        store: ParamStore,
        den: Denoiser,
        cond: Conditioner,
    }

    fn rig(kind: CondKind, dcfg: DenoiserConfig) -> Rig {
        let mut store = ParamStore::new();
        let mut r = stream(5, "den/test", &[]);
        let cond = Conditioner::new(&mut store, kind, &tiny_iitf(), &mut r);
        let den = Denoiser::new(&mut store, &dcfg, &mut r).unwrap();
        Rig { store, den, cond }
    }

    fn latent(cfg: &DenoiserConfig, seed: u64) -> Array4<f64> {
        let (f, c, h, w) = cfg.latent_shape();
        let v = idsprite_core::rng::normal(&mut stream(seed, "den/lat", &[]), &[f, c, h, w]);
        Array4::from_shape_vec((f, c, h, w), v.iter().cloned().collect()).unwrap()
    }

    fn prompt() -> Array2<f64> {
        Array2::from_shape_fn((3, 6), |(i, j)| ((i * 7 + j) % 5) as f64 / 5.0 - 0.4)
    }

    fn face_feats() -> (ndarray::Array1<f64>, ndarray::Array1<f64>) {
        let v = ndarray::Array1::from_shape_fn(10, |i| (i as f64 / 10.0) - 0.5);
        let id = ndarray::Array1::from_shape_fn(5, |i| (i as f64 / 5.0) - 0.5);
        (v, id)
    }

    fn face_latent(cfg: &DenoiserConfig) -> Array3<f64> {
        let (_, c, h, w) = cfg.latent_shape();
        Array3::from_shape_fn((c, h, w), |(a, b, d)| ((a + b * d) % 3) as f64 / 3.0 - 0.3)
    }

    #[test]
    fn output_matches_latent_shape_and_is_deterministic() {
        let r = rig(CondKind::Fused, tiny_cfg());
        let (v, id) = face_feats();
        let cond = r.cond.condition(&r.store, &prompt(), Some((&v, &id)));
        let bundle = ConditioningBundle {
            cond,
            z_face: Some(face_latent(r.den.config())),
            drop_flag: false,
        };
        let z = latent(r.den.config(), 1);
        let a = r.den.denoise(&r.store, &z, 3, &bundle).unwrap();
        let b = r.den.denoise(&r.store, &z, 3, &bundle).unwrap();
        assert_eq!(a.dim(), z.dim());
        assert_eq!(a, b);
        assert!(a.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn zero_head_starts_at_exact_zero() {
        let mut cfg = tiny_cfg();
        cfg.zero_head = true;
        let r = rig(CondKind::Fused, cfg);
        let cond = r.cond.condition(&r.store, &prompt(), None);
        let bundle = ConditioningBundle { cond, z_face: None, drop_flag: false };
        let z = latent(r.den.config(), 2);
        let out = r.den.denoise(&r.store, &z, 1, &bundle).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn drop_flag_equals_missing_face_bitwise() {
        let r = rig(CondKind::Fused, tiny_cfg());
        let cond = r.cond.condition(&r.store, &prompt(), None);
        let z = latent(r.den.config(), 3);
        let dropped = ConditioningBundle {
            cond: cond.clone(),
            z_face: Some(face_latent(r.den.config())),
            drop_flag: true,
        };
        let absent = ConditioningBundle { cond, z_face: None, drop_flag: false };
        let a = r.den.denoise(&r.store, &z, 5, &dropped).unwrap();
        let b = r.den.denoise(&r.store, &z, 5, &absent).unwrap();
        assert_eq!(a, b, "dropped face must route through the null latent");
    }

    #[test]
    fn drop_flag_with_face_tokens_is_rejected() {
        let r = rig(CondKind::Fused, tiny_cfg());
        let (v, id) = face_feats();
        let cond = r.cond.condition(&r.store, &prompt(), Some((&v, &id)));
        let bundle = ConditioningBundle { cond, z_face: None, drop_flag: true };
        let z = latent(r.den.config(), 3);
        assert!(r.den.denoise(&r.store, &z, 5, &bundle).is_err());
    }

    #[test]
    fn timestep_bounds_are_enforced() {
        let r = rig(CondKind::Fused, tiny_cfg());
        let cond = r.cond.condition(&r.store, &prompt(), None);
        let bundle = ConditioningBundle { cond, z_face: None, drop_flag: false };
        let z = latent(r.den.config(), 4);
        assert!(matches!(
            r.den.denoise(&r.store, &z, 0, &bundle),
            Err(ModelError::TimestepOutOfRange { .. })
        ));
        assert!(matches!(
            r.den.denoise(&r.store, &z, 21, &bundle),
            Err(ModelError::TimestepOutOfRange { .. })
        ));
        assert!(r.den.denoise(&r.store, &z, 20, &bundle).is_ok());
    }

    #[test]
    fn conditioning_changes_the_output() {
        let r = rig(CondKind::Fused, tiny_cfg());
        let (v, id) = face_feats();
        let with = r.cond.condition(&r.store, &prompt(), Some((&v, &id)));
        let without = r.cond.condition(&r.store, &prompt(), None);
        let z = latent(r.den.config(), 6);
        let a = r
            .den
            .denoise(
                &r.store,
                &z,
                7,
                &ConditioningBundle { cond: with, z_face: None, drop_flag: false },
            )
            .unwrap();
        let b = r
            .den
            .denoise(
                &r.store,
                &z,
                7,
                &ConditioningBundle { cond: without, z_face: None, drop_flag: false },
            )
            .unwrap();
        assert_ne!(a, b);
        // and the timestep matters too
        let c = r
            .den
            .denoise(
                &r.store,
                &z,
                8,
                &ConditioningBundle {
                    cond: r.cond.condition(&r.store, &prompt(), None),
                    z_face: None,
                    drop_flag: false,
                },
            )
            .unwrap();
        assert_ne!(b, c);
    }

    #[test]
    fn batch_permutation_permutes_outputs() {
        let r = rig(CondKind::Fused, tiny_cfg());
        let (v, id) = face_feats();
        let za = latent(r.den.config(), 10);
        let zb = latent(r.den.config(), 11);
        let fa = face_latent(r.den.config());

        let run = |zs: &[Array4<f64>], ts: &[usize], faces: &[Option<&Array3<f64>>]| {
            let mut g = Graph::new();
            let conds: Vec<_> = faces
                .iter()
                .map(|f| {
                    r.cond
                        .streams(&mut g, &r.store, &prompt(), f.map(|_| (&v, &id)))
                })
                .collect();
            let out = r
                .den
                .forward_nodes(&mut g, &r.store, zs, ts, faces, &conds)
                .unwrap();
            g.value(out).clone()
        };

        let fwd = run(&[za.clone(), zb.clone()], &[3, 9], &[Some(&fa), None]);
        let rev = run(&[zb.clone(), za.clone()], &[9, 3], &[None, Some(&fa)]);
        let (f, c, h, w) = r.den.config().latent_shape();
        let n = f * c * h * w;
        let fwd: Vec<f64> = fwd.iter().cloned().collect();
        let rev: Vec<f64> = rev.iter().cloned().collect();
        assert_eq!(&fwd[..n], &rev[n..], "sample A must not depend on batch position");
        assert_eq!(&fwd[n..], &rev[..n], "sample B must not depend on batch position");
    }

    #[test]
    fn dual_stream_uses_secondary_tokens() {
        let mut cfg = tiny_cfg();
        cfg.dual_stream = true;
        let r = rig(CondKind::DualBranch, cfg);
        let (v, id) = face_feats();
        let with = r.cond.condition(&r.store, &prompt(), Some((&v, &id)));
        let dropped = r.cond.condition(&r.store, &prompt(), None);
        assert_eq!(with.tokens, dropped.tokens);
        let z = latent(r.den.config(), 12);
        let a = r
            .den
            .denoise(
                &r.store,
                &z,
                2,
                &ConditioningBundle { cond: with, z_face: None, drop_flag: false },
            )
            .unwrap();
        let b = r
            .den
            .denoise(
                &r.store,
                &z,
                2,
                &ConditioningBundle { cond: dropped, z_face: None, drop_flag: false },
            )
            .unwrap();
        assert_ne!(a, b, "face information must arrive through the second stream");
    }

    #[test]
    fn single_stream_rejects_side_tokens() {
        let r = rig(CondKind::Fused, tiny_cfg());
        let mut cond = r.cond.condition(&r.store, &prompt(), None);
        cond.side_tokens = Some(Array2::zeros((2, 12)));
        let z = latent(r.den.config(), 13);
        let bundle = ConditioningBundle { cond, z_face: None, drop_flag: false };
        assert!(r.den.denoise(&r.store, &z, 2, &bundle).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        use idsprite_core::gradcheck;

        let dcfg = tiny_cfg();
        let icfg = tiny_iitf();
        let z = latent(&dcfg, 20);
        let fa = face_latent(&dcfg);
        let target = latent(&dcfg, 21);
        let (v, id) = face_feats();

        let mut store = ParamStore::new();
        let mut r = stream(9, "den/gradcheck", &[]);
        let cond = Conditioner::new(&mut store, CondKind::Fused, &icfg, &mut r);
        let den = Denoiser::new(&mut store, &dcfg, &mut r).unwrap();

        let mut f = |store: &ParamStore| {
            let mut g = Graph::new();
            let cs = cond.streams(&mut g, store, &prompt(), Some((&v, &id)));
            let cs_null = cond.streams(&mut g, store, &prompt(), None);
            let out = den
                .forward_nodes(
                    &mut g,
                    store,
                    &[z.clone(), z.clone()],
                    &[3, 7],
                    &[Some(&fa), None],
                    &[cs, cs_null],
                )
                .unwrap();
            let (f, c, h, w) = dcfg.latent_shape();
            let mut tgt = ndarray::ArrayD::zeros(ndarray::IxDyn(&[2, f, c, h, w]));
            for b in 0..2 {
                for fi in 0..f {
                    for ci in 0..c {
                        for y in 0..h {
                            for x in 0..w {
                                tgt[[b, fi, ci, y, x]] = target[[fi, ci, y, x]];
                            }
                        }
                    }
                }
            }
            let t = g.constant(tgt);
            let loss = g.mse(out, t);
            (g, loss)
        };

        let coords = gradcheck::sample_coords(&store, 60, 77);
        let report = gradcheck::check(&mut f, &mut store, &coords, 1e-5);
        assert!(
            report.fraction_within(1e-3) >= 0.95,
            "gradcheck failed: max rel err {}",
            report.max_rel_error()
        );
    }
}
