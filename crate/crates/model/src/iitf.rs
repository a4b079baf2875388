//! Fusion of identity, image, and text features into one condition stream.
//!
//! The fused conditioner projects the identity embedding into the vision
//! feature space, fuses it with the crop's vision feature through a small
//! MLP, expands the result into a fixed number of face tokens, and appends
//! those to the projected prompt tokens; a final per-token MLP lets prompt
//! and face information mix before cross-attention. Two baselines live
//! behind the same interface: a prompt-only conditioner and a dual-branch
//! one that feeds the raw vision/identity concatenation through a separate
//! attention stream without any shared-space projection.

use idsprite_core::nn::{Linear, Mlp2, ParamId, ParamStore};
use idsprite_core::{rng, Activation, Graph, NodeId};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// Version tag written into checkpoint sections holding conditioner weights.
pub const CONDITIONER_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IitfConfig {
    /// Vision feature width (input from the frozen vision encoder).
    pub d_v: usize,
    /// Prompt token feature width (input from the frozen text encoder).
    pub d_t: usize,
    /// Identity embedding width (input from the frozen identity encoder).
    pub d_id: usize,
    /// Fused face feature width.
    pub d_f: usize,
    /// Condition token width, must match the denoiser's cross-attention.
    pub d_c: usize,
    /// Number of face tokens appended to the prompt tokens.
    pub face_tokens: usize,
}

impl Default for IitfConfig {
    fn default() -> Self {
        IitfConfig { d_v: 64, d_t: 64, d_id: 32, d_f: 64, d_c: 64, face_tokens: 4 }
    }
}

/// Which conditioner variant a model was built with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CondKind {
    Fused,
    PromptOnly,
    DualBranch,
}

/// In-graph condition streams for one sample.
#[derive(Debug, Clone, Copy)]
pub struct ConditionStreams {
    /// Main token stream `[T, d_c]` for cross-attention.
    pub primary: NodeId,
    /// Extra token stream `[k, d_c]` for the dual-branch variant.
    pub secondary: Option<NodeId>,
    /// Whether real face features entered (false on the null path).
    pub has_face: bool,
}

/// Evaluated condition for sampling and inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedCondition {
    pub tokens: Array2<f64>,
    pub side_tokens: Option<Array2<f64>>,
    pub has_face: bool,
}

/// The fused identity-image-text conditioner.
pub struct Iitf {
    prj: Linear,
    fuse: Mlp2,
    prompt_in: Linear,
    face_out: Linear,
    mix: Mlp2,
    null_face: ParamId,
    cfg: IitfConfig,
}

impl Iitf {
    pub fn new<R: rand::Rng>(store: &mut ParamStore, cfg: &IitfConfig, rng_: &mut R) -> Self {
        let prj = Linear::new(store, "iitf.prj", cfg.d_id, cfg.d_v, rng_);
        let fuse = Mlp2::new(store, "iitf.fuse", 2 * cfg.d_v, cfg.d_f, cfg.d_f, rng_);
        let prompt_in = Linear::new(store, "iitf.prompt_in", cfg.d_t, cfg.d_c, rng_);
        let face_out =
            Linear::new(store, "iitf.face_out", cfg.d_f, cfg.face_tokens * cfg.d_c, rng_);
        let mix = Mlp2::new(store, "iitf.mix", cfg.d_c, cfg.d_c, cfg.d_c, rng_);
        let null_face = store
            .register("iitf.null_face", rng::normal(rng_, &[cfg.d_f]).mapv(|v| v * 0.02));
        Iitf { prj, fuse, prompt_in, face_out, mix, null_face, cfg: *cfg }
    }

    /// Map identity embeddings `[B, d_id]` into the vision feature space.
    pub fn project_id(&self, g: &mut Graph, store: &ParamStore, f_id: NodeId) -> NodeId {
        let y = self.prj.forward(g, store, f_id);
        g.activation(y, Activation::Tanh)
    }

    /// Fuse vision features `[B, d_v]` with identity embeddings `[B, d_id]`.
    pub fn fuse_face(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        f_vision: NodeId,
        f_id: NodeId,
    ) -> NodeId {
        let p = self.project_id(g, store, f_id);
        let cat = g.concat(&[f_vision, p], 1);
        self.fuse.forward(g, store, cat)
    }

    fn expand_face(&self, g: &mut Graph, store: &ParamStore, fused: NodeId) -> NodeId {
        let flat = self.face_out.forward(g, store, fused);
        g.reshape(flat, &[self.cfg.face_tokens, self.cfg.d_c])
    }

    /// Build the condition token stream `[L + k, d_c]` from prompt tokens
    /// `[L, d_t]` and an optional fused face feature `[1, d_f]`. `None`
    /// substitutes the learned null-face feature.
    pub fn fuse_condition(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        prompt: NodeId,
        fused_face: Option<NodeId>,
    ) -> (NodeId, bool) {
        let p = self.prompt_in.forward(g, store, prompt);
        let (face, has_face) = match fused_face {
            Some(f) => (f, true),
            None => {
                let nf = g.param(store, self.null_face);
                (g.reshape(nf, &[1, self.cfg.d_f]), false)
            }
        };
        let ft = self.expand_face(g, store, face);
        let all = g.concat(&[p, ft], 0);
        (self.mix.forward(g, store, all), has_face)
    }
}

/// Caption-only conditioner: no face information enters at all.
pub struct PromptOnly {
    prompt_in: Linear,
    mix: Mlp2,
}

impl PromptOnly {
    pub fn new<R: rand::Rng>(store: &mut ParamStore, cfg: &IitfConfig, rng_: &mut R) -> Self {
        let prompt_in = Linear::new(store, "cond.prompt_in", cfg.d_t, cfg.d_c, rng_);
        let mix = Mlp2::new(store, "cond.mix", cfg.d_c, cfg.d_c, cfg.d_c, rng_);
        PromptOnly { prompt_in, mix }
    }
}

/// Two-stream baseline: prompt tokens in one stream, the raw concatenation
/// of vision feature and identity embedding expanded into face tokens in a
/// second stream, with no shared-space projection or fusion in between.
pub struct DualBranch {
    prompt_in: Linear,
    mix: Mlp2,
    face_in: Linear,
    null: ParamId,
    cfg: IitfConfig,
}

impl DualBranch {
    pub fn new<R: rand::Rng>(store: &mut ParamStore, cfg: &IitfConfig, rng_: &mut R) -> Self {
        let prompt_in = Linear::new(store, "cond.prompt_in", cfg.d_t, cfg.d_c, rng_);
        let mix = Mlp2::new(store, "cond.mix", cfg.d_c, cfg.d_c, cfg.d_c, rng_);
        let face_in = Linear::new(
            store,
            "cond.face_in",
            cfg.d_v + cfg.d_id,
            cfg.face_tokens * cfg.d_c,
            rng_,
        );
        let null = store
            .register("cond.null", rng::normal(rng_, &[cfg.d_v + cfg.d_id]).mapv(|v| v * 0.02));
        DualBranch { prompt_in, mix, face_in, null, cfg: *cfg }
    }
}

/// Conditioner variants behind one interface; all take the same frozen
/// encoder features and emit token streams for the denoiser.
pub enum Conditioner {
    Fused(Iitf),
    PromptOnly(PromptOnly),
    DualBranch(DualBranch),
}

impl Conditioner {
    pub fn new<R: rand::Rng>(
        store: &mut ParamStore,
        kind: CondKind,
        cfg: &IitfConfig,
        rng_: &mut R,
    ) -> Self {
        match kind {
            CondKind::Fused => Conditioner::Fused(Iitf::new(store, cfg, rng_)),
            CondKind::PromptOnly => Conditioner::PromptOnly(PromptOnly::new(store, cfg, rng_)),
            CondKind::DualBranch => Conditioner::DualBranch(DualBranch::new(store, cfg, rng_)),
        }
    }

    pub fn kind(&self) -> CondKind {
        match self {
            Conditioner::Fused(_) => CondKind::Fused,
            Conditioner::PromptOnly(_) => CondKind::PromptOnly,
            Conditioner::DualBranch(_) => CondKind::DualBranch,
        }
    }

    /// Prefix of every parameter name this conditioner registered.
    pub fn param_prefix(&self) -> &'static str {
        match self {
            Conditioner::Fused(_) => "iitf.",
            _ => "cond.",
        }
    }

    /// Token counts (primary, secondary) for a prompt of length `l`.
    pub fn token_counts(&self, l: usize) -> (usize, Option<usize>) {
        match self {
            Conditioner::Fused(f) => (l + f.cfg.face_tokens, None),
            Conditioner::PromptOnly(_) => (l, None),
            Conditioner::DualBranch(d) => (l, Some(d.cfg.face_tokens)),
        }
    }

    /// Build in-graph condition streams for one sample. `face` carries the
    /// frozen `(vision, identity)` features of the reference crop, or `None`
    /// for the null path (either no reference or a conditioning drop).
    pub fn streams(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        prompt: &Array2<f64>,
        face: Option<(&Array1<f64>, &Array1<f64>)>,
    ) -> ConditionStreams {
        let p = g.constant(prompt.clone().into_dyn());
        match self {
            Conditioner::Fused(f) => {
                let fused = face.map(|(fv, fi)| {
                    let v = g.constant(fv.clone().insert_axis(ndarray::Axis(0)).into_dyn());
                    let i = g.constant(fi.clone().insert_axis(ndarray::Axis(0)).into_dyn());
                    f.fuse_face(g, store, v, i)
                });
                let (tokens, has_face) = f.fuse_condition(g, store, p, fused);
                ConditionStreams { primary: tokens, secondary: None, has_face }
            }
            Conditioner::PromptOnly(c) => {
                let t = c.prompt_in.forward(g, store, p);
                let t = c.mix.forward(g, store, t);
                ConditionStreams { primary: t, secondary: None, has_face: false }
            }
            Conditioner::DualBranch(d) => {
                let t = d.prompt_in.forward(g, store, p);
                let t = d.mix.forward(g, store, t);
                let (raw, has_face) = match face {
                    Some((fv, fi)) => {
                        let mut cat = Array1::zeros(d.cfg.d_v + d.cfg.d_id);
                        cat.slice_mut(ndarray::s![..d.cfg.d_v]).assign(fv);
                        cat.slice_mut(ndarray::s![d.cfg.d_v..]).assign(fi);
                        (g.constant(cat.insert_axis(ndarray::Axis(0)).into_dyn()), true)
                    }
                    None => {
                        let n = g.param(store, d.null);
                        (g.reshape(n, &[1, d.cfg.d_v + d.cfg.d_id]), false)
                    }
                };
                let side = d.face_in.forward(g, store, raw);
                let side = g.reshape(side, &[d.cfg.face_tokens, d.cfg.d_c]);
                ConditionStreams { primary: t, secondary: Some(side), has_face }
            }
        }
    }

    /// Evaluate the condition streams to concrete arrays.
    pub fn condition(
        &self,
        store: &ParamStore,
        prompt: &Array2<f64>,
        face: Option<(&Array1<f64>, &Array1<f64>)>,
    ) -> FusedCondition {
        let mut g = Graph::new();
        let s = self.streams(&mut g, store, prompt, face);
        let to2 = |g: &Graph, n: NodeId| {
            let v = g.value(n);
            Array2::from_shape_vec((v.shape()[0], v.shape()[1]), v.iter().cloned().collect())
                .expect("condition shape")
        };
        FusedCondition {
            tokens: to2(&g, s.primary),
            side_tokens: s.secondary.map(|n| to2(&g, n)),
            has_face: s.has_face,
        }
    }
}
