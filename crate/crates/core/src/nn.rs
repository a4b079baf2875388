//! Parameter storage and the small set of layers the models are built from.

use ndarray::IxDyn;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::graph::{Graph, NodeId};
use crate::{rng, Arr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Named, flat collection of trainable tensors with their gradients.
#[derive(Default, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arr>,
    grads: Vec<Arr>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Arr) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name: {name}"
        );
        let grad = Arr::zeros(value.raw_dim());
        self.names.push(name.to_string());
        self.values.push(value);
        self.grads.push(grad);
        ParamId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn ids(&self) -> Vec<ParamId> {
        (0..self.values.len()).map(ParamId).collect()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Arr {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Arr {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Arr {
        &self.grads[id.0]
    }

    pub fn set_coord(&mut self, id: ParamId, flat_index: usize, v: f64) {
        self.values[id.0].as_slice_mut().unwrap()[flat_index] = v;
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Arr) {
        self.grads[id.0] += g;
    }

    pub fn all_grads(&self) -> Vec<Arr> {
        self.grads.clone()
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Export as (name, tensor) pairs in registration order.
    pub fn export(&self) -> Vec<(String, Arr)> {
        self.names
            .iter()
            .cloned()
            .zip(self.values.iter().cloned())
            .collect()
    }

    /// Overwrite values from (name, tensor) pairs. Every stored name must be
    /// present with a matching shape.
    pub fn import(&mut self, tensors: &[(String, Arr)]) -> Result<(), String> {
        for (i, name) in self.names.iter().enumerate() {
            let found = tensors
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| format!("missing parameter {name}"))?;
            if found.1.shape() != self.values[i].shape() {
                return Err(format!(
                    "shape mismatch for {name}: {:?} vs {:?}",
                    found.1.shape(),
                    self.values[i].shape()
                ));
            }
            self.values[i] = found.1.clone();
        }
        Ok(())
    }

    /// SHA-256 over names and raw value bytes; detects any parameter change.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, v) in self.names.iter().zip(&self.values) {
            h.update(name.as_bytes());
            h.update([0u8]);
            for d in v.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for x in v.iter() {
                h.update(x.to_le_bytes());
            }
        }
        hex_string(&h.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Dense layer `y = x W + b`, where `x` may carry leading batch axes.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng_: &mut R,
    ) -> Self {
        let s = (6.0 / (d_in + d_out) as f64).sqrt();
        let w = store.register(&format!("{name}.w"), rng::uniform(rng_, &[d_in, d_out], -s, s));
        let b = store.register(&format!("{name}.b"), Arr::zeros(IxDyn(&[d_out])));
        Self { w, b: Some(b), d_in, d_out }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> NodeId {
        let shape = g.value(x).shape().to_vec();
        assert_eq!(*shape.last().unwrap(), self.d_in, "linear input dim mismatch");
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let flat = g.reshape(x, &[rows, self.d_in]);
        let w = g.param(store, self.w);
        let mut y = g.matmul(flat, w);
        if let Some(b) = self.b {
            let b = g.param(store, b);
            y = g.add(y, b);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.d_out;
        g.reshape(y, &out_shape)
    }
}

/// Affine layer norm over the last axis.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        let gamma = store.register(&format!("{name}.gamma"), Arr::ones(IxDyn(&[d])));
        let beta = store.register(&format!("{name}.beta"), Arr::zeros(IxDyn(&[d])));
        Self { gamma, beta, eps: 1e-5 }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> NodeId {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, self.eps)
    }
}

/// Token embedding table.
#[derive(Debug, Clone, Copy)]
pub struct Embedding {
    pub table: ParamId,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        vocab: usize,
        dim: usize,
        rng_: &mut R,
    ) -> Self {
        let init = rng::normal(rng_, &[vocab, dim]).mapv(|v| v * 0.02);
        let table = store.register(&format!("{name}.table"), init);
        Self { table, dim }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, indices: &[usize]) -> NodeId {
        let t = g.param(store, self.table);
        g.gather(t, indices)
    }
}

/// Two-layer feedforward map with a smooth nonlinearity.
#[derive(Debug, Clone, Copy)]
pub struct Mlp2 {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp2 {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
        rng_: &mut R,
    ) -> Self {
        let fc1 = Linear::new(store, &format!("{name}.fc1"), d_in, d_hidden, rng_);
        let fc2 = Linear::new(store, &format!("{name}.fc2"), d_hidden, d_out, rng_);
        Self { fc1, fc2 }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> NodeId {
        let h = self.fc1.forward(g, store, x);
        let h = g.silu(h);
        self.fc2.forward(g, store, h)
    }
}

/// Multi-head attention weights. Query comes from the token stream; key and
/// value come from `kv` (self-attention when both are the same stream).
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl Attention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        kv_dim: usize,
        heads: usize,
        rng_: &mut R,
    ) -> Self {
        assert_eq!(dim % heads, 0, "attention dim must divide heads");
        Self {
            wq: Linear::new(store, &format!("{name}.wq"), dim, dim, rng_),
            wk: Linear::new(store, &format!("{name}.wk"), kv_dim, dim, rng_),
            wv: Linear::new(store, &format!("{name}.wv"), kv_dim, dim, rng_),
            wo: Linear::new(store, &format!("{name}.wo"), dim, dim, rng_),
            heads,
            dim,
        }
    }

    /// `x`: [B, Tq, dim], `kv`: [B, Tk, kv_dim] -> [B, Tq, dim]
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId, kv: NodeId) -> NodeId {
        let (b, tq) = {
            let s = g.value(x).shape();
            (s[0], s[1])
        };
        let tk = g.value(kv).shape()[1];
        let h = self.heads;
        let dh = self.dim / h;

        let q = self.wq.forward(g, store, x);
        let k = self.wk.forward(g, store, kv);
        let v = self.wv.forward(g, store, kv);

        let split = |g: &mut Graph, t: NodeId, tokens: usize| {
            let t = g.reshape(t, &[b, tokens, h, dh]);
            let t = g.permute(t, &[0, 2, 1, 3]);
            g.reshape(t, &[b * h, tokens, dh])
        };
        let q = split(g, q, tq);
        let k = split(g, k, tk);
        let v = split(g, v, tk);

        let kt = g.permute(k, &[0, 2, 1]);
        let scores = g.bmm(q, kt);
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let attn = g.softmax(scores);
        let ctx = g.bmm(attn, v);

        let ctx = g.reshape(ctx, &[b, h, tq, dh]);
        let ctx = g.permute(ctx, &[0, 2, 1, 3]);
        let ctx = g.reshape(ctx, &[b, tq, self.dim]);
        self.wo.forward(g, store, ctx)
    }
}
