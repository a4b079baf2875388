//! Caption tokenizer and the learned text encoder.
//!
//! The vocabulary is closed: it is derived from the caption template's word
//! sources, so any template-generated caption tokenizes and anything else is
//! an out-of-vocabulary error. Token features are an embedding lookup plus a
//! learned positional code; a pooled, normalized caption vector supports the
//! contrastive objective.

use idsprite_core::nn::{Embedding, Linear, ParamStore};
use idsprite_core::{rng, Graph, NodeId};
use idsprite_world::{BgColor, ColorName, Marking, Motion, Shape};
use ndarray::{Array1, Array2};

use crate::encoders::EncoderConfig;
use crate::ModelError;

/// Every word the caption template can emit, sorted and deduplicated so the
/// index assignment is stable across builds.
pub fn vocabulary() -> Vec<&'static str> {
    let mut words: Vec<&'static str> =
        vec!["a", "on", "background", "sprite", "small", "large"];
    for s in Shape::ALL {
        words.push(s.word());
    }
    for c in ColorName::ALL {
        words.push(c.word());
    }
    for m in Marking::ALL {
        if let Some(w) = m.word() {
            words.push(w);
        }
    }
    for b in BgColor::ALL {
        words.push(b.word());
    }
    for m in Motion::ALL {
        for w in m.phrase().split(' ') {
            words.push(w);
        }
    }
    words.sort_unstable();
    words.dedup();
    words
}

/// Whitespace-tokenize a caption into vocabulary indices.
pub fn tokenize(caption: &str, vocab: &[&'static str]) -> Result<Vec<usize>, ModelError> {
    let ids: Result<Vec<usize>, ModelError> = caption
        .split_whitespace()
        .map(|w| {
            vocab
                .binary_search(&w)
                .map_err(|_| ModelError::OutOfVocabulary(w.to_string()))
        })
        .collect();
    let ids = ids?;
    if ids.is_empty() {
        return Err(ModelError::EmptyCaption);
    }
    Ok(ids)
}

/// Per-token caption features, shape `[L, d_t]`.
#[derive(Debug, Clone)]
pub struct PromptFeature {
    pub tokens: Array2<f64>,
}

impl PromptFeature {
    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }
}

pub struct TextEncoder {
    pub store: ParamStore,
    embed: Embedding,
    pos: Embedding,
    pool: Linear,
    vocab: Vec<&'static str>,
    pub d_t: usize,
    pub max_tokens: usize,
}

pub(crate) fn build_text<R: rand::Rng>(
    store: &mut ParamStore,
    cfg: &EncoderConfig,
    rng_: &mut R,
) -> (Embedding, Embedding, Linear) {
    let vocab_len = vocabulary().len();
    let embed = Embedding::new(store, "text.embed", vocab_len, cfg.d_t, rng_);
    let pos = Embedding::new(store, "text.pos", cfg.max_tokens, cfg.d_t, rng_);
    let pool = Linear::new(store, "text.pool", cfg.d_t, cfg.d_v, rng_);
    (embed, pos, pool)
}

impl TextEncoder {
    pub fn new(cfg: &EncoderConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut r = rng::stream(seed, "text/init", &[]);
        let (embed, pos, pool) = build_text(&mut store, cfg, &mut r);
        TextEncoder {
            store,
            embed,
            pos,
            pool,
            vocab: vocabulary(),
            d_t: cfg.d_t,
            max_tokens: cfg.max_tokens,
        }
    }

    pub fn token_ids(&self, caption: &str) -> Result<Vec<usize>, ModelError> {
        let ids = tokenize(caption, &self.vocab)?;
        if ids.len() > self.max_tokens {
            return Err(ModelError::CaptionTooLong { len: ids.len(), max: self.max_tokens });
        }
        Ok(ids)
    }

    /// `[L, d_t]` features: embedding lookup plus positional code.
    pub fn encode(&self, caption: &str) -> Result<PromptFeature, ModelError> {
        let ids = self.token_ids(caption)?;
        let table = self.store.value(self.embed.table);
        let pos = self.store.value(self.pos.table);
        let mut tokens = Array2::zeros((ids.len(), self.d_t));
        for (i, &id) in ids.iter().enumerate() {
            for j in 0..self.d_t {
                tokens[[i, j]] = table[[id, j]] + pos[[i, j]];
            }
        }
        Ok(PromptFeature { tokens })
    }

    /// Pooled unit-norm caption vector in the shared crop/caption space.
    pub fn caption_vector(&self, caption: &str) -> Result<Array1<f64>, ModelError> {
        let ids = self.token_ids(caption)?;
        let mut g = Graph::new();
        let pooled = self.forward_pooled(&mut g, &self.store, &ids);
        let v = g.value(pooled);
        Ok(Array1::from_iter(v.iter().cloned()))
    }

    /// In-graph token features for a single caption: `[L, d_t]`.
    pub(crate) fn forward_tokens(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> NodeId {
        let e = self.embed.forward(g, store, ids);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let p = self.pos.forward(g, store, &positions);
        g.add(e, p)
    }

    /// In-graph pooled caption vector: `[1, d_v]`, unit norm.
    pub(crate) fn forward_pooled(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> NodeId {
        let toks = self.forward_tokens(g, store, ids);
        let mean = g.mean_axis(toks, 0);
        let row = g.reshape(mean, &[1, self.d_t]);
        let pooled = self.pool.forward(g, store, row);
        g.l2_normalize_rows(pooled)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_is_sorted_and_covers_the_template() {
        let v = vocabulary();
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(v, sorted);
        for w in ["a", "sprite", "striped", "spinning", "purple", "background"] {
            assert!(v.binary_search(&w).is_ok(), "missing word {w}");
        }
    }

    #[test]
    fn identical_captions_encode_identically() {
        let enc = TextEncoder::new(&EncoderConfig::default(), 3);
        let a = enc.encode("a red striped circle moving right on a blue background").unwrap();
        let b = enc.encode("a red striped circle moving right on a blue background").unwrap();
        assert_eq!(a.tokens, b.tokens);
        assert_eq!(a.len(), 10);
    }

    #[test]
    fn one_word_difference_touches_one_token_row() {
        let enc = TextEncoder::new(&EncoderConfig::default(), 3);
        let a = enc.encode("a small sprite resting on a blue background").unwrap();
        let b = enc.encode("a small sprite resting on a gray background").unwrap();
        assert_eq!(a.len(), b.len());
        let mut differing = Vec::new();
        for i in 0..a.len() {
            if a.tokens.row(i) != b.tokens.row(i) {
                differing.push(i);
            }
        }
        assert_eq!(differing, vec![6]);
    }

    #[test]
    fn out_of_vocabulary_word_is_an_error() {
        let enc = TextEncoder::new(&EncoderConfig::default(), 3);
        match enc.encode("a small dragon resting on a blue background") {
            Err(ModelError::OutOfVocabulary(w)) => assert_eq!(w, "dragon"),
            other => panic!("expected vocabulary error, got {other:?}"),
        }
        assert!(matches!(enc.encode(""), Err(ModelError::EmptyCaption)));
    }

    #[test]
    fn caption_vector_is_unit_norm_and_deterministic() {
        let enc = TextEncoder::new(&EncoderConfig::default(), 5);
        let v = enc.caption_vector("a large sprite spinning on a yellow background").unwrap();
        let w = enc.caption_vector("a large sprite spinning on a yellow background").unwrap();
        assert_eq!(v, w);
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn overlong_caption_is_rejected() {
        let cfg = EncoderConfig { max_tokens: 4, ..EncoderConfig::default() };
        let enc = TextEncoder::new(&cfg, 3);
        assert!(matches!(
            enc.encode("a small sprite resting on a blue background"),
            Err(ModelError::CaptionTooLong { len: 8, max: 4 })
        ));
    }
}
