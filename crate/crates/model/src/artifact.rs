//! The frozen-encoder artifact: one tensor archive holding every encoder's
//! parameters plus a JSON header with the config echo, corpus hash,
//! vocabulary snapshot, and the pretraining measurement report.

use std::path::Path;

use idsprite_core::io::{read_archive, sha256_hex, write_archive};
use serde::{Deserialize, Serialize};

use crate::classifier::AttrNets;
use crate::codec::LatentCodec;
use crate::encoders::{IdentityEncoder, VisionEncoder};
use crate::pretrain::PretrainReport;
use crate::text::{vocabulary, TextEncoder};
use crate::{EncoderConfig, ModelError};

pub const ENCODER_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderHeader {
    pub format_version: u32,
    pub config: EncoderConfig,
    pub seed: u64,
    /// Hash of the corpus manifest the encoders were trained on.
    pub corpus_hash: String,
    /// Vocabulary snapshot; loading fails if the active vocabulary differs.
    pub vocab: Vec<String>,
    /// Codec reconstruction error on held-out frames.
    pub tau_codec: f64,
    pub latent_scale: f64,
    pub report: PretrainReport,
}

/// Every frozen encoder, loaded or freshly pretrained.
pub struct EncoderSet {
    pub vision: VisionEncoder,
    pub text: TextEncoder,
    pub identity: IdentityEncoder,
    pub codec: LatentCodec,
    pub attr: AttrNets,
    pub header: EncoderHeader,
}

/// Content hashes of each encoder's parameters, recorded by training runs so
/// freeze violations are detectable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderHashes {
    pub vision: String,
    pub text: String,
    pub identity: String,
    pub codec: String,
    pub attr: String,
    pub combined: String,
}

impl EncoderSet {
    pub fn hashes(&self) -> EncoderHashes {
        let vision = self.vision.store.content_hash();
        let text = self.text.store.content_hash();
        let identity = self.identity.store.content_hash();
        let codec = self.codec.store.content_hash();
        let attr = self.attr.store.content_hash();
        let combined = sha256_hex(
            format!("{vision}{text}{identity}{codec}{attr}{:.17e}", self.codec.latent_scale)
                .as_bytes(),
        );
        EncoderHashes { vision, text, identity, codec, attr, combined }
    }
}

pub fn save_encoders(path: &Path, set: &EncoderSet) -> Result<(), ModelError> {
    let header = serde_json::to_string(&set.header)
        .map_err(|e| ModelError::Artifact(format!("header encode: {e}")))?;
    write_archive(
        path,
        ENCODER_FORMAT_VERSION,
        &header,
        &[
            ("vision", set.vision.store.export()),
            ("text", set.text.store.export()),
            ("identity", set.identity.store.export()),
            ("codec", set.codec.store.export()),
            ("attr", set.attr.store.export()),
        ],
    )?;
    Ok(())
}

/// Load an encoder artifact, checking the format version, the vocabulary
/// snapshot, and (when `active_corpus_hash` is given) that the artifact was
/// trained on the same corpus. `allow_hash_mismatch` downgrades the corpus
/// check for deliberate cross-corpus evaluation.
pub fn load_encoders(
    path: &Path,
    active_corpus_hash: Option<&str>,
    allow_hash_mismatch: bool,
) -> Result<EncoderSet, ModelError> {
    let archive = read_archive(path)?;
    if archive.version != ENCODER_FORMAT_VERSION {
        return Err(ModelError::Artifact(format!(
            "encoder archive version {} unsupported (expected {ENCODER_FORMAT_VERSION})",
            archive.version
        )));
    }
    let header: EncoderHeader = serde_json::from_str(&archive.header)
        .map_err(|e| ModelError::Artifact(format!("header decode: {e}")))?;
    if header.format_version != ENCODER_FORMAT_VERSION {
        return Err(ModelError::Artifact(format!(
            "encoder header version {} unsupported (expected {ENCODER_FORMAT_VERSION})",
            header.format_version
        )));
    }
    let vocab_now: Vec<String> = vocabulary().iter().map(|s| s.to_string()).collect();
    if header.vocab != vocab_now {
        return Err(ModelError::Artifact(
            "caption vocabulary differs from the one the artifact was trained with".into(),
        ));
    }
    if let Some(active) = active_corpus_hash {
        if active != header.corpus_hash && !allow_hash_mismatch {
            return Err(ModelError::CorpusHashMismatch {
                artifact: header.corpus_hash.clone(),
                active: active.to_string(),
            });
        }
    }
    header.config.validate()?;

    let section = |name: &str| {
        archive
            .sections
            .get(name)
            .ok_or_else(|| ModelError::Artifact(format!("archive missing section '{name}'")))
    };

    let mut vision = VisionEncoder::new(&header.config, header.seed);
    vision.store.import(section("vision")?).map_err(ModelError::Artifact)?;
    let mut text = TextEncoder::new(&header.config, header.seed);
    text.store.import(section("text")?).map_err(ModelError::Artifact)?;
    let mut identity = IdentityEncoder::new(&header.config, header.seed);
    identity.store.import(section("identity")?).map_err(ModelError::Artifact)?;
    let mut codec = LatentCodec::new(&header.config, header.seed);
    codec.store.import(section("codec")?).map_err(ModelError::Artifact)?;
    codec.latent_scale = header.latent_scale;
    let mut attr = AttrNets::new(&header.config, header.seed);
    attr.store.import(section("attr")?).map_err(ModelError::Artifact)?;

    Ok(EncoderSet { vision, text, identity, codec, attr, header })
}
