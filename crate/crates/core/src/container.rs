//! Versioned binary container for fitted models.
//!
//! Layout (little-endian):
//!
//! | bytes | field                                   |
//! |-------|-----------------------------------------|
//! | 4     | magic `MVDM`                            |
//! | 4     | format version (`u32`, currently 1)     |
//! | 1     | stage tag                               |
//! | 32    | SHA-256 of the producing configuration  |
//! | 8     | seed (`u64`)                            |
//! | 8     | payload length (`u64`)                  |
//! | n     | bincode-encoded payload                 |

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::acoustic::{GmmUbm, TvModel};
use crate::classifier::SoftmaxModel;
use crate::discriminant::{LdaModel, WccnModel};
use crate::error::{Error, Result};
use crate::fusion::CcaModel;
use crate::phonotactic::{NgramVocab, PhonotacticProjector};

pub const MAGIC: &[u8; 4] = b"MVDM";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 32 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Vocab,
    Projector,
    Ubm,
    Tv,
    Cca,
    Lda,
    Wccn,
    Softmax,
}

impl Stage {
    fn tag(self) -> u8 {
        match self {
            Stage::Vocab => 1,
            Stage::Projector => 2,
            Stage::Ubm => 3,
            Stage::Tv => 4,
            Stage::Cca => 5,
            Stage::Lda => 6,
            Stage::Wccn => 7,
            Stage::Softmax => 8,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            1 => Stage::Vocab,
            2 => Stage::Projector,
            3 => Stage::Ubm,
            4 => Stage::Tv,
            5 => Stage::Cca,
            6 => Stage::Lda,
            7 => Stage::Wccn,
            8 => Stage::Softmax,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Vocab => "vocab",
            Stage::Projector => "projector",
            Stage::Ubm => "ubm",
            Stage::Tv => "tv",
            Stage::Cca => "cca",
            Stage::Lda => "lda",
            Stage::Wccn => "wccn",
            Stage::Softmax => "softmax",
        }
    }
}

/// Models that can be stored in a container, each under a fixed stage tag.
pub trait StagePayload: Serialize + DeserializeOwned {
    const STAGE: Stage;
}

macro_rules! stage_payload {
    ($($ty:ty => $stage:ident),* $(,)?) => {
        $(impl StagePayload for $ty {
            const STAGE: Stage = Stage::$stage;
        })*
    };
}

stage_payload! {
    NgramVocab => Vocab,
    PhonotacticProjector => Projector,
    GmmUbm => Ubm,
    TvModel => Tv,
    CcaModel => Cca,
    LdaModel => Lda,
    WccnModel => Wccn,
    SoftmaxModel => Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Metadata {
    pub config_hash: [u8; 32],
    pub seed: u64,
}

impl Metadata {
    pub fn hash_hex(&self) -> String {
        self.config_hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn encode<T: StagePayload>(meta: &Metadata, payload: &T) -> Result<Vec<u8>> {
    let body = bincode::serialize(payload).map_err(|e| Error::Format {
        what: "model payload",
        msg: e.to_string(),
    })?;
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(T::STAGE.tag());
    out.extend_from_slice(&meta.config_hash);
    out.extend_from_slice(&meta.seed.to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn decode<T: StagePayload>(bytes: &[u8]) -> Result<(Metadata, T)> {
    let bad = |msg: String| Error::Format {
        what: "model container",
        msg,
    };
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("header truncated ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let stage = Stage::from_tag(bytes[8]).ok_or_else(|| bad(format!("unknown stage tag {}", bytes[8])))?;
    if stage != T::STAGE {
        return Err(bad(format!("expected a {} container, found {}", T::STAGE.name(), stage.name())));
    }
    let config_hash: [u8; 32] = bytes[9..41].try_into().unwrap();
    let seed = u64::from_le_bytes(bytes[41..49].try_into().unwrap());
    let len = u64::from_le_bytes(bytes[49..57].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != len {
        return Err(bad(format!("payload length {} does not match header {len}", body.len())));
    }
    let payload = bincode::deserialize(body).map_err(|e| bad(e.to_string()))?;
    Ok((Metadata { config_hash, seed }, payload))
}

pub fn save<T: StagePayload>(path: &Path, meta: &Metadata, payload: &T) -> Result<()> {
    fs::write(path, encode(meta, payload)?).map_err(|e| Error::io(path, e))
}

pub fn load<T: StagePayload>(path: &Path) -> Result<(Metadata, T)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
