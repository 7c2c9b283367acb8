//! Damaged variants of valid embedding and checkpoint files.

use mian::data::encode_embeddings;
use mian::model::{encode_checkpoint, init_model, ModelConfig};

use super::synth_for;

/// Byte offset of the first f32 in the first record of an embedding file.
const EMB_FIRST_VALUE: usize = 28 + 6;

pub struct Case {
    pub name: &'static str,
    pub bytes: Vec<u8>,
    /// Offset the diagnostic must report.
    pub offset: u64,
}

pub fn valid_embeddings() -> Vec<u8> {
    let cfg = ModelConfig::tiny();
    encode_embeddings(&synth_for(&cfg, 8, 3)).unwrap()
}

pub fn valid_checkpoint() -> Vec<u8> {
    encode_checkpoint(&init_model(&ModelConfig::tiny()).unwrap(), 0xfeed).unwrap()
}

pub fn embedding_cases() -> Vec<Case> {
    let good = valid_embeddings();
    let mut magic = good.clone();
    magic[..8].copy_from_slice(b"MIANEMB2");
    let mut version = good.clone();
    version[8..12].copy_from_slice(&7u32.to_le_bytes());
    let truncated = good[..good.len() - 5].to_vec();
    let mut count = good.clone();
    count[12..16].copy_from_slice(&9u32.to_le_bytes());
    let mut nan = good.clone();
    nan[EMB_FIRST_VALUE..EMB_FIRST_VALUE + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    let cfg = ModelConfig::tiny();
    let patches = 4 * cfg.u * cfg.d_model;
    vec![
        Case {
            name: "bad magic",
            bytes: magic,
            offset: 0,
        },
        Case {
            name: "bad version",
            bytes: version,
            offset: 8,
        },
        Case {
            name: "truncation",
            offset: (good.len() - patches) as u64,
            bytes: truncated,
        },
        Case {
            name: "count mismatch",
            bytes: count,
            offset: 28,
        },
        Case {
            name: "NaN payload",
            bytes: nan,
            offset: EMB_FIRST_VALUE as u64,
        },
    ]
}

pub fn checkpoint_cases() -> Vec<Case> {
    let good = valid_checkpoint();
    let params = init_model(&ModelConfig::tiny()).unwrap();
    let last_block = 8 * params.iter().last().unwrap().1.len();
    let mut magic = good.clone();
    magic[0] = b'X';
    let mut version = good.clone();
    version[8..12].copy_from_slice(&2u32.to_le_bytes());
    let truncated = good[..good.len() - 3].to_vec();
    let mut count = good.clone();
    let declared = u32::from_le_bytes(good[20..24].try_into().unwrap());
    count[20..24].copy_from_slice(&(declared + 1).to_le_bytes());
    let mut nan = good.clone();
    let last = good.len() - 8;
    nan[last..].copy_from_slice(&f64::NAN.to_le_bytes());
    vec![
        Case {
            name: "bad magic",
            bytes: magic,
            offset: 0,
        },
        Case {
            name: "bad version",
            bytes: version,
            offset: 8,
        },
        Case {
            name: "truncation",
            offset: (good.len() - last_block) as u64,
            bytes: truncated,
        },
        Case {
            name: "count mismatch",
            offset: good.len() as u64,
            bytes: count,
        },
        Case {
            name: "NaN payload",
            bytes: nan,
            offset: last as u64,
        },
    ]
}
