//! Multimodal inverse attention network for fake news detection.
//!
//! Text tokens and image patches (as encoder embeddings) pass through a
//! hierarchical attention branch per modality, then a cross-modal
//! co-attention stage. Every attention site can add an inverse-attention
//! branch that looks at the keys the ordinary head ignores, and a learned
//! gate mixes the two. A small MLP classifies the pooled representation.
//!
//! Everything runs on a small `f64` reverse-mode engine in [`numerics`].

pub mod attention;
pub mod cim;
pub mod cli;
pub mod data;
pub mod error;
pub mod hlm;
pub mod model;
pub mod numerics;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/engine.md")]
    mod engine {}
    #[doc = include_str!("../../../book/src/attention.md")]
    mod attention {}
    #[doc = include_str!("../../../book/src/hierarchical.md")]
    mod hierarchical {}
    #[doc = include_str!("../../../book/src/cross_modal.md")]
    mod cross_modal {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
