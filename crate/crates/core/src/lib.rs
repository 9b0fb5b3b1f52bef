//! Knowledge-aware charge prediction.
//!
//! A fact description is encoded by a graph convolutional network over a
//! PMI word graph; a hierarchy of schema and charge transformers encodes a
//! tree of legal schematic knowledge; an attention-based matching network
//! fuses the two before a softmax classifier picks the charge.
//!
//! Everything runs on a small reverse-mode engine in [`diffcore`].

pub mod data;
pub mod diffcore;
pub mod encoders;
pub mod error;
pub mod harness;
pub mod init;
pub mod lktransformer;
pub mod matcher;
pub mod textgraph;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/text-graphs.md")]
    mod text_graphs {}
    #[doc = include_str!("../../../book/src/encoders.md")]
    mod encoders {}
    #[doc = include_str!("../../../book/src/knowledge-transformer.md")]
    mod knowledge_transformer {}
    #[doc = include_str!("../../../book/src/matching.md")]
    mod matching {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
}
