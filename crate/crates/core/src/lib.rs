//! Image communication over an explicit, versioned knowledge base of
//! semantic bases (Sebs).
//!
//! The pipeline runs [`semcodec::encode`] against a [`kb::KnowledgeBase`],
//! packs the result with [`semcodec::serialize_frame`], protects it with
//! [`channel::uep_frame`] and rebuilds it with [`semcodec::decode`]. The
//! [`sync`] module keeps transmitter and receiver copies of the knowledge
//! base identical, and [`harness`] drives whole scenarios.

pub mod bits;
pub mod channel;
pub mod harness;
pub mod importance;
pub mod kb;
pub mod rng;
pub mod semcodec;
pub mod sync;

// The guide's snippets run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/index.md")]
    mod index {}
    #[doc = include_str!("../../../book/src/kb.md")]
    mod kb {}
    #[doc = include_str!("../../../book/src/codec.md")]
    mod codec {}
    #[doc = include_str!("../../../book/src/importance.md")]
    mod importance {}
    #[doc = include_str!("../../../book/src/channel.md")]
    mod channel {}
    #[doc = include_str!("../../../book/src/sync.md")]
    mod sync {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
}
