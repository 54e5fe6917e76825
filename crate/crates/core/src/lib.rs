//! Alternate contrastive decoding (ALCD) for identify-and-classify extraction.
//!
//! The crate covers the whole experiment loop at desk scale:
//!
//! - [`vocab`]: the shared character vocabulary.
//! - [`logits`], [`tinylm`]: logit sources, a scriptable table and a tiny
//!   trainable window language model.
//! - [`roles`]: the colon/newline role judgment and loss masks.
//! - [`train`]: masked-loss fine-tuning of the normal, classification and
//!   identification models.
//! - [`decoding`]: ALCD, its ablations and the baseline decoders.
//! - [`bench`]: the synthetic extraction benchmark.
//! - [`eval`]: output parsing, micro-F1 and the hallucination breakdown.
//! - [`harness`]: config-driven pipeline behind the `alcd` binary.

pub mod bench;
pub mod decoding;
pub mod error;
pub mod eval;
pub mod harness;
pub mod logits;
pub mod roles;
pub mod tinylm;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
