//! Session-based recommendation with LLM-mined multi-semantic intents.
//!
//! The pipeline has three phases:
//!
//! 1. [`backbone`] is pretrained on the item-id sessions and
//!    [`candidates`] extracts each session's top-K items with titles.
//! 2. [`intent`] prompts an LLM with the click titles and the candidate
//!    titles, parses its semicolon-separated intents and buckets them as
//!    explicit (a clicked title) or latent. [`encoder`] embeds and pools
//!    each bucket.
//! 3. [`trainer`] jointly trains the backbone with the projected intents
//!    fused into the session vector and aligned to the structural intent by
//!    [`fusion`]. [`eval`] computes P@K / MRR@K and runs the ablation and
//!    sweep harness in [`harness`].

pub mod backbone;
pub mod candidates;
pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod exec;
pub mod fusion;
pub mod harness;
pub mod intent;
pub mod optim;
pub mod params;
pub mod seed;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Exec;
