//! Controllable region captioning.
//!
//! A user's visual control (points, box or trajectory) becomes a segmenter
//! prompt; the resulting mask drives a captioner, optionally through a
//! two-step visual chain-of-thought; a text refiner then restyles the raw
//! caption according to language controls. The same backends power
//! object-centric chat and whole-image paragraph captioning.

pub mod backends;
pub mod chat;
pub mod error;
pub mod geometry;
pub mod paragraph;
pub mod pipeline;
pub mod prompts;

pub use error::{Error, Result};
