//! Core library: data model, event segmentation, temporal grounding,
//! spatial inheritance, prompt templates, the iterative reasoner and the
//! file formats and orchestration tying them together.

pub mod config;
pub mod eval;
pub mod formats;
pub mod grounding;
pub mod model;
pub mod pipeline;
pub mod reasoner;
pub mod segmentation;
pub mod spatial;
pub mod templates;
