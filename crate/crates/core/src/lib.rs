//! Referring-expression segmentation by orchestrating frozen model backends.
pub mod backends;
pub mod config;
pub mod eval;
pub mod image;
pub mod mask;
pub mod pipeline;
pub mod similarity;
pub mod trace;
