//! End-to-end segmentation of one query: prompt construction followed by
//! self-refinement, with a full trace.

pub mod eri;
pub mod msr;
pub mod session;

use std::time::Instant;

use serde_json::json;
use thiserror::Error;

pub use eri::{consistency_filter, run_eri, EriOutput, FilterDecision, PromptBundle};
pub use msr::{run_msr, FaultKind, MsrOutput, Verdict};
pub use session::Session;

use crate::backends::{BackendError, Backends};
use crate::config::Config;
use crate::image::Image;
use crate::mask::{BinaryMask, MaskError};
use crate::similarity::SimilarityError;
use crate::trace::{mask_summary, Phase, Trace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("no prompt type produced a mask")]
    NoMasks,
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl From<MaskError> for PipelineError {
    fn from(e: MaskError) -> Self {
        PipelineError::Invariant(e.to_string())
    }
}

impl From<SimilarityError> for PipelineError {
    fn from(e: SimilarityError) -> Self {
        PipelineError::Invariant(e.to_string())
    }
}

/// A failed run together with everything traced before the failure.
#[derive(Debug, Clone)]
pub struct PipelineFailure {
    pub error: PipelineError,
    pub trace: Trace,
}

impl std::fmt::Display for PipelineFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for PipelineFailure {}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub mask: BinaryMask,
    pub eri: EriOutput,
    pub msr: MsrOutput,
    pub trace: Trace,
    pub eri_ms: f64,
    pub msr_ms: f64,
}

/// Runs both phases for `query` on `image`.
pub fn segment(backends: &Backends, image: &Image, query: &str, config: &Config) -> Result<Segmentation, PipelineFailure> {
    let mut s = Session::new(backends, image, config.strict);
    s.event(
        "header",
        json!({
            "query": query,
            "image": image.digest(),
            "size": [image.width(), image.height()],
            "config": config.to_value(),
            "config_digest": config.digest(),
        }),
    );
    let fail = |s: Session, error: PipelineError| {
        let mut trace = s.into_trace();
        trace.push(Phase::Run, "error", json!({ "message": error.to_string() }));
        PipelineFailure { error, trace }
    };
    if query.trim().is_empty() {
        return Err(fail(s, PipelineError::Invariant("empty query".into())));
    }

    let t0 = Instant::now();
    let eri = match run_eri(&mut s, query, config) {
        Ok(e) => e,
        Err(e) => return Err(fail(s, e)),
    };
    let eri_ms = t0.elapsed().as_secs_f64() * 1e3;
    let t1 = Instant::now();
    let msr = match run_msr(&mut s, &eri, query, config) {
        Ok(m) => m,
        Err(e) => return Err(fail(s, e)),
    };
    let msr_ms = t1.elapsed().as_secs_f64() * 1e3;

    s.set_phase(Phase::Run);
    s.event("result", json!({ "mask": mask_summary(&msr.final_mask) }));
    Ok(Segmentation { mask: msr.final_mask.clone(), eri, msr, trace: s.into_trace(), eri_ms, msr_ms })
}
