//! Interfaces to the three frozen models and their implementations.
//!
//! * [`Reasoner`]: multimodal language model that parses queries, rephrases,
//!   grounds boxes and judges masks.
//! * [`ConceptSegmenter`]: promptable segmenter accepting text, box or point prompts.
//! * [`FeatureExtractor`]: dense patch-feature backbone.
//!
//! [`scripted`] replays scenario files deterministically; [`remote`] speaks
//! the gateway HTTP protocol defined in [`wire`]. Neither is trusted:
//! [`validate`] checks every response before the pipeline sees it.

pub mod remote;
pub mod scripted;
pub mod validate;
pub mod wire;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;
use crate::mask::{BBox, BinaryMask, PixelPoint};
use crate::similarity::FeatureMap;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("{op}: transport failure: {message}")]
    Transport { op: String, message: String },
    #[error("{op}: malformed response: {message}")]
    Parse { op: String, message: String, raw: String },
    #[error("{op}: {message}")]
    Semantic { op: String, message: String },
    #[error("{op}: no scripted response for {key}")]
    Unscripted { op: String, key: String },
    #[error("scenario: {0}")]
    Scenario(String),
}

impl BackendError {
    pub fn semantic(op: &str, message: impl Into<String>) -> Self {
        BackendError::Semantic { op: op.to_string(), message: message.into() }
    }

    pub fn parse(op: &str, message: impl Into<String>, raw: impl Into<String>) -> Self {
        BackendError::Parse { op: op.to_string(), message: message.into(), raw: raw.into() }
    }

    pub fn is_transport(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

/// The six structured reasoning dimensions, in fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[bool; 6]", from = "[bool; 6]")]
pub struct ReasoningOptions {
    pub explicit_implicit: bool,
    pub single_multi: bool,
    pub refer_objects: bool,
    pub adjectives: bool,
    pub object_reasoning: bool,
    pub confusion_awareness: bool,
}

impl ReasoningOptions {
    pub fn all() -> Self {
        [true; 6].into()
    }

    pub fn none() -> Self {
        [false; 6].into()
    }

    /// Fixed-order bit string, e.g. `"110100"`.
    pub fn bits(&self) -> String {
        <[bool; 6]>::from(*self).iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

impl From<ReasoningOptions> for [bool; 6] {
    fn from(o: ReasoningOptions) -> Self {
        [
            o.explicit_implicit,
            o.single_multi,
            o.refer_objects,
            o.adjectives,
            o.object_reasoning,
            o.confusion_awareness,
        ]
    }
}

impl From<[bool; 6]> for ReasoningOptions {
    fn from(b: [bool; 6]) -> Self {
        ReasoningOptions {
            explicit_implicit: b[0],
            single_multi: b[1],
            refer_objects: b[2],
            adjectives: b[3],
            object_reasoning: b[4],
            confusion_awareness: b[5],
        }
    }
}

/// The reasoner's structured reading of a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParsedExpression {
    pub is_explicit: bool,
    pub is_multi_object: bool,
    pub target_name: String,
    #[serde(default)]
    pub refer_names: Vec<String>,
    #[serde(default)]
    pub adjectives: Vec<String>,
    #[serde(default)]
    pub confusion_notes: String,
}

/// Relation between the target and one grounded refer object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub relation_text: String,
    pub refer_name: String,
    pub refer_box: BBox,
}

/// One segmenter output. `bbox` is `None` only for an empty mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskCandidate {
    pub mask: BinaryMask,
    pub bbox: Option<BBox>,
    pub score: f64,
}

impl MaskCandidate {
    /// Candidate with its tight box computed from the mask.
    pub fn from_mask(mask: BinaryMask, score: f64) -> Self {
        let bbox = mask.bounding_box();
        MaskCandidate { mask, bbox, score }
    }
}

pub trait Reasoner: Send + Sync {
    fn parse_expression(
        &self,
        image: &Image,
        query: &str,
        options: ReasoningOptions,
    ) -> Result<ParsedExpression, BackendError>;

    /// Three prompts, the first being the target name itself.
    fn augment_target(&self, target: &str) -> Result<Vec<String>, BackendError>;

    fn criterion_map(&self, target: &str, refer: &str, refer_box: BBox) -> Result<Criterion, BackendError>;

    /// `(short, long)` target-centric rewrites of the query.
    fn rephrase(
        &self,
        query: &str,
        target: &str,
        refers: &[String],
        criterion: &Criterion,
    ) -> Result<(String, String), BackendError>;

    fn ground_bbox(&self, image: &Image, text: &str) -> Result<BBox, BackendError>;

    fn score_mask(
        &self,
        image: &Image,
        mask: &BinaryMask,
        query: &str,
        options: ReasoningOptions,
    ) -> Result<f64, BackendError>;

    /// Raw preferred index; range-checked by [`validate`] before use.
    fn prefer_mask(
        &self,
        image: &Image,
        masks: &[BinaryMask],
        query: &str,
        options: ReasoningOptions,
    ) -> Result<i64, BackendError>;

    /// Whether `region` belongs to the same object as `core`.
    fn affiliation(&self, image: &Image, region: &BinaryMask, core: &BinaryMask) -> Result<bool, BackendError>;
}

pub trait ConceptSegmenter: Send + Sync {
    fn segment_text(&self, image: &Image, phrase: &str) -> Result<Vec<MaskCandidate>, BackendError>;

    fn segment_box(&self, image: &Image, bbox: BBox) -> Result<MaskCandidate, BackendError>;

    fn segment_points(
        &self,
        image: &Image,
        positives: &[PixelPoint],
        negatives: &[PixelPoint],
        prior: Option<&BinaryMask>,
    ) -> Result<MaskCandidate, BackendError>;
}

pub trait FeatureExtractor: Send + Sync {
    fn extract(&self, image: &Image) -> Result<FeatureMap, BackendError>;
}

/// The three backends a pipeline run needs.
#[derive(Clone)]
pub struct Backends {
    pub reasoner: Arc<dyn Reasoner>,
    pub segmenter: Arc<dyn ConceptSegmenter>,
    pub features: Arc<dyn FeatureExtractor>,
}

impl Backends {
    pub fn new(
        reasoner: Arc<dyn Reasoner>,
        segmenter: Arc<dyn ConceptSegmenter>,
        features: Arc<dyn FeatureExtractor>,
    ) -> Self {
        Backends { reasoner, segmenter, features }
    }

    pub fn scripted(scenario: scripted::Scenario) -> Self {
        let s = Arc::new(scenario);
        Backends { reasoner: s.clone(), segmenter: s.clone(), features: s }
    }

    pub fn remote(client: remote::RemoteClient) -> Self {
        let c = Arc::new(client);
        Backends { reasoner: c.clone(), segmenter: c.clone(), features: c }
    }
}
