//! Gateway wire protocol: JSON bodies for every endpoint.
//!
//! Images travel as either `sha256:<hex>` (previously uploaded through
//! `POST /images`) or an inline `data:image/png;base64,...` URL. Masks are the
//! RLE text form from [`crate::mask::io`]; boxes are `[x_min, y_min, x_max, y_max]`;
//! points are `[x, y]`. The machine-readable schema lives in
//! `schema/gateway.json` and is checked against these types in tests.

use serde::{Deserialize, Serialize};

use super::{BackendError, MaskCandidate, ParsedExpression, ReasoningOptions};
use crate::mask::{io, BBox, PixelPoint};

pub const SCHEMA: &str = include_str!("../../schema/gateway.json");

pub const IMAGES: &str = "/images";
pub const HEALTH: &str = "/healthz";

/// Operation names, shared by traces, scenario files and endpoint routing.
pub mod op {
    pub const PARSE: &str = "parse";
    pub const AUGMENT: &str = "augment";
    pub const CRITERION: &str = "criterion";
    pub const REPHRASE: &str = "rephrase";
    pub const GROUND: &str = "ground";
    pub const SCORE: &str = "score";
    pub const PREFER: &str = "prefer";
    pub const AFFILIATE: &str = "affiliate";
    pub const SEGMENT_TEXT: &str = "segment_text";
    pub const SEGMENT_BOX: &str = "segment_box";
    pub const SEGMENT_POINTS: &str = "segment_points";
    pub const FEATURES: &str = "features";

    pub const ALL: [&str; 12] = [
        PARSE, AUGMENT, CRITERION, REPHRASE, GROUND, SCORE, PREFER, AFFILIATE, SEGMENT_TEXT,
        SEGMENT_BOX, SEGMENT_POINTS, FEATURES,
    ];
}

pub fn endpoint(op_name: &str) -> Option<&'static str> {
    Some(match op_name {
        op::PARSE => "/reason/parse",
        op::AUGMENT => "/reason/augment",
        op::CRITERION => "/reason/criterion",
        op::REPHRASE => "/reason/rephrase",
        op::GROUND => "/reason/ground",
        op::SCORE => "/reason/score",
        op::PREFER => "/reason/prefer",
        op::AFFILIATE => "/reason/affiliate",
        op::SEGMENT_TEXT => "/segment/text",
        op::SEGMENT_BOX => "/segment/box",
        op::SEGMENT_POINTS => "/segment/points",
        op::FEATURES => "/features",
        _ => return None,
    })
}

pub fn op_for_endpoint(path: &str) -> Option<&'static str> {
    op::ALL.into_iter().find(|o| endpoint(o) == Some(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParseRequest {
    pub image: String,
    pub query: String,
    pub options: ReasoningOptions,
}

pub type ParseResponse = ParsedExpression;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentRequest {
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentResponse {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionRequest {
    pub target: String,
    pub refer: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionResponse {
    pub relation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RephraseRequest {
    pub query: String,
    pub target: String,
    pub refers: Vec<String>,
    pub relation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RephraseResponse {
    pub short: String,
    pub long: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundRequest {
    pub image: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundResponse {
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub image: String,
    pub mask: String,
    pub query: String,
    pub options: ReasoningOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreResponse {
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferRequest {
    pub image: String,
    pub masks: Vec<String>,
    pub query: String,
    pub options: ReasoningOptions,
}

/// Signed so an out-of-range answer reaches validation instead of failing decode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferResponse {
    pub index: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffiliateRequest {
    pub image: String,
    pub region: String,
    pub core: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffiliateResponse {
    pub same_object: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentTextRequest {
    pub image: String,
    pub phrase: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentBoxRequest {
    pub image: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentPointsRequest {
    pub image: String,
    pub positives: Vec<[u32; 2]>,
    pub negatives: Vec<[u32; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateWire {
    pub mask: String,
    #[serde(rename = "box")]
    pub bbox: Option<BBox>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentTextResponse {
    pub candidates: Vec<CandidateWire>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesRequest {
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadResponse {
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl CandidateWire {
    pub fn from_candidate(c: &MaskCandidate) -> Self {
        CandidateWire { mask: io::to_rle(&c.mask), bbox: c.bbox, score: c.score }
    }

    pub fn into_candidate(self, op_name: &str) -> Result<MaskCandidate, BackendError> {
        let mask = io::from_rle(&self.mask)
            .map_err(|e| BackendError::parse(op_name, e.to_string(), self.mask.clone()))?;
        Ok(MaskCandidate { mask, bbox: self.bbox, score: self.score })
    }
}

pub fn point_to_wire(p: &PixelPoint) -> [u32; 2] {
    [p.x, p.y]
}

/// Decodes a typed response, keeping the raw body on failure.
pub fn decode<T: serde::de::DeserializeOwned>(op_name: &str, raw: &str) -> Result<T, BackendError> {
    serde_json::from_str(raw).map_err(|e| BackendError::parse(op_name, e.to_string(), raw))
}

pub fn decode_value<T: serde::de::DeserializeOwned>(
    op_name: &str,
    value: &serde_json::Value,
) -> Result<T, BackendError> {
    T::deserialize(value).map_err(|e| BackendError::parse(op_name, e.to_string(), value.to_string()))
}
