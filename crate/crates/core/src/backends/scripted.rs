//! Deterministic backends replayed from a scenario file.
//!
//! A scenario is one JSON document with `reasoner`, `segmenter` and
//! `features` sections. Paths inside it resolve against the scenario's
//! directory.
//!
//! Reasoner answers are looked up by `(operation, normalized argument
//! digest)`: the wire request minus the image, with every string trimmed,
//! lowercased and whitespace-collapsed. Canned answers win over procedures;
//! a call that matches neither fails with [`BackendError::Unscripted`].
//!
//! ```json
//! {
//!   "reasoner": {
//!     "oracle_mask": "gt.png",
//!     "procedures": {"score": "gt_iou", "prefer": "consensus", "affiliate": "gt_overlap"},
//!     "responses": [
//!       {"op": "augment", "args": {"target": "man"},
//!        "response": {"texts": ["man", "person", "guy"]}}
//!     ]
//!   },
//!   "segmenter": {
//!     "oracle_mask": "gt.png",
//!     "text": {"man": [{"mask": {"kind": "oracle_eroded", "n": 2}, "score": 0.9}]},
//!     "box": [{"box": [4, 4, 40, 60], "mask": "gt.png", "score": 0.8}],
//!     "points": {"kind": "color_flood", "tolerance": 40}
//!   },
//!   "features": {"map": "features.fmap"}
//! }
//! ```

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::Deserialize;
use serde_json::Value;

use super::wire::{self, op};
use super::{
    BackendError, ConceptSegmenter, Criterion, FeatureExtractor, MaskCandidate, ParsedExpression, Reasoner,
    ReasoningOptions,
};
use crate::image::Image;
use crate::mask::{io, iou, BBox, BinaryMask, PixelPoint};
use crate::similarity::FeatureMap;
use crate::trace::digest_json;

pub const SCENARIO_FILE: &str = "scenario.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreProcedure {
    /// IoU of the mask against the oracle mask.
    GtIou,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreferProcedure {
    /// Mask with the highest mean IoU against the others; ties to the earliest.
    Consensus,
    /// Mask with the highest IoU against the oracle; ties to the earliest.
    GtIou,
    First,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AffiliateProcedure {
    /// Affiliated iff at least half of the region lies on the oracle mask.
    GtOverlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundProcedure {
    /// Tight box of the oracle mask.
    GtBox,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Procedures {
    pub score: Option<ScoreProcedure>,
    pub prefer: Option<PreferProcedure>,
    pub affiliate: Option<AffiliateProcedure>,
    pub ground: Option<GroundProcedure>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskProcedure {
    Empty,
    Oracle,
    OracleEroded { n: u32 },
    OracleDilated { n: u32 },
    /// Every pixel whose largest channel difference from `color` is at most `tolerance`.
    ThresholdColor { color: [u8; 3], tolerance: u8 },
    Rle { rle: String },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MaskSpec {
    Path(String),
    Procedure(MaskProcedure),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSpec {
    pub mask: MaskSpec,
    pub score: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxEntry {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub mask: MaskSpec,
    pub score: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PointsSpec {
    /// `(prior ∪ floods of positives) ∖ floods of negatives`.
    ColorFlood { tolerance: u8, #[serde(default = "default_point_score")] score: f64 },
    Fixed { mask: MaskSpec, score: f64 },
}

fn default_point_score() -> f64 {
    0.9
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CannedResponse {
    pub op: String,
    pub args: Value,
    pub response: Value,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReasonerSection {
    oracle_mask: Option<String>,
    #[serde(default)]
    procedures: Procedures,
    #[serde(default)]
    responses: Vec<CannedResponse>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmenterSection {
    oracle_mask: Option<String>,
    #[serde(default)]
    text: BTreeMap<String, Vec<CandidateSpec>>,
    #[serde(default, rename = "box")]
    boxes: Vec<BoxEntry>,
    box_fallback: Option<CandidateSpec>,
    points: Option<PointsSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeaturesSection {
    map: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    reasoner: ReasonerSection,
    #[serde(default)]
    segmenter: SegmenterSection,
    features: Option<FeaturesSection>,
}

#[derive(Debug, Clone)]
enum MaskSource {
    Fixed(BinaryMask),
    ThresholdColor { color: [u8; 3], tolerance: u8 },
}

#[derive(Debug, Clone)]
enum PointsMode {
    ColorFlood { tolerance: u8, score: f64 },
    Fixed(MaskSource, f64),
}

/// A loaded scenario; implements all three backend traits.
#[derive(Debug, Clone)]
pub struct Scenario {
    dir: PathBuf,
    reasoner_oracle: Option<BinaryMask>,
    procedures: Procedures,
    canned: HashMap<String, Value>,
    text: HashMap<String, Vec<(MaskSource, f64)>>,
    boxes: Vec<(BBox, MaskSource, f64)>,
    box_fallback: Option<(MaskSource, f64)>,
    points: Option<PointsMode>,
    features: Option<FeatureMap>,
}

/// Trims, lowercases and collapses whitespace in every string of `v`.
pub fn normalize_args(v: &Value) -> Value {
    match v {
        Value::String(s) => Value::String(s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()),
        Value::Array(a) => Value::Array(a.iter().map(normalize_args).collect()),
        Value::Object(m) => Value::Object(
            m.iter().filter(|(k, _)| k.as_str() != "image").map(|(k, v)| (k.clone(), normalize_args(v))).collect(),
        ),
        other => other.clone(),
    }
}

/// Lookup key for a scripted reasoner answer.
pub fn lookup_key(op_name: &str, args: &Value) -> String {
    digest_json(&serde_json::json!({ "op": op_name, "args": normalize_args(args) }))
}

fn normalize_phrase(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn scenario_err(msg: impl Into<String>) -> BackendError {
    BackendError::Scenario(msg.into())
}

fn max_channel_diff(a: &image::Rgb<u8>, b: &image::Rgb<u8>) -> u8 {
    (0..3).map(|c| a[c].abs_diff(b[c])).max().unwrap_or(0)
}

/// 4-connected region around `seed` whose pixels stay within `tolerance` of
/// the seed color in every channel.
pub fn color_flood(rgb: &RgbImage, seed: (u32, u32), tolerance: u8) -> BinaryMask {
    let (w, h) = rgb.dimensions();
    let mut out = BinaryMask::empty(w, h).expect("images are at least 1x1");
    let seed_color = *rgb.get_pixel(seed.0, seed.1);
    let mut queue = VecDeque::from([seed]);
    out.set(seed.0, seed.1, true);
    while let Some((x, y)) = queue.pop_front() {
        let neighbors = [
            (x.wrapping_sub(1), y),
            (x + 1, y),
            (x, y.wrapping_sub(1)),
            (x, y + 1),
        ];
        for (nx, ny) in neighbors {
            if nx < w && ny < h && !out.get(nx, ny) && max_channel_diff(rgb.get_pixel(nx, ny), &seed_color) <= tolerance {
                out.set(nx, ny, true);
                queue.push_back((nx, ny));
            }
        }
    }
    out
}

pub fn threshold_color(rgb: &RgbImage, color: [u8; 3], tolerance: u8) -> BinaryMask {
    let target = image::Rgb(color);
    BinaryMask::from_fn(rgb.width(), rgb.height(), |x, y| max_channel_diff(rgb.get_pixel(x, y), &target) <= tolerance)
        .expect("images are at least 1x1")
}

impl Scenario {
    /// Loads `path`, or `path/scenario.json` when `path` is a directory.
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let file = if path.is_dir() { path.join(SCENARIO_FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&file).map_err(|e| scenario_err(format!("{}: {e}", file.display())))?;
        let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, &dir).map_err(|e| match e {
            BackendError::Scenario(m) => scenario_err(format!("{}: {m}", file.display())),
            other => other,
        })
    }

    pub fn from_json(text: &str, dir: &Path) -> Result<Self, BackendError> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| scenario_err(e.to_string()))?;
        let load_mask = |p: &str| io::load(&dir.join(p)).map_err(|e| scenario_err(e.to_string()));

        let reasoner_oracle = file.reasoner.oracle_mask.as_deref().map(load_mask).transpose()?;
        let seg_oracle = file.segmenter.oracle_mask.as_deref().map(load_mask).transpose()?;
        let resolve = |spec: &MaskSpec| -> Result<MaskSource, BackendError> {
            let oracle = || seg_oracle.clone().ok_or_else(|| scenario_err("procedure needs segmenter.oracle_mask"));
            Ok(match spec {
                MaskSpec::Path(p) => MaskSource::Fixed(load_mask(p)?),
                MaskSpec::Procedure(proc_) => match proc_ {
                    MaskProcedure::Empty => {
                        let o = oracle()?;
                        MaskSource::Fixed(BinaryMask::empty(o.width(), o.height()).expect("oracle dims are valid"))
                    }
                    MaskProcedure::Oracle => MaskSource::Fixed(oracle()?),
                    MaskProcedure::OracleEroded { n } => MaskSource::Fixed(oracle()?.erode(*n)),
                    MaskProcedure::OracleDilated { n } => MaskSource::Fixed(oracle()?.dilate(*n)),
                    MaskProcedure::ThresholdColor { color, tolerance } => {
                        MaskSource::ThresholdColor { color: *color, tolerance: *tolerance }
                    }
                    MaskProcedure::Rle { rle } => {
                        MaskSource::Fixed(io::from_rle(rle).map_err(|e| scenario_err(e.to_string()))?)
                    }
                },
            })
        };

        let mut canned = HashMap::new();
        for r in &file.reasoner.responses {
            if wire::endpoint(&r.op).is_none() {
                return Err(scenario_err(format!("unknown operation {:?}", r.op)));
            }
            if canned.insert(lookup_key(&r.op, &r.args), r.response.clone()).is_some() {
                return Err(scenario_err(format!("duplicate {} response for {}", r.op, r.args)));
            }
        }

        let mut text = HashMap::new();
        for (phrase, specs) in &file.segmenter.text {
            let resolved = specs.iter().map(|s| Ok((resolve(&s.mask)?, s.score))).collect::<Result<Vec<_>, _>>()?;
            text.insert(normalize_phrase(phrase), resolved);
        }
        let boxes = file
            .segmenter
            .boxes
            .iter()
            .map(|b| Ok((b.bbox, resolve(&b.mask)?, b.score)))
            .collect::<Result<Vec<_>, BackendError>>()?;
        let box_fallback = file.segmenter.box_fallback.as_ref().map(|s| Ok((resolve(&s.mask)?, s.score))).transpose()?;
        let points = match &file.segmenter.points {
            None => None,
            Some(PointsSpec::ColorFlood { tolerance, score }) => {
                Some(PointsMode::ColorFlood { tolerance: *tolerance, score: *score })
            }
            Some(PointsSpec::Fixed { mask, score }) => Some(PointsMode::Fixed(resolve(mask)?, *score)),
        };
        let features = file
            .features
            .map(|f| FeatureMap::load(&dir.join(&f.map)).map_err(|e| scenario_err(format!("{}: {e}", f.map))))
            .transpose()?;

        Ok(Scenario {
            dir: dir.to_path_buf(),
            reasoner_oracle,
            procedures: file.reasoner.procedures,
            canned,
            text,
            boxes,
            box_fallback,
            points,
            features,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn canned<T: serde::de::DeserializeOwned>(&self, op_name: &str, args: &Value) -> Result<Option<T>, BackendError> {
        match self.canned.get(&lookup_key(op_name, args)) {
            Some(v) => wire::decode_value(op_name, v).map(Some),
            None => Ok(None),
        }
    }

    fn unscripted(op_name: &str, args: &Value) -> BackendError {
        let mut shown = normalize_args(args).to_string();
        if shown.len() > 200 {
            let cut = (0..=200).rev().find(|&i| shown.is_char_boundary(i)).unwrap_or(0);
            shown.truncate(cut);
            shown.push_str("...");
        }
        BackendError::Unscripted { op: op_name.to_string(), key: shown }
    }

    fn oracle(&self, op_name: &str) -> Result<&BinaryMask, BackendError> {
        self.reasoner_oracle
            .as_ref()
            .ok_or_else(|| scenario_err(format!("{op_name} procedure needs reasoner.oracle_mask")))
    }

    fn materialize(&self, src: &MaskSource, image: &Image) -> BinaryMask {
        match src {
            MaskSource::Fixed(m) => m.clone(),
            MaskSource::ThresholdColor { color, tolerance } => threshold_color(image.rgb(), *color, *tolerance),
        }
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("wire types always serialize")
}

impl Reasoner for Scenario {
    fn parse_expression(
        &self,
        _image: &Image,
        query: &str,
        options: ReasoningOptions,
    ) -> Result<ParsedExpression, BackendError> {
        let args = to_value(&wire::ParseRequest { image: String::new(), query: query.into(), options });
        self.canned(op::PARSE, &args)?.ok_or_else(|| Self::unscripted(op::PARSE, &args))
    }

    fn augment_target(&self, target: &str) -> Result<Vec<String>, BackendError> {
        let args = to_value(&wire::AugmentRequest { target: target.into() });
        let r: wire::AugmentResponse =
            self.canned(op::AUGMENT, &args)?.ok_or_else(|| Self::unscripted(op::AUGMENT, &args))?;
        Ok(r.texts)
    }

    fn criterion_map(&self, target: &str, refer: &str, refer_box: BBox) -> Result<Criterion, BackendError> {
        let args = to_value(&wire::CriterionRequest { target: target.into(), refer: refer.into(), bbox: refer_box });
        let r: wire::CriterionResponse =
            self.canned(op::CRITERION, &args)?.ok_or_else(|| Self::unscripted(op::CRITERION, &args))?;
        Ok(Criterion { relation_text: r.relation, refer_name: refer.into(), refer_box })
    }

    fn rephrase(
        &self,
        query: &str,
        target: &str,
        refers: &[String],
        criterion: &Criterion,
    ) -> Result<(String, String), BackendError> {
        let args = to_value(&wire::RephraseRequest {
            query: query.into(),
            target: target.into(),
            refers: refers.to_vec(),
            relation: criterion.relation_text.clone(),
        });
        let r: wire::RephraseResponse =
            self.canned(op::REPHRASE, &args)?.ok_or_else(|| Self::unscripted(op::REPHRASE, &args))?;
        Ok((r.short, r.long))
    }

    fn ground_bbox(&self, _image: &Image, text: &str) -> Result<BBox, BackendError> {
        let args = to_value(&wire::GroundRequest { image: String::new(), text: text.into() });
        if let Some(r) = self.canned::<wire::GroundResponse>(op::GROUND, &args)? {
            return Ok(r.bbox);
        }
        match self.procedures.ground {
            Some(GroundProcedure::GtBox) => self
                .oracle(op::GROUND)?
                .bounding_box()
                .ok_or_else(|| BackendError::semantic(op::GROUND, "oracle mask is empty")),
            None => Err(Self::unscripted(op::GROUND, &args)),
        }
    }

    fn score_mask(
        &self,
        _image: &Image,
        mask: &BinaryMask,
        query: &str,
        options: ReasoningOptions,
    ) -> Result<f64, BackendError> {
        let args = to_value(&wire::ScoreRequest {
            image: String::new(),
            mask: io::to_rle(mask),
            query: query.into(),
            options,
        });
        if let Some(r) = self.canned::<wire::ScoreResponse>(op::SCORE, &args)? {
            return Ok(r.score);
        }
        match self.procedures.score {
            Some(ScoreProcedure::GtIou) => {
                iou(mask, self.oracle(op::SCORE)?).map_err(|e| BackendError::semantic(op::SCORE, e.to_string()))
            }
            None => Err(Self::unscripted(op::SCORE, &args)),
        }
    }

    fn prefer_mask(
        &self,
        _image: &Image,
        masks: &[BinaryMask],
        query: &str,
        options: ReasoningOptions,
    ) -> Result<i64, BackendError> {
        let args = to_value(&wire::PreferRequest {
            image: String::new(),
            masks: masks.iter().map(io::to_rle).collect(),
            query: query.into(),
            options,
        });
        if let Some(r) = self.canned::<wire::PreferResponse>(op::PREFER, &args)? {
            return Ok(r.index);
        }
        let sem = |e: crate::mask::MaskError| BackendError::semantic(op::PREFER, e.to_string());
        let scores: Vec<f64> = match self.procedures.prefer {
            None => return Err(Self::unscripted(op::PREFER, &args)),
            Some(PreferProcedure::First) => return Ok(0),
            Some(PreferProcedure::GtIou) => {
                let oracle = self.oracle(op::PREFER)?;
                masks.iter().map(|m| iou(m, oracle)).collect::<Result<_, _>>().map_err(sem)?
            }
            Some(PreferProcedure::Consensus) => {
                let n = masks.len();
                let mut scores = Vec::with_capacity(n);
                for (i, a) in masks.iter().enumerate() {
                    let mut sum = 0.0;
                    for (j, b) in masks.iter().enumerate() {
                        if i != j {
                            sum += iou(a, b).map_err(sem)?;
                        }
                    }
                    scores.push(if n > 1 { sum / (n - 1) as f64 } else { 0.0 });
                }
                scores
            }
        };
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        Ok(best as i64)
    }

    fn affiliation(&self, _image: &Image, region: &BinaryMask, core: &BinaryMask) -> Result<bool, BackendError> {
        let args = to_value(&wire::AffiliateRequest {
            image: String::new(),
            region: io::to_rle(region),
            core: io::to_rle(core),
        });
        if let Some(r) = self.canned::<wire::AffiliateResponse>(op::AFFILIATE, &args)? {
            return Ok(r.same_object);
        }
        match self.procedures.affiliate {
            Some(AffiliateProcedure::GtOverlap) => {
                let (inter, _) = region
                    .overlap_counts(self.oracle(op::AFFILIATE)?)
                    .map_err(|e| BackendError::semantic(op::AFFILIATE, e.to_string()))?;
                Ok(region.area() > 0 && 2 * inter >= region.area())
            }
            None => Err(Self::unscripted(op::AFFILIATE, &args)),
        }
    }
}

impl ConceptSegmenter for Scenario {
    fn segment_text(&self, image: &Image, phrase: &str) -> Result<Vec<MaskCandidate>, BackendError> {
        let specs = self.text.get(&normalize_phrase(phrase)).ok_or_else(|| BackendError::Unscripted {
            op: op::SEGMENT_TEXT.into(),
            key: format!("phrase {phrase:?}"),
        })?;
        Ok(specs.iter().map(|(src, score)| MaskCandidate::from_mask(self.materialize(src, image), *score)).collect())
    }

    fn segment_box(&self, image: &Image, bbox: BBox) -> Result<MaskCandidate, BackendError> {
        let (src, score) = self
            .boxes
            .iter()
            .find(|(b, _, _)| *b == bbox)
            .map(|(_, src, score)| (src, *score))
            .or_else(|| self.box_fallback.as_ref().map(|(src, score)| (src, *score)))
            .ok_or_else(|| BackendError::Unscripted { op: op::SEGMENT_BOX.into(), key: format!("box {bbox}") })?;
        Ok(MaskCandidate::from_mask(self.materialize(src, image), score))
    }

    fn segment_points(
        &self,
        image: &Image,
        positives: &[PixelPoint],
        negatives: &[PixelPoint],
        prior: Option<&BinaryMask>,
    ) -> Result<MaskCandidate, BackendError> {
        if positives.is_empty() {
            return Err(BackendError::semantic(op::SEGMENT_POINTS, "at least one positive point required"));
        }
        let (w, h) = image.dims();
        for p in positives.iter().chain(negatives) {
            p.check_bounds(w, h).map_err(|e| BackendError::semantic(op::SEGMENT_POINTS, e.to_string()))?;
        }
        let sem = |e: crate::mask::MaskError| BackendError::semantic(op::SEGMENT_POINTS, e.to_string());
        match &self.points {
            None => Err(BackendError::Unscripted { op: op::SEGMENT_POINTS.into(), key: "no points section".into() }),
            Some(PointsMode::Fixed(src, score)) => Ok(MaskCandidate::from_mask(self.materialize(src, image), *score)),
            Some(PointsMode::ColorFlood { tolerance, score }) => {
                let mut mask = match prior {
                    Some(p) => p.clone(),
                    None => BinaryMask::empty(w, h).expect("image dims are valid"),
                };
                for p in positives {
                    mask = mask.union(&color_flood(image.rgb(), (p.x, p.y), *tolerance)).map_err(sem)?;
                }
                for p in negatives {
                    mask = mask.difference(&color_flood(image.rgb(), (p.x, p.y), *tolerance)).map_err(sem)?;
                }
                Ok(MaskCandidate::from_mask(mask, *score))
            }
        }
    }
}

impl FeatureExtractor for Scenario {
    fn extract(&self, _image: &Image) -> Result<FeatureMap, BackendError> {
        self.features
            .clone()
            .ok_or_else(|| BackendError::Unscripted { op: op::FEATURES.into(), key: "no features section".into() })
    }
}
