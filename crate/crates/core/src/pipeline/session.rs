//! Traced, validated access to the backends for one pipeline run.
//!
//! Every backend call goes through a [`Session`], which validates the
//! response and appends exactly one `call` event holding the operation, an
//! argument summary and digest, a response summary and digest (or the error)
//! and the wall time. Batched calls run on scoped threads but are recorded in
//! submission order, so traces do not depend on scheduling.

use std::time::Instant;

use serde_json::{json, Value};

use crate::backends::validate::Validator;
use crate::backends::wire::op;
use crate::backends::{BackendError, Backends, Criterion, MaskCandidate, ParsedExpression, ReasoningOptions};
use crate::image::{sha256_hex, Image};
use crate::mask::{BBox, BinaryMask, PixelPoint};
use crate::similarity::FeatureMap;
use crate::trace::{digest_json, mask_summary, Phase, Trace};

type Timed<T> = (Result<T, BackendError>, u64);

fn timed<T>(f: impl FnOnce() -> Result<T, BackendError>) -> Timed<T> {
    let start = Instant::now();
    let r = f();
    (r, start.elapsed().as_micros() as u64)
}

fn candidate_summary(c: &MaskCandidate) -> Value {
    json!({ "mask": mask_summary(&c.mask), "box": c.bbox, "score": c.score })
}

fn points_summary(points: &[PixelPoint]) -> Value {
    Value::Array(points.iter().map(|p| json!([p.x, p.y])).collect())
}

pub fn features_summary(f: &FeatureMap) -> Value {
    json!({
        "grid": [f.grid_w(), f.grid_h()],
        "dim": f.dim(),
        "image": [f.image_w(), f.image_h()],
        "digest": format!("sha256:{}", sha256_hex(&f.to_bytes())),
    })
}

pub struct Session<'a> {
    backends: &'a Backends,
    image: &'a Image,
    validator: Validator,
    trace: Trace,
    phase: Phase,
}

impl<'a> Session<'a> {
    pub fn new(backends: &'a Backends, image: &'a Image, strict: bool) -> Self {
        Session { backends, image, validator: Validator::new(strict), trace: Trace::new(), phase: Phase::Run }
    }

    pub fn image(&self) -> &Image {
        self.image
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    pub fn event(&mut self, name: &str, data: Value) {
        self.trace.push(self.phase, name, data);
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        self.trace.warn(self.phase, message);
    }

    /// Validates a raw result and records the call.
    fn finish<R, T>(
        &mut self,
        op_name: &str,
        args: Value,
        (raw, elapsed_us): Timed<R>,
        check: impl FnOnce(&Validator, R, &mut Vec<String>) -> Result<T, BackendError>,
        summarize: impl FnOnce(&T) -> Value,
    ) -> Result<T, BackendError> {
        let mut warnings = Vec::new();
        let result = raw.and_then(|r| check(&self.validator, r, &mut warnings));
        let mut data = json!({ "op": op_name, "args_digest": digest_json(&args), "args": args, "elapsed_us": elapsed_us });
        match &result {
            Ok(v) => {
                let summary = summarize(v);
                data["response_digest"] = Value::String(digest_json(&summary));
                data["response"] = summary;
            }
            Err(e) => data["error"] = Value::String(e.to_string()),
        }
        self.trace.push(self.phase, "call", data);
        for w in warnings {
            self.warn(w);
        }
        result
    }

    pub fn parse(&mut self, query: &str, options: ReasoningOptions) -> Result<ParsedExpression, BackendError> {
        let args = json!({ "image": self.image.digest(), "query": query, "options": options.bits() });
        let raw = timed(|| self.backends.reasoner.parse_expression(self.image, query, options));
        self.finish(op::PARSE, args, raw, |v, p, w| v.parsed(p, options, w), |p| json!(p))
    }

    pub fn augment(&mut self, target: &str) -> Result<Vec<String>, BackendError> {
        let args = json!({ "target": target });
        let raw = timed(|| self.backends.reasoner.augment_target(target));
        self.finish(op::AUGMENT, args, raw, |v, t, w| v.augmented(target, t, w), |t| json!(t))
    }

    pub fn criterion(&mut self, target: &str, refer: &str, refer_box: BBox) -> Result<Criterion, BackendError> {
        let args = json!({ "target": target, "refer": refer, "box": refer_box });
        let raw = timed(|| self.backends.reasoner.criterion_map(target, refer, refer_box));
        self.finish(op::CRITERION, args, raw, |v, c, _| v.criterion(c), |c| json!(c))
    }

    pub fn rephrase(
        &mut self,
        query: &str,
        target: &str,
        refers: &[String],
        criterion: &Criterion,
    ) -> Result<(String, String), BackendError> {
        let args = json!({ "query": query, "target": target, "refers": refers, "relation": criterion.relation_text });
        let raw = timed(|| self.backends.reasoner.rephrase(query, target, refers, criterion));
        self.finish(op::REPHRASE, args, raw, |v, (s, l), w| v.rephrased(s, l, w), |(s, l)| json!({"short": s, "long": l}))
    }

    pub fn ground(&mut self, text: &str) -> Result<BBox, BackendError> {
        let args = json!({ "image": self.image.digest(), "text": text });
        let (w, h) = self.image.dims();
        let raw = timed(|| self.backends.reasoner.ground_bbox(self.image, text));
        self.finish(op::GROUND, args, raw, |v, b, warn| v.bbox(op::GROUND, b, w, h, warn), |b| json!(b))
    }

    pub fn score(&mut self, mask: &BinaryMask, query: &str, options: ReasoningOptions) -> Result<f64, BackendError> {
        let args = json!({ "image": self.image.digest(), "mask": mask_summary(mask), "query": query, "options": options.bits() });
        let raw = timed(|| self.backends.reasoner.score_mask(self.image, mask, query, options));
        self.finish(op::SCORE, args, raw, |v, s, w| v.score(op::SCORE, s, w), |s| json!(s))
    }

    pub fn prefer(&mut self, masks: &[BinaryMask], query: &str, options: ReasoningOptions) -> Result<usize, BackendError> {
        let summaries: Vec<Value> = masks.iter().map(mask_summary).collect();
        let args = json!({ "image": self.image.digest(), "masks": summaries, "query": query, "options": options.bits() });
        let raw = timed(|| self.backends.reasoner.prefer_mask(self.image, masks, query, options));
        self.finish(op::PREFER, args, raw, |v, i, w| v.index(i, masks.len(), w), |i| json!(i))
    }

    fn affiliate_args(&self, region: &BinaryMask, core: &BinaryMask) -> Value {
        json!({ "image": self.image.digest(), "region": mask_summary(region), "core": mask_summary(core) })
    }

    /// Affiliation checks for several `(region, core)` pairs, run concurrently.
    pub fn affiliate_all(&mut self, pairs: &[(BinaryMask, BinaryMask)]) -> Vec<Result<bool, BackendError>> {
        let (image, reasoner) = (self.image, &self.backends.reasoner);
        let raws: Vec<Timed<bool>> = std::thread::scope(|s| {
            let handles: Vec<_> = pairs
                .iter()
                .map(|(region, core)| s.spawn(move || timed(|| reasoner.affiliation(image, region, core))))
                .collect();
            handles.into_iter().map(|h| h.join().expect("affiliation worker panicked")).collect()
        });
        pairs
            .iter()
            .zip(raws)
            .map(|((region, core), raw)| {
                let args = self.affiliate_args(region, core);
                self.finish(op::AFFILIATE, args, raw, |_, b, _| Ok(b), |b| json!(b))
            })
            .collect()
    }

    fn finish_text(&mut self, phrase: &str, raw: Timed<Vec<MaskCandidate>>) -> Result<Vec<MaskCandidate>, BackendError> {
        let args = json!({ "image": self.image.digest(), "phrase": phrase });
        let (w, h) = self.image.dims();
        self.finish(
            op::SEGMENT_TEXT,
            args,
            raw,
            |v: &Validator, cands: Vec<MaskCandidate>, warn: &mut Vec<String>| {
                cands.into_iter().map(|c| v.candidate(op::SEGMENT_TEXT, c, w, h, warn)).collect()
            },
            |cands: &Vec<MaskCandidate>| Value::Array(cands.iter().map(candidate_summary).collect()),
        )
    }

    fn finish_box(&mut self, bbox: BBox, raw: Timed<MaskCandidate>) -> Result<MaskCandidate, BackendError> {
        let args = json!({ "image": self.image.digest(), "box": bbox });
        let (w, h) = self.image.dims();
        self.finish(op::SEGMENT_BOX, args, raw, |v, c, warn| v.candidate(op::SEGMENT_BOX, c, w, h, warn), candidate_summary)
    }

    pub fn segment_text(&mut self, phrase: &str) -> Result<Vec<MaskCandidate>, BackendError> {
        let raw = timed(|| self.backends.segmenter.segment_text(self.image, phrase));
        self.finish_text(phrase, raw)
    }

    /// Text and box prompts segmented concurrently; results in input order.
    #[allow(clippy::type_complexity)]
    pub fn segment_all(
        &mut self,
        phrases: &[String],
        boxes: &[BBox],
    ) -> (Vec<Result<Vec<MaskCandidate>, BackendError>>, Vec<Result<MaskCandidate, BackendError>>) {
        let (image, seg) = (self.image, &self.backends.segmenter);
        let (text_raw, box_raw): (Vec<Timed<Vec<MaskCandidate>>>, Vec<Timed<MaskCandidate>>) =
            std::thread::scope(|s| {
                let th: Vec<_> =
                    phrases.iter().map(|p| s.spawn(move || timed(|| seg.segment_text(image, p)))).collect();
                let bh: Vec<_> = boxes.iter().map(|&b| s.spawn(move || timed(|| seg.segment_box(image, b)))).collect();
                (
                    th.into_iter().map(|h| h.join().expect("segmenter worker panicked")).collect(),
                    bh.into_iter().map(|h| h.join().expect("segmenter worker panicked")).collect(),
                )
            });
        let texts = phrases.iter().zip(text_raw).map(|(p, raw)| self.finish_text(p, raw)).collect();
        let boxes = boxes.iter().zip(box_raw).map(|(&b, raw)| self.finish_box(b, raw)).collect();
        (texts, boxes)
    }

    pub fn segment_points(
        &mut self,
        positives: &[PixelPoint],
        negatives: &[PixelPoint],
        prior: Option<&BinaryMask>,
    ) -> Result<MaskCandidate, BackendError> {
        let args = json!({
            "image": self.image.digest(),
            "positives": points_summary(positives),
            "negatives": points_summary(negatives),
            "prior": prior.map(mask_summary),
        });
        let (w, h) = self.image.dims();
        let raw = timed(|| self.backends.segmenter.segment_points(self.image, positives, negatives, prior));
        self.finish(
            op::SEGMENT_POINTS,
            args,
            raw,
            |v, c, warn| v.candidate(op::SEGMENT_POINTS, c, w, h, warn),
            candidate_summary,
        )
    }

    pub fn features(&mut self) -> Result<FeatureMap, BackendError> {
        let args = json!({ "image": self.image.digest() });
        let (w, h) = self.image.dims();
        let raw = timed(|| self.backends.features.extract(self.image));
        self.finish(op::FEATURES, args, raw, |v, f, _| v.features(f, w, h), features_summary)
    }
}
