//! Prompt construction and per-type mask selection.
//!
//! Steps, in order: parse the query, augment the target name, ground the
//! first refer object and rephrase around it, ground boxes for the query and
//! both rewrites, segment every text and box prompt, keep text masks that
//! agree with some grounded box, pick the best mask per prompt type, and
//! derive point prompts from feature similarity inside their overlap.

use serde::Serialize;
use serde_json::json;

use super::session::Session;
use super::PipelineError;
use crate::backends::{MaskCandidate, ParsedExpression, ReasoningOptions};
use crate::config::Config;
use crate::mask::{mask_box_iou, BBox, BinaryMask, MaskError, PixelPoint};
use crate::similarity::{accumulate, sample_anchors, select_negative, select_positive, FeatureMap, SimilarityField};
use crate::trace::{mask_summary, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxTag {
    Initial,
    Short,
    Long,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaggedBox {
    pub tag: BoxTag,
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptBundle {
    /// `texts[0]` is the parsed target name.
    pub texts: Vec<String>,
    pub boxes: Vec<TaggedBox>,
    pub positives: Vec<PixelPoint>,
    pub negative: Option<PixelPoint>,
}

impl PromptBundle {
    /// Grounded boxes without duplicates, in tag order.
    pub fn distinct_boxes(&self) -> Vec<BBox> {
        let mut out: Vec<BBox> = Vec::new();
        for b in &self.boxes {
            if !out.contains(&b.bbox) {
                out.push(b.bbox);
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct EriOutput {
    pub parsed: ParsedExpression,
    pub options: ReasoningOptions,
    pub short: String,
    pub long: String,
    pub bundle: PromptBundle,
    pub mask_text: Option<BinaryMask>,
    pub mask_bbx: Option<BinaryMask>,
    pub mask_point: Option<BinaryMask>,
    pub omega: BinaryMask,
    pub features: FeatureMap,
    pub field: SimilarityField,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FilterDecision {
    pub index: usize,
    pub max_iou: f64,
    pub kept: bool,
}

/// Keeps a text mask iff its best IoU against any grounded box exceeds `tau`.
pub fn consistency_filter(masks: &[BinaryMask], boxes: &[BBox], tau: f64) -> Result<Vec<FilterDecision>, MaskError> {
    masks
        .iter()
        .enumerate()
        .map(|(index, m)| {
            let mut max_iou: f64 = 0.0;
            for b in boxes {
                max_iou = max_iou.max(mask_box_iou(m, b)?);
            }
            Ok(FilterDecision { index, max_iou, kept: max_iou > tau })
        })
        .collect()
}

/// Index of the maximum, ties to the earliest. `None` for an empty slice.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Intra-type selection: a lone candidate is taken as is, otherwise the
/// reasoner scores each one.
fn select_type(
    s: &mut Session,
    kind: &str,
    candidates: &[MaskCandidate],
    query: &str,
    options: ReasoningOptions,
) -> Result<Option<BinaryMask>, PipelineError> {
    match candidates.len() {
        0 => {
            s.event("select", json!({ "type": kind, "count": 0 }));
            Ok(None)
        }
        1 => {
            s.event("select", json!({ "type": kind, "count": 1, "index": 0, "scored": false }));
            Ok(Some(candidates[0].mask.clone()))
        }
        n => {
            let scores = candidates
                .iter()
                .map(|c| s.score(&c.mask, query, options))
                .collect::<Result<Vec<_>, _>>()?;
            let index = argmax_first(&scores).expect("n > 1");
            s.event("select", json!({ "type": kind, "count": n, "index": index, "scored": true, "scores": scores }));
            Ok(Some(candidates[index].mask.clone()))
        }
    }
}

pub fn run_eri(s: &mut Session, query: &str, config: &Config) -> Result<EriOutput, PipelineError> {
    s.set_phase(Phase::Eri);
    let image_dims = s.image().dims();

    let options = if config.rpo { ReasoningOptions::all() } else { ReasoningOptions::none() };
    let parsed = s.parse(query, options)?;
    let target = parsed.target_name.clone();
    s.event(
        "parsed",
        json!({ "target": target, "refers": parsed.refer_names, "options": options.bits() }),
    );

    let texts = if config.text_aug { s.augment(&target)? } else { vec![target.clone()] };
    s.event("texts", json!({ "texts": texts, "augmented": config.text_aug }));

    let (short, long) = match parsed.refer_names.first() {
        None => {
            s.event("rephrase", json!({ "skipped": "no refer objects" }));
            (query.to_string(), query.to_string())
        }
        Some(refer) => {
            let cands = s.segment_text(refer)?;
            let scores: Vec<f64> = cands.iter().map(|c| if c.bbox.is_some() { c.score } else { f64::NEG_INFINITY }).collect();
            match argmax_first(&scores).and_then(|i| cands[i].bbox) {
                None => {
                    s.warn(format!("refer object {refer:?} not found; rewrites fall back to the query"));
                    (query.to_string(), query.to_string())
                }
                Some(refer_box) => {
                    let criterion = s.criterion(&target, refer, refer_box)?;
                    let (short, long) = s.rephrase(query, &target, &parsed.refer_names, &criterion)?;
                    s.event(
                        "rephrase",
                        json!({ "refer": refer, "refer_box": refer_box, "relation": criterion.relation_text, "short": short, "long": long }),
                    );
                    (short, long)
                }
            }
        }
    };

    let mut to_ground = vec![(BoxTag::Initial, query.to_string())];
    if config.bbox_aug {
        to_ground.push((BoxTag::Short, short.clone()));
        to_ground.push((BoxTag::Long, long.clone()));
    }
    let mut boxes: Vec<TaggedBox> = Vec::new();
    for (tag, text) in to_ground {
        let bbox = match boxes.iter().find(|b| b.text == text) {
            Some(prev) => prev.bbox,
            None => s.ground(&text)?,
        };
        boxes.push(TaggedBox { tag, text, bbox });
    }
    s.event("grounded", json!({ "boxes": boxes }));
    let mut bundle = PromptBundle { texts: texts.clone(), boxes, positives: vec![], negative: None };

    let mut phrases: Vec<String> = Vec::new();
    for t in &texts {
        if !phrases.contains(t) {
            phrases.push(t.clone());
        }
    }
    let distinct = bundle.distinct_boxes();
    let (text_results, box_results) = s.segment_all(&phrases, &distinct);
    let mut text_cands: Vec<(usize, MaskCandidate)> = Vec::new();
    for (i, r) in text_results.into_iter().enumerate() {
        text_cands.extend(r?.into_iter().filter(|c| c.bbox.is_some()).map(|c| (i, c)));
    }
    let mut box_cands: Vec<MaskCandidate> = Vec::new();
    for r in box_results {
        let c = r?;
        if c.bbox.is_some() {
            box_cands.push(c);
        }
    }
    s.event(
        "candidates",
        json!({
            "text": text_cands.iter().map(|(i, c)| json!({"prompt": phrases[*i], "mask": mask_summary(&c.mask), "score": c.score})).collect::<Vec<_>>(),
            "bbx": box_cands.iter().map(|c| json!({"mask": mask_summary(&c.mask), "score": c.score})).collect::<Vec<_>>(),
        }),
    );

    let masks: Vec<BinaryMask> = text_cands.iter().map(|(_, c)| c.mask.clone()).collect();
    let decisions = consistency_filter(&masks, &distinct, config.tau)?;
    let mut kept: Vec<MaskCandidate> =
        decisions.iter().filter(|d| d.kept).map(|d| text_cands[d.index].1.clone()).collect();
    let fallback = kept.is_empty() && !text_cands.is_empty();
    s.event("filter", json!({ "tau": config.tau, "decisions": decisions, "fallback": fallback }));
    if fallback {
        s.warn(format!("no text candidate exceeds box IoU {}; keeping all {}", config.tau, text_cands.len()));
        kept = text_cands.into_iter().map(|(_, c)| c).collect();
    }

    let mask_text = select_type(s, "text", &kept, query, options)?;
    let mask_bbx = select_type(s, "bbx", &box_cands, query, options)?;

    let (omega, source) = match (&mask_text, &mask_bbx) {
        (Some(t), Some(b)) => {
            let inter = t.intersect(b)?;
            if !inter.is_empty() {
                (inter, "intersection")
            } else {
                s.warn("text and box masks do not overlap; using the smaller mask as the core region");
                if b.area() < t.area() {
                    (b.clone(), "smaller_bbx")
                } else {
                    (t.clone(), "smaller_text")
                }
            }
        }
        (Some(t), None) => (t.clone(), "text_only"),
        (None, Some(b)) => (b.clone(), "bbx_only"),
        (None, None) => return Err(PipelineError::NoMasks),
    };
    s.event("omega", json!({ "source": source, "mask": mask_summary(&omega) }));

    let features = s.features()?;
    let anchors = sample_anchors(&omega, config.anchors)?;
    let field = accumulate(&features, &anchors)?;
    let p_pos = select_positive(&field, &omega)?;
    let p_neg = select_negative(&field, &omega, p_pos, config.s_neg)?;
    s.event(
        "points",
        json!({
            "anchors": anchors.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>(),
            "field_max": field.map.max(),
            "positive": [p_pos.x, p_pos.y],
            "negative": p_neg.map(|p| [p.x, p.y]),
        }),
    );
    if p_neg.is_none() {
        s.warn("no pixel qualifies as a negative point; using positives only");
    }
    bundle.positives = vec![p_pos];
    bundle.negative = p_neg;

    let negatives: Vec<PixelPoint> = p_neg.into_iter().collect();
    let point = s.segment_points(&bundle.positives, &negatives, None)?;
    let mask_point = point.bbox.is_some().then_some(point.mask);
    s.event(
        "eri_masks",
        json!({
            "text": mask_text.as_ref().map(mask_summary),
            "bbx": mask_bbx.as_ref().map(mask_summary),
            "point": mask_point.as_ref().map(mask_summary),
        }),
    );
    debug_assert_eq!(omega.dims(), image_dims);

    Ok(EriOutput {
        parsed,
        options,
        short,
        long,
        bundle,
        mask_text,
        mask_bbx,
        mask_point,
        omega,
        features,
        field,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_uses_best_box() {
        let m = BinaryMask::from_fn(4, 4, |x, _| x < 2).unwrap();
        let boxes = [BBox::new(2, 0, 4, 4).unwrap(), BBox::new(0, 0, 2, 4).unwrap()];
        let d = consistency_filter(std::slice::from_ref(&m), &boxes, 0.8).unwrap();
        assert_eq!(d[0].max_iou, 1.0);
        assert!(d[0].kept);
        let d = consistency_filter(&[m], &boxes[..1], 0.8).unwrap();
        assert!(!d[0].kept);
    }

    #[test]
    fn argmax_ties_to_earliest() {
        assert_eq!(argmax_first(&[0.2, 0.9, 0.9]), Some(1));
        assert_eq!(argmax_first(&[]), None);
    }
}
