//! Mask self-refinement.
//!
//! The best mask across prompt types is compared with the point-prompt mask.
//! Pixels claimed by only one of them form discriminative regions; the
//! reasoner decides whether each region belongs to the target. A region only
//! the best mask claims that does not belong signals over-segmentation; a
//! region only the point mask claims that does belong signals
//! under-segmentation. Point prompts are adjusted accordingly and the
//! segmenter is queried again with the best mask as prior.

use serde::Serialize;
use serde_json::json;

use super::eri::EriOutput;
use super::session::Session;
use super::PipelineError;
use crate::backends::ReasoningOptions;
use crate::config::Config;
use crate::mask::{connected_components, mask_box_iou, BBox, BinaryMask, MaskError, PixelPoint, Region};
use crate::similarity::{anchor_similarity, region_similarity_stats, FeatureMap, SimilarityError};
use crate::trace::{mask_summary, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultKind {
    Over,
    Under,
}

/// Outcome of one affiliation check.
///
/// `kind` is the fault the region would indicate: `Over` for regions only
/// the best mask claims, `Under` for regions only the point mask claims.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub region: String,
    pub kind: FaultKind,
    pub affiliated: bool,
    pub center: PixelPoint,
    pub area: usize,
}

impl Verdict {
    /// Whether the check confirmed the fault.
    pub fn is_fault(&self) -> bool {
        match self.kind {
            FaultKind::Over => !self.affiliated,
            FaultKind::Under => self.affiliated,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminativeRegions {
    pub from_best: Vec<Region>,
    pub from_point: Vec<Region>,
}

impl DiscriminativeRegions {
    pub fn is_empty(&self) -> bool {
        self.from_best.is_empty() && self.from_point.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementState {
    pub best: BinaryMask,
    pub positives: Vec<PixelPoint>,
    pub negative: Option<PixelPoint>,
    pub round: u32,
    pub verdicts: Vec<Verdict>,
}

#[derive(Debug, Clone)]
pub struct MsrOutput {
    pub final_mask: BinaryMask,
    /// Mask chosen across prompt types before refinement.
    pub selected: BinaryMask,
    pub selected_source: &'static str,
    pub state: Option<RefinementState>,
}

pub fn build_regions(best: &BinaryMask, point: &BinaryMask, min_area: usize) -> Result<DiscriminativeRegions, MaskError> {
    Ok(DiscriminativeRegions {
        from_best: connected_components(&best.difference(point)?, min_area),
        from_point: connected_components(&point.difference(best)?, min_area),
    })
}

/// The area handed to the reasoner for one region.
///
/// Similarity is measured from the region center. For a best-only region
/// the threshold is the minimum similarity inside it and the area is every
/// best-only pixel at least that similar, which always contains the region.
/// For a point-only region the threshold is the maximum inside it and the
/// area is the region plus every pixel outside the best mask at least that
/// similar.
pub fn affiliation_area(
    features: &FeatureMap,
    region: &Region,
    kind: FaultKind,
    best: &BinaryMask,
    point: &BinaryMask,
) -> Result<BinaryMask, SimilarityError> {
    let sim = anchor_similarity(features, region.center())?;
    let (lo, hi) = region_similarity_stats(&sim, region.mask())?;
    let (w, h) = best.dims();
    let area = match kind {
        FaultKind::Over => {
            let pool = best.difference(point)?;
            BinaryMask::from_fn(w, h, |x, y| pool.get(x, y) && sim.get(x, y) >= lo)?
        }
        FaultKind::Under => {
            BinaryMask::from_fn(w, h, |x, y| region.mask().get(x, y) || (!best.get(x, y) && sim.get(x, y) >= hi))?
        }
    };
    Ok(area)
}

/// Runs one affiliation check per region against `omega`.
pub fn check_affiliation(
    s: &mut Session,
    features: &FeatureMap,
    regions: &DiscriminativeRegions,
    best: &BinaryMask,
    point: &BinaryMask,
    omega: &BinaryMask,
) -> Result<Vec<Verdict>, PipelineError> {
    let tagged: Vec<(String, FaultKind, &Region)> = regions
        .from_best
        .iter()
        .enumerate()
        .map(|(i, r)| (format!("best:{i}"), FaultKind::Over, r))
        .chain(regions.from_point.iter().enumerate().map(|(i, r)| (format!("point:{i}"), FaultKind::Under, r)))
        .collect();
    let mut pairs = Vec::with_capacity(tagged.len());
    for (_, kind, region) in &tagged {
        pairs.push((affiliation_area(features, region, *kind, best, point)?, omega.clone()));
    }
    let answers = s.affiliate_all(&pairs);
    let mut verdicts = Vec::with_capacity(tagged.len());
    for ((name, kind, region), answer) in tagged.into_iter().zip(answers) {
        verdicts.push(Verdict { region: name, kind, affiliated: answer?, center: region.center(), area: region.area() });
    }
    Ok(verdicts)
}

/// Applies confirmed faults to the point prompts and advances the round.
///
/// Under-segmentation adds a positive at the region center when every
/// existing positive is farther than `shift_radius`, and otherwise moves the
/// nearest positive there. Over-segmentation moves the negative point to the
/// region center; with several such regions the last one wins.
pub fn modify_prompts(mut state: RefinementState, verdicts: &[Verdict], shift_radius: f64) -> RefinementState {
    for v in verdicts.iter().filter(|v| v.is_fault()) {
        match v.kind {
            FaultKind::Under => {
                let target = PixelPoint::positive(v.center.x, v.center.y);
                let nearest = state
                    .positives
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, p.distance(&target)))
                    .fold(None, |acc: Option<(usize, f64)>, (i, d)| match acc {
                        Some((_, bd)) if bd <= d => acc,
                        _ => Some((i, d)),
                    });
                match nearest {
                    Some((i, d)) if d <= shift_radius => state.positives[i] = target,
                    _ => state.positives.push(target),
                }
            }
            FaultKind::Over => state.negative = Some(PixelPoint::negative(v.center.x, v.center.y)),
        }
    }
    state.verdicts.extend(verdicts.iter().cloned());
    state.round += 1;
    state
}

/// Best mask across prompt types, in the fixed order text, bbx, point.
pub fn select_best(
    s: &mut Session,
    eri: &EriOutput,
    query: &str,
    options: ReasoningOptions,
    ips: bool,
) -> Result<(BinaryMask, &'static str), PipelineError> {
    let present: Vec<(&'static str, &BinaryMask)> = [("text", &eri.mask_text), ("bbx", &eri.mask_bbx), ("point", &eri.mask_point)]
        .into_iter()
        .filter_map(|(k, m)| m.as_ref().map(|m| (k, m)))
        .collect();
    if present.is_empty() {
        return Err(PipelineError::NoMasks);
    }
    let index = if !ips || present.len() == 1 {
        0
    } else {
        let masks: Vec<BinaryMask> = present.iter().map(|(_, m)| (*m).clone()).collect();
        s.prefer(&masks, query, options)?
    };
    let (source, mask) = present[index];
    s.event(
        "select_best",
        json!({
            "candidates": present.iter().map(|(k, _)| *k).collect::<Vec<_>>(),
            "index": index,
            "source": source,
            "preference": ips && present.len() > 1,
            "mask": mask_summary(mask),
        }),
    );
    Ok((mask.clone(), source))
}

fn box_agreement(mask: &BinaryMask, boxes: &[BBox]) -> Result<f64, MaskError> {
    let mut best: f64 = 0.0;
    for b in boxes {
        best = best.max(mask_box_iou(mask, b)?);
    }
    Ok(best)
}

pub fn run_msr(s: &mut Session, eri: &EriOutput, query: &str, config: &Config) -> Result<MsrOutput, PipelineError> {
    s.set_phase(Phase::Msr);
    let (selected, selected_source) = select_best(s, eri, query, eri.options, config.ips)?;
    let done = |final_mask: BinaryMask, state| MsrOutput { final_mask, selected: selected.clone(), selected_source, state };
    if !config.opm {
        return Ok(done(selected.clone(), None));
    }
    let Some(point) = &eri.mask_point else {
        s.warn("no point-prompt mask; refinement skipped");
        return Ok(done(selected.clone(), None));
    };

    let (w, h) = selected.dims();
    let min_area = config.min_region_area(w, h);
    let shift_radius = config.shift_radius(w, h);
    let boxes = eri.bundle.distinct_boxes();
    let floor = config.tau / 2.0;
    let mut state = RefinementState {
        best: selected.clone(),
        positives: eri.bundle.positives.clone(),
        negative: eri.bundle.negative,
        round: 0,
        verdicts: vec![],
    };

    while state.round < config.max_rounds {
        let regions = build_regions(&state.best, point, min_area)?;
        s.event(
            "opm_round",
            json!({
                "round": state.round + 1,
                "from_best": regions.from_best.iter().map(|r| json!({"area": r.area(), "center": [r.center().x, r.center().y]})).collect::<Vec<_>>(),
                "from_point": regions.from_point.iter().map(|r| json!({"area": r.area(), "center": [r.center().x, r.center().y]})).collect::<Vec<_>>(),
            }),
        );
        if regions.is_empty() {
            s.event("opm_stop", json!({ "reason": "no_regions" }));
            break;
        }
        let verdicts = match check_affiliation(s, &eri.features, &regions, &state.best, point, &eri.omega) {
            Ok(v) => v,
            Err(PipelineError::Backend(e)) => {
                s.warn(format!("affiliation check failed ({e}); keeping the current mask"));
                break;
            }
            Err(e) => return Err(e),
        };
        for v in &verdicts {
            s.event(
                "verdict",
                json!({
                    "round": state.round + 1,
                    "region": v.region,
                    "kind": v.kind,
                    "affiliated": v.affiliated,
                    "fault": v.is_fault().then_some(v.kind),
                    "center": [v.center.x, v.center.y],
                    "area": v.area,
                }),
            );
        }
        if !verdicts.iter().any(Verdict::is_fault) {
            state.verdicts.extend(verdicts);
            s.event("opm_stop", json!({ "reason": "no_faults" }));
            break;
        }
        let previous_negative = state.negative;
        state = modify_prompts(state, &verdicts, shift_radius);
        if verdicts.iter().filter(|v| v.is_fault() && v.kind == FaultKind::Over).count() > 1 {
            s.warn("several over-segmented regions; the negative point follows the last one");
        }
        s.event(
            "prompts",
            json!({
                "round": state.round,
                "positives": state.positives.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>(),
                "negative": state.negative.map(|p| [p.x, p.y]),
                "negative_moved": state.negative != previous_negative,
            }),
        );
        let negatives: Vec<PixelPoint> = state.negative.into_iter().collect();
        let refined = match s.segment_points(&state.positives, &negatives, Some(&state.best)) {
            Ok(c) => c.mask,
            Err(e) => {
                s.warn(format!("refinement query failed ({e}); keeping the current mask"));
                break;
            }
        };
        let agreement = box_agreement(&refined, &boxes)?;
        let accepted = !refined.is_empty() && (!config.guard || agreement >= floor);
        s.event(
            "refined",
            json!({
                "round": state.round,
                "mask": mask_summary(&refined),
                "box_iou": agreement,
                "floor": if config.guard { Some(floor) } else { None },
                "accepted": accepted,
            }),
        );
        if !accepted {
            s.warn(format!("refined mask rejected (box IoU {agreement:.3} below {floor:.3}); keeping the current mask"));
            break;
        }
        state.best = refined;
    }

    Ok(done(state.best.clone(), Some(state)))
}
