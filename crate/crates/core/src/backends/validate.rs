//! Contract checks applied to every backend response.
//!
//! In lenient mode recoverable violations (out-of-range scores, boxes poking
//! past the image edge, a stale candidate box) are repaired and reported as
//! warnings. In strict mode they are rejected as [`BackendError::Semantic`].
//! Violations with no sensible repair are rejected in both modes.

use super::{BackendError, Criterion, MaskCandidate, ParsedExpression, ReasoningOptions};
use crate::mask::BBox;
use crate::similarity::FeatureMap;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Validator {
    pub strict: bool,
}

fn normalized(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

impl Validator {
    pub fn new(strict: bool) -> Self {
        Validator { strict }
    }

    /// Repairs a recoverable violation, or rejects it in strict mode.
    fn repair(&self, op: &str, message: String, warnings: &mut Vec<String>) -> Result<(), BackendError> {
        if self.strict {
            Err(BackendError::semantic(op, message))
        } else {
            warnings.push(format!("{op}: {message}"));
            Ok(())
        }
    }

    pub fn parsed(
        &self,
        mut p: ParsedExpression,
        options: ReasoningOptions,
        warnings: &mut Vec<String>,
    ) -> Result<ParsedExpression, BackendError> {
        const OP: &str = "parse";
        p.target_name = p.target_name.trim().to_string();
        if p.target_name.is_empty() {
            return Err(BackendError::semantic(OP, "empty target name"));
        }
        let target = normalized(&p.target_name);
        let before = p.refer_names.len();
        p.refer_names.retain(|r| !r.trim().is_empty() && normalized(r) != target);
        if p.refer_names.len() != before {
            self.repair(OP, "refer names repeated the target or were blank; dropped".into(), warnings)?;
        }
        if !options.refer_objects && !p.refer_names.is_empty() {
            self.repair(OP, "refer objects returned with refer-object analysis disabled; dropped".into(), warnings)?;
            p.refer_names.clear();
        }
        Ok(p)
    }

    pub fn augmented(
        &self,
        target: &str,
        mut texts: Vec<String>,
        warnings: &mut Vec<String>,
    ) -> Result<Vec<String>, BackendError> {
        const OP: &str = "augment";
        texts.iter_mut().for_each(|t| *t = t.trim().to_string());
        if texts.len() != 3 {
            self.repair(OP, format!("expected 3 texts, got {}", texts.len()), warnings)?;
        }
        if texts.first().map(String::as_str) != Some(target) {
            self.repair(OP, format!("first text must be the target {target:?}"), warnings)?;
            texts.retain(|t| t != target);
            texts.insert(0, target.to_string());
        }
        if texts.iter().any(String::is_empty) {
            self.repair(OP, "blank prompt replaced by the target".into(), warnings)?;
            texts.iter_mut().filter(|t| t.is_empty()).for_each(|t| *t = target.to_string());
        }
        texts.truncate(3);
        while texts.len() < 3 {
            texts.push(target.to_string());
        }
        Ok(texts)
    }

    pub fn criterion(&self, c: Criterion) -> Result<Criterion, BackendError> {
        if c.relation_text.trim().is_empty() {
            return Err(BackendError::semantic("criterion", "empty relation"));
        }
        Ok(c)
    }

    /// Ensures both rewrites are nonempty and `short` is not the longer one.
    pub fn rephrased(
        &self,
        short: String,
        long: String,
        warnings: &mut Vec<String>,
    ) -> Result<(String, String), BackendError> {
        let (short, long) = (short.trim().to_string(), long.trim().to_string());
        if short.is_empty() || long.is_empty() {
            return Err(BackendError::semantic("rephrase", "empty rewrite"));
        }
        if short.chars().count() > long.chars().count() {
            warnings.push("rephrase: short rewrite longer than long one; swapped".into());
            return Ok((long, short));
        }
        Ok((short, long))
    }

    pub fn bbox(
        &self,
        op: &str,
        b: BBox,
        width: u32,
        height: u32,
        warnings: &mut Vec<String>,
    ) -> Result<BBox, BackendError> {
        if b.is_within(width, height) {
            return Ok(b);
        }
        let clamped = b
            .clamped(width, height)
            .ok_or_else(|| BackendError::semantic(op, format!("box {b} lies outside the {width}x{height} image")))?;
        self.repair(op, format!("box {b} clamped to {clamped}"), warnings)?;
        Ok(clamped)
    }

    pub fn score(&self, op: &str, s: f64, warnings: &mut Vec<String>) -> Result<f64, BackendError> {
        if !s.is_finite() {
            return Err(BackendError::semantic(op, "non-finite score"));
        }
        if !(0.0..=1.0).contains(&s) {
            self.repair(op, format!("score {s} clamped to [0, 1]"), warnings)?;
            return Ok(s.clamp(0.0, 1.0));
        }
        Ok(s)
    }

    pub fn index(&self, raw: i64, n: usize, warnings: &mut Vec<String>) -> Result<usize, BackendError> {
        match usize::try_from(raw) {
            Ok(i) if i < n => Ok(i),
            _ => {
                self.repair("prefer", format!("index {raw} out of range for {n} masks; using 0"), warnings)?;
                Ok(0)
            }
        }
    }

    pub fn candidate(
        &self,
        op: &str,
        mut c: MaskCandidate,
        width: u32,
        height: u32,
        warnings: &mut Vec<String>,
    ) -> Result<MaskCandidate, BackendError> {
        if c.mask.dims() != (width, height) {
            return Err(BackendError::semantic(
                op,
                format!("mask is {}x{} for a {width}x{height} image", c.mask.width(), c.mask.height()),
            ));
        }
        let tight = c.mask.bounding_box();
        if c.bbox != tight {
            self.repair(op, "candidate box is not the tight box of its mask; recomputed".into(), warnings)?;
            c.bbox = tight;
        }
        c.score = self.score(op, c.score, warnings)?;
        Ok(c)
    }

    pub fn features(&self, f: FeatureMap, width: u32, height: u32) -> Result<FeatureMap, BackendError> {
        if (f.image_w(), f.image_h()) != (width, height) {
            return Err(BackendError::semantic(
                "features",
                format!("feature map describes a {}x{} image, input is {width}x{height}", f.image_w(), f.image_h()),
            ));
        }
        Ok(f)
    }
}
