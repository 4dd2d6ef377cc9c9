//! Per-sample results and aggregate benchmark metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::trace::{Phase, Trace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub index: usize,
    pub id: String,
    pub query: String,
    pub split: String,
    pub fault: Option<String>,
    pub iou: f64,
    pub intersection: usize,
    pub union: usize,
    /// Why the sample scored zero without a prediction.
    pub error: Option<String>,
    /// Confirmed fault kinds, in trace order.
    pub verdicts: Vec<String>,
    pub warnings: usize,
    pub calls: BTreeMap<String, usize>,
    pub eri_ms: f64,
    pub msr_ms: f64,
    pub mask_digest: Option<String>,
    pub mask: Option<String>,
    pub overlay: Option<String>,
    pub trace: String,
}

/// Fault kinds confirmed by self-refinement in `trace`.
pub fn confirmed_faults(trace: &Trace) -> Vec<String> {
    trace
        .filter(Phase::Msr, "verdict")
        .filter_map(|e| e.data.get("fault").and_then(Value::as_str).map(str::to_string))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub run_dir: String,
    pub manifest: String,
    pub count: usize,
    pub errors: usize,
    /// Mean per-sample IoU.
    pub giou: f64,
    /// Summed intersections over summed unions.
    pub ciou: f64,
    pub total_intersection: usize,
    pub total_union: usize,
    pub eri_ms: f64,
    pub msr_ms: f64,
    pub wall_ms: f64,
    pub calls: BTreeMap<String, usize>,
    pub config_digest: String,
    pub config: Value,
    pub samples: Vec<SampleResult>,
}

impl Report {
    #[allow(clippy::too_many_arguments)]
    pub fn aggregate(
        run_dir: String,
        manifest: String,
        config: Value,
        config_digest: String,
        wall_ms: f64,
        samples: Vec<SampleResult>,
    ) -> Report {
        let count = samples.len();
        let total_intersection = samples.iter().map(|s| s.intersection).sum();
        let total_union: usize = samples.iter().map(|s| s.union).sum();
        let giou = if count == 0 { 0.0 } else { samples.iter().map(|s| s.iou).sum::<f64>() / count as f64 };
        let ciou = if total_union == 0 { 0.0 } else { total_intersection as f64 / total_union as f64 };
        let mut calls = BTreeMap::new();
        for s in &samples {
            for (op, n) in &s.calls {
                *calls.entry(op.clone()).or_insert(0) += n;
            }
        }
        Report {
            run_dir,
            manifest,
            count,
            errors: samples.iter().filter(|s| s.error.is_some()).count(),
            giou,
            ciou,
            total_intersection,
            total_union,
            eri_ms: samples.iter().map(|s| s.eri_ms).sum(),
            msr_ms: samples.iter().map(|s| s.msr_ms).sum(),
            wall_ms,
            calls,
            config_digest,
            config,
            samples,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// Human-readable summary table.
    pub fn to_text(&self) -> String {
        let width = self.samples.iter().map(|s| s.id.len()).max().unwrap_or(2).max(2);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:<10}  {:<6}  {:>7}  {:<12}  note", "id", "split", "fault", "iou", "verdicts");
        for s in &self.samples {
            let verdicts = if s.verdicts.is_empty() { "-".to_string() } else { s.verdicts.join(",") };
            let note = s.error.as_deref().unwrap_or("");
            let _ = writeln!(
                out,
                "{:<width$}  {:<10}  {:<6}  {:>7.4}  {:<12}  {note}",
                s.id,
                s.split,
                s.fault.as_deref().unwrap_or("-"),
                s.iou,
                verdicts,
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "samples  {}  (errors {})", self.count, self.errors);
        let _ = writeln!(out, "gIoU     {:.4}", self.giou);
        let _ = writeln!(out, "cIoU     {:.4}", self.ciou);
        let _ = writeln!(out, "time     eri {:.1} ms, msr {:.1} ms, wall {:.1} ms", self.eri_ms, self.msr_ms, self.wall_ms);
        let calls: Vec<String> = self.calls.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(out, "calls    {}", calls.join(" "));
        let _ = writeln!(out, "config   {}", self.config_digest);
        out
    }
}
