//! Append-only provenance log of a pipeline run, stored as JSON lines.
//!
//! Every backend call, filter decision, selection, warning and refinement
//! round becomes one [`TraceEvent`]. Wall-clock durations live under the
//! `elapsed_us` key and are ignored by [`semantic_diff`], as are the
//! output-location settings echoed in the header, so two runs with the same
//! inputs compare equal.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::image::sha256_hex;
use crate::mask::{io::to_rle, BinaryMask};

/// Keys ignored by [`semantic_diff`]: timings plus run-location settings.
pub const VOLATILE_KEYS: &[&str] = &["elapsed_us", "out_dir", "workers"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Run,
    Eri,
    Msr,
}

impl std::str::FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "run" => Ok(Phase::Run),
            "eri" => Ok(Phase::Eri),
            "msr" => Ok(Phase::Msr),
            other => Err(format!("unknown phase {other:?} (expected run, eri or msr)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub phase: Phase,
    pub event: String,
    #[serde(default)]
    pub data: Value,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, phase: Phase, event: &str, data: Value) {
        let seq = self.events.len() as u64;
        self.events.push(TraceEvent { seq, phase, event: event.to_string(), data });
    }

    pub fn warn(&mut self, phase: Phase, message: impl Into<String>) {
        let message = message.into();
        log::warn!("{message}");
        self.push(phase, "warning", json!({ "message": message }));
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn filter<'a>(&'a self, phase: Phase, event: &'a str) -> impl Iterator<Item = &'a TraceEvent> + 'a {
        self.events.iter().filter(move |e| e.phase == phase && e.event == event)
    }

    /// Backend call counts keyed by operation name.
    pub fn call_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for e in self.events.iter().filter(|e| e.event == "call") {
            if let Some(op) = e.data.get("op").and_then(Value::as_str) {
                *counts.entry(op.to_string()).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(&mut f)?;
        f.flush()
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self, String> {
        let mut events = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            let e: TraceEvent =
                serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", n + 1))?;
            events.push(e);
        }
        Ok(Trace { events })
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let f = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }

    pub fn extend(&mut self, other: Trace) {
        for e in other.events {
            self.push(e.phase, &e.event, e.data);
        }
    }
}

/// `sha256:<hex>` of the canonical (sorted-key) JSON encoding of `v`.
pub fn digest_json(v: &Value) -> String {
    format!("sha256:{}", sha256_hex(canonical(v).as_bytes()))
}

fn canonical(v: &Value) -> String {
    // serde_json's default map is ordered by key, so to_string is canonical.
    serde_json::to_string(v).expect("JSON values always serialize")
}

pub fn mask_digest(mask: &BinaryMask) -> String {
    format!("sha256:{}", sha256_hex(to_rle(mask).as_bytes()))
}

/// Compact trace form of a mask: area plus content digest.
pub fn mask_summary(mask: &BinaryMask) -> Value {
    json!({ "area": mask.area(), "digest": mask_digest(mask) })
}

fn strip_volatile(v: &Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(
            m.iter()
                .filter(|(k, _)| !VOLATILE_KEYS.contains(&k.as_str()))
                .map(|(k, v)| (k.clone(), strip_volatile(v)))
                .collect(),
        ),
        Value::Array(a) => Value::Array(a.iter().map(strip_volatile).collect()),
        other => other.clone(),
    }
}

/// First point where two traces differ, ignoring volatile timing fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub index: usize,
    pub left: Option<TraceEvent>,
    pub right: Option<TraceEvent>,
}

pub fn semantic_diff(a: &Trace, b: &Trace) -> Option<Divergence> {
    let n = a.events.len().max(b.events.len());
    for i in 0..n {
        let (l, r) = (a.events.get(i), b.events.get(i));
        let same = match (l, r) {
            (Some(l), Some(r)) => {
                l.phase == r.phase && l.event == r.event && strip_volatile(&l.data) == strip_volatile(&r.data)
            }
            _ => false,
        };
        if !same {
            return Some(Divergence { index: i, left: l.cloned(), right: r.cloned() });
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_and_counts() {
        let mut t = Trace::new();
        t.push(Phase::Run, "header", json!({"tau": 0.8}));
        t.push(Phase::Eri, "call", json!({"op": "parse", "elapsed_us": 5}));
        t.push(Phase::Eri, "call", json!({"op": "parse", "elapsed_us": 9}));
        let mut buf = Vec::new();
        t.write_jsonl(&mut buf).unwrap();
        let back = Trace::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        assert_eq!(t.call_counts().get("parse"), Some(&2));
    }

    #[test]
    fn semantic_diff_ignores_timing() {
        let mut a = Trace::new();
        let mut b = Trace::new();
        a.push(Phase::Eri, "call", json!({"op": "parse", "elapsed_us": 5}));
        b.push(Phase::Eri, "call", json!({"op": "parse", "elapsed_us": 700}));
        assert_eq!(semantic_diff(&a, &b), None);
        b.push(Phase::Msr, "select_best", json!({"index": 1}));
        let d = semantic_diff(&a, &b).unwrap();
        assert_eq!(d.index, 1);
        assert!(d.left.is_none());
    }

    #[test]
    fn digest_is_key_order_independent() {
        let a: Value = serde_json::from_str(r#"{"b":1,"a":[1,2]}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"a":[1,2],"b":1}"#).unwrap();
        assert_eq!(digest_json(&a), digest_json(&b));
    }
}
