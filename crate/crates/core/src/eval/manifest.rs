//! JSON-lines benchmark manifests. Paths are relative to the manifest file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub image: PathBuf,
    pub query: String,
    pub gt_mask: PathBuf,
    pub split: String,
    /// Scenario directory or file for scripted backends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Value>,
}

impl Sample {
    /// Stable identifier: `meta.id` when it is a safe file stem, else the index.
    pub fn id(&self, index: usize) -> String {
        let from_meta = self.meta.as_ref().and_then(|m| m.get("id")).and_then(Value::as_str).filter(|s| {
            !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')) && !s.starts_with('.')
        });
        from_meta.map(str::to_string).unwrap_or_else(|| format!("{index:04}"))
    }

    pub fn fault(&self) -> Option<String> {
        self.meta.as_ref()?.get("fault")?.as_str().map(str::to_string)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Directory the sample paths are resolved against.
    pub root: PathBuf,
    pub samples: Vec<Sample>,
}

impl Manifest {
    /// Parses and checks a manifest; blank lines are skipped. Every referenced
    /// image and mask must exist.
    pub fn load(path: &Path) -> Result<Manifest, EvalError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{shown}: {e}")))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| EvalError::Manifest { path: shown.clone(), line: i + 1, message };
            let mut s: Sample = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            if s.query.trim().is_empty() {
                return Err(err("empty query".into()));
            }
            for p in [&mut s.image, &mut s.gt_mask] {
                *p = root.join(&*p);
                if !p.is_file() {
                    return Err(err(format!("missing file {}", p.display())));
                }
            }
            s.scenario = s.scenario.map(|p| root.join(p));
            samples.push(s);
        }
        if samples.is_empty() {
            return Err(EvalError::Manifest { path: shown, line: 0, message: "manifest has no samples".into() });
        }
        Ok(Manifest { root, samples })
    }
}
