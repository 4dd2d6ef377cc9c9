//! Runs the pipeline over a manifest with a bounded worker pool.
//!
//! A sample that fails scores IoU 0 with its ground-truth area as the union
//! and carries the error in the report; only manifest, configuration and
//! output-directory problems abort the run.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::manifest::{Manifest, Sample};
use super::report::{confirmed_faults, Report, SampleResult};
use super::EvalError;
use crate::backends::remote::{RemoteClient, RemoteConfig};
use crate::backends::scripted::Scenario;
use crate::backends::{BackendError, Backends};
use crate::config::{BackendMode, Config};
use crate::image::Image;
use crate::mask::{io, IouSample};
use crate::pipeline::segment;
use crate::trace::{mask_digest, Trace};

/// Where a run gets its backends.
#[derive(Clone)]
pub enum BackendSource {
    /// One set for every sample.
    Shared(Backends),
    /// A scenario per sample, falling back to `default` when the sample names none.
    Scripted { default: Option<PathBuf> },
}

impl BackendSource {
    pub fn from_config(config: &Config) -> Result<Self, EvalError> {
        match config.backend_mode {
            BackendMode::Scripted => Ok(BackendSource::Scripted { default: config.scenario.clone() }),
            BackendMode::Remote => Ok(BackendSource::Shared(Backends::remote(remote_client(config)?))),
        }
    }

    pub fn for_sample(&self, scenario: Option<&Path>) -> Result<Backends, BackendError> {
        match self {
            BackendSource::Shared(b) => Ok(b.clone()),
            BackendSource::Scripted { default } => {
                let path = scenario.or(default.as_deref()).ok_or_else(|| {
                    BackendError::Scenario("scripted mode needs a scenario (sample field or config key)".into())
                })?;
                Ok(Backends::scripted(Scenario::load(path)?))
            }
        }
    }
}

pub fn remote_client(config: &Config) -> Result<RemoteClient, EvalError> {
    let url = config
        .gateway
        .as_deref()
        .ok_or_else(|| EvalError::Input("remote mode needs a gateway URL (gateway key or TAROT_GATEWAY_URL)".into()))?;
    let mut rc = RemoteConfig::new(url);
    rc.timeout = Duration::from_secs_f64(config.timeout_s);
    rc.retries = config.retries;
    rc.max_inflight = config.max_inflight;
    Ok(RemoteClient::new(rc))
}

/// Output of [`run_benchmark`]; every file lives under `dir`.
#[derive(Debug, Clone)]
pub struct BenchRun {
    pub dir: PathBuf,
    pub report: Report,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> EvalError {
    EvalError::Io(format!("{}: {e}", path.display()))
}

fn create_run_dir(out_dir: &Path, config: &Config) -> Result<PathBuf, EvalError> {
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let digest = config.digest();
    let short = digest.trim_start_matches("sha256:").get(..8).unwrap_or("00000000");
    let stem = format!("run-{}-{short}", chrono::Local::now().format("%Y%m%dT%H%M%S"));
    for n in 0.. {
        let name = if n == 0 { stem.clone() } else { format!("{stem}-{n}") };
        let dir = out_dir.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => {
                for sub in ["traces", "masks", "overlays"] {
                    std::fs::create_dir(dir.join(sub)).map_err(|e| io_err(&dir, e))?;
                }
                return Ok(dir);
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(io_err(&dir, e)),
        }
    }
    unreachable!("unbounded suffix search")
}

struct Outcome {
    trace: Trace,
    iou: IouSample,
    error: Option<String>,
    mask: Option<(Vec<u8>, Vec<u8>, String)>,
    eri_ms: f64,
    msr_ms: f64,
}

fn run_one(sample: &Sample, config: &Config, source: &BackendSource) -> Outcome {
    let gt = io::load(&sample.gt_mask);
    let gt_area = gt.as_ref().map(|m| m.area()).unwrap_or(0);
    let failed = |trace: Trace, message: String| Outcome {
        trace,
        iou: IouSample { intersection: 0, union: gt_area },
        error: Some(message),
        mask: None,
        eri_ms: 0.0,
        msr_ms: 0.0,
    };
    let gt = match gt {
        Ok(g) => g,
        Err(e) => return failed(Trace::new(), format!("ground truth: {e}")),
    };
    let image = match Image::load(&sample.image) {
        Ok(i) => i,
        Err(e) => return failed(Trace::new(), format!("image: {e}")),
    };
    if image.dims() != gt.dims() {
        return failed(Trace::new(), "image and ground-truth sizes differ".into());
    }
    let backends = match source.for_sample(sample.scenario.as_deref()) {
        Ok(b) => b,
        Err(e) => return failed(Trace::new(), e.to_string()),
    };
    match segment(&backends, &image, &sample.query, config) {
        Err(f) => failed(f.trace, f.error.to_string()),
        Ok(seg) => {
            let iou = IouSample::measure(&seg.mask, &gt).expect("dims checked above");
            let overlay = io::overlay(image.rgb(), &seg.mask, [255, 40, 40]).expect("dims match");
            let mut png = std::io::Cursor::new(Vec::new());
            overlay.write_to(&mut png, image::ImageFormat::Png).expect("in-memory PNG encoding");
            Outcome {
                iou,
                error: None,
                mask: Some((io::encode_png(&seg.mask), png.into_inner(), mask_digest(&seg.mask))),
                eri_ms: seg.eri_ms,
                msr_ms: seg.msr_ms,
                trace: seg.trace,
            }
        }
    }
}

/// Evaluates every sample of `manifest_path` and writes traces, masks,
/// overlays and `report.{json,txt}` to a fresh run directory under `config.out_dir`.
pub fn run_benchmark(manifest_path: &Path, config: &Config, source: &BackendSource) -> Result<BenchRun, EvalError> {
    let manifest = Manifest::load(manifest_path)?;
    let dir = create_run_dir(&config.out_dir, config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| EvalError::Input(format!("worker pool: {e}")))?;
    let start = Instant::now();
    let outcomes: Vec<Outcome> =
        pool.install(|| manifest.samples.par_iter().map(|s| run_one(s, config, source)).collect());
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;

    let mut results = Vec::with_capacity(outcomes.len());
    for (index, (sample, out)) in manifest.samples.iter().zip(outcomes).enumerate() {
        let id = sample.id(index);
        let trace_rel = format!("traces/{id}.jsonl");
        out.trace.save(&dir.join(&trace_rel)).map_err(|e| io_err(&dir, e))?;
        let (mask, overlay, digest) = match &out.mask {
            Some((mask_png, overlay_png, digest)) => {
                let (m, o) = (format!("masks/{id}.png"), format!("overlays/{id}.png"));
                std::fs::write(dir.join(&m), mask_png).map_err(|e| io_err(&dir, e))?;
                std::fs::write(dir.join(&o), overlay_png).map_err(|e| io_err(&dir, e))?;
                (Some(m), Some(o), Some(digest.clone()))
            }
            None => (None, None, None),
        };
        if let Some(e) = &out.error {
            log::warn!("sample {id}: {e}");
        }
        results.push(SampleResult {
            index,
            id,
            query: sample.query.clone(),
            split: sample.split.clone(),
            fault: sample.fault(),
            iou: out.iou.iou(),
            intersection: out.iou.intersection,
            union: out.iou.union,
            error: out.error,
            verdicts: confirmed_faults(&out.trace),
            warnings: out.trace.events().iter().filter(|e| e.event == "warning").count(),
            calls: out.trace.call_counts(),
            eri_ms: out.eri_ms,
            msr_ms: out.msr_ms,
            mask_digest: digest,
            mask,
            overlay,
            trace: trace_rel,
        });
    }
    let report = Report::aggregate(
        dir.display().to_string(),
        manifest_path.display().to_string(),
        config.to_value(),
        config.digest(),
        wall_ms,
        results,
    );
    std::fs::write(dir.join("report.json"), report.to_json()).map_err(|e| io_err(&dir, e))?;
    std::fs::write(dir.join("report.txt"), report.to_text()).map_err(|e| io_err(&dir, e))?;
    Ok(BenchRun { dir, report })
}
