//! `refseg` command-line surface.
//!
//! Exit codes are a stable contract: 0 success, 1 input or configuration
//! error, 2 backend or transport error, 3 internal invariant violation.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use refseg_core::backends::BackendError;
use refseg_core::config::{BackendMode, Config, ConfigError};
use refseg_core::eval::harness::remote_client;
use refseg_core::eval::{generate_scenarios, run_benchmark, BackendSource, EvalError, FaultMix};
use refseg_core::image::Image;
use refseg_core::mask::io;
use refseg_core::pipeline::{segment, PipelineError};
use refseg_core::trace::{semantic_diff, Phase, Trace, TraceEvent};
use serde_json::json;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_BACKEND: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "refseg", version, about = "Training-free referring segmentation with self-refinement")]
pub struct Cli {
    #[command(flatten)]
    pub flags: ConfigFlags,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags mirroring configuration keys; they override file and environment values.
#[derive(Debug, Default, Args)]
pub struct ConfigFlags {
    /// TOML configuration file (default: $TAROT_CONFIG).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub tau: Option<String>,
    #[arg(long, global = true)]
    pub s_neg: Option<String>,
    #[arg(long, global = true)]
    pub anchors: Option<String>,
    #[arg(long, global = true, value_name = "on|off", num_args = 0..=1, default_missing_value = "on")]
    pub rpo: Option<String>,
    #[arg(long, global = true, value_name = "on|off", num_args = 0..=1, default_missing_value = "on")]
    pub text_aug: Option<String>,
    #[arg(long, global = true, value_name = "on|off", num_args = 0..=1, default_missing_value = "on")]
    pub bbox_aug: Option<String>,
    #[arg(long, global = true, value_name = "on|off", num_args = 0..=1, default_missing_value = "on")]
    pub ips: Option<String>,
    #[arg(long, global = true, value_name = "on|off", num_args = 0..=1, default_missing_value = "on")]
    pub opm: Option<String>,
    #[arg(long, global = true, value_name = "on|off", num_args = 0..=1, default_missing_value = "on")]
    pub strict: Option<String>,
    #[arg(long, global = true)]
    pub max_rounds: Option<String>,
    #[arg(long, global = true, value_name = "scripted|remote")]
    pub backend_mode: Option<String>,
    #[arg(long, global = true, value_name = "DIR")]
    pub scenario: Option<String>,
    #[arg(long, global = true, value_name = "URL")]
    pub gateway: Option<String>,
    #[arg(long, global = true)]
    pub workers: Option<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<String>,
    /// Any other configuration key.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigFlags {
    fn overrides(&self) -> Result<Vec<(String, String)>, String> {
        let named = [
            ("tau", &self.tau),
            ("s_neg", &self.s_neg),
            ("anchors", &self.anchors),
            ("rpo", &self.rpo),
            ("text_aug", &self.text_aug),
            ("bbox_aug", &self.bbox_aug),
            ("ips", &self.ips),
            ("opm", &self.opm),
            ("strict", &self.strict),
            ("max_rounds", &self.max_rounds),
            ("backend_mode", &self.backend_mode),
            ("scenario", &self.scenario),
            ("gateway", &self.gateway),
            ("workers", &self.workers),
            ("out_dir", &self.out),
        ];
        let mut out: Vec<(String, String)> = Vec::new();
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        out.extend(named.into_iter().filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone()))));
        Ok(out)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment one image for one query; writes mask.png, trace.jsonl and optionally overlay.png.
    Segment {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        query: String,
        /// Also write the image with the mask blended in.
        #[arg(long)]
        overlay: bool,
    },
    /// Run a benchmark manifest and write a report.
    Eval { manifest: PathBuf },
    /// Generate synthetic scenarios and their manifest.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value = "none=6,under=7,over=7")]
        fault_mix: String,
    },
    /// Print trace events, or compare two traces or run directories.
    Trace {
        #[arg(required_unless_present = "assert_deterministic")]
        path: Option<PathBuf>,
        #[arg(long)]
        phase: Option<Phase>,
        #[arg(long)]
        event: Option<String>,
        /// Emit raw JSON lines.
        #[arg(long)]
        json: bool,
        /// Exit nonzero unless the two traces (or run directories) agree.
        #[arg(long, num_args = 2, value_names = ["OLD", "NEW"])]
        assert_deterministic: Option<Vec<PathBuf>>,
    },
    /// Print the resolved configuration.
    Config {
        #[arg(long)]
        json: bool,
    },
}

/// A command failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure { code: EXIT_INPUT, message: message.into() }
    }
}

pub fn backend_code(e: &BackendError) -> i32 {
    match e {
        BackendError::Scenario(_) => EXIT_INPUT,
        _ => EXIT_BACKEND,
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::input(format!("config: {e}"))
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match &e {
            EvalError::Backend(b) => Failure { code: backend_code(b), message: e.to_string() },
            _ => Failure::input(e.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::Backend(b) => backend_code(b),
            PipelineError::NoMasks => EXIT_BACKEND,
            PipelineError::Invariant(_) => EXIT_INTERNAL,
        };
        Failure { code, message: e.to_string() }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::input(format!("{}: {e}", path.display()))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_env(args, |k| std::env::var(k).ok(), out, err)
}

pub fn run_with_env<I, T>(args: I, env: impl Fn(&str) -> Option<String>, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
        Err(e) => {
            let _ = write!(err, "{e}");
            return EXIT_INPUT;
        }
    };
    match dispatch(cli, env, out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn resolve(flags: &ConfigFlags, env: impl Fn(&str) -> Option<String>) -> Result<Config, Failure> {
    let overrides = flags.overrides().map_err(Failure::input)?;
    Ok(Config::resolve(flags.config.as_deref(), env, &overrides)?)
}

fn dispatch(cli: Cli, env: impl Fn(&str) -> Option<String>, out: &mut dyn Write) -> Result<(), Failure> {
    match cli.command {
        Command::Config { json } => {
            let config = resolve(&cli.flags, env)?;
            let text = if json { serde_json::to_string_pretty(&config.to_value()).expect("config serializes") } else { config.to_toml() };
            let _ = writeln!(out, "{}", text.trim_end());
            let _ = writeln!(out, "# digest {}", config.digest());
            Ok(())
        }
        Command::Segment { image, query, overlay } => cmd_segment(&resolve(&cli.flags, env)?, &image, &query, overlay, out),
        Command::Eval { manifest } => cmd_eval(&resolve(&cli.flags, env)?, &manifest, out),
        Command::Gen { seed, count, fault_mix } => {
            let config = resolve(&cli.flags, env)?;
            let mix: FaultMix = fault_mix.parse().map_err(Failure::input)?;
            let manifest = generate_scenarios(seed, count, &mix, &config.out_dir)?;
            let _ = writeln!(out, "wrote {count} scenarios; manifest {}", manifest.display());
            Ok(())
        }
        Command::Trace { path, phase, event, json, assert_deterministic } => match assert_deterministic {
            Some(pair) => cmd_compare(&pair[0], &pair[1], out),
            None => cmd_trace(path.as_deref().expect("clap requires a path"), phase, event.as_deref(), json, out),
        },
    }
}

fn cmd_segment(config: &Config, image_path: &Path, query: &str, overlay: bool, out: &mut dyn Write) -> Result<(), Failure> {
    let image = Image::load(image_path).map_err(|e| io_failure(image_path, e))?;
    let source = BackendSource::from_config(config)?;
    let backends = source.for_sample(None).map_err(|e| Failure { code: backend_code(&e), message: e.to_string() })?;
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    let trace_path = dir.join("trace.jsonl");
    match segment(&backends, &image, query, config) {
        Err(f) => {
            f.trace.save(&trace_path).map_err(|e| io_failure(&trace_path, e))?;
            Err(Failure::from(f.error))
        }
        Ok(seg) => {
            seg.trace.save(&trace_path).map_err(|e| io_failure(&trace_path, e))?;
            let mask_path = dir.join("mask.png");
            io::save(&seg.mask, &mask_path).map_err(|e| io_failure(&mask_path, e))?;
            let _ = writeln!(out, "mask    {} ({} px)", mask_path.display(), seg.mask.area());
            if overlay {
                let p = dir.join("overlay.png");
                let img = io::overlay(image.rgb(), &seg.mask, [255, 40, 40])
                    .map_err(|e| Failure { code: EXIT_INTERNAL, message: e.to_string() })?;
                img.save(&p).map_err(|e| io_failure(&p, e))?;
                let _ = writeln!(out, "overlay {}", p.display());
            }
            let _ = writeln!(out, "trace   {}", trace_path.display());
            Ok(())
        }
    }
}

fn cmd_eval(config: &Config, manifest: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    if config.backend_mode == BackendMode::Remote {
        // Fail fast on an unreachable gateway instead of scoring every sample zero.
        remote_client(config)?.health().map_err(|e| Failure { code: EXIT_BACKEND, message: e.to_string() })?;
    }
    let source = BackendSource::from_config(config)?;
    let run = run_benchmark(manifest, config, &source)?;
    let _ = write!(out, "{}", run.report.to_text());
    let _ = writeln!(out, "report  {}", run.dir.join("report.json").display());
    Ok(())
}

fn format_event(e: &TraceEvent) -> String {
    let phase = serde_json::to_value(e.phase).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
    format!("{:>5}  {:<3}  {:<14}  {}", e.seq, phase, e.event, e.data)
}

fn cmd_trace(path: &Path, phase: Option<Phase>, event: Option<&str>, json: bool, out: &mut dyn Write) -> Result<(), Failure> {
    let trace = Trace::load(path).map_err(|e| io_failure(path, e))?;
    for e in trace.events() {
        if phase.is_some_and(|p| p != e.phase) || event.is_some_and(|n| n != e.event) {
            continue;
        }
        let line = if json { serde_json::to_string(e).expect("events serialize") } else { format_event(e) };
        let _ = writeln!(out, "{line}");
    }
    Ok(())
}

/// Trace files of a run directory, or the file itself.
fn trace_files(path: &Path) -> Result<Vec<(String, PathBuf)>, Failure> {
    if path.is_file() {
        return Ok(vec![(String::new(), path.to_path_buf())]);
    }
    let dir = path.join("traces");
    let mut files: Vec<(String, PathBuf)> = std::fs::read_dir(&dir)
        .map_err(|e| io_failure(&dir, e))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), p))
        .collect();
    files.sort();
    Ok(files)
}

fn diverged(out: &mut dyn Write, message: String) -> Result<(), Failure> {
    let _ = writeln!(out, "{message}");
    Err(Failure { code: EXIT_INPUT, message: "traces diverge".into() })
}

fn cmd_compare(old: &Path, new: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    let (a, b) = (trace_files(old)?, trace_files(new)?);
    let names = |v: &[(String, PathBuf)]| v.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    if old.is_file() != new.is_file() || names(&a) != names(&b) {
        return diverged(out, format!("different trace sets: {:?} vs {:?}", names(&a), names(&b)));
    }
    for ((name, pa), (_, pb)) in a.iter().zip(&b) {
        let ta = Trace::load(pa).map_err(|e| io_failure(pa, e))?;
        let tb = Trace::load(pb).map_err(|e| io_failure(pb, e))?;
        if let Some(d) = semantic_diff(&ta, &tb) {
            let show = |e: &Option<TraceEvent>| e.as_ref().map(format_event).unwrap_or_else(|| "<end of trace>".into());
            return diverged(
                out,
                format!("{name} first divergence at event {}\n  old: {}\n  new: {}", d.index, show(&d.left), show(&d.right)),
            );
        }
        // Run directories also carry masks; those must match byte for byte.
        if !name.is_empty() {
            let mask = Path::new("masks").join(name.replace(".jsonl", ".png"));
            let (ma, mb) = (std::fs::read(old.join(&mask)).ok(), std::fs::read(new.join(&mask)).ok());
            if ma != mb {
                return diverged(out, format!("{} differs", mask.display()));
            }
        }
    }
    let _ = writeln!(out, "{}", json!({"identical": true, "traces": a.len()}));
    Ok(())
}
