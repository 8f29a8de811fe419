//! `rtpshape` command-line front end.
//!
//! Exit codes: 0 success, 2 usage/config/validation, 3 I/O. Diagnostics go
//! to stderr; summaries to stdout; everything else to files.

pub mod config;
pub mod files;
pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use self::config::{
    parse_scenario, read_stage_conf, write_stage_conf, GeneratorSpec, ScenarioConfig,
};
use self::files::{
    comparison_csv, metrics_files, read_occupancy_csv, summary_csv, write_drops_csv,
    write_occupancy_csv,
};
use self::report::PanelReport;
use crate::metrics::{compare, compare_traces, measure, MetricsReport};
use crate::model::{read_trace_csv, write_trace_csv, StreamKind, StreamTrace};
use crate::shaper::{run_pipeline, ShapeResult, StageConfig};
use crate::traffic::{apply_channel, generate_audio, generate_video};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, config, input data or unmet preconditions.
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_IO,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String, CliError> {
    String::from_utf8(read_bytes(path)?)
        .map_err(|_| usage(format!("{}: not valid ASCII text", path.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, CliError> {
    let text = read_text(path)?;
    let mut cfg = parse_scenario(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if let Some(s) = seed {
        cfg.override_seed(s);
    }
    Ok(cfg)
}

/// Reads a trace CSV; the stream kind is inferred from packet sizes.
pub fn load_trace(path: &Path) -> Result<StreamTrace, CliError> {
    let bytes = read_bytes(path)?;
    let mut t = read_trace_csv(&bytes, StreamKind::Audio)
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    t.kind = StreamKind::infer(&t.packets);
    Ok(t)
}

fn generate(cfg: &ScenarioConfig) -> Result<StreamTrace, CliError> {
    let g = cfg
        .generator
        .as_ref()
        .ok_or_else(|| usage("config has no generator section"))?;
    match &g.spec {
        GeneratorSpec::Audio(a) => generate_audio(a, g.duration_us),
        GeneratorSpec::Video(v) => generate_video(v, g.duration_us, g.seed),
    }
    .map_err(usage)
}

pub fn cmd_generate(
    config: &Path,
    output: &Path,
    seed: Option<u64>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let cfg = load_config(config, seed)?;
    let trace = generate(&cfg)?;
    write_file(output, write_trace_csv(&trace))?;
    let span = trace.packets.last().map_or(0, |p| p.send_ts_us);
    let _ = writeln!(out, "packets,{}\nduration_us,{span}", trace.len());
    Ok(())
}

/// File prefix of stage `k` under a shape output prefix.
pub fn stage_prefix(prefix: &str, k: usize) -> String {
    format!("{prefix}stage{k}")
}

fn write_stage(prefix: &str, input: &StreamTrace, r: &ShapeResult) -> Result<(), CliError> {
    let p = |suffix: &str| PathBuf::from(format!("{prefix}.{suffix}"));
    write_file(&p("input.csv"), write_trace_csv(input))?;
    write_file(&p("shaped.csv"), write_trace_csv(&r.shaped))?;
    write_file(&p("drops.csv"), write_drops_csv(&r.dropped))?;
    write_file(&p("occupancy.csv"), write_occupancy_csv(&r.occupancy))?;
    write_file(&p("shaper.conf"), write_stage_conf(&r.stage))?;
    Ok(())
}

/// Shapes `input` through the configured pipeline and writes every stage's
/// files under `prefix`.
fn shape_and_write(
    cfg: &ScenarioConfig,
    input: &StreamTrace,
    prefix: &str,
) -> Result<(StreamTrace, Vec<ShapeResult>), CliError> {
    let stages = cfg.resolve_pipeline(input).map_err(usage)?;
    let (fin, results) = run_pipeline(&stages, input).map_err(usage)?;
    let mut stage_input = input;
    for (k, r) in results.iter().enumerate() {
        write_stage(&stage_prefix(prefix, k), stage_input, r)?;
        stage_input = &r.shaped;
    }
    Ok((fin, results))
}

pub fn cmd_shape(
    config: &Path,
    input: &Path,
    prefix: &str,
    seed: Option<u64>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let cfg = load_config(config, seed)?;
    if cfg.pipeline.is_empty() {
        return Err(usage(format!(
            "{}: pipeline is empty (no stage0 section)",
            config.display()
        )));
    }
    let mut trace = load_trace(input)?;
    if !trace.is_received() {
        let ch = cfg.channel.as_ref().ok_or_else(|| {
            usage(format!(
                "shaping precondition: {} has packets without recv_ts_us and the config has no channel section",
                input.display()
            ))
        })?;
        trace = apply_channel(&trace, ch).map_err(usage)?;
    }
    let (_, results) = shape_and_write(&cfg, &trace, prefix)?;
    for (k, r) in results.iter().enumerate() {
        let _ = writeln!(
            out,
            "stage{k},{},shaped,{},dropped,{}",
            r.stage.name(),
            r.shaped.len(),
            r.dropped.len()
        );
    }
    Ok(())
}

fn write_metrics(prefix: &str, m: &MetricsReport) -> Result<(), CliError> {
    for (suffix, text) in metrics_files(m) {
        write_file(Path::new(&format!("{prefix}{suffix}")), text)?;
    }
    Ok(())
}

/// First per-metric precondition failure, if any.
fn insufficient(m: &MetricsReport) -> Option<String> {
    [
        m.jitter.as_ref().err(),
        m.pdv.as_ref().err(),
        m.loss.as_ref().err(),
    ]
    .into_iter()
    .flatten()
    .next()
    .map(|e| e.to_string())
}

/// Loads a shape stage written by `shape` from its prefix.
pub fn load_stage(prefix: &str) -> Result<(StreamTrace, ShapeResult), CliError> {
    let p = |suffix: &str| PathBuf::from(format!("{prefix}.{suffix}"));
    let input = load_trace(&p("input.csv"))?;
    let mut shaped = load_trace(&p("shaped.csv"))?;
    shaped.kind = input.kind;
    let stage: StageConfig = read_stage_conf(&read_text(&p("shaper.conf"))?).map_err(usage)?;
    let occupancy = read_occupancy_csv(&read_text(&p("occupancy.csv"))?).map_err(usage)?;
    Ok((
        input,
        ShapeResult {
            stage,
            shaped,
            dropped: Vec::new(),
            occupancy,
        },
    ))
}

/// Analyzes trace `a`; with `b` (a shape stage prefix or a trace CSV) also
/// compares `a` against it.
pub fn cmd_analyze(
    a: &Path,
    b: Option<&str>,
    output: Option<&str>,
    window_us: u64,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let before = load_trace(a)?;
    match b {
        None => {
            let m = measure(&before, window_us).map_err(usage)?;
            if let Some(prefix) = output {
                write_metrics(prefix, &m)?;
            }
            let _ = out.write_all(summary_csv(&m.summary_lines()).as_bytes());
            match insufficient(&m) {
                Some(e) => Err(usage(e)),
                None => Ok(()),
            }
        }
        Some(b) => {
            // A shape stage prefix if its files exist, otherwise a trace CSV.
            let c = if Path::new(&format!("{b}.shaped.csv")).exists() {
                let (_, result) = load_stage(b)?;
                compare(&before, &result, window_us)
            } else {
                compare_traces(&before, &load_trace(Path::new(b))?, None, window_us)
            }
            .map_err(usage)?;
            if let Some(prefix) = output {
                write_metrics(&format!("{prefix}before."), &c.before)?;
                write_metrics(&format!("{prefix}after."), &c.after)?;
                write_file(
                    Path::new(&format!("{prefix}comparison.csv")),
                    comparison_csv(&c),
                )?;
            }
            let _ = out.write_all(comparison_csv(&c).as_bytes());
            match insufficient(&c.before).or_else(|| insufficient(&c.after)) {
                Some(e) => Err(usage(e)),
                None => Ok(()),
            }
        }
    }
}

/// Writes the SVG figure and, next to it, `<name>.panels.csv`.
pub fn cmd_report(stage: &str, svg: &Path) -> Result<(), CliError> {
    let (input, r) = load_stage(stage)?;
    let rep = PanelReport::new(&input, &r.stage, &r.shaped, &r.occupancy);
    write_file(svg, rep.to_svg())?;
    write_file(&svg.with_extension("panels.csv"), rep.to_csv())?;
    Ok(())
}

/// Generate, impair, shape, analyze and draw one scenario into `dir`.
pub fn cmd_run(cfg: &ScenarioConfig, dir: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let file = |name: &str| dir.join(name);

    let sent = generate(cfg)?;
    write_file(&file("trace.csv"), write_trace_csv(&sent))?;
    let ch = cfg.channel.unwrap_or_default();
    let received = apply_channel(&sent, &ch).map_err(usage)?;
    write_file(&file("received.csv"), write_trace_csv(&received))?;

    let window = cfg.analysis.window_us;
    let before = measure(&received, window).map_err(usage)?;
    write_metrics(&format!("{}/before.", dir.display()), &before)?;
    if cfg.pipeline.is_empty() {
        let _ = out.write_all(summary_csv(&before.summary_lines()).as_bytes());
        return insufficient(&before).map_or(Ok(()), |e| Err(usage(e)));
    }

    let prefix = format!("{}/shape.", dir.display());
    let (_, results) = shape_and_write(cfg, &received, &prefix)?;
    let last = results.last().expect("pipeline is nonempty");
    let c = compare(&received, last, window).map_err(usage)?;
    write_metrics(&format!("{}/after.", dir.display()), &c.after)?;
    write_file(&file("comparison.csv"), comparison_csv(&c))?;

    for k in 0..results.len() {
        let svg = file(&format!("{}.stage{k}.svg", cfg.analysis.svg_name));
        cmd_report(&stage_prefix(&prefix, k), &svg)?;
    }
    let _ = out.write_all(comparison_csv(&c).as_bytes());
    insufficient(&c.before)
        .or_else(|| insufficient(&c.after))
        .map_or(Ok(()), |e| Err(usage(e)))
}

#[derive(Debug, Parser)]
#[command(
    name = "rtpshape",
    version,
    about = "Leaky/token bucket shaping and jitter analysis for RTP streams"
)]
struct Args {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a sender trace from a scenario config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a trace through the configured shaper pipeline.
    Shape {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Output file prefix; stage k writes `<prefix>stage<k>.*`.
        #[arg(long)]
        output: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Measure jitter, PDV, loss and throughput; with a second input (a
    /// shape stage prefix) compare before and after shaping.
    Analyze {
        #[arg(long, required = true, num_args = 1, action = clap::ArgAction::Append)]
        input: Vec<String>,
        /// Output file prefix for the metric CSVs.
        #[arg(long)]
        output: Option<String>,
        /// Take `analysis.window_us` from this config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        window_us: Option<u64>,
    },
    /// Draw the panel figure of one shape stage.
    Report {
        /// Stage prefix, e.g. `out/shape.stage0`.
        #[arg(long)]
        input: String,
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate, impair, shape, analyze and draw in one go.
    Run {
        #[arg(long, required = true, action = clap::ArgAction::Append)]
        config: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Generate {
            config,
            output,
            seed,
        } => cmd_generate(&config, &output, seed, out),
        Command::Shape {
            config,
            input,
            output,
            seed,
        } => cmd_shape(&config, &input, &output, seed, out),
        Command::Analyze {
            input,
            output,
            config,
            window_us,
        } => {
            if input.len() > 2 {
                return Err(usage("analyze takes one or two --input values"));
            }
            let window = match (window_us, config) {
                (Some(w), _) => w,
                (None, Some(c)) => load_config(&c, None)?.analysis.window_us,
                (None, None) => 1_000_000,
            };
            if window == 0 {
                return Err(usage("--window-us must be >= 1"));
            }
            cmd_analyze(
                Path::new(&input[0]),
                input.get(1).map(String::as_str),
                output.as_deref(),
                window,
                out,
            )
        }
        Command::Report { input, output } => cmd_report(&input, &output),
        Command::Run {
            config,
            output,
            seed,
        } => run_many(&config, &output, seed, out),
    }
}

/// Runs each scenario; several configs run in parallel, each into
/// `<output>/<config stem>/`.
fn run_many(
    configs: &[PathBuf],
    output: &Path,
    seed: Option<u64>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    if let [one] = configs {
        let cfg = load_config(one, seed)?;
        return cmd_run(&cfg, output, out);
    }
    let loaded = configs
        .iter()
        .map(|c| load_config(c, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let results: Vec<(Vec<u8>, Result<(), CliError>)> = std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .zip(&loaded)
            .map(|(path, cfg)| {
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                let dir = output.join(stem);
                s.spawn(move || {
                    let mut buf = Vec::new();
                    let r = cmd_run(cfg, &dir, &mut buf);
                    (buf, r)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scenario thread panicked"))
            .collect()
    });
    let mut first_err = None;
    for (path, (buf, r)) in configs.iter().zip(results) {
        let _ = writeln!(out, "# {}", path.display());
        let _ = out.write_all(&buf);
        if let Err(e) = r {
            first_err.get_or_insert(e);
        }
    }
    first_err.map_or(Ok(()), Err)
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = err.write_all(text.as_bytes());
            } else {
                let _ = out.write_all(text.as_bytes());
            }
            return code;
        }
    };
    match dispatch(args.cmd, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "rtpshape: {e}");
            e.exit_code()
        }
    }
}
