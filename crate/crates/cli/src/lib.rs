//! Command line front end for `dite-core`: model summaries, complexity
//! reports, hyper-parameter sweeps, verification against expectation files,
//! forward passes and gradient checks.
//!
//! Exit codes: 0 on success, 1 when a verification or check fails, 2 on
//! usage errors (bad flags, missing or malformed files, invalid configs).

pub mod config;
pub mod expectations;
pub mod formats;
mod render;

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dite_core::checks::gradient_suite;
use dite_core::complexity::{missing_verdict, verify_against_paper, ComplexityReport, Verdict};
use dite_core::network::{
    analyze, export_summary, sweep_hyperparams, Keypoint, Model, ModelConfig, DEFAULT_SEED,
};
use dite_core::{Shape, Tensor};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::formats::Precision;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or unusable input files; exit code 2.
    Usage(String),
    /// A verification or check failed; exit code 1.
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Check(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Check(m) => f.write_str(m),
        }
    }
}

impl From<dite_core::Error> for CliError {
    fn from(e: dite_core::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn io_error(path: &std::path::Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| CliError::Usage(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(
    name = "dite",
    version,
    about = "Dynamic lightweight high-resolution pose network tools"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// `18`, `30` or a configuration id such as `lite18+acm` or
    /// `dite18+G4444+N1111`. Defaults to `18`.
    #[arg(long, conflicts_with = "config")]
    pub variant: Option<String>,
    /// JSON architecture file; relative paths are also looked up in
    /// `$DITE_CONFIG_DIR`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input size as HxW; defaults to the configuration's input.
    #[arg(long, value_parser = config::parse_input)]
    pub input: Option<(usize, usize)>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

impl ModelArgs {
    fn resolve(&self) -> Result<(ModelConfig, (usize, usize)), CliError> {
        let cfg = match (&self.variant, &self.config) {
            (_, Some(path)) => config::from_file(path)?,
            (Some(v), None) => config::from_variant(v)?,
            (None, None) => ModelConfig::dite18(),
        };
        let input = self.input.unwrap_or((cfg.input[0], cfg.input[1]));
        cfg.check_input(input.0, input.1)?;
        Ok((cfg, input))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Args, Debug, Clone)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Write to this file instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Grouping {
    Stage,
    Block,
    Branch,
    Category,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Stages and per-layer listing of a built model.
    Summary {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Parameter and multiply-add report.
    Analyze {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutputArgs,
        /// Extra breakdowns for the table format.
        #[arg(long, value_enum, value_delimiter = ',')]
        by: Vec<Grouping>,
    },
    /// Grid over per-branch SCS groups (G) and kernel counts (N).
    Sweep {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutputArgs,
        /// Comma-separated G vectors, one digit per branch.
        #[arg(long, value_delimiter = ',', default_values_t = default_grid(&["1111", "1124", "4211", "4444"]))]
        groups: Vec<String>,
        /// Comma-separated N vectors, one digit per branch.
        #[arg(long, value_delimiter = ',', default_values_t = default_grid(&["1111", "4421", "1244", "4444"]))]
        kernels: Vec<String>,
    },
    /// Compares analyses against expectation CSV files; exits 1 on any
    /// mismatch. Without files, the bundled expectations are used.
    Verify {
        files: Vec<PathBuf>,
        /// Configuration id whose per-stage totals are subtracted in the
        /// diff of failing entries.
        #[arg(long)]
        reference: Option<String>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Runs the network on a fixture or a seeded random image.
    Forward {
        #[command(flatten)]
        model: ModelArgs,
        /// Input tensor fixture (1×3×H×W).
        #[arg(long)]
        fixture: Option<PathBuf>,
        /// Weight checkpoint to load instead of seeded initialisation.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Write the heatmaps as an f32 fixture.
        #[arg(long)]
        heatmaps: Option<PathBuf>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Finite-difference gradient suite on small blocks and the tiny model.
    Gradcheck {
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Writes the seeded initial weights of a model as a checkpoint.
    Checkpoint {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        output: PathBuf,
    },
}

fn default_grid(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn digits(s: &str) -> Result<Vec<usize>, CliError> {
    s.chars()
        .map(|c| c.to_digit(10).map(|d| d as usize))
        .collect::<Option<Vec<_>>>()
        .filter(|v| !v.is_empty())
        .ok_or_else(|| CliError::Usage(format!("expected one digit per branch, got `{s}`")))
}

fn emit(out: &OutputArgs, text: &str) -> Result<(), CliError> {
    match &out.output {
        Some(path) => fs::write(path, text).map_err(io_error(path)),
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(text.as_bytes())
                .map_err(|e| CliError::Usage(e.to_string()))
        }
    }
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable");
    s.push('\n');
    s
}

fn csv_rows<T: Serialize>(rows: impl IntoIterator<Item = T>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("flat row");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8")
}

fn build(cfg: &ModelConfig, seed: u64) -> Result<Model<f32>, CliError> {
    Ok(Model::build(cfg, seed)?)
}

#[derive(Serialize)]
struct NodeRow<'a> {
    name: &'a str,
    kind: &'a str,
    category: String,
    output: String,
    params: u64,
    flops: u64,
}

fn node_rows(report: &ComplexityReport) -> impl Iterator<Item = NodeRow<'_>> {
    report.nodes.iter().map(|n| NodeRow {
        name: &n.name,
        kind: &n.kind,
        category: format!("{:?}", n.category).to_lowercase(),
        output: n.output.to_string(),
        params: n.params,
        flops: n.flops,
    })
}

fn summary(model: &ModelArgs, out: &OutputArgs) -> Result<(), CliError> {
    let (cfg, input) = model.resolve()?;
    let s = export_summary(&build(&cfg, model.seed)?, input)?;
    let text = match out.format {
        Format::Json => json(&s),
        Format::Csv => csv_rows(node_rows(&ComplexityReport::from_nodes(
            input,
            s.layers.clone(),
        ))),
        Format::Table => render::summary(&s),
    };
    emit(out, &text)
}

fn analyze_cmd(model: &ModelArgs, out: &OutputArgs, by: &[Grouping]) -> Result<(), CliError> {
    let (cfg, input) = model.resolve()?;
    let report = analyze(&build(&cfg, model.seed)?, input)?;
    let text = match out.format {
        Format::Json => json(&report),
        Format::Csv => csv_rows(node_rows(&report)),
        Format::Table => render::report(&report, by),
    };
    emit(out, &text)
}

#[derive(Serialize)]
struct SweepRow {
    groups: String,
    kernels: String,
    params: Option<u64>,
    mparams: Option<f64>,
    gflops: Option<f64>,
    error: Option<String>,
}

fn sweep(
    model: &ModelArgs,
    out: &OutputArgs,
    groups: &[String],
    kernels: &[String],
) -> Result<(), CliError> {
    let (cfg, input) = model.resolve()?;
    let gs = groups
        .iter()
        .map(|s| digits(s))
        .collect::<Result<Vec<_>, _>>()?;
    let ns = kernels
        .iter()
        .map(|s| digits(s))
        .collect::<Result<Vec<_>, _>>()?;
    let cells = sweep_hyperparams(&cfg, &gs, &ns, input);
    let text = match out.format {
        Format::Json => json(&cells),
        Format::Csv | Format::Table => {
            let join = |v: &[usize]| v.iter().map(|d| d.to_string()).collect::<String>();
            let rows: Vec<SweepRow> = cells
                .iter()
                .map(|c| {
                    let ok = c.result.as_ref().ok();
                    SweepRow {
                        groups: join(&c.groups),
                        kernels: join(&c.kernels),
                        params: ok.map(|t| t.params),
                        mparams: ok.map(|t| t.mparams()),
                        gflops: ok.map(|t| t.gflops()),
                        error: c.result.as_ref().err().cloned(),
                    }
                })
                .collect();
            if out.format == Format::Csv {
                csv_rows(rows)
            } else {
                render::sweep(
                    input,
                    rows.iter()
                        .map(|r| (&r.groups, &r.kernels, r.mparams, r.gflops, &r.error)),
                )
            }
        }
    };
    emit(out, &text)
}

#[derive(Serialize)]
struct VerdictRow<'a> {
    source: &'a str,
    config_id: &'a str,
    input_h: usize,
    input_w: usize,
    expected_mparams: f64,
    measured_mparams: Option<f64>,
    params_rel_error: f64,
    expected_mflops: f64,
    measured_mflops: Option<f64>,
    flops_rel_error: f64,
    passed: bool,
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct SourcedVerdict {
    source: String,
    #[serde(flatten)]
    verdict: Verdict,
}

fn verify(files: &[PathBuf], reference: Option<&str>, out: &OutputArgs) -> Result<(), CliError> {
    let sets = if files.is_empty() {
        expectations::bundled()?
    } else {
        files
            .iter()
            .map(|p| {
                let text = fs::read_to_string(p).map_err(io_error(p))?;
                Ok((
                    p.display().to_string(),
                    expectations::parse(&text)
                        .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
                ))
            })
            .collect::<Result<Vec<_>, CliError>>()?
    };
    let mut cache: HashMap<(String, usize, usize), Result<ComplexityReport, String>> =
        HashMap::new();
    let mut report_for = |id: &str, h: usize, w: usize| -> Result<ComplexityReport, String> {
        cache
            .entry((id.to_string(), h, w))
            .or_insert_with(|| {
                let cfg = config::from_variant(id).map_err(|e| e.to_string())?;
                cfg.check_input(h, w).map_err(|e| e.to_string())?;
                let model = Model::<f32>::build(&cfg, DEFAULT_SEED).map_err(|e| e.to_string())?;
                analyze(&model, (h, w)).map_err(|e| e.to_string())
            })
            .clone()
    };
    let mut verdicts = Vec::new();
    for (source, entries) in &sets {
        for e in entries {
            let v = match report_for(&e.config_id, e.input_h, e.input_w) {
                Ok(r) => {
                    let reference = match reference {
                        Some(id) => {
                            Some(report_for(id, e.input_h, e.input_w).map_err(CliError::Usage)?)
                        }
                        None => None,
                    };
                    verify_against_paper(e, &r, reference.as_ref())
                }
                Err(msg) => missing_verdict(e, msg),
            };
            verdicts.push(SourcedVerdict {
                source: source.clone(),
                verdict: v,
            });
        }
    }
    let failed = verdicts.iter().filter(|v| !v.verdict.passed()).count();
    let text = match out.format {
        Format::Json => json(&verdicts),
        Format::Csv => csv_rows(verdicts.iter().map(|s| {
            let v = &s.verdict;
            VerdictRow {
                source: &s.source,
                config_id: &v.expectation.config_id,
                input_h: v.expectation.input_h,
                input_w: v.expectation.input_w,
                expected_mparams: v.expectation.params,
                measured_mparams: v.measured.map(|t| t.mparams()),
                params_rel_error: v.params_rel_error,
                expected_mflops: v.expectation.mflops,
                measured_mflops: v.measured.map(|t| t.mflops()),
                flops_rel_error: v.flops_rel_error,
                passed: v.passed(),
                error: v.error.as_deref(),
            }
        })),
        Format::Table => render::verdicts(verdicts.iter().map(|s| (s.source.as_str(), &s.verdict))),
    };
    emit(out, &text)?;
    if failed > 0 {
        return Err(CliError::Check(format!(
            "{failed} of {} expectations failed",
            verdicts.len()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct ForwardOutput {
    input: [usize; 4],
    heatmaps: [usize; 4],
    sha256: String,
    keypoints: Vec<Vec<Keypoint>>,
}

fn sha256_hex(t: &Tensor<f32>) -> String {
    let mut h = Sha256::new();
    for v in t.data() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn forward(
    model: &ModelArgs,
    fixture: Option<&PathBuf>,
    weights: Option<&PathBuf>,
    heatmaps: Option<&PathBuf>,
    out: &OutputArgs,
) -> Result<(), CliError> {
    let (cfg, input) = model.resolve()?;
    let mut net = build(&cfg, model.seed)?;
    if let Some(path) = weights {
        let mut r = io::BufReader::new(File::open(path).map_err(io_error(path))?);
        let entries = formats::read_checkpoint(&mut r).map_err(io_error(path))?;
        formats::load_checkpoint(&mut net, &entries).map_err(io_error(path))?;
    }
    let x: Tensor<f32> = match fixture {
        Some(path) => {
            let bytes = fs::read(path).map_err(io_error(path))?;
            formats::read_fixture(&bytes)
                .map_err(io_error(path))?
                .0
                .cast()
        }
        None => dite_core::autograd::probe_weights(Shape::new(1, 3, input.0, input.1), model.seed),
    };
    let pose = net.predict(&x)?;
    if let Some(path) = heatmaps {
        let mut w = BufWriter::new(File::create(path).map_err(io_error(path))?);
        formats::write_fixture(&mut w, &pose.heatmaps, Precision::F32).map_err(io_error(path))?;
        w.flush().map_err(io_error(path))?;
    }
    let result = ForwardOutput {
        input: x.shape().dims(),
        heatmaps: pose.heatmaps.shape().dims(),
        sha256: sha256_hex(&pose.heatmaps),
        keypoints: pose.keypoints,
    };
    let text = match out.format {
        Format::Json => json(&result),
        Format::Csv => {
            #[derive(Serialize)]
            struct Row {
                sample: usize,
                keypoint: usize,
                x: f64,
                y: f64,
                score: f64,
                flat: bool,
            }
            csv_rows(result.keypoints.iter().enumerate().flat_map(|(n, kps)| {
                kps.iter().enumerate().map(move |(k, p)| Row {
                    sample: n,
                    keypoint: k,
                    x: p.x,
                    y: p.y,
                    score: p.score,
                    flat: p.flat,
                })
            }))
        }
        Format::Table => render::forward(
            &result.input,
            &result.heatmaps,
            &result.sha256,
            &result.keypoints,
        ),
    };
    emit(out, &text)
}

fn gradcheck(seed: u64, out: &OutputArgs) -> Result<(), CliError> {
    let suite = gradient_suite(seed)?;
    let failed: Vec<&str> = suite
        .iter()
        .filter(|e| !e.report.passed())
        .map(|e| e.name.as_str())
        .collect();
    let text = match out.format {
        Format::Json => json(&suite),
        Format::Csv => {
            #[derive(Serialize)]
            struct Row<'a> {
                check: &'a str,
                param: &'a str,
                checked: usize,
                max_rel_error: f64,
                tol: f64,
            }
            csv_rows(suite.iter().flat_map(|e| {
                e.report.params.iter().map(move |p| Row {
                    check: &e.name,
                    param: &p.name,
                    checked: p.checked,
                    max_rel_error: p.max_rel_error,
                    tol: e.report.tol,
                })
            }))
        }
        Format::Table => render::gradcheck(&suite),
    };
    emit(out, &text)?;
    if !failed.is_empty() {
        return Err(CliError::Check(format!(
            "gradient check failed: {}",
            failed.join(", ")
        )));
    }
    Ok(())
}

fn checkpoint(model: &ModelArgs, output: &PathBuf) -> Result<(), CliError> {
    let (cfg, _) = model.resolve()?;
    let net = build(&cfg, model.seed)?;
    let mut w = BufWriter::new(File::create(output).map_err(io_error(output))?);
    formats::write_checkpoint(&mut w, &net).map_err(io_error(output))?;
    w.flush().map_err(io_error(output))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Summary { model, out } => summary(model, out),
        Command::Analyze { model, out, by } => analyze_cmd(model, out, by),
        Command::Sweep {
            model,
            out,
            groups,
            kernels,
        } => sweep(model, out, groups, kernels),
        Command::Verify {
            files,
            reference,
            out,
        } => verify(files, reference.as_deref(), out),
        Command::Forward {
            model,
            fixture,
            weights,
            heatmaps,
            out,
        } => forward(
            model,
            fixture.as_ref(),
            weights.as_ref(),
            heatmaps.as_ref(),
            out,
        ),
        Command::Gradcheck { seed, out } => gradcheck(*seed, out),
        Command::Checkpoint { model, output } => checkpoint(model, output),
    }
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dite: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
