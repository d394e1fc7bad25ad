//! `pnpwpe`: batch front end for scene simulation, dereverberation,
//! evaluation and parameter sweeps.
//!
//! Exit codes: 0 success, 2 bad arguments, 3 I/O or file format, 4 numeric
//! failure, 5 denoiser failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pnpwpe_core::denoise::DenoiserSpec;
use pnpwpe_core::error::{Error, Result};
use pnpwpe_core::metrics::{evaluate, MetricReport};
use pnpwpe_core::output::write_atomic;
use pnpwpe_core::pnp::{plateau_iteration, run_pnpwpe, trace_csv, write_trace_csv, PnpParams};
use pnpwpe_core::roomsim::{
    read_scene, simulate_preset_scene, synthetic_speech, write_scene, Noise, Preset, Scene,
};
use pnpwpe_core::signal::{MultichannelTimeSignal, TimeSignal};
use pnpwpe_core::stft::{Stft, StftConfig};
use pnpwpe_core::wav::{read_wav, write_wav, WavEncoding};
use pnpwpe_core::wpe::{run_wpe, WpeParams};

#[derive(Parser)]
#[command(name = "pnpwpe", version, about = "WPE and plug-and-play WPE speech dereverberation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a reverberant (optionally noisy) scene bundle.
    Simulate(SimulateArgs),
    /// Dereverberate a multichannel WAV file.
    Dereverb(DereverbArgs),
    /// Score an estimate against a reference and append a CSV row.
    Evaluate(EvaluateArgs),
    /// Run PnP-WPE over a parameter grid on scene bundles.
    Sweep(SweepArgs),
    /// Record the error trace of PnP-WPE for several penalties.
    Convergence(ConvergenceArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_parser = parse_preset)]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mono clean speech WAV; synthetic speech when absent.
    #[arg(long)]
    clean: Option<PathBuf>,
    /// Length of the synthetic speech in seconds.
    #[arg(long, default_value_t = 4.0)]
    seconds: f64,
    #[arg(long, default_value_t = 16000)]
    sample_rate: u32,
    /// `none`, `wgn`, or a mono noise WAV.
    #[arg(long, default_value = "none")]
    noise: String,
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    snr_db: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Wpe,
    Pnpwpe,
}

#[derive(Args, Clone)]
struct StftArgs {
    /// Frame length in samples; 32 ms by default.
    #[arg(long)]
    frame_len: Option<usize>,
    /// Hop in samples; a quarter frame by default.
    #[arg(long)]
    hop: Option<usize>,
}

impl StftArgs {
    fn config(&self, sample_rate: u32) -> Result<StftConfig> {
        match (self.frame_len, self.hop) {
            (None, None) => StftConfig::for_sample_rate(sample_rate),
            (Some(f), None) => StftConfig::with_frame_len(f),
            (f, Some(h)) => {
                let f = f.unwrap_or(StftConfig::for_sample_rate(sample_rate)?.frame_len());
                StftConfig::new(f, h)
            }
        }
    }
}

#[derive(Args, Clone)]
struct WpeArgs {
    /// Room preset; selects the default filter order (28 for A, 35 for B).
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    /// Taps per channel.
    #[arg(long)]
    filter_order: Option<usize>,
    #[arg(long, default_value_t = 2)]
    delay: usize,
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    /// Iterations of vanilla WPE.
    #[arg(long, default_value_t = 3)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    reference_channel: usize,
}

impl WpeArgs {
    fn params(&self) -> WpeParams {
        let filter_order = self
            .filter_order
            .or(self.preset.map(|p| p.ranges().filter_order))
            .unwrap_or(WpeParams::default().filter_order);
        WpeParams {
            filter_order,
            delay: self.delay,
            epsilon: self.epsilon,
            iterations: self.iterations,
            reference_channel: self.reference_channel,
            ..WpeParams::default()
        }
    }
}

#[derive(Args, Clone)]
struct PnpArgs {
    #[arg(long, default_value_t = 0.1)]
    rho: f64,
    #[command(flatten)]
    admm: AdmmArgs,
}

impl PnpArgs {
    fn params(&self, wpe: WpeParams) -> Result<PnpParams> {
        self.admm.params(wpe, self.rho)
    }
}

/// PnP-WPE settings other than the penalty.
#[derive(Args, Clone)]
struct AdmmArgs {
    #[arg(long, default_value_t = 0.5)]
    mu: f64,
    #[arg(long, default_value_t = 1)]
    inner_iters: usize,
    #[arg(long, default_value_t = 10)]
    outer_iters: usize,
    /// Relative error change that stops iteration early; 0 disables.
    #[arg(long, default_value_t = 1e-4)]
    stop_tol: f64,
    /// identity | soft:TAU | wiener[:QUANTILE:MIN_GAIN] | median:A:B | external:COMMAND
    #[arg(long, default_value = "wiener")]
    denoiser: String,
    /// Working directory for an external denoiser.
    #[arg(long)]
    denoiser_dir: Option<PathBuf>,
}

impl AdmmArgs {
    fn params(&self, wpe: WpeParams, rho: f64) -> Result<PnpParams> {
        Ok(PnpParams {
            wpe,
            rho,
            mu: self.mu,
            inner_iters: self.inner_iters,
            outer_iters: self.outer_iters,
            denoiser: parse_denoiser(&self.denoiser, self.denoiser_dir.as_deref())?,
            stop_tol: self.stop_tol,
        })
    }
}

#[derive(Args)]
struct DereverbArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Pnpwpe)]
    method: Method,
    /// Error trace CSV (pnpwpe only).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value = "float32", value_parser = parse_encoding)]
    encoding: WavEncoding,
    #[command(flatten)]
    stft: StftArgs,
    #[command(flatten)]
    wpe: WpeArgs,
    #[command(flatten)]
    pnp: PnpArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    estimate: PathBuf,
    /// CSV to append to; created with a header if missing.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Value of the `file` column; the estimate path by default.
    #[arg(long)]
    name: Option<String>,
    /// Channel of a multichannel estimate to score.
    #[arg(long, default_value_t = 0)]
    channel: usize,
    #[arg(long)]
    no_align: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReferenceKind {
    /// Direct path plus early reflections.
    Early,
    /// The dry source signal.
    Clean,
}

#[derive(Args)]
struct SweepArgs {
    /// Scene bundle directories written by `simulate`.
    #[arg(long = "scene", required = true, num_args = 1..)]
    scenes: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    rho: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    mu: Vec<f64>,
    /// Filter orders; the preset default of each scene when absent.
    #[arg(long = "filter-order", value_delimiter = ',')]
    filter_orders: Vec<usize>,
    #[arg(long = "denoiser", value_delimiter = ';', default_value = "wiener")]
    denoisers: Vec<String>,
    #[arg(long, value_enum, default_value_t = ReferenceKind::Early)]
    reference: ReferenceKind,
    /// Relative error change that counts as a plateau.
    #[arg(long, default_value_t = 0.05)]
    plateau_tol: f64,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 2)]
    delay: usize,
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    #[arg(long, default_value_t = 10)]
    outer_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    stop_tol: f64,
}

#[derive(Args)]
struct ConvergenceArgs {
    /// Multichannel WAV, or a scene bundle directory.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1")]
    rho: Vec<f64>,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    stft: StftArgs,
    #[command(flatten)]
    wpe: WpeArgs,
    #[command(flatten)]
    admm: AdmmArgs,
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_encoding(s: &str) -> std::result::Result<WavEncoding, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_denoiser(s: &str, dir: Option<&Path>) -> Result<DenoiserSpec> {
    match s.parse()? {
        DenoiserSpec::External { argv, .. } => Ok(DenoiserSpec::External {
            argv,
            working_dir: dir.map(Path::to_path_buf),
        }),
        other => Ok(other),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::InvalidArgument(_) | Error::Geometry(_) => 2,
        Error::Io(_) | Error::Path { .. } | Error::Format(_) => 3,
        Error::Singular { .. } | Error::Metric(_) | Error::Alignment(_) => 4,
        Error::Denoiser { .. } | Error::Protocol(_) => 5,
        Error::Context { .. } => unreachable!("root strips context"),
    }
}

fn mono(path: &Path, channel: usize) -> Result<TimeSignal> {
    read_wav(path)?
        .into_channels()
        .into_iter()
        .nth(channel)
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no channel {channel}", path.display())))
}

fn load_noise(spec: &str) -> Result<Option<Noise>> {
    Ok(match spec {
        "none" => None,
        "wgn" => Some(Noise::White),
        path => {
            let p = Path::new(path);
            let name = p.file_stem().map_or("noise".into(), |s| s.to_string_lossy().into_owned());
            Some(Noise::Recording {
                name,
                signal: mono(p, 0)?,
            })
        }
    })
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let clean = match &args.clean {
        Some(path) => {
            let sig = read_wav(path)?;
            if sig.num_channels() != 1 {
                return Err(Error::Format(format!("{} must be mono", path.display())));
            }
            sig.into_channels().remove(0)
        }
        None => synthetic_speech(args.seed, args.seconds, args.sample_rate)?,
    };
    let noise = load_noise(&args.noise)?;
    let scene = simulate_preset_scene(args.preset, args.seed, &clean, noise.as_ref(), args.snr_db)?;
    write_scene(&scene, &args.out)?;
    print!("{}", scene.meta.to_text());
    Ok(())
}

fn dereverb(args: &DereverbArgs) -> Result<()> {
    let input = read_wav(&args.input)?;
    let stft = Stft::new(args.stft.config(input.sample_rate())?);
    let observed = stft.analyze_multichannel(&input)?;
    let wpe = args.wpe.params();
    let estimate = match args.method {
        Method::Wpe => {
            if args.trace.is_some() {
                return Err(Error::InvalidArgument("--trace needs --method pnpwpe".into()));
            }
            run_wpe(&observed, &wpe)?.estimate
        }
        Method::Pnpwpe => {
            let out = run_pnpwpe(&observed, &args.pnp.params(wpe)?)?;
            if let Some(path) = &args.trace {
                write_trace_csv(&out.state.trace, path)?;
            }
            out.estimate
        }
    };
    let signal = stft.synthesize(&estimate)?.resized(input.len());
    write_wav(&MultichannelTimeSignal::from_mono(signal), &args.output, args.encoding)
}

const METRICS_HEADER: &str = "file,cd,fwsegsnr,frames_used\n";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn metrics_row(name: &str, m: &MetricReport) -> String {
    format!("{},{},{},{}\n", csv_field(name), m.cd, m.fwsegsnr, m.frames_used)
}

/// Appends `row` to the CSV at `path`, writing the header first for a new
/// file. The file is replaced as a whole.
fn append_row(path: &Path, header: &str, row: &str) -> Result<()> {
    let mut text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => header.to_string(),
        Err(e) => return Err(Error::Path { path: path.into(), source: e }),
    };
    if !text.starts_with(header) {
        return Err(Error::Format(format!("{} does not start with the header {}", path.display(), header.trim_end())));
    }
    text.push_str(row);
    write_atomic(path, text.as_bytes())
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let reference = mono(&args.reference, 0)?;
    let estimate = mono(&args.estimate, args.channel)?;
    let report = evaluate(&reference, &estimate, !args.no_align)?;
    let name = args.name.clone().unwrap_or_else(|| args.estimate.display().to_string());
    let row = metrics_row(&name, &report);
    if let Some(csv) = &args.csv {
        append_row(csv, METRICS_HEADER, &row)?;
    }
    print!("{METRICS_HEADER}{row}");
    Ok(())
}

const SWEEP_HEADER: &str = "scene,rho,mu,L,denoiser,cd,fwsegsnr,final_error,plateau_iter,status\n";

struct SweepPoint {
    rho: f64,
    mu: f64,
    filter_order: usize,
    denoiser: DenoiserSpec,
}

struct SweepResult {
    report: MetricReport,
    final_error: f64,
    plateau: Option<usize>,
}

fn sweep_point(scene: &Scene, point: &SweepPoint, args: &SweepArgs) -> Result<SweepResult> {
    let params = PnpParams {
        wpe: WpeParams {
            filter_order: point.filter_order,
            delay: args.delay,
            epsilon: args.epsilon,
            ..WpeParams::default()
        },
        rho: point.rho,
        mu: point.mu,
        outer_iters: args.outer_iters,
        stop_tol: args.stop_tol,
        denoiser: point.denoiser.clone(),
        ..PnpParams::default()
    };
    let stft = Stft::new(StftConfig::for_sample_rate(scene.observed.sample_rate())?);
    let out = run_pnpwpe(&stft.analyze_multichannel(&scene.observed)?, &params)?;
    let estimate = stft.synthesize(&out.estimate)?;
    let reference = match args.reference {
        ReferenceKind::Early => &scene.reference,
        ReferenceKind::Clean => &scene.clean,
    };
    Ok(SweepResult {
        report: evaluate(reference, &estimate, true)?,
        final_error: out.state.trace.last().map_or(0.0, |t| t.error),
        plateau: plateau_iteration(&out.state.trace, args.plateau_tol),
    })
}

fn sweep(args: &SweepArgs) -> Result<()> {
    if args.rho.is_empty() || args.mu.is_empty() || args.denoisers.is_empty() {
        return Err(Error::InvalidArgument("parameter grid is empty".into()));
    }
    let denoisers = args
        .denoisers
        .iter()
        .map(|d| parse_denoiser(d, None))
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from(SWEEP_HEADER);
    for dir in &args.scenes {
        let scene = read_scene(dir)?;
        let name = dir.file_name().map_or(dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        let orders = if args.filter_orders.is_empty() {
            vec![scene.meta.preset.map_or(WpeParams::default().filter_order, |p| p.ranges().filter_order)]
        } else {
            args.filter_orders.clone()
        };
        for &rho in &args.rho {
            for &mu in &args.mu {
                for &filter_order in &orders {
                    for denoiser in &denoisers {
                        let point = SweepPoint { rho, mu, filter_order, denoiser: denoiser.clone() };
                        let label = csv_field(&denoiser.label());
                        let _ = match sweep_point(&scene, &point, args) {
                            Ok(r) => writeln!(
                                csv,
                                "{},{rho},{mu},{filter_order},{label},{},{},{:e},{},ok",
                                csv_field(&name),
                                r.report.cd,
                                r.report.fwsegsnr,
                                r.final_error,
                                r.plateau.map_or("none".to_string(), |p| p.to_string()),
                            ),
                            Err(e) => writeln!(
                                csv,
                                "{},{rho},{mu},{filter_order},{label},nan,nan,nan,none,{}",
                                csv_field(&name),
                                csv_field(&format!("error: {e}")),
                            ),
                        };
                    }
                }
            }
        }
    }
    write_atomic(&args.output, csv.as_bytes())
}

fn convergence(args: &ConvergenceArgs) -> Result<()> {
    if args.rho.is_empty() {
        return Err(Error::InvalidArgument("no penalty values given".into()));
    }
    let (input, preset) = if args.input.is_dir() {
        let scene = read_scene(&args.input)?;
        (scene.observed, scene.meta.preset)
    } else {
        (read_wav(&args.input)?, None)
    };
    let stft = Stft::new(args.stft.config(input.sample_rate())?);
    let observed = stft.analyze_multichannel(&input)?;
    let mut wpe_args = args.wpe.clone();
    wpe_args.preset = wpe_args.preset.or(preset);
    let mut csv = String::from("rho,iteration,error,residual\n");
    for &rho in &args.rho {
        let params = args.admm.params(wpe_args.params(), rho)?;
        let out = run_pnpwpe(&observed, &params)?;
        for line in trace_csv(&out.state.trace).lines().skip(1) {
            let _ = writeln!(csv, "{rho},{line}");
        }
    }
    write_atomic(&args.output, csv.as_bytes())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Dereverb(a) => dereverb(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Sweep(a) => sweep(a),
        Command::Convergence(a) => convergence(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pnpwpe: {e}");
            if let Error::Denoiser { stderr, .. } = e.root() {
                if !stderr.is_empty() {
                    eprintln!("denoiser stderr:\n{stderr}");
                }
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
