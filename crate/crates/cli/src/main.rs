//! `harmonia` command-line front end.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use harmonia::controls::InputMode;
use harmonia::engine::{create_engine, EngineConfig, EngineError, ParamError, ParamUpdate, PacedDriver};
use harmonia::offline::{
    analyze_signal, read_wav, render_offline, write_wav, OfflineError, RenderInput, RenderJob, WavFormat,
    DEFAULT_BUFFER_LEN,
};
use harmonia::timbre::scan_models;
use harmonia_server::{ControlServer, ServerConfig, DEFAULT_TELEMETRY_HZ};

/// Exit statuses, distinct per failure class.
mod exit {
    pub const FAILURE: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const INPUT: u8 = 3;
    pub const MODEL: u8 = 4;
    pub const OUTPUT: u8 = 5;
    pub const DEVICE: u8 = 6;
}

#[derive(Parser)]
#[command(name = "harmonia", version, about = "Harmonic-plus-noise synthesizer driven by MIDI or pitch tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RootArg {
    /// Directory holding one subfolder per timbre model.
    #[arg(long, env = "HARMONIA_MODEL_ROOT", default_value = "models")]
    root: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Line,
    Midi,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Pcm16,
    Float32,
}

#[derive(Subcommand)]
enum Command {
    /// Render a WAV file or an event script through a timbre model.
    Render(RenderArgs),
    /// Print per-buffer pitch and loudness of a WAV file as CSV.
    Analyze {
        #[arg(long = "in", value_name = "WAV")]
        input: PathBuf,
        /// Samples per row.
        #[arg(long, default_value_t = DEFAULT_BUFFER_LEN)]
        hop: usize,
    },
    /// List the timbre models under a root directory.
    Models {
        #[command(flatten)]
        root: RootArg,
    },
    /// Run the engine live and serve the control protocol.
    Live(LiveArgs),
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

fn engine_code(e: &EngineError) -> u8 {
    match e {
        EngineError::Model(_) => exit::MODEL,
        EngineError::Config(_) => exit::USAGE,
        _ => exit::FAILURE,
    }
}

fn param_code(e: &ParamError) -> u8 {
    match e {
        ParamError::ModelLoad { .. } => exit::MODEL,
        _ => exit::USAGE,
    }
}

impl From<OfflineError> for Failure {
    fn from(e: OfflineError) -> Self {
        let code = match &e {
            OfflineError::Input { .. } | OfflineError::Script { .. } | OfflineError::Analysis(_) => exit::INPUT,
            OfflineError::Engine(e) => engine_code(e),
            OfflineError::Param(e) => param_code(e),
            OfflineError::Output { .. } => exit::OUTPUT,
        };
        Failure::new(code, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Render(args) => render(args),
        Command::Analyze { input, hop } => analyze(&input, hop),
        Command::Models { root } => models(&root.root),
        Command::Live(args) => live(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[derive(Args)]
struct RenderArgs {
    /// Input: a .wav file (line mode) or an event script CSV (MIDI mode).
    #[arg(long = "in", value_name = "WAV|EVENTS")]
    input: PathBuf,
    #[arg(long)]
    model: String,
    /// Overrides the mode implied by the input type.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Parameter override, e.g. `reverb_mix=0.3`; repeatable.
    #[arg(long = "set", value_name = "K=V")]
    set: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-buffer spectrogram as CSV.
    #[arg(long, value_name = "CSV")]
    spectrogram: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "pcm16")]
    format: Format,
    #[arg(long, default_value_t = DEFAULT_BUFFER_LEN)]
    buffer: usize,
    /// Sample rate for event-script renders.
    #[arg(long, default_value_t = 44_100)]
    sample_rate: u32,
    #[command(flatten)]
    root: RootArg,
}

fn render(args: RenderArgs) -> Result<(), Failure> {
    let updates = args
        .set
        .iter()
        .map(|s| ParamUpdate::parse_assignment(s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::new(exit::USAGE, e.to_string()))?;
    let mut input = RenderInput::load(&args.input)?;
    if let RenderInput::Events { sample_rate, .. } = &mut input {
        *sample_rate = args.sample_rate as f64;
    }
    let mut job = RenderJob::new(input, &args.root.root, &args.model);
    job.mode = args.mode.map(|m| match m {
        Mode::Line => InputMode::Line,
        Mode::Midi => InputMode::Midi,
    });
    job.updates = updates;
    job.seed = args.seed;
    job.buffer_len = args.buffer;
    let rendered = render_offline(&job)?;

    let format = match args.format {
        Format::Pcm16 => WavFormat::Pcm16,
        Format::Float32 => WavFormat::Float32,
    };
    write_wav(&args.out, &rendered.frames, rendered.sample_rate as u32, format)?;
    if let Some(path) = &args.spectrogram {
        std::fs::write(path, rendered.spectrogram_csv())
            .map_err(|e| Failure::new(exit::OUTPUT, format!("cannot write {}: {e}", path.display())))?;
    }
    eprintln!(
        "rendered {:.2} s with {} to {}",
        rendered.duration(),
        args.model,
        args.out.display()
    );
    Ok(())
}

fn analyze(input: &Path, hop: usize) -> Result<(), Failure> {
    let (samples, sample_rate) = read_wav(input)?;
    let rows = analyze_signal(&samples, sample_rate, hop)?;
    let mut out = String::from("time_s,f0_hz,confidence,loudness_db\n");
    for r in rows {
        let f0 = r.frame.f0_hz.map(|f| format!("{f:.3}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{:.6},{f0},{:.4},{:.2}",
            r.time, r.frame.confidence, r.frame.loudness_db
        );
    }
    print!("{out}");
    Ok(())
}

fn models(root: &Path) -> Result<(), Failure> {
    let found = scan_models(root).map_err(|e| Failure::new(exit::INPUT, e.to_string()))?;
    if found.is_empty() {
        return Err(Failure::new(exit::FAILURE, format!("no models found under {}", root.display())));
    }
    let mut loaded = 0;
    println!("{:<16} {:>4} {:>4} {:>7}", "name", "K", "N", "grid");
    for (name, result) in found {
        match result {
            Ok(m) => {
                loaded += 1;
                println!(
                    "{:<16} {:>4} {:>4} {:>7}",
                    m.name,
                    m.harmonics,
                    m.noise_bins,
                    format!("{}x{}", m.pitch_grid.len(), m.loudness_grid.len())
                );
            }
            Err(e) => eprintln!("invalid {name}: {e}"),
        }
    }
    if loaded == 0 {
        return Err(Failure::new(exit::MODEL, "no model under the root loads"));
    }
    Ok(())
}

#[derive(Args)]
struct LiveArgs {
    #[arg(long)]
    model: String,
    /// TCP port; 0 picks a free one.
    #[arg(long, default_value_t = 8420)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 256)]
    buffer: usize,
    #[arg(long, default_value_t = 44_100)]
    sample_rate: u32,
    #[arg(long, default_value_t = DEFAULT_TELEMETRY_HZ)]
    telemetry_hz: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    root: RootArg,
}

fn live(args: LiveArgs) -> Result<(), Failure> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let config = EngineConfig::new(args.sample_rate as f64, args.buffer, &args.root.root, &args.model).with_seed(args.seed);
    let (engine, handle) = create_engine(config).map_err(|e| Failure::new(engine_code(&e), e.to_string()))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::new(exit::FAILURE, e.to_string()))?;
    runtime.block_on(async move {
        let server = ControlServer::bind(
            (args.host.as_str(), args.port),
            handle,
            ServerConfig {
                telemetry_hz: args.telemetry_hz,
            },
        )
        .await
        .map_err(|e| Failure::new(exit::DEVICE, format!("cannot listen on {}:{}: {e}", args.host, args.port)))?;
        let addr = server.local_addr().map_err(|e| Failure::new(exit::DEVICE, e.to_string()))?;

        eprintln!("warning: no audio device backend in this build; the engine runs on an internal clock");
        eprintln!("warning: no MIDI input device; control the engine over the WebSocket protocol");
        let driver = PacedDriver::spawn(engine).map_err(|e| Failure::new(exit::DEVICE, e.to_string()))?;
        println!("listening on ws://{addr}/ws");

        let served = server
            .run(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await;
        driver.stop();
        eprintln!("shut down");
        served.map_err(|e| Failure::new(exit::DEVICE, e.to_string()))
    })
}
