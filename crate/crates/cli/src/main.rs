mod feed;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use irrigation_core::controller::{Controller, ControllerMode, CycleConfig};
use irrigation_core::mlp::{
    agreement_on_grid, generate_dataset, train, Model, NormalizationRanges, Optimizer,
    TrainingConfig, WeightsDocument,
};
use irrigation_core::rulebase::{classify, Bands, Level, SensorReading};
use irrigation_core::simulator::{run_closed_loop, ClimateProfile, PlantParams, SimState};
use irrigation_core::telemetry::{write_ndjson, EventKind};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "irrigate",
    version,
    about = "Closed-loop irrigation controller toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the decision network on a rule-labeled grid and save its weights.
    Train(TrainArgs),
    /// Run the plant simulator against the controller and write the event log.
    Simulate(SimulateArgs),
    /// Start the telemetry service.
    Serve(ServeArgs),
    /// Drive a running service with a simulated field in real time.
    Feed(FeedArgs),
    /// Print the rule base for all 27 band combinations.
    OracleTable(OracleTableArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Args)]
struct TrainArgs {
    /// Grid points per axis for the training set.
    #[arg(long, default_value_t = 11)]
    grid: usize,
    /// Grid points per axis for the held-out agreement check.
    #[arg(long, default_value_t = 13)]
    eval_grid: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Where to write the weights document.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    optimizer: OptimizerArg,
    /// Stop early at this training accuracy.
    #[arg(long, default_value_t = 0.99)]
    target_accuracy: f64,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CycleArgs {
    /// Pump cycle length in seconds; Full runs for the whole period.
    #[arg(long, default_value_t = 10.0)]
    period: f64,
    /// Seconds between sensor polls.
    #[arg(long, default_value_t = 2.0)]
    poll_interval: f64,
    /// Minimum seconds between a pump stop and the next start.
    #[arg(long, default_value_t = 5.0)]
    min_restart_gap: f64,
}

impl CycleArgs {
    fn config(&self) -> CycleConfig {
        CycleConfig {
            period_s: self.period,
            poll_interval_s: self.poll_interval,
            min_restart_gap_s: self.min_restart_gap,
        }
    }
}

#[derive(Args)]
struct FieldArgs {
    /// Starting soil moisture in percent.
    #[arg(long, default_value_t = 5.0)]
    initial_moisture: f64,
    /// Mean air temperature in °C.
    #[arg(long, default_value_t = 20.0)]
    temperature: f64,
    /// Mean relative humidity in percent.
    #[arg(long, default_value_t = 30.0)]
    humidity: f64,
    /// Daily temperature swing amplitude in °C (humidity swings opposite).
    #[arg(long, default_value_t = 0.0)]
    temperature_amplitude: f64,
    /// Daily humidity swing amplitude in percent.
    #[arg(long, default_value_t = 0.0)]
    humidity_amplitude: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl FieldArgs {
    fn climate(&self) -> ClimateProfile {
        ClimateProfile {
            temperature_mean_c: self.temperature,
            temperature_amplitude_c: self.temperature_amplitude,
            humidity_mean_pct: self.humidity,
            humidity_amplitude_pct: self.humidity_amplitude,
        }
    }

    fn params(&self) -> PlantParams {
        PlantParams {
            seed: self.seed,
            ..PlantParams::default()
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// auto, rule or manual:<full|half|off>.
    #[arg(long, default_value = "rule")]
    mode: ControllerMode,
    /// Weights document; required for auto mode.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Simulated seconds.
    #[arg(long, default_value_t = 3600.0)]
    duration: f64,
    /// Event log destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the run summary as JSON.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    field: FieldArgs,
    #[command(flatten)]
    cycle: CycleArgs,
}

#[derive(Args)]
struct ServeArgs {
    /// TCP port for the sensor line protocol.
    #[arg(long, env = "IRRIGATE_PORT", default_value_t = 7070)]
    port: u16,
    /// HTTP and WebSocket port.
    #[arg(long, env = "IRRIGATE_WS_PORT", default_value_t = 8080)]
    ws_port: u16,
    #[arg(long, env = "IRRIGATE_BIND", default_value = "127.0.0.1")]
    bind: IpAddr,
    /// NDJSON event log, replayed on start.
    #[arg(long, env = "IRRIGATE_LOG")]
    log: Option<PathBuf>,
    /// Mode to switch to on start; defaults to the logged mode, or rule.
    #[arg(long, env = "IRRIGATE_MODE")]
    mode: Option<ControllerMode>,
    /// Weights document for auto mode.
    #[arg(long, env = "IRRIGATE_WEIGHTS")]
    weights: Option<PathBuf>,
    #[command(flatten)]
    cycle: CycleArgs,
}

#[derive(Args)]
struct FeedArgs {
    /// Sensor protocol address of a running service.
    #[arg(long, env = "IRRIGATE_CONNECT", default_value = "127.0.0.1:7070")]
    connect: String,
    /// Wall-clock seconds to run.
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    /// Seconds between readings.
    #[arg(long, default_value_t = 2.0)]
    poll_interval: f64,
    #[command(flatten)]
    field: FieldArgs,
}

#[derive(Args)]
struct OracleTableArgs {
    /// One JSON object per line instead of a table.
    #[arg(long)]
    json: bool,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(args) => run_train(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Serve(args) => run_serve(args),
        Command::Feed(args) => feed::run(args),
        Command::OracleTable(args) => run_oracle_table(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    WeightsDocument::load(path)
        .and_then(|doc| doc.model())
        .map_err(|e| CliError::Runtime(format!("cannot load weights {}: {e}", path.display())))
}

fn controller(
    cycle: CycleConfig,
    mode: Option<ControllerMode>,
    weights: Option<&Path>,
) -> Result<Controller, CliError> {
    let model = weights.map(load_model).transpose()?;
    let ctl = Controller::new(cycle, model).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(mode) = mode {
        ctl.check_mode(mode)
            .map_err(|_| CliError::Usage(format!("mode {mode} needs --weights")))?;
    }
    Ok(ctl)
}

fn run_train(args: TrainArgs) -> Result<(), CliError> {
    if args.grid < 2 || args.eval_grid < 2 {
        return Err(CliError::Usage(
            "--grid and --eval-grid need at least 2 points per axis".into(),
        ));
    }
    let config = TrainingConfig {
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        target_accuracy: args.target_accuracy,
        optimizer: match args.optimizer {
            OptimizerArg::Adam => Optimizer::adam(),
            OptimizerArg::Sgd => Optimizer::Sgd,
        },
    };
    config
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let ranges = NormalizationRanges::default();
    let dataset = generate_dataset(args.grid, &ranges).map_err(CliError::runtime)?;

    let started = Instant::now();
    let report = train(&dataset, &config).map_err(CliError::runtime)?;
    let elapsed = started.elapsed();
    let agreement =
        agreement_on_grid(&report.weights, &ranges, args.eval_grid).map_err(CliError::runtime)?;

    WeightsDocument::new(&report.weights, ranges, args.seed)
        .save(&args.out)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", args.out.display())))?;

    if args.json {
        let summary = json!({
            "seed": args.seed,
            "grid": args.grid,
            "epochs_run": report.epochs_run,
            "reached_target": report.reached_target,
            "initial_loss": report.initial_loss,
            "final_loss": report.final_loss(),
            "train_accuracy": report.train_accuracy,
            "eval_grid": args.eval_grid,
            "oracle_agreement": agreement,
            "seconds": elapsed.as_secs_f64(),
            "weights": args.out,
        });
        println!("{summary}");
    } else {
        println!(
            "trained {} epochs in {:.2} s: loss {:.4} -> {:.4}, training accuracy {:.2}%",
            report.epochs_run,
            elapsed.as_secs_f64(),
            report.initial_loss,
            report.final_loss(),
            report.train_accuracy * 100.0
        );
        println!(
            "oracle agreement on the {n}x{n}x{n} grid: {:.2}%",
            agreement * 100.0,
            n = args.eval_grid
        );
        println!("weights written to {}", args.out.display());
    }
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> Result<(), CliError> {
    if !(args.duration > 0.0 && args.duration.is_finite()) {
        return Err(CliError::Usage("--duration must be positive".into()));
    }
    let ctl = controller(
        args.cycle.config(),
        Some(args.mode),
        args.weights.as_deref(),
    )?;
    let params = args.field.params();
    params
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let state = SimState::new(
        args.field.initial_moisture,
        args.field.climate(),
        params.seed,
    );

    let started = Instant::now();
    let run = run_closed_loop(state, &params, ctl, args.mode, args.duration)
        .map_err(CliError::runtime)?;
    let elapsed = started.elapsed();

    let write_err = |e: io::Error| CliError::Runtime(format!("cannot write event log: {e}"));
    match &args.out {
        Some(path) => {
            let file = File::create(path)
                .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
            write_ndjson(BufWriter::new(file), &run.events).map_err(write_err)?;
        }
        None => match write_ndjson(io::stdout().lock(), &run.events) {
            Err(e) if e.kind() == io::ErrorKind::BrokenPipe => return Ok(()),
            other => other.map_err(write_err)?,
        },
    }

    let activations = run
        .events
        .iter()
        .filter(|e| e.kind == EventKind::PumpStateChanged { on: true })
        .count();
    let pump_on_s = run
        .trace
        .windows(2)
        .filter(|w| w[0].pump_on)
        .map(|w| (w[1].time_ms - w[0].time_ms) as f64 / 1000.0)
        .sum::<f64>();
    let (min_m, max_m) = run.trace.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| {
        (lo.min(p.soil_moisture_pct), hi.max(p.soil_moisture_pct))
    });
    let summary = json!({
        "events": run.events.len(),
        "pump_activations": activations,
        "pump_on_s": pump_on_s,
        "final_moisture_pct": run.final_state.soil_moisture_true,
        "min_moisture_pct": min_m,
        "max_moisture_pct": max_m,
        "simulated_s": args.duration,
        "wall_s": elapsed.as_secs_f64(),
    });
    let text = if args.json {
        summary.to_string()
    } else {
        format!(
            "{} events, {activations} pump activations ({pump_on_s:.0} s on), soil {:.1}% final, {min_m:.1}-{max_m:.1}% range, {:.3} s wall",
            run.events.len(),
            run.final_state.soil_moisture_true,
            elapsed.as_secs_f64()
        )
    };
    // keep stdout clean when it carries the log
    if args.out.is_some() {
        println!("{text}");
    } else {
        eprintln!("{text}");
    }
    Ok(())
}

fn run_serve(args: ServeArgs) -> Result<(), CliError> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let ctl = controller(args.cycle.config(), args.mode, args.weights.as_deref())?;
    let mut config = irrigation_service::ServiceConfig::new(
        SocketAddr::new(args.bind, args.port),
        SocketAddr::new(args.bind, args.ws_port),
    );
    config.log_path = args.log;
    config.mode = args.mode;
    config.controller = ctl;

    let runtime = tokio::runtime::Runtime::new().map_err(CliError::runtime)?;
    runtime.block_on(async move {
        let service = irrigation_service::start(config)
            .await
            .map_err(CliError::runtime)?;
        println!(
            "listening sensor={} http={}",
            service.sensor_addr, service.http_addr
        );
        let _ = io::stdout().flush();
        shutdown_signal().await;
        log::info!("shutting down");
        let status = service.shutdown().await.map_err(CliError::runtime)?;
        log::info!("stopped after {} events", status.event_count);
        Ok(())
    })
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("install SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

/// A reading inside each band, used to show the table is what `classify` does.
fn representative(level: Level, (low, high): (f64, f64)) -> f64 {
    match level {
        Level::Low => low - 5.0,
        Level::Medium => (low + high) / 2.0,
        Level::High => high + 5.0,
    }
}

fn run_oracle_table(args: OracleTableArgs) -> Result<(), CliError> {
    use irrigation_core::rulebase::{
        HUMIDITY_BANDS_PCT, SOIL_MOISTURE_BANDS_PCT, TEMPERATURE_BANDS_C,
    };
    let mut out = io::stdout().lock();
    let result = (|| -> io::Result<()> {
        if !args.json {
            writeln!(
                out,
                "temperature  humidity  soil    duty  example (t_c, h_pct, m_pct)"
            )?;
        }
        for bands in Bands::all() {
            let t = representative(bands.temperature, TEMPERATURE_BANDS_C);
            let h = representative(bands.humidity, HUMIDITY_BANDS_PCT);
            let m = representative(bands.soil_moisture, SOIL_MOISTURE_BANDS_PCT);
            let reading = SensorReading::new(t, h, m, 0).expect("representatives are valid");
            let duty = bands.duty();
            debug_assert_eq!(classify(&reading).ok(), Some(duty));
            let line = if args.json {
                json!({
                    "temperature": bands.temperature.to_string().to_lowercase(),
                    "humidity": bands.humidity.to_string().to_lowercase(),
                    "soil_moisture": bands.soil_moisture.to_string().to_lowercase(),
                    "duty": duty,
                    "fraction": duty.fraction(),
                    "example": { "t_c": t, "h_pct": h, "m_pct": m },
                })
                .to_string()
            } else {
                format!(
                    "{:<12} {:<9} {:<7} {:<5} ({t}, {h}, {m})",
                    bands.temperature.to_string(),
                    bands.humidity.to_string(),
                    bands.soil_moisture.to_string(),
                    duty.as_str()
                )
            };
            writeln!(out, "{line}")?;
        }
        Ok(())
    })();
    match result {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(CliError::runtime(e)),
        _ => Ok(()),
    }
}
