use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};

use procdrift::eval::{score_gradual, score_sudden, EvalResult, IntervalDetection, PointDetection};
use procdrift::log::{parse_csv, parse_xes, stream_traces, write_csv, write_xes, EventLog};
use procdrift::pipeline::{detect, write_p_series, ConfigEcho, DriftReport, SCHEMA_VERSION};
use procdrift::{DetectorConfig, DriftSpec, GoldStandard};

const EXIT_PARSE: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "procdrift", version, about = "Detect sudden and gradual drifts in business process event logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Xes,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Detect drifts in an event log and print a JSON report
    Detect {
        input: PathBuf,
        /// Input format; guessed from the extension when omitted
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Initial window size
        #[arg(long, default_value_t = 100)]
        window: usize,
        /// φ = ⌈w / phi_divisor⌉ (default 3, or 5 with --gradual)
        #[arg(long)]
        phi_divisor: Option<usize>,
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
        #[arg(long)]
        min_window: Option<usize>,
        #[arg(long)]
        max_window: Option<usize>,
        /// Trace buffer size (default 20 × window)
        #[arg(long)]
        buffer: Option<usize>,
        /// Keep both windows at the initial size
        #[arg(long)]
        fixed_window: bool,
        /// Echoed in the report; detection itself is deterministic
        #[arg(long)]
        seed: Option<u64>,
        /// Test consecutive sudden drifts for gradual mixtures
        #[arg(long)]
        gradual: bool,
        /// Significance level of the gradual goodness-of-fit test
        #[arg(long, default_value_t = 0.05)]
        gradual_alpha: f64,
        /// Write the p-value series as CSV
        #[arg(long)]
        p_series: Option<PathBuf>,
    },
    /// Generate a synthetic log and its gold standard from a drift spec
    Generate {
        spec: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Output format; guessed from the extension when omitted
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Score a detection report against a gold standard
    Evaluate { report: PathBuf, gold: PathBuf },
}

enum Failure {
    Parse(String),
    Config(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Parse(_) => EXIT_PARSE,
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Io(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Parse(m) | Failure::Config(m) | Failure::Io(m) => m,
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn guess_format(path: &Path, flag: Option<Format>) -> Format {
    flag.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
        _ => Format::Xes,
    })
}

fn read_log(path: &Path, format: Format) -> Result<EventLog, Failure> {
    let file = File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let parsed = match format {
        Format::Xes => parse_xes(reader),
        Format::Csv => parse_csv(reader),
    };
    parsed.map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct Evaluation {
    sudden: EvalResult,
    gradual: EvalResult,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GoldFile {
    #[serde(default)]
    sudden: Vec<usize>,
    #[serde(default)]
    gradual: Vec<(usize, usize)>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Detect {
            input,
            format,
            window,
            phi_divisor,
            threshold,
            min_window,
            max_window,
            buffer,
            fixed_window,
            seed,
            gradual,
            gradual_alpha,
            p_series,
        } => {
            let cfg = DetectorConfig {
                init_window: window,
                max_buffer: buffer,
                chi_threshold: threshold,
                phi_divisor: phi_divisor.unwrap_or(if gradual { 5 } else { 3 }),
                min_window,
                max_window,
                adaptive: !fixed_window,
            };
            cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
            if gradual && !(gradual_alpha > 0.0 && gradual_alpha < 1.0) {
                return Err(Failure::Config(format!("gradual alpha {gradual_alpha} outside (0, 1)")));
            }
            let log = read_log(&input, guess_format(&input, format))?;
            let traces = stream_traces(&log);
            info!("{} traces read from {}", traces.len(), input.display());

            let detection = detect(traces, &cfg, gradual.then_some(gradual_alpha))
                .map_err(|e| Failure::Config(e.to_string()))?;
            let echo = ConfigEcho {
                detector: DetectorConfig {
                    max_buffer: Some(cfg.max_buffer()),
                    max_window: Some(cfg.max_window()),
                    ..cfg.clone()
                },
                gradual,
                gradual_alpha: gradual.then_some(gradual_alpha),
                seed,
            };
            let log_id = input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let mut report = DriftReport::new(log_id, &detection, echo);
            if let Some(path) = &p_series {
                let file = File::create(path).map_err(io_err(path))?;
                write_p_series(&detection.p_series, BufWriter::new(file))
                    .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
                report.p_series_path = Some(path.display().to_string());
            }
            let json = serde_json::to_string_pretty(&report).expect("report serialises");
            println!("{json}");
            eprintln!(
                "{} traces, {} sudden drift(s), {} gradual drift(s)",
                detection.traces,
                report.sudden.len(),
                report.gradual.len()
            );
            for s in &report.sudden {
                eprintln!("  sudden   at {:>7}  confirmed {:>7}", s.position, s.confirmed_at);
            }
            for g in &report.gradual {
                eprintln!(
                    "  gradual  [{:>7}, {:>7})  weights {:.2}/{:.2}  gof {:.2} < {:.2}",
                    g.start, g.end, g.weight_before, g.weight_after, g.gof, g.critical
                );
            }
            Ok(())
        }
        Command::Generate {
            spec,
            seed,
            log,
            gold,
            format,
        } => {
            let text = fs::read_to_string(&spec).map_err(io_err(&spec))?;
            let spec = DriftSpec::from_json(&text).map_err(|e| Failure::Config(e.to_string()))?;
            let (event_log, gold_standard) = spec.generate(seed).map_err(|e| Failure::Config(e.to_string()))?;
            let file = File::create(&log).map_err(io_err(&log))?;
            let sink = BufWriter::new(file);
            match guess_format(&log, format) {
                Format::Csv => write_csv(&event_log, sink),
                Format::Xes => write_xes(&event_log, sink),
            }
            .map_err(|e| Failure::Io(format!("{}: {e}", log.display())))?;
            let mut out = File::create(&gold).map_err(io_err(&gold))?;
            let json = serde_json::to_string_pretty(&gold_standard).expect("gold serialises");
            writeln!(out, "{json}").map_err(io_err(&gold))?;
            eprintln!(
                "{} traces, {} sudden and {} gradual gold drift(s)",
                event_log.len(),
                gold_standard.sudden.len(),
                gold_standard.gradual.len()
            );
            Ok(())
        }
        Command::Evaluate { report, gold } => {
            let text = fs::read_to_string(&report).map_err(io_err(&report))?;
            let parsed: DriftReport<f64> = serde_json::from_str(&text)
                .map_err(|e| Failure::Parse(format!("{}: {e}", report.display())))?;
            if parsed.schema_version != SCHEMA_VERSION {
                return Err(Failure::Parse(format!(
                    "report schema version {} is not {SCHEMA_VERSION}",
                    parsed.schema_version
                )));
            }
            let text = fs::read_to_string(&gold).map_err(io_err(&gold))?;
            let gold_file: GoldFile =
                serde_json::from_str(&text).map_err(|e| Failure::Parse(format!("{}: {e}", gold.display())))?;
            let gold_standard = GoldStandard {
                sudden: gold_file.sudden,
                gradual: gold_file.gradual,
            };

            let points: Vec<PointDetection> = parsed
                .sudden
                .iter()
                .map(|s| PointDetection {
                    position: s.position,
                    confirmed_at: s.confirmed_at,
                })
                .collect();
            let intervals: Vec<IntervalDetection> = parsed
                .gradual
                .iter()
                .map(|g| IntervalDetection {
                    start: g.start,
                    end: g.end,
                    confirmed_at: g.confirmed_at,
                })
                .collect();
            let evaluation = Evaluation {
                sudden: score_sudden(&points, &gold_standard.sudden),
                gradual: score_gradual(&intervals, &gold_standard.gradual),
            };
            println!("{}", serde_json::to_string_pretty(&evaluation).expect("result serialises"));
            eprintln!("sudden   {}", evaluation.sudden);
            eprintln!("gradual  {}", evaluation.gradual);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
