use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use siqss::config::{Mode, RunConfig};
use siqss::detection::write_events_csv;
use siqss::keyrate::KeyReport;
use siqss::postmatch::write_transcript_file;
use siqss::{runner, Error};

#[derive(Parser)]
#[command(name = "siqss", about = "Simulator and finite-key analyzer for postmatched entanglement-based quantum secret sharing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for report files (default: current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write per-session detection event logs (simulate only).
    #[arg(long, global = true)]
    emit_events: bool,
    /// Also write the GHZ round transcript (simulate/analyze).
    #[arg(long, global = true)]
    emit_transcript: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo end-to-end simulation.
    Simulate,
    /// Closed-form analytic key-rate evaluation.
    Keyrate,
    /// Analytic evaluation over a parameter grid.
    Sweep,
    /// Run the classical pipeline on recorded event logs.
    Analyze,
    /// Reconstruct a density matrix from tomography counts.
    Tomography,
}

const EXIT_ABORTED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Parse { .. } => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn write_report(out_dir: &PathBuf, name: &str, body: &str) -> siqss::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join(name), body)?;
    print!("{body}");
    Ok(())
}

fn report_csv(rows: &[KeyReport<f64>]) -> String {
    let mut body = String::from(KeyReport::<f64>::csv_header());
    body.push('\n');
    for row in rows {
        body.push_str(&row.csv_row());
        body.push('\n');
    }
    body
}

fn run(cli: &Cli) -> Result<u8, (u8, String)> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or((EXIT_CONFIG, "--config is required".to_string()))?;
    let mut cfg =
        RunConfig::read(config_path).map_err(|e| (exit_code_for(&e), e.to_string()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    cfg.mode = match cli.command {
        Command::Simulate => Mode::MonteCarlo,
        Command::Keyrate | Command::Sweep | Command::Tomography => Mode::Analytic,
        Command::Analyze => Mode::Analyze,
    };
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let io_err = |e: Error| (EXIT_IO, e.to_string());
    let run_err = |e: Error| (exit_code_for(&e), e.to_string());

    match cli.command {
        Command::Simulate => {
            if cfg.seed.is_none() {
                return Err((EXIT_CONFIG, "simulate requires a seed".to_string()));
            }
            let mc = runner::run_montecarlo(&cfg, cli.emit_events).map_err(run_err)?;
            write_report(&out_dir, "report.csv", &report_csv(&[mc.report.clone()]))
                .map_err(io_err)?;
            if let Some(sessions) = &mc.session_events {
                for (i, (dealer, player)) in sessions.iter().enumerate() {
                    let path = out_dir.join(format!("events_session{}.csv", i + 1));
                    let mut file = std::fs::File::create(path).map_err(|e| io_err(e.into()))?;
                    let all: Vec<_> = {
                        let mut v: Vec<_> =
                            dealer.iter().chain(player.iter()).cloned().collect();
                        v.sort_by(|a, b| {
                            a.timestamp_ns
                                .partial_cmp(&b.timestamp_ns)
                                .expect("finite timestamps")
                        });
                        v
                    };
                    write_events_csv(&mut file, &all).map_err(io_err)?;
                }
            }
            if cli.emit_transcript {
                write_transcript_file(&out_dir.join("transcript.csv"), &mc.rounds)
                    .map_err(io_err)?;
            }
            Ok(if mc.report.aborted { EXIT_ABORTED } else { 0 })
        }
        Command::Keyrate => {
            let report = runner::run_analytic(&cfg).map_err(run_err)?;
            write_report(&out_dir, "report.csv", &report_csv(&[report.clone()]))
                .map_err(io_err)?;
            Ok(if report.aborted { EXIT_ABORTED } else { 0 })
        }
        Command::Sweep => {
            let rows = runner::run_sweep(&cfg).map_err(run_err)?;
            write_report(&out_dir, "sweep.csv", &report_csv(&rows)).map_err(io_err)?;
            Ok(0)
        }
        Command::Analyze => {
            let out = runner::run_analyze(&cfg).map_err(run_err)?;
            write_report(&out_dir, "report.csv", &report_csv(&[out.report.clone()]))
                .map_err(io_err)?;
            if cli.emit_transcript {
                write_transcript_file(&out_dir.join("transcript.csv"), &out.rounds)
                    .map_err(io_err)?;
            }
            Ok(if out.report.aborted { EXIT_ABORTED } else { 0 })
        }
        Command::Tomography => {
            let body = runner::run_tomography(&cfg).map_err(run_err)?;
            write_report(&out_dir, "tomography.txt", &body).map_err(io_err)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
