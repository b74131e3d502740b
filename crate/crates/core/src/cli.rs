//! `wban` command-line front end.
//!
//! Exit codes: 0 when the run passed, 1 when an invariant check or attack
//! verdict failed, 2 on usage, parse or I/O errors.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::energy::{write_comparison_csv, EnergyConfig, BLE_LWAA};
use crate::protocol::{A1_LEN, A2_LEN};
use crate::simnet::{
    desync_recovery_scenario, reason_label, replay_scenario, spread_losses, surveillor_scenario, CheckStatus,
    SimulationConfig, SimulationReport,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const DEFAULT_SEED: u64 = 42;

#[derive(Parser, Debug)]
#[command(name = "wban", version, about = "Anonymous BLE pairing for body-area sensors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the per-interval energy comparison as CSV.
    Energy {
        #[arg(long)]
        output: PathBuf,
        /// TOML file overriding cost model, profiles, baseline or calibration.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a simulation and write report.jsonl and ledger.csv into a directory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a canned attack scenario and print its verdict.
    Attack {
        scenario: Scenario,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Session count for the surveillor and desync scenarios.
        #[arg(long)]
        sessions: Option<usize>,
        /// Also write the verdict text to this file.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
pub enum Scenario {
    Replay,
    Surveillor,
    Desync,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli.command),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn execute(command: Command) -> i32 {
    let result = match command {
        Command::Energy { output, config } => cmd_energy(&output, config.as_deref()),
        Command::Simulate { config, output, seed } => cmd_simulate(&config, &output, seed),
        Command::Attack { scenario, seed, sessions, output } => cmd_attack(scenario, seed, sessions, output.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
    }
}

type CmdResult = Result<i32, String>;

fn cmd_energy(output: &Path, config: Option<&Path>) -> CmdResult {
    let config = match config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            EnergyConfig::from_toml_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => EnergyConfig::default(),
    };
    let rows = config.compare().map_err(|e| e.to_string())?;
    let file = File::create(output).map_err(|e| format!("{}: {e}", output.display()))?;
    write_comparison_csv(&rows, BufWriter::new(file)).map_err(|e| format!("{}: {e}", output.display()))?;

    for row in &rows {
        let life = row.life_days.map_or("-".to_owned(), |d| d.to_string());
        let overhead = row.overhead_vs_baseline.map_or("-".to_owned(), |o| format!("{:.1}%", o * 100.0));
        println!("{:<10} total {:>8.2} uJ  life {:>4} d  overhead {overhead}", row.profile.name, row.breakdown.total, life);
    }
    if let Some(row) = rows.iter().find(|r| r.profile.name == BLE_LWAA) {
        println!(
            "note: {} row charges {} Tx / {} Rx pairing bits; the implemented M_A1/M_A2 are {} / {} bits on air",
            BLE_LWAA,
            row.profile.pairing_tx_bits,
            row.profile.pairing_rx_bits,
            A1_LEN * 8,
            A2_LEN * 8
        );
    }
    println!("wrote {}", output.display());
    Ok(EXIT_OK)
}

fn cmd_simulate(config_path: &Path, output: &Path, seed: Option<u64>) -> CmdResult {
    let mut config = SimulationConfig::load(config_path).map_err(|e| e.to_string())?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let report = crate::simnet::run_simulation(config).map_err(|e| e.to_string())?;
    fs::create_dir_all(output).map_err(|e| format!("{}: {e}", output.display()))?;
    let report_path = output.join("report.jsonl");
    let ledger_path = output.join("ledger.csv");
    fs::write(&report_path, report.to_jsonl()).map_err(|e| format!("{}: {e}", report_path.display()))?;
    let ledger = File::create(&ledger_path).map_err(|e| format!("{}: {e}", ledger_path.display()))?;
    report
        .write_ledger_csv(BufWriter::new(ledger))
        .map_err(|e| format!("{}: {e}", ledger_path.display()))?;

    print!("{}", simulate_summary(&report));
    Ok(if report.all_checks_pass() { EXIT_OK } else { EXIT_FAILED })
}

fn simulate_summary(report: &SimulationReport) -> String {
    let total = report.sessions.len();
    let accepted = report.accepted();
    let pct = if total == 0 { 0.0 } else { accepted as f64 * 100.0 / total as f64 };
    let mut out = format!("sessions: {total}, accepted: {accepted} ({pct:.1}%)\n");
    for (reason, n) in report.rejections() {
        let _ = writeln!(out, "rejected {}: {n}", reason_label(reason));
    }
    if report.lost() > 0 {
        let _ = writeln!(out, "lost: {}", report.lost());
    }
    if !report.recoveries.is_empty() {
        let _ = writeln!(out, "recoveries: {}", report.recoveries.len());
    }
    for check in &report.checks {
        let status = match check.status {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Skipped => "skipped",
        };
        let _ = writeln!(out, "check {}: {status} ({})", check.name, check.detail);
    }
    let _ = writeln!(out, "energy: {:.2} uJ", report.total_energy());
    out
}

fn cmd_attack(scenario: Scenario, seed: u64, sessions: Option<usize>, output: Option<&Path>) -> CmdResult {
    let (held, text) = match scenario {
        Scenario::Replay => {
            let r = replay_scenario(seed).map_err(|e| e.to_string())?;
            let held = r.rejected == r.attempts && r.compromises == 0;
            let text = format!(
                "replay: {}/{} rejected, {} accepted\n",
                r.rejected, r.attempts, r.compromises
            );
            (held, text)
        }
        Scenario::Surveillor => {
            let n = sessions.unwrap_or(1000);
            let r = surveillor_scenario(seed, n).map_err(|e| e.to_string())?;
            let held = r.lwaa_linkability == 0.0;
            let text = format!(
                "surveillor: {} sessions ({} emergency)\nlinkability lwaa: {:.3}\nlinkability legacy: {:.3}\n",
                r.sessions, r.emergency_sessions, r.lwaa_linkability, r.legacy_linkability
            );
            (held, text)
        }
        Scenario::Desync => {
            let n = sessions.unwrap_or(20);
            let base = SimulationConfig { seed, sessions: n, ..Default::default() };
            let losses = spread_losses(n, 3.min(base.shadow_pool));
            let injected = losses.len();
            let report = desync_recovery_scenario(SimulationConfig { loss_sessions: losses, ..base })
                .map_err(|e| e.to_string())?;
            let synced = report.all_synchronized();
            let held = report.recoveries.len() == injected && synced;
            let text = format!(
                "desync: {injected} losses injected, {} recoveries, synchronized: {}\nrecovered: {}\n",
                report.recoveries.len(),
                yes_no(synced),
                yes_no(held)
            );
            (held, text)
        }
    };
    print!("{text}");
    if let Some(path) = output {
        fs::write(path, &text).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(if held { EXIT_OK } else { EXIT_FAILED })
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}
