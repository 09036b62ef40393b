use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use egsl_core::cli::{self, InspectQuery};
use egsl_core::forecast::DEFAULT_PEAK_K;
use egsl_core::ledger::LedgerMode;

/// Permissioned ledger simulator: run scenario scripts, verify and inspect ledgers.
#[derive(Parser)]
#[command(name = "egsl", version)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario script; writes ledger.egsl and report.json.
    Run {
        script: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Seed for scripts that do not pin one.
        #[arg(long)]
        seed_override: Option<u64>,
        #[arg(long, value_enum)]
        ledger_mode: Option<LedgerMode>,
    },
    /// Check hash links, signatures and sequence numbers, then replay.
    Verify { ledger: PathBuf },
    /// List state or transactions, permission-checked.
    Inspect {
        ledger: PathBuf,
        #[arg(long, group = "query")]
        prefix: Option<String>,
        #[arg(long, group = "query")]
        tx: Option<String>,
        /// Consent records of this subject (label or hex id).
        #[arg(long, group = "query")]
        consent: Option<String>,
        /// Identity to act as (label or hex id); defaults to the authority.
        #[arg(long = "as")]
        as_who: Option<String>,
    },
    /// Forecast hourly load from the ledger's meter readings.
    Forecast {
        ledger: PathBuf,
        #[arg(long)]
        prosumer: Option<String>,
        #[arg(long, default_value_t = 24)]
        horizon: usize,
        #[arg(long, default_value_t = DEFAULT_PEAK_K)]
        peak_k: usize,
        #[arg(long = "as")]
        as_who: Option<String>,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    let out = match args.command {
        Command::Run { script, out, seed_override, ledger_mode } => cli::run(&script, &out, seed_override, ledger_mode),
        Command::Verify { ledger } => cli::verify(&ledger),
        Command::Inspect { ledger, prefix, tx, consent, as_who } => {
            let query = match (prefix, tx, consent) {
                (Some(p), _, _) => InspectQuery::Prefix(p),
                (_, Some(t), _) => InspectQuery::Tx(t),
                (_, _, Some(c)) => InspectQuery::Consent(c),
                _ => InspectQuery::Prefix(String::new()),
            };
            cli::inspect(&ledger, &query, as_who.as_deref())
        }
        Command::Forecast { ledger, prosumer, horizon, peak_k, as_who } => {
            cli::forecast(&ledger, prosumer.as_deref(), horizon, peak_k, as_who.as_deref())
        }
    };
    print!("{}", out.stdout);
    eprint!("{}", out.stderr);
    ExitCode::from(out.code as u8)
}
