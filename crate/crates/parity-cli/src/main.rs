//! Command-line front end: every pipeline stage as a batch subcommand.
//!
//! Diagnostics go to stderr, data to `--out` or stdout. Relative output
//! paths resolve under `PARITY_OUT_DIR` when that is set. Exit codes:
//! 0 success, 1 validation error, 2 data/parse error.

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use parity_core::backtest::{
    compare_schemes, comparison_csv, run_backtest, write_report_dir, BacktestConfig, Scheme,
};
use parity_core::funds::build_subfund_report;
use parity_core::marketdata::{
    covariance_matrix, load_price_history, log_returns, rolling_volatility, IngestOptions,
    PriceHistory,
};
use parity_core::metrics::{
    cri, parse_nav_csv, perf_report_csv, performance_report, CriAsset, CriInput, REPORT_INTERVALS,
};
use parity_core::multichain::{plan_from_request, BridgePlanRequest};
use parity_core::rebalancer::{plan_request, RebalanceRequest};
use parity_core::safehouse::verify_audit_log_bytes;
use parity_core::weights::{
    build_weight_report, expected_returns, vvv_profile, vvv_weights, weight_report_csv,
};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "parity", about = "Risk-parity portfolio engine", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a price CSV and emit the ingest report.
    Ingest {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        from: Option<NaiveDate>,
        #[arg(long)]
        to: Option<NaiveDate>,
        #[arg(long, default_value_t = 3)]
        max_gap_days: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the weights comparison table (vvv, mvo, no-short).
    Weights {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 90)]
        window: usize,
        #[arg(long, default_value_t = 0.10)]
        benchmark: f64,
        #[arg(long)]
        from: Option<NaiveDate>,
        #[arg(long)]
        to: Option<NaiveDate>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify assets into Alpha/Beta/Gamma and build the parity line.
    Classify {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 90)]
        window: usize,
        #[arg(long, default_value_t = 0.10)]
        benchmark: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        #[arg(long, default_value_t = 0.0)]
        gamma_corr_max: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plan trades for a target/holdings snapshot.
    Rebalance {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a full backtest and write its report directory.
    Backtest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the four weighting schemes on one dataset.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Concentration risk indicator from a price file.
    Cri {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 90)]
        window: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Interval performance report from a NAV file (`date,entity,nav`).
    Report {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.10)]
        benchmark: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify the hash chain of an audit log.
    SafehouseVerify {
        #[arg(long)]
        log: PathBuf,
    },
    /// Plan cross-network bridge transfers.
    BridgePlan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_root() -> PathBuf {
    std::env::var_os("PARITY_OUT_DIR").map_or_else(|| PathBuf::from("."), PathBuf::from)
}

fn resolve_out(path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        out_root().join(path)
    }
}

fn emit(out: Option<PathBuf>, content: &str) -> parity_core::Result<()> {
    match out {
        Some(path) => {
            let path = resolve_out(&path);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&path, content)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{content}"),
    }
    Ok(())
}

fn load_history(
    data: &Path,
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
) -> parity_core::Result<PriceHistory> {
    let range = match (from, to) {
        (Some(f), Some(t)) => Some((f, t)),
        (None, None) => None,
        _ => {
            return Err(parity_core::Error::Validation(
                "--from and --to must be given together".into(),
            ))
        }
    };
    let (history, report) = load_price_history(data, range, &IngestOptions::default())?;
    if !report.filled.is_empty() {
        eprintln!("note: forward-filled {} missing cells", report.filled.len());
    }
    Ok(history)
}

fn run(cli: Cli) -> parity_core::Result<()> {
    match cli.command {
        Command::Ingest { data, from, to, max_gap_days, out } => {
            let range = match (from, to) {
                (Some(f), Some(t)) => Some((f, t)),
                (None, None) => None,
                _ => {
                    return Err(parity_core::Error::Validation(
                        "--from and --to must be given together".into(),
                    ))
                }
            };
            let opts = IngestOptions { max_gap_days };
            let (history, report) = load_price_history(&data, range, &opts)?;
            eprintln!(
                "{} assets, {} days, {} filled cells",
                history.n_assets(),
                history.n_days(),
                report.filled.len()
            );
            emit(out, &format!("{}\n", serde_json::to_string_pretty(&report)?))
        }
        Command::Weights { data, window, benchmark, from, to, out } => {
            let history = load_history(&data, from, to)?;
            let returns = log_returns(&history)?;
            let vols = rolling_volatility(&returns, window)?;
            let profile = vvv_profile(&vols, window)?;
            let mu = expected_returns(&returns)?;
            let cov = covariance_matrix(&returns)?;
            let report = build_weight_report(&profile, &mu, &cov, benchmark)?;
            emit(out, &weight_report_csv(&report))
        }
        Command::Classify { data, window, benchmark, step, gamma_corr_max, out } => {
            let history = load_history(&data, None, None)?;
            let returns = log_returns(&history)?;
            let vols = rolling_volatility(&returns, window)?;
            let profile = vvv_profile(&vols, window)?;
            let report = build_subfund_report(&returns, &profile, benchmark, step, gamma_corr_max)?;
            emit(out, &format!("{}\n", serde_json::to_string_pretty(&report)?))
        }
        Command::Rebalance { config, out } => {
            let bytes = std::fs::read(&config)?;
            let request = RebalanceRequest::from_json(&bytes)?;
            let plan = plan_request(&request)?;
            eprintln!(
                "{} orders, unallocated {}, total cost {}",
                plan.orders.len(),
                plan.unallocated,
                plan.total_cost
            );
            emit(out, &format!("{}\n", plan.to_json()))
        }
        Command::Backtest { config, out } => {
            let bytes = std::fs::read(&config)?;
            let config = BacktestConfig::from_json(&bytes)?;
            let report = run_backtest(&config)?;
            let dir = resolve_out(&out.unwrap_or_else(|| PathBuf::from("backtest-report")));
            write_report_dir(&report, &dir)?;
            eprintln!(
                "{} funds, {} trading days, report in {}",
                report.funds.len(),
                report.funds.first().map_or(0, |f| f.days.len()),
                dir.display()
            );
            Ok(())
        }
        Command::Compare { config, out } => {
            let bytes = std::fs::read(&config)?;
            let config = BacktestConfig::from_json(&bytes)?;
            let table = compare_schemes(&config, &Scheme::ALL)?;
            emit(out, &comparison_csv(&table))
        }
        Command::Cri { data, window, out } => {
            let history = load_history(&data, None, None)?;
            let returns = log_returns(&history)?;
            let vols = rolling_volatility(&returns, window)?;
            let profile = vvv_profile(&vols, window)?;
            let weights = vvv_weights(&profile)?;
            let last = history.n_days() - 1;
            let universe_cap: f64 =
                (0..history.n_assets()).map(|a| history.market_cap[last][a]).sum();
            let input = CriInput {
                assets: history
                    .assets
                    .iter()
                    .enumerate()
                    .map(|(i, asset)| CriAsset {
                        asset: asset.clone(),
                        weight: weights.weights[i],
                        market_cap_usd: history.market_cap[last][i],
                        volatility: profile.volatility[i],
                        chain_fractions: None,
                    })
                    .collect(),
                universe_market_cap_usd: universe_cap,
                sigma_ref: None,
            };
            let report = cri(&input)?;
            emit(out, &format!("{}\n", serde_json::to_string_pretty(&report)?))
        }
        Command::Report { data, benchmark, out } => {
            let bytes = std::fs::read(&data)?;
            let series = parse_nav_csv(&bytes)?;
            let rows =
                performance_report(&series, &BTreeMap::new(), benchmark, &REPORT_INTERVALS)?;
            emit(out, &perf_report_csv(&rows))
        }
        Command::SafehouseVerify { log } => {
            let bytes = std::fs::read(&log)?;
            let events = verify_audit_log_bytes(&bytes)?;
            eprintln!("audit chain intact: {events} events");
            Ok(())
        }
        Command::BridgePlan { config, out } => {
            let bytes = std::fs::read(&config)?;
            let request = BridgePlanRequest::from_json(&bytes)?;
            let plan = plan_from_request(&request)?;
            eprintln!(
                "{} transfers, {} residual deficits",
                plan.transfers.len(),
                plan.residual_deficits.len()
            );
            emit(out, &format!("{}\n", serde_json::to_string_pretty(&plan)?))
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
