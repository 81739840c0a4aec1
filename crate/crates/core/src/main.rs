use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use xrd::client::MessageFormat;
use xrd::harness::{
    attack_suite, availability_sim, bench, write_detections_csv, write_report_csv, AdversaryMode,
    RoundReport, World, WorldConfig,
};
use xrd::topology::{compute_chain_length, compute_ell, GroupChainSets, REFERENCE_CHAIN_LENGTH};

/// Exit codes: 0 success, 1 some chain aborted, 2 usage or configuration error.
#[derive(Parser)]
#[command(name = "xrd", version, about = "Metadata-private messaging: parameters, simulation and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chain length, chains per user and per-user traffic for a deployment size.
    Params {
        /// Assumed fraction of malicious servers.
        #[arg(long)]
        f: f64,
        /// Number of servers (and chains).
        #[arg(long)]
        n: u32,
        /// Security exponent: chains are all anytrust except with probability 2^-lambda.
        #[arg(long, default_value_t = 64)]
        lambda: u32,
        #[arg(long, default_value_t = xrd::client::DEFAULT_MESSAGE_SIZE)]
        message_size: usize,
    },
    /// Run one round from a world configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run several consecutive rounds.
    Epoch {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        rounds: u64,
    },
    /// Seeded adversary trials with detection and privacy outcomes.
    Attack {
        /// Adversary mode, or "all".
        #[arg(long, default_value = "all")]
        mode: String,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// World template; defaults to 12 users on 3 chains of length 3.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fraction of conversations hit by server churn.
    Availability {
        #[arg(long)]
        q: f64,
        #[arg(long)]
        k: u32,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        /// Number of servers chains are drawn from.
        #[arg(long, default_value_t = 5000)]
        n: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Wall-clock timing of one round through honest chains.
    Bench {
        /// Messages submitted, spread over the chains.
        #[arg(long, default_value_t = 10_000)]
        users: usize,
        #[arg(long, default_value_t = 1)]
        chains: usize,
        #[arg(long, default_value_t = 3)]
        k: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

type CliResult = Result<ExitCode, String>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Params { f, n, lambda, message_size } => params(f, n, lambda, message_size),
        Command::Run { config, out } => rounds(&config, &out, 1),
        Command::Epoch { config, out, rounds: r } => rounds(&config, &out, r),
        Command::Attack { mode, trials, config, out } => attack(&mode, trials, config.as_deref(), out.as_deref()),
        Command::Availability { q, k, trials, n, seed } => availability(q, k, trials, n, seed),
        Command::Bench { users, chains, k, seed } => run_bench(users, chains, k, seed),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn params(f: f64, n: u32, lambda: u32, message_size: usize) -> CliResult {
    if n == 0 {
        return Err("--n must be at least 1".into());
    }
    let k = compute_chain_length(f, n as u64, lambda).map_err(|e| e.to_string())?;
    let ell = compute_ell(n);
    let sets = GroupChainSets::build(ell, n).map_err(|e| e.to_string())?;
    let sizes: Vec<usize> = (1..=sets.group_count()).map(|g| sets.chains(g).map(<[_]>::len).unwrap_or(0)).collect();
    let (lo, hi) = (sizes.iter().min().copied().unwrap_or(0), sizes.iter().max().copied().unwrap_or(0));
    let format = MessageFormat::new(message_size).map_err(|e| e.to_string())?;
    let per_message = format.outer_len(k as usize);
    println!("f = {f}, n = {n}, lambda = {lambda}");
    println!("chain length k (exact) = {k}");
    if f == 0.2 && lambda == 64 {
        println!(
            "chain length k (published reference) = {REFERENCE_CHAIN_LENGTH}, delta = {}",
            k as i64 - REFERENCE_CHAIN_LENGTH as i64
        );
    } else {
        println!("chain length k (published reference, f = 0.2 and lambda = 64 only) = {REFERENCE_CHAIN_LENGTH}");
    }
    println!("ell = {ell}, groups = {}", sets.group_count());
    if lo == hi {
        println!("messages per user per round = {hi}");
    } else {
        println!("messages per user per round = {lo}..{hi}");
    }
    println!("bytes per message = {per_message} ({message_size}-byte plaintext)");
    println!("bytes per user per round = {}", hi * per_message);
    Ok(ExitCode::SUCCESS)
}

fn load_config(path: &Path) -> Result<WorldConfig, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    WorldConfig::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn rounds(config: &Path, out: &Path, count: u64) -> CliResult {
    if count == 0 {
        return Err("--rounds must be at least 1".into());
    }
    let cfg = load_config(config)?;
    let mut world = World::new(cfg.clone()).map_err(|e| e.to_string())?;
    let reports = world.run_epoch(count).map_err(|e| e.to_string())?;
    write_outputs(out, &cfg, &reports)?;
    let delivered: usize = reports.iter().map(|r| r.delivered_conversations).sum();
    let active: usize = reports.iter().map(|r| r.active_conversations).sum();
    let detections: usize = reports.iter().map(|r| r.detections.len()).sum();
    let aborted: usize = reports.iter().map(RoundReport::aborted_chains).sum();
    println!(
        "{} round(s): {delivered}/{active} conversations delivered, {detections} detections, {aborted} chain aborts",
        reports.len()
    );
    Ok(if aborted > 0 { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn write_outputs(out: &Path, cfg: &WorldConfig, reports: &[RoundReport]) -> Result<(), String> {
    let io = |e: std::io::Error| format!("{}: {e}", out.display());
    fs::create_dir_all(out).map_err(io)?;
    let create = |name: &str| fs::File::create(out.join(name)).map_err(io);
    write_report_csv(reports, create("report.csv")?).map_err(|e| e.to_string())?;
    write_detections_csv(reports, create("detections.csv")?).map_err(|e| e.to_string())?;
    fs::write(out.join("config.toml"), cfg.to_toml()).map_err(io)?;
    let lines: String = reports.iter().map(|r| r.to_json_line() + "\n").collect();
    fs::write(out.join("rounds.jsonl"), lines).map_err(io)?;
    Ok(())
}

fn attack(mode: &str, trials: usize, config: Option<&Path>, out: Option<&Path>) -> CliResult {
    let modes: Vec<AdversaryMode> = if mode == "all" {
        AdversaryMode::ALL.into_iter().filter(|m| *m != AdversaryMode::None).collect()
    } else {
        vec![AdversaryMode::parse(mode).ok_or_else(|| format!("unknown mode {mode:?}"))?]
    };
    let template = match config {
        Some(p) => load_config(p)?,
        None => WorldConfig::small(3, 3, 12, 1),
    };
    let (rows, all) = attack_suite(&template, &modes, trials).map_err(|e| e.to_string())?;
    println!(
        "{:<28} {:>6} {:>9} {:>15} {:>10} {:>15}",
        "mode", "trials", "detected", "detection_rate", "privacy", "exact_verdicts"
    );
    for r in &rows {
        println!(
            "{:<28} {:>6} {:>9} {:>15.3} {:>10} {:>15}",
            r.mode.name(),
            r.trials,
            r.detected,
            r.detection_rate,
            if r.privacy_preserved { "ok" } else { "VIOLATED" },
            r.verdicts_exact
        );
    }
    if let Some(out) = out {
        let io = |e: std::io::Error| format!("{}: {e}", out.display());
        fs::create_dir_all(out).map_err(io)?;
        let mut w = csv::Writer::from_path(out.join("attack.csv")).map_err(|e| e.to_string())?;
        w.write_record(["mode", "trials", "detected", "detection_rate", "privacy_preserved", "verdicts_exact", "honest_users_accused"])
            .map_err(|e| e.to_string())?;
        for r in &rows {
            w.write_record([
                r.mode.name().to_string(),
                r.trials.to_string(),
                r.detected.to_string(),
                r.detection_rate.to_string(),
                r.privacy_preserved.to_string(),
                r.verdicts_exact.to_string(),
                r.honest_users_accused.to_string(),
            ])
            .map_err(|e| e.to_string())?;
        }
        w.flush().map_err(io)?;
        let lines: String = all.iter().map(|t| serde_json::to_string(t).expect("serialises") + "\n").collect();
        fs::write(out.join("attack_trials.jsonl"), lines).map_err(io)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn availability(q: f64, k: u32, trials: u64, n: u32, seed: u64) -> CliResult {
    let r = availability_sim(n, k, q, trials, seed).map_err(|e| e.to_string())?;
    println!(
        "q = {q}, k = {k}, servers = {n}, trials = {trials}: failure fraction {:.4} (±{:.4}), closed form {:.4}",
        r.failure_fraction, r.std_error, r.closed_form
    );
    Ok(ExitCode::SUCCESS)
}

fn run_bench(users: usize, chains: usize, k: u32, seed: u64) -> CliResult {
    let r = bench(users, chains, k, seed).map_err(|e| e.to_string())?;
    for line in r.lines() {
        println!("{line}");
    }
    Ok(if r.all_verified { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
