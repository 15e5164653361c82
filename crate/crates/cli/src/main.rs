use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use log::info;
use nsd_core::experiments::{run_experiment, RunOutcome};
use nsd_core::io::{parse_config_with, Experiment};
use nsd_core::oracles::{assembly_oracle, forcing_oracle, Comparison};

#[derive(Parser, Debug)]
#[command(name = "solver", version, about = "Coupled free-flow / porous-media finite element solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment preset, optionally overridden by a config file.
    Run {
        /// convergence, filtration, phase-separation, droplet, bubble or custom.
        experiment: String,
        /// `key=value` file, or a case name (`a`..`g`, `ex1`, `ex2`).
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        case: Option<String>,
        #[arg(long)]
        scheme: Option<String>,
        /// Extra `key=value` override; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Compare assembly and manufactured forcing against brute-force oracles.
    TestOracles {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { experiment, config, out, seed, case, scheme, set } => {
            run(&experiment, config.as_deref(), out, seed, case, scheme, &set)
        }
        Command::TestOracles { seed } => test_oracles(seed),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn is_case_name(s: &str) -> bool {
    matches!(s, "a" | "b" | "c" | "d" | "e" | "f" | "g" | "ex1" | "ex2")
}

fn run(
    experiment: &str,
    config: Option<&str>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    case: Option<String>,
    scheme: Option<String>,
    set: &[String],
) -> anyhow::Result<bool> {
    Experiment::parse(experiment)?;
    let mut text = String::new();
    let mut overrides = vec![("experiment".to_string(), experiment.to_string())];
    match config {
        Some(c) if Path::new(c).is_file() => {
            text = std::fs::read_to_string(c).with_context(|| format!("reading {c}"))?;
        }
        Some(c) if is_case_name(c) => overrides.push(("case".into(), c.into())),
        Some(c) => bail!("--config `{c}` is neither a readable file nor a case name"),
        None => {}
    }
    if let Some(c) = case {
        overrides.push(("case".into(), c));
    }
    if let Some(s) = scheme {
        overrides.push(("scheme".into(), s));
    }
    if let Some(s) = seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    if let Some(o) = out {
        overrides.push(("out".into(), o.display().to_string()));
    }
    for kv in set {
        let Some((k, v)) = kv.split_once('=') else { bail!("--set expects KEY=VALUE, got `{kv}`") };
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    let cfg = parse_config_with(&text, &overrides)?;
    info!("config {} hash {}", cfg.tag(), cfg.hash());
    let outcome = run_experiment(&cfg)?;
    report(&outcome);
    Ok(true)
}

fn report(outcome: &RunOutcome) {
    if let Some(table) = &outcome.convergence {
        println!("convergence rates: u {:.3}  phi {:.3}  p {:.3}", table.rate_u, table.rate_phi, table.rate_p);
    }
    if !outcome.records.is_empty() {
        let (lo, hi) =
            outcome.records.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.xi), hi.max(r.xi)));
        let last = outcome.records.last().expect("nonempty");
        println!(
            "steps {}  t {:.4}  energy {:.6e}  xi in [{lo:.6}, {hi:.6}]  factorizations {}  clamped steps {}",
            last.step, last.t, last.energy, outcome.factorizations, outcome.clamped_steps
        );
    }
    if let Some(p) = &outcome.trace {
        println!("trace: {}", p.display());
    }
    for p in &outcome.snapshots {
        println!("snapshot: {}", p.display());
    }
}

fn print_comparisons(kind: &str, list: &[Comparison]) -> bool {
    let mut ok = true;
    for c in list {
        let verdict = if c.passed() { "PASS" } else { "FAIL" };
        ok &= c.passed();
        println!(
            "{verdict} {kind} {}: error {:.3e} (tolerance {:.0e}, max value {:.3e})",
            c.name, c.max_error, c.tolerance, c.max_value
        );
    }
    ok
}

fn test_oracles(seed: u64) -> anyhow::Result<bool> {
    let assembly = assembly_oracle(seed);
    let forcing = forcing_oracle()?;
    let a = print_comparisons("assembly", &assembly);
    let f = print_comparisons("forcing", &forcing);
    println!("{} assembly and {} forcing comparisons", assembly.len(), forcing.len());
    Ok(a && f)
}
