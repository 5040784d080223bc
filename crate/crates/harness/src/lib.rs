//! Command-line front end: parses arguments, resolves the run
//! configuration, dispatches to a task and writes JSONL, CSV and a
//! manifest into the output directory.

pub mod config;
pub mod emit;
pub mod tasks;

use clap::{Parser, Subcommand};
use config::{Overrides, RunConfig};
use serde_json::json;
use sha2::{Digest, Sha256};
use std::ffi::OsString;

pub const EXIT_PASS: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_INVALID: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "cylren", version, about = "Renormalization checks on hierarchical lattice cylinder measures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compatibility of the reference family across levels.
    VerifyCompat(Overrides),
    /// Conditional expectations E[(x_ij)^k | x^n] for k up to --k.
    CondExp(Overrides),
    /// Wick polynomial V^n_k and its martingale residual.
    Wick(Overrides),
    /// Conditional kinetic energy, T_shift and the renormalized kinetic term.
    KineticRen(Overrides),
    /// Enumerate multigraphs on the fine sites and check χ and χ_c.
    GraphExpand(Overrides),
    /// Effective mass-perturbation coefficients and their depth limits.
    MassEff(Overrides),
    /// Log-slope fits of diagram classes against power counting.
    DivergenceScan(Overrides),
    /// Monte Carlo weak tests of the registered identities.
    McCheck(Overrides),
}

impl Command {
    fn split(self) -> (&'static str, Overrides) {
        match self {
            Command::VerifyCompat(o) => ("verify-compat", o),
            Command::CondExp(o) => ("cond-exp", o),
            Command::Wick(o) => ("wick", o),
            Command::KineticRen(o) => ("kinetic-ren", o),
            Command::GraphExpand(o) => ("graph-expand", o),
            Command::MassEff(o) => ("mass-eff", o),
            Command::DivergenceScan(o) => ("divergence-scan", o),
            Command::McCheck(o) => ("mc-check", o),
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Run the CLI on `args` (including the program name) and return the exit
/// code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    let (name, flags) = cli.command.split();
    let cfg = match RunConfig::resolve(name, &flags) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_INVALID;
        }
    };
    let output = match pool.install(|| tasks::run(&cfg)) {
        Ok(out) => out,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    match write_outputs(&cfg, &output) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: writing results to {}: {e}", cfg.out_dir.display());
            return EXIT_INVALID;
        }
    }
    let rows = output.table.rows.len();
    if output.failures.is_empty() {
        println!("{name}: PASS ({rows} records) -> {}", cfg.out_dir.display());
        EXIT_PASS
    } else {
        println!("{name}: FAIL ({rows} records) -> {}", cfg.out_dir.display());
        for f in &output.failures {
            println!("  {f}");
        }
        EXIT_CHECK_FAILED
    }
}

fn write_outputs(cfg: &RunConfig, output: &tasks::TaskOutput) -> Result<(), Box<dyn std::error::Error>> {
    let name = &cfg.command;
    let jsonl = output.table.jsonl();
    let csv = output.table.csv()?;
    let config_json = serde_json::to_string(cfg)?;
    let mut outputs = Vec::new();
    for (file, body) in [(format!("{name}.jsonl"), &jsonl), (format!("{name}.csv"), &csv)] {
        emit::write_file(&cfg.out_dir, &file, body)?;
        outputs.push(json!({ "file": file, "sha256": sha256_hex(body.as_bytes()) }));
    }
    let manifest = json!({
        "command": name,
        "config": cfg,
        "config_hash": sha256_hex(config_json.as_bytes()),
        "seed": cfg.seed,
        "versions": {
            "cylren": cylren::VERSION,
            "cylren-harness": env!("CARGO_PKG_VERSION"),
        },
        "outputs": outputs,
        "checks": {
            "passed": output.failures.is_empty(),
            "failures": output.failures,
        },
    });
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    emit::write_file(&cfg.out_dir, &format!("{name}.manifest.json"), &text)?;
    Ok(())
}
