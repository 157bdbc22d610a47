use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use steerlab::config::RunConfig;
use steerlab::pipeline::{
    limit_rows, limit_rows_csv, write_json, write_sweep, write_train, Instance, ToySetup,
};
use steerlab::sweep::{write_text, AlphaGrid};
use steerlab::verify::{transformer_verdicts, verify_all, Check};

#[derive(Parser)]
#[command(name = "steerlab", version, about = "Steering-strength sweeps and invariant checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory; overrides `out_dir` from the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Replace every seed in the config.
    #[arg(long, global = true, value_name = "N")]
    seed_override: Option<u64>,

    /// Alpha grid, `lo:hi:n` or `logsym:lo:hi:n`; overrides `sweep.grid`.
    #[arg(long, global = true, value_name = "SPEC", allow_hyphen_values = true)]
    grid: Option<AlphaGrid>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the dataset as JSON.
    Gen,
    /// Fit the unconstrained features model by gradient descent.
    Train,
    /// Tabulate probability, concept and cross-entropy curves.
    Sweep,
    /// Run the full invariant suite; exits 1 if any check fails.
    VerifyAll,
    /// Probe the toy transformer's large-strength limit.
    TransformerLimit,
}

fn load(cli: &Cli) -> Result<(RunConfig, PathBuf)> {
    let path = cli.config.as_ref().context("--config PATH is required")?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed_override {
        cfg.override_seeds(seed);
    }
    if let Some(grid) = cli.grid {
        cfg.sweep.grid = grid;
    }
    cfg.validate()?;
    let out = cli.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    Ok((cfg, out))
}

fn print_checks(checks: &[Check]) {
    for c in checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        let measured = c.measured.map_or(String::new(), |m| format!(" measured={m:e}"));
        let threshold = c.threshold.map_or(String::new(), |t| format!(" threshold={t:e}"));
        println!("{verdict} {}::{}{measured}{threshold}  {}", c.module, c.name, c.detail);
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run(cli: &Cli) -> Result<bool> {
    let (cfg, out) = load(cli)?;
    match cli.command {
        Command::Gen => {
            let ds = cfg.build_dataset()?;
            ensure_dir(&out)?;
            let path = out.join("dataset.json");
            write_text(&path, &(ds.to_json()? + "\n"))?;
            println!("wrote {} ({} contexts)", path.display(), ds.context_count());
            Ok(true)
        }
        Command::Train => {
            let ds = cfg.build_dataset()?;
            let s = write_train(&cfg, &ds, &out)?;
            println!(
                "trained {} steps: loss {:.9}, entropy {:.9}, gap {:e}",
                s.steps, s.final_loss, s.entropy, s.gap
            );
            Ok(true)
        }
        Command::Sweep => {
            let inst = Instance::from_config(&cfg)?;
            let o = write_sweep(&cfg, &inst, &out)?;
            println!(
                "wrote sweep over {} contexts x {} strengths to {}",
                o.sweeps.len(),
                o.sweeps[0].alpha_grid.len(),
                out.display()
            );
            Ok(true)
        }
        Command::VerifyAll => {
            let report = verify_all(&cfg)?;
            ensure_dir(&out)?;
            write_json(&out.join("report.json"), &report)?;
            print_checks(&report.checks);
            let failed = report.failures().count();
            println!(
                "{} checks, {} failed; report written to {}",
                report.checks.len(),
                failed,
                out.join("report.json").display()
            );
            Ok(report.passed)
        }
        Command::TransformerLimit => {
            let t = cfg.transformer_config()?;
            let setup = ToySetup::from_config(t)?;
            let mut alphas = steerlab::pipeline::convergence_grid();
            alphas.extend(t.probe_grid.iter().copied());
            alphas.sort_by(f64::total_cmp);
            alphas.dedup();
            let rows = limit_rows(&setup, &alphas)?;
            let checks = transformer_verdicts(&setup, &t.probe_grid);
            ensure_dir(&out)?;
            write_text(&out.join("transformer_limit.csv"), &limit_rows_csv(&rows)?)?;
            let passed = checks.iter().all(|c| c.passed);
            write_json(
                &out.join("transformer_limit.json"),
                &serde_json::json!({ "passed": passed, "rows": rows, "checks": checks }),
            )?;
            print_checks(&checks);
            Ok(passed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
