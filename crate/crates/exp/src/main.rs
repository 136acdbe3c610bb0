use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use aoii_core::analytics::{whittle_aoii_closed, whittle_numeric, whittle_qaoii_closed};
use aoii_core::{UserParams, UserSpec};
use aoii_exp::runner::{run_scenario, write_outputs, ScenarioResult};
use aoii_exp::scenario::{preset, Scenario};
use aoii_exp::verify::{verify, VerifyOptions};
use aoii_exp::Overrides;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aoii", version, about = "AoII / QAoII scheduling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct RunFlags {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    frames: Option<u64>,
    /// Number of source states.
    #[arg(long)]
    n_states: Option<u32>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Also write the rows as JSON.
    #[arg(long)]
    json: bool,
    /// Print the resolved scenario as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a built-in scenario: fig2, fig3, fig4, fig5 or table1.
    Preset {
        name: String,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Run a scenario from a TOML file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Check closed forms against the numerical oracles.
    Verify {
        /// Where to write the JSON report.
        #[arg(long, default_value = "verify.json")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Print index values for one user.
    Index {
        #[arg(long = "pR")]
        p_remain: f64,
        #[arg(long = "ps")]
        p_success: f64,
        #[arg(long = "pt")]
        p_trans: Option<f64>,
        #[arg(long = "N", default_value_t = 2)]
        n_states: u32,
        #[arg(long, default_value_t = 1.0)]
        q: f64,
        /// Largest AoII to print.
        #[arg(long, default_value_t = 10)]
        delta: u64,
    },
}

fn execute(scenario: Scenario, flags: &RunFlags) -> Result<()> {
    let overrides = Overrides {
        seed: flags.seed,
        replications: flags.reps,
        frames: flags.frames,
        n_states: flags.n_states,
    };
    let scenario = overrides.apply(scenario);
    if flags.print_config {
        print!("{}", scenario.to_toml());
        return Ok(());
    }
    let result = run_scenario(&scenario)?;
    let written = write_outputs(&result, &flags.out, flags.json)?;
    print_table(&result);
    eprintln!("wrote {}", written.csv.display());
    Ok(())
}

fn print_table(result: &ScenarioResult) {
    println!(
        "{:>8} {:>6} {:>9} {:>8} {:>12} {:>10}",
        "metric", result.scenario.sweep.variable(), "policy", "reps", "mean", "ci95"
    );
    for r in &result.rows {
        println!(
            "{:>8} {:>6} {:>9} {:>8} {:>12.4} {:>10.4}",
            r.metric.name(),
            r.value,
            r.policy.label(),
            r.replications,
            r.mean,
            r.ci95
        );
    }
}

fn index_table(spec: UserSpec, delta: u64) -> Result<()> {
    let p: UserParams = spec.validate()?;
    let d = p.derived();
    println!("p_t = {}, a = {}, b = {}", p.p_trans(), d.a, d.b);
    println!("{:>6} {:>16} {:>16} {:>16}", "aoii", "AoII-WI", "QAoII-WI", "oracle");
    for delta in 1..=delta {
        println!(
            "{:>6} {:>16.8} {:>16.8} {:>16.8}",
            delta,
            whittle_aoii_closed(&p, delta)?,
            whittle_qaoii_closed(&p, delta)?,
            whittle_numeric(&p, delta, 1.0)?
        );
    }
    Ok(())
}

fn real_main() -> Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Cmd::Preset { name, flags } => execute(preset(&name)?, &flags)?,
        Cmd::Run { config, flags } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            execute(Scenario::from_toml(&text)?, &flags)?
        }
        Cmd::Verify { out, seed, samples } => {
            let mut opts = VerifyOptions::default();
            if let Some(s) = seed {
                opts.seed = s;
            }
            if let Some(s) = samples {
                opts.samples = s;
            }
            let report = verify(&opts);
            for c in &report.checks {
                println!(
                    "{} {:<26} worst {:.3e} (tol {:.0e}, {} samples, {:.2}s)",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.worst_error,
                    c.tolerance,
                    c.samples,
                    c.elapsed_secs
                );
            }
            fs::write(&out, serde_json::to_vec_pretty(&report)?)?;
            return Ok(report.passed);
        }
        Cmd::Index {
            p_remain,
            p_success,
            p_trans,
            n_states,
            q,
            delta,
        } => {
            if delta == 0 {
                bail!("--delta must be at least 1");
            }
            let spec = UserSpec {
                p_trans,
                ..UserSpec::new(n_states, p_remain, p_success, q)
            };
            index_table(spec, delta)?
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
