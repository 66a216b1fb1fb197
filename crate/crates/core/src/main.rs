use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use dskg::experiment::{self, ExperimentError, EXIT_CONFIG};

#[derive(Parser)]
#[command(
    name = "dskg",
    version,
    about = "Kernel-transform and direct solvers for the Klein-Gordon equation in de Sitter spacetime"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Kernel evaluation
    Kernel {
        #[command(subcommand)]
        action: KernelCmd,
    },
    /// Linear, direct and semilinear solves
    Solve {
        #[command(subcommand)]
        action: SolveCmd,
    },
    /// Blow-up time sweeps
    Lifespan {
        #[command(subcommand)]
        action: LifespanCmd,
    },
    /// Decay, kernel-bound and hypergeometric-limit checks
    Verify {
        #[command(subcommand)]
        action: VerifyCmd,
    },
}

#[derive(Subcommand)]
enum KernelCmd {
    Eval(Common),
}

#[derive(Subcommand)]
enum SolveCmd {
    Linear {
        #[command(flatten)]
        common: Common,
        /// Overrides `solve.method`.
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
    },
    Direct(Common),
    Semilinear(Common),
}

#[derive(Subcommand)]
enum LifespanCmd {
    Sweep(Common),
}

#[derive(Subcommand)]
enum VerifyCmd {
    Decay(Common),
    Bounds(Common),
    Appendix(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Transform,
    Direct,
    Both,
}

fn fail(e: &ExperimentError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("DSKG_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("warning: DSKG_THREADS ignored: {e}");
                }
            }
            _ => {
                eprintln!("error: DSKG_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(EXIT_CONFIG as u8);
            }
        }
    }
    let (run, common, method) = match cli.command {
        Command::Kernel {
            action: KernelCmd::Eval(c),
        } => ("kernel_eval", c, None),
        Command::Solve {
            action: SolveCmd::Linear { common, method },
        } => ("solve_linear", common, method),
        Command::Solve {
            action: SolveCmd::Direct(c),
        } => ("solve_direct", c, None),
        Command::Solve {
            action: SolveCmd::Semilinear(c),
        } => ("solve_semilinear", c, None),
        Command::Lifespan {
            action: LifespanCmd::Sweep(c),
        } => ("lifespan_sweep", c, None),
        Command::Verify {
            action: VerifyCmd::Decay(c),
        } => ("verify_decay", c, None),
        Command::Verify {
            action: VerifyCmd::Bounds(c),
        } => ("verify_bounds", c, None),
        Command::Verify {
            action: VerifyCmd::Appendix(c),
        } => ("verify_appendix", c, None),
    };
    let cfg = match build_config(run, &common, method) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    println!(
        "run {} config_hash={} output_dir={}",
        cfg.run,
        cfg.hash(),
        cfg.output_dir.display()
    );
    let started = std::time::Instant::now();
    let summary = match experiment::run_experiment(&cfg) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    for line in &summary.report {
        println!("{line}");
    }
    for c in &summary.checks {
        println!("{c}");
    }
    let passed = summary.checks.iter().filter(|c| c.passed).count();
    println!(
        "{passed}/{} checks passed in {:.2} s; wrote {}",
        summary.checks.len(),
        started.elapsed().as_secs_f64(),
        summary.files.join(", ")
    );
    ExitCode::from(summary.exit_code() as u8)
}

// Command-line choices are folded into the JSON before validation, so the
// hash written to every CSV covers them.
fn build_config(
    run: &str,
    common: &Common,
    method: Option<MethodArg>,
) -> Result<experiment::ExperimentConfig, ExperimentError> {
    let path = common.config.display().to_string();
    let text = std::fs::read_to_string(&common.config).map_err(|e| ExperimentError::Config {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let mut v: Value = serde_json::from_str(&text).map_err(|e| ExperimentError::Config {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let obj = v.as_object_mut().ok_or_else(|| ExperimentError::Config {
        path: "<root>".into(),
        message: "config must be a JSON object".into(),
    })?;
    match obj.get("run").and_then(Value::as_str) {
        Some(r) if r != run => {
            return Err(ExperimentError::Config {
                path: "run".into(),
                message: format!("config is for `{r}` but the subcommand runs `{run}`"),
            })
        }
        _ => {
            obj.insert("run".into(), Value::from(run));
        }
    }
    if let Some(out) = &common.out {
        obj.insert("output_dir".into(), Value::from(out.display().to_string()));
    }
    if let Some(seed) = common.seed {
        obj.insert("seed".into(), Value::from(seed));
    }
    if let Some(m) = method {
        let name = match m {
            MethodArg::Transform => "transform",
            MethodArg::Direct => "direct",
            MethodArg::Both => "both",
        };
        let solve = obj.entry("solve").or_insert_with(|| Value::Object(Default::default()));
        match solve.as_object_mut() {
            Some(s) => {
                s.insert("method".into(), Value::from(name));
            }
            None => {
                return Err(ExperimentError::Config {
                    path: "solve".into(),
                    message: "must be an object".into(),
                })
            }
        }
    }
    experiment::config_from_value(v)
}
