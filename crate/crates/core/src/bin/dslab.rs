use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dualstudent::cli::{
    cmd_analyze, cmd_gradcheck, cmd_sweep, cmd_train, default_out_root, parse_seeds, AnalyzeArgs, ExperimentFile,
    Overrides, ANALYSES,
};
use dualstudent::gradcheck::GradcheckOptions;
use dualstudent::trainers::Method;
use dualstudent::Error;

const PRECEDENCE: &str = "Config precedence, lowest to highest: built-in defaults, the experiment file, \
--set section.key=value overrides (in order), then --seed/--method/--epochs.\n\
Outputs go under $DSLAB_OUT (default ./runs) unless --out is given.\n\
Exit codes: 0 success, 1 usage or config error, 2 numeric failure, 3 I/O error.";

#[derive(Parser)]
#[command(name = "dslab", version, about = "Dual Student experiments on desk-scale data", after_help = PRECEDENCE)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment file (TOML with [data], [model], [train], [analysis]).
    config: PathBuf,
    /// Override a key, e.g. --set train.xi=0.4 (repeatable).
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// One of supervised, pi, mean_teacher, cs_baseline, dual_student,
    /// multiple_student, imbalanced_student, domain_adapt.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentFile, Error> {
        let method = self.method.as_deref().map(str::parse::<Method>).transpose()?;
        let o = Overrides {
            set: self.set.clone(),
            seed: self.seed,
            method,
            epochs: self.epochs,
        };
        ExperimentFile::load(&self.config, &o)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one configuration and write metrics, resolved config and checkpoints.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One run per (value, seed); writes summary.csv with mean and std of final accuracy.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Key to vary, e.g. train.xi.
        #[arg(long)]
        key: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<String>,
        /// Seeds as 0-4 or 0,1,2.
        #[arg(long, default_value = "0-4")]
        seeds: String,
        /// Parallel runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient check over every op and the full composites.
    Gradcheck {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Corrupt one case's analytic gradient (negative control).
        #[arg(long, hide = true)]
        fault: Option<String>,
    },
    /// Diagnostics on finished runs: stable-report, ema-check, coupling, track.
    Analyze {
        name: String,
        /// Run directory (repeat for coupling across runs).
        #[arg(long = "run")]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        xi: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Ratio r of the test sequence r^t for ema-check.
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Cmd::Train { cfg, out } => {
            let file = cfg.load()?;
            let out = out.unwrap_or_else(|| {
                default_out_root().join(format!("{}-seed{}", file.train.method.name(), file.train.seed))
            });
            let r = cmd_train(&file, &out)?;
            println!(
                "{}: final test_acc {:.4} ({} epochs) -> {}",
                r.run_id,
                r.final_accuracy(),
                file.train.epochs,
                out.display()
            );
        }
        Cmd::Sweep {
            cfg,
            key,
            values,
            seeds,
            jobs,
            out,
        } => {
            let file = cfg.load()?;
            let seeds = parse_seeds(&seeds)?;
            let out = out.unwrap_or_else(|| default_out_root().join(format!("sweep-{key}")));
            let rows = cmd_sweep(&file, &key, &values, &seeds, jobs, &out)?;
            for r in rows {
                println!("{key}={:<10} runs {:>3}  mean {:.4}  std {:.4}", r.value, r.runs, r.mean, r.std);
            }
            println!("summary -> {}", out.join("summary.csv").display());
        }
        Cmd::Gradcheck { out, fault } => {
            let out = out.unwrap_or_else(|| default_out_root().join("gradcheck"));
            let res = cmd_gradcheck(&out, &GradcheckOptions { fault })?;
            for r in res {
                println!("{:24} {:9} {:.3e} < {:.0e}", r.name, r.kind.name(), r.max_rel_error, r.threshold);
            }
        }
        Cmd::Analyze {
            name,
            runs,
            out,
            xi,
            alpha,
            ratio,
            steps,
        } => {
            if !ANALYSES.contains(&name.as_str()) {
                return Err(Error::Config(format!(
                    "unknown analysis {name:?}; valid names: {}",
                    ANALYSES.join(", ")
                )));
            }
            let args = AnalyzeArgs {
                runs,
                out,
                xi,
                alpha,
                ratio,
                steps,
            };
            let path = cmd_analyze(&name, &args)?;
            println!("{name} -> {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dslab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
