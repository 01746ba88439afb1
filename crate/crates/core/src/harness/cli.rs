use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::adm::{AdmConfig, AdmMode};
use crate::adp::AdpConfig;
use crate::datasets::ToyDataset;
use crate::par::Exec;
use crate::Result;

use super::config::{read_config, RunConfig, TeachConfig};
use super::divlab::{divlab, Gauss};
use super::stages::{run_adm, run_adp, run_collect, run_eval, run_pipeline, run_teach, CollectArgs, EvalArgs};
use super::store::{write_csv, Header};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dmdx", version, about = "Few-step distillation of toy diffusion models")]
struct Cli {
    /// Run every batch loop on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Adm,
    Dmd,
}

impl From<ModeArg> for AdmMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Adm => AdmMode::Adm,
            ModeArg::Dmd => AdmMode::DmdBaseline,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a flow-matching teacher on a toy dataset.
    Teach {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the teacher ODE from seeded noise and store (noise, endpoint) pairs.
    Collect {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Draw a class label per pair.
        #[arg(long)]
        conditional: bool,
    },
    /// Adversarial pre-training of a one-step generator on stored pairs.
    Adp {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distribution matching distillation with or without the adversarial loss.
    Adm {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mode coverage and histogram divergences of a stored network.
    Eval {
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Euler steps for networks without their own schedule.
        #[arg(long, default_value_t = 64)]
        steps: usize,
        /// Network whose samples serve as a second reference.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Divergence estimators on two Gaussians against exact values.
    Divlab {
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        p_mean: f64,
        #[arg(long, default_value_t = 1.0)]
        p_var: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        q_mean: f64,
        #[arg(long, default_value_t = 1.0)]
        q_var: f64,
        #[arg(long, default_value_t = 20_000)]
        bins: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Every stage in sequence from one config and seed.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_rows(header: &str, rows: &[String]) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{header}")?;
    for r in rows {
        writeln!(out, "{r}")?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    match cli.command {
        Command::Teach { config, out } => {
            let cfg: TeachConfig = read_config(&config)?;
            run_teach(&cfg, &out)?;
        }
        Command::Collect {
            n,
            steps,
            seed,
            teacher,
            out,
            conditional,
        } => {
            let args = CollectArgs {
                n,
                steps,
                seed,
                conditional,
            };
            run_collect(&args, &teacher, &out, exec)?;
        }
        Command::Adp {
            config,
            teacher,
            pairs,
            out,
        } => {
            let cfg: AdpConfig = read_config(&config)?;
            run_adp(&cfg, &teacher, &pairs, &out)?;
        }
        Command::Adm {
            config,
            teacher,
            init,
            mode,
            out,
        } => {
            let cfg: AdmConfig = read_config(&config)?;
            run_adm(&cfg, mode.into(), &teacher, &init, &out, None)?;
        }
        Command::Eval {
            gen,
            dataset,
            n,
            seed,
            steps,
            reference,
            out,
        } => {
            let args = EvalArgs {
                dataset: ToyDataset::by_name(&dataset)?,
                n,
                seed,
                steps,
            };
            let rows = run_eval(&gen, reference.as_deref(), &args, out.as_deref(), exec)?;
            if out.is_none() {
                let lines: Vec<String> = rows.iter().map(|(m, v)| format!("{m},{v:e}")).collect();
                print_rows("metric,value", &lines)?;
            }
        }
        Command::Divlab {
            p_mean,
            p_var,
            q_mean,
            q_var,
            bins,
            out,
        } => {
            let rows = divlab(Gauss::new(p_mean, p_var)?, Gauss::new(q_mean, q_var)?, bins)?;
            let lines: Vec<String> = rows
                .iter()
                .map(|r| format!("{},{:e},{:e},{:e}", r.metric.name(), r.estimate, r.oracle, r.rel_err()))
                .collect();
            let columns = "metric,estimate,oracle,rel_err";
            match out {
                Some(path) => {
                    let hash = super::config::config_hash(&(p_mean, p_var, q_mean, q_var, bins))?;
                    write_csv(&path, &Header::new(hash, 0, "divlab"), columns, &lines)?;
                }
                None => print_rows(columns, &lines)?,
            }
        }
        Command::Pipeline { config, out } => {
            let cfg: RunConfig = read_config(&config)?;
            run_pipeline(&cfg, &out, exec)?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the subcommand. Returns
/// the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
