use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use patchlink::cli::{self, EvalOptions, TrainOptions};
use patchlink::config::{parse_list, RunConfig, ARTIFACT_ROOT_ENV};
use patchlink::{Error, Result};

#[derive(Parser)]
#[command(version, about = "Multi-granularity patch transformer for dynamic link prediction")]
struct Cli {
    /// Directory holding prepared datasets and runs.
    #[arg(long, global = true, env = ARTIFACT_ROOT_ENV)]
    artifact_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a dataset and write the graph artifact and split manifest.
    Prepare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train, select on validation, and evaluate on the test range.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds; reports mean and std across them.
        #[arg(long)]
        seeds: Option<String>,
        /// Features to disable, e.g. `intersect=off,occurrence=off`.
        #[arg(long)]
        ablate: Option<String>,
        #[arg(long, value_parser = ["gru", "mlp", "sum"])]
        intersect_mode: Option<String>,
        /// Comma-separated, strictly increasing.
        #[arg(long)]
        patch_sizes: Option<String>,
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Re-evaluate a stored checkpoint.
    Eval {
        #[arg(long)]
        run_dir: PathBuf,
        /// Check the checkpoint against this config instead of the run's own.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        negatives: Option<usize>,
        #[arg(long, value_parser = ["best", "last"])]
        checkpoint: Option<String>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// `SRC,DST,T` (original node ids): also dump that pair's feature bundles.
        #[arg(long)]
        dump_bundle: Option<String>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let root = cli::artifact_root(cli.artifact_root.as_deref());
    match cli.command {
        Command::Prepare { config } => {
            let dir = cli::cmd_prepare(&RunConfig::load(&config)?, &root)?;
            println!("{}", dir.display());
        }
        Command::Train {
            config,
            seeds,
            ablate,
            intersect_mode,
            patch_sizes,
            run_dir,
        } => {
            let opts = TrainOptions {
                seeds: seeds.as_deref().map(parse_list).transpose()?,
                ablate,
                intersect_mode,
                patch_sizes,
                run_dir,
            };
            let out = cli::cmd_train(RunConfig::load(&config)?, &opts, &root)?;
            let s = &out.summary;
            println!("run: {}", out.run_dir.display());
            for (name, m) in [("mrr", s.mrr), ("auc_roc", s.auc_roc), ("ap", s.ap)] {
                println!("{name}: {:.4} ± {:.4}", m.mean, m.std);
            }
        }
        Command::Eval {
            run_dir,
            config,
            seed,
            negatives,
            checkpoint,
            output,
            dump_bundle,
        } => {
            let dump_bundle = dump_bundle
                .map(|s| -> Result<_> {
                    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
                    match parts.as_slice() {
                        [a, b, t] => Ok((
                            a.to_string(),
                            b.to_string(),
                            t.parse().map_err(|_| Error::Config(format!("bad snapshot {t:?}")))?,
                        )),
                        _ => Err(Error::Config(format!("--dump-bundle {s:?} is not SRC,DST,T"))),
                    }
                })
                .transpose()?;
            let opts = EvalOptions {
                config,
                seed,
                negatives,
                checkpoint,
                output,
                dump_bundle,
            };
            let out = cli::cmd_eval(&run_dir, &opts)?;
            println!("{}", serde_json::to_string_pretty(&out.metrics).expect("metrics serialize"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
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
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
