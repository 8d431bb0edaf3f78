//! Batch CLI over the pipeline library. Every subcommand is reproducible
//! byte-for-byte under a fixed seed and single-threaded execution.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sc2macro::catalog::MatchUp;
use sc2macro::pipeline::{self, PipelineConfig};

#[derive(Parser)]
#[command(name = "sc2macro", version, about = "Replay-to-text macromanagement prediction pipeline")]
struct Cli {
    /// Pipeline config file (TOML or JSON); defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every stochastic choice of the subcommand.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for evaluation (other commands are single-threaded).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize replays, compile prompts, and write the text corpus.
    PrepareData {
        /// Match-up such as TvT or PvZ.
        #[arg(long)]
        matchup: MatchUp,
        /// Number of replays to synthesize.
        #[arg(long)]
        n: usize,
    },
    /// Fit the stage-1 adapter on the question/answer corpus.
    TrainStage1 {
        /// Existing base checkpoint; a fresh one is initialized if absent.
        #[arg(long)]
        base: Option<PathBuf>,
        /// Question/answer JSONL corpus; the embedded sample if absent.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Fit a per-match-up stage-2 adapter on compiled prompts.
    TrainStage2 {
        /// Base checkpoint (normally the stage-1 merge).
        #[arg(long)]
        base: PathBuf,
        /// Compiled prompts JSONL from prepare-data.
        #[arg(long)]
        prompts: PathBuf,
    },
    /// Fold an adapter into a base checkpoint.
    MergeAdapter {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        adapter: PathBuf,
    },
    /// Score a checkpoint on a directory of replays.
    Evaluate(EvalArgs),
    /// Score an adapter on a match-up it was not trained on.
    ZeroShotEval(EvalArgs),
    /// Generate a completion for one instruction.
    Predict {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        adapter: Option<PathBuf>,
        /// Instruction text; read from this file when it names one.
        #[arg(long)]
        instruction: String,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    adapter: Option<PathBuf>,
    /// Directory of replay JSONL files.
    #[arg(long)]
    replays: PathBuf,
}

fn run(cli: Cli) -> sc2macro::Result<()> {
    let cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build()
        .map_err(|e| sc2macro::Error::InvalidConfig(e.to_string()))?;

    match cli.command {
        Command::PrepareData { matchup, n } => {
            let summary = pipeline::prepare_data(&cfg, matchup, n, cli.seed, &cli.out_dir)?;
            println!(
                "wrote {} replays to {} and {} prompt pairs to {}",
                summary.n_replays,
                summary.replay_dir.display(),
                summary.n_prompts,
                summary.prompts_path.display()
            );
            println!("stage-1 corpus at {}", summary.corpus_path.display());
        }
        Command::TrainStage1 { base, corpus } => {
            let (base_out, adapter_out, log) = pipeline::cmd_train_stage1(
                &cfg,
                base.as_deref(),
                corpus.as_deref(),
                cli.seed,
                &cli.out_dir,
            )?;
            println!(
                "base checkpoint at {}, adapter at {}, final loss {:.4} over {} steps",
                base_out.display(),
                adapter_out.display(),
                log.final_loss,
                log.steps.len()
            );
        }
        Command::TrainStage2 { base, prompts } => {
            let (adapter_out, log) =
                pipeline::cmd_train_stage2(&cfg, &base, &prompts, cli.seed, &cli.out_dir)?;
            println!(
                "adapter at {}, final loss {:.4} over {} steps",
                adapter_out.display(),
                log.final_loss,
                log.steps.len()
            );
        }
        Command::MergeAdapter { base, adapter } => {
            pipeline::cmd_merge_adapter(&base, &adapter, &cli.out_dir)?;
            println!("merged checkpoint at {}", cli.out_dir.display());
        }
        Command::Evaluate(args) => {
            let report = pool.install(|| {
                pipeline::cmd_evaluate(
                    &cfg,
                    &args.base,
                    args.adapter.as_deref(),
                    &args.replays,
                    &cli.out_dir,
                    false,
                )
            })?;
            print_report(&report, &cli.out_dir);
        }
        Command::ZeroShotEval(args) => {
            let report = pool.install(|| {
                pipeline::cmd_evaluate(
                    &cfg,
                    &args.base,
                    args.adapter.as_deref(),
                    &args.replays,
                    &cli.out_dir,
                    true,
                )
            })?;
            print_report(&report, &cli.out_dir);
        }
        Command::Predict {
            base,
            adapter,
            instruction,
        } => {
            let text = if std::path::Path::new(&instruction).is_file() {
                std::fs::read_to_string(&instruction)?
            } else {
                instruction
            };
            let completion =
                pipeline::cmd_predict(&cfg, &base, adapter.as_deref(), text.trim_end())?;
            println!("{completion}");
        }
    }
    Ok(())
}

fn print_report(report: &sc2macro::eval::EvalReport, out_dir: &std::path::Path) {
    println!(
        "{}: GS {:.4}  BO {:.4}  parse failures {:.4}  over {} steps",
        report.matchup,
        report.gs_accuracy,
        report.bo_accuracy,
        report.parse_failure_rate,
        report.n_steps
    );
    println!("report at {}", out_dir.join("eval_report.json").display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
