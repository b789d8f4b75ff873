//! Command-line driver: dataset generation, training, evaluation, the
//! ablation matrix, and prompt-embedding inspection.

use clap::{Parser, Subcommand};
use diffpol::checkpoint::{load_checkpoint, save_checkpoint};
use diffpol::data::{default_benchmark, generate_datasets, read_datasets, write_datasets, Benchmark};
use diffpol::error::{Error, Result};
use diffpol::eval::{
    ablation_matrix, evaluate, format_ablation_table, format_table, write_report,
};
use diffpol::neural::MlpCache;
use diffpol::prompts::{embed_text, parse_text_prompt};
use diffpol::train::{
    make_text_encoder, prepare_tasks, train_epoch, Ablation, TrainState, TrainerConfig,
};
use std::io::Write as _;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "diffpol",
    about = "Prompt-conditioned diffusion policies for offline multi-task RL",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate offline training datasets with the scripted controller.
    GenData {
        /// Benchmark JSON file with the task specs.
        #[arg(long, conflicts_with = "default_benchmark")]
        benchmark: Option<PathBuf>,
        /// Use the built-in benchmark and write it to OUT/benchmark.json.
        #[arg(long)]
        default_benchmark: bool,
        /// Output directory for the .jsonl dataset files.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        episodes_per_task: usize,
        /// Exploration noise of the data-collection controller.
        #[arg(long, default_value_t = 0.25)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a policy on generated datasets.
    Train {
        /// TOML config; omitted keys take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory of .jsonl dataset files.
        #[arg(long)]
        data: PathBuf,
        /// Where to write the checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// Append per-epoch metrics as JSON lines.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Continue from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config ablation (full, no_prompt, no_text, no_traj).
        #[arg(long)]
        ablation: Option<String>,
        /// Override the config epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on a benchmark.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write per-task rows as JSON lines.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every ablation variant over several seeds and tabulate.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        benchmark: PathBuf,
        /// Number of seeds per variant (config seed, +1, +2, ...).
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        #[arg(long, default_value_t = 1000)]
        eval_seed: u64,
        /// Write the matrix as pretty JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embed a serialized text prompt and print the projected vector.
    EmbedText {
        /// File holding the prompt in its serialized text form.
        #[arg(long)]
        prompt: PathBuf,
        /// Use the trained text head from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Seed for a freshly initialized head when no checkpoint is given.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            benchmark,
            default_benchmark: use_default,
            out,
            episodes_per_task,
            noise,
            seed,
        } => {
            let bench = match (&benchmark, use_default) {
                (Some(path), false) => Benchmark::load(path)?,
                (None, true) => default_benchmark(),
                (None, false) => {
                    return Err(Error::argument(
                        "pass --benchmark FILE or --default-benchmark",
                    ));
                }
                (Some(_), true) => unreachable!("clap rejects the conflict"),
            };
            std::fs::create_dir_all(&out)?;
            if use_default {
                let bench_path = out.join("benchmark.json");
                bench.save(&bench_path)?;
                println!("wrote {}", bench_path.display());
            }
            let sets = generate_datasets(&bench.seen, episodes_per_task, noise, seed)?;
            write_datasets(&out, &sets)?;
            for d in &sets {
                println!(
                    "wrote {} ({} transitions)",
                    out.join(format!("{}.jsonl", d.task_id)).display(),
                    d.transitions.len()
                );
            }
            Ok(())
        }
        Command::Train {
            config,
            data,
            out,
            metrics,
            resume,
            seed,
            ablation,
            epochs,
        } => {
            let mut cfg = match &config {
                Some(path) => TrainerConfig::load(path)?,
                None => TrainerConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(ablation) = &ablation {
                cfg.ablation = ablation.parse::<Ablation>()?;
            }
            if let Some(epochs) = epochs {
                cfg.epochs = epochs;
            }
            let mut state = match &resume {
                Some(path) => {
                    let state = load_checkpoint(path)?;
                    let mut resumed = state.config.clone();
                    // Fields that only steer how long we train may change
                    // on resume; everything else must match.
                    resumed.epochs = cfg.epochs;
                    if config.is_some() && resumed != cfg {
                        return Err(Error::config(
                            "--config disagrees with the checkpoint being resumed",
                        ));
                    }
                    let mut state = state;
                    state.config.epochs = cfg.epochs;
                    state
                }
                None => TrainState::new(cfg)?,
            };
            let datasets = read_datasets(&data)?;
            let encoder = make_text_encoder(&state.config)?;
            let tasks = prepare_tasks(&datasets, encoder.as_ref(), &state.config)?;
            println!(
                "training on {} tasks ({} total transitions), ablation {}, {} epochs",
                tasks.len(),
                tasks.iter().map(|t| t.transitions.len()).sum::<usize>(),
                state.config.ablation.name(),
                state.config.epochs
            );
            let mut metrics_file = match &metrics {
                Some(path) => Some(std::fs::OpenOptions::new().create(true).append(true).open(path)?),
                None => None,
            };
            while state.epoch < state.config.epochs {
                let m = train_epoch(&mut state, &tasks, None)?;
                let line = serde_json::to_string(&m).expect("metrics serialize");
                println!("{line}");
                if let Some(f) = metrics_file.as_mut() {
                    writeln!(f, "{line}")?;
                }
                if state.epoch % 20 == 0 {
                    save_checkpoint(&state, &out)?;
                }
            }
            save_checkpoint(&state, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Eval {
            checkpoint,
            benchmark,
            episodes,
            seed,
            out,
        } => {
            let state = load_checkpoint(&checkpoint)?;
            let bench = Benchmark::load(&benchmark)?;
            let encoder = make_text_encoder(&state.config)?;
            let rows = evaluate(&state, encoder.as_ref(), &bench, episodes, seed)?;
            print!("{}", format_table(&rows));
            if let Some(path) = out {
                write_report(&path, &rows)?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Ablate {
            config,
            data,
            benchmark,
            seeds,
            episodes,
            eval_seed,
            out,
        } => {
            let cfg = match &config {
                Some(path) => TrainerConfig::load(path)?,
                None => TrainerConfig::default(),
            };
            let datasets = read_datasets(&data)?;
            let bench = Benchmark::load(&benchmark)?;
            let encoder = make_text_encoder(&cfg)?;
            let seed_list: Vec<u64> = (0..seeds as u64).map(|i| cfg.seed + i).collect();
            let variants = [
                Ablation::Full,
                Ablation::NoPrompt,
                Ablation::NoText,
                Ablation::NoTraj,
            ];
            let cells = ablation_matrix(
                &cfg,
                &datasets,
                encoder.as_ref(),
                &bench,
                &variants,
                &seed_list,
                episodes,
                eval_seed,
                |msg| println!("{msg}"),
            )?;
            print!("{}", format_ablation_table(&cells));
            if let Some(path) = out {
                let json = serde_json::to_string_pretty(&cells).expect("cells serialize");
                std::fs::write(&path, json + "\n")?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::EmbedText {
            prompt,
            checkpoint,
            seed,
        } => {
            let text = std::fs::read_to_string(&prompt)?;
            let parsed = parse_text_prompt(&text)?;
            let state = match &checkpoint {
                Some(path) => load_checkpoint(path)?,
                None => TrainState::new(TrainerConfig {
                    seed,
                    ..TrainerConfig::default()
                })?,
            };
            let encoder = make_text_encoder(&state.config)?;
            let mut cache = MlpCache::default();
            let z = embed_text(encoder.as_ref(), &state.text_head, &parsed, &mut cache)?;
            let json = serde_json::json!({
                "task_name": parsed.task_name,
                "raw_dim": state.config.d_raw,
                "embedding": z.row(0),
            });
            println!("{}", serde_json::to_string(&json).expect("embedding serializes"));
            Ok(())
        }
    }
}
