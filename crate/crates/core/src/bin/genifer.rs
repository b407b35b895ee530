use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use genifer::metrics::{emit_report, write_sample_grid};
use genifer::task_stream::{toy, write_dataset_dir, DatasetManifest, Split};
use genifer::trainer::{
    find_latest_checkpoint, load_data, load_run_checkpoint, run_ablation, run_sequence, ExperimentConfig, RunOptions,
    RunRecord, ARMS,
};
use genifer::{Error, Result};

#[derive(Parser)]
#[command(name = "genifer", version, about = "Class-incremental learning with generative feature-matched replay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run over the whole task sequence.
    Run {
        /// TOML experiment config.
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for records, report and checkpoints.
        #[arg(long, short)]
        out: PathBuf,
        /// Ablation arm to apply before running (e.g. `dfm`, `finetune`).
        #[arg(long)]
        arm: Option<String>,
        /// Continue from the latest checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Run several arms over shared seeds and write a combined report.
    Ablate {
        config: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Comma-separated arms; defaults to the config's ablation list.
        #[arg(long, value_delimiter = ',')]
        arms: Option<Vec<String>>,
        /// Comma-separated seeds; defaults to the config's ablation seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Evaluate a checkpoint on the test classes seen so far.
    Eval {
        /// Checkpoint file, or a run directory whose latest checkpoint is used.
        checkpoint: PathBuf,
        /// Config the run was trained with.
        #[arg(long)]
        config: PathBuf,
    },
    /// Rebuild the report (table, curves, records) from run records.
    Plot {
        /// `run.json` files or `runs.ndjson` files.
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Write the bundled toy dataset as a dataset directory.
    ExportToy {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        train_per_class: usize,
        #[arg(long, default_value_t = 40)]
        test_per_class: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Write a PNG grid of EMA-generator samples, one row per trained class.
    Samples {
        checkpoint: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.is_dir() {
        let dir = if path.join("checkpoints").is_dir() { path.join("checkpoints") } else { path.to_path_buf() };
        find_latest_checkpoint(&dir)?.ok_or_else(|| Error::State(format!("no checkpoint in {}", dir.display())))
    } else {
        Ok(path.to_path_buf())
    }
}

fn read_records(paths: &[PathBuf]) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for p in paths {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let parse = |s: &str| serde_json::from_str::<RunRecord>(s).map_err(|e| Error::Format(format!("{}: {e}", p.display())));
        if p.extension().is_some_and(|e| e == "ndjson") {
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                out.push(parse(line)?);
            }
        } else {
            out.push(parse(&text)?);
        }
    }
    Ok(out)
}

fn print_record(r: &RunRecord) {
    println!("run {} ({})", r.run_id, r.mode);
    for t in &r.tasks {
        println!("  task {:>2}: alpha_all_t = {:.4}  per task {:.3?}", t.task, t.alpha_all_t, t.accuracy_per_task);
    }
    match r.alpha_all {
        Some(a) => println!("  alpha_all = {a:.4}"),
        None => println!("  alpha_all = n/a (run incomplete or single task)"),
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            arm,
            resume,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(a) = &arm {
                cfg = cfg.with_arm(a)?;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let opts = RunOptions {
                out_dir: Some(out),
                resume,
                label: arm,
                ..RunOptions::default()
            };
            print_record(&run_sequence(&cfg, &opts)?.record);
        }
        Command::Ablate {
            config,
            out,
            arms,
            seeds,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let arms = arms.unwrap_or_else(|| cfg.ablation.arms.clone());
            if let Some(bad) = arms.iter().find(|a| !ARMS.contains(&a.as_str())) {
                return Err(Error::Config(format!("unknown arm `{bad}`")));
            }
            let seeds = seeds.unwrap_or_else(|| cfg.ablation.seeds.clone());
            let records = run_ablation(&cfg, &arms, &seeds, Some(&out))?;
            for r in &records {
                print_record(r);
            }
            print!("{}", fs::read_to_string(out.join("summary.md")).map_err(|e| Error::io(out.join("summary.md"), e))?);
        }
        Command::Eval { checkpoint, config } => {
            let path = resolve_checkpoint(&checkpoint)?;
            let cfg = ExperimentConfig::load(&config)?;
            let ck = load_run_checkpoint(&path)?;
            if ck.config_hash != cfg.hash() {
                log::warn!("checkpoint was written by a different config; evaluating anyway");
            }
            let data = load_data(&cfg)?;
            let (alpha, per_task) = data.evaluate(&ck.classifier, ck.task)?;
            println!("checkpoint {} (task {}, {})", path.display(), ck.task, ck.phase.name());
            println!("  alpha_all_t = {alpha:.4}  per task {per_task:.3?}");
            print_record(&ck.record);
        }
        Command::Plot { records, out } => {
            let records = read_records(&records)?;
            let files = emit_report(&records, &out)?;
            println!("wrote {} and {} curve files", files.summary_table.display(), files.curves.len() + 1);
        }
        Command::ExportToy {
            out,
            train_per_class,
            test_per_class,
            seed,
        } => {
            let names = toy::TOY_CLASS_NAMES.iter().map(|s| s.to_string()).collect();
            let manifest = DatasetManifest::new(names, toy::TOY_SIZE, toy::TOY_SIZE, 3);
            write_dataset_dir(&out, &manifest, &toy::generate(train_per_class, Split::Train, seed)?)?;
            write_dataset_dir(&out, &manifest, &toy::generate(test_per_class, Split::Test, seed)?)?;
            println!("wrote toy dataset to {}", out.display());
        }
        Command::Samples {
            checkpoint,
            out,
            per_class,
            seed,
        } => {
            let ck = load_run_checkpoint(&resolve_checkpoint(&checkpoint)?)?;
            let gan = ck.gan.ok_or_else(|| Error::State("checkpoint holds no generator".into()))?;
            let grid = genifer::trainer::sample_grid(&gan, per_class, &mut ChaCha8Rng::seed_from_u64(seed))?;
            write_sample_grid(&grid, per_class, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::Io { .. } => 3,
                _ => 1,
            })
        }
    }
}
