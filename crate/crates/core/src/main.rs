use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use chargenet::data::{generate_synthetic, load_cases, save_cases, split_dataset, KnowledgeTree, SplitRatios, SyntheticSpec};
use chargenet::harness::{evaluate, load_checkpoint, save_checkpoint, train, FactEncoderKind, TrainConfig};
use chargenet::{Error, Result};

#[derive(Parser)]
#[command(name = "chargenet", version, about = "Knowledge-aware charge prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderArg {
    Gcn,
    Bilstm,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write the checkpoint and epoch log to a directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        knowledge: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Drop the knowledge encoder and matching network.
        #[arg(long)]
        no_knowledge: bool,
        #[arg(long, value_enum)]
        fact_encoder: Option<EncoderArg>,
    },
    /// Score a checkpoint on one split of a case file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Rank charges for a single fact description.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        fact: String,
    },
    /// Write a synthetic knowledge tree and case file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).map_err(|e| Error::io("<stdout>", e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            data,
            knowledge,
            out,
            no_knowledge,
            fact_encoder,
        } => {
            let mut cfg = TrainConfig::load(&config)?;
            if no_knowledge {
                cfg.use_knowledge = false;
            }
            match fact_encoder {
                Some(EncoderArg::Gcn) => cfg.fact_encoder = FactEncoderKind::Gcn,
                Some(EncoderArg::Bilstm) => cfg.fact_encoder = FactEncoderKind::Bilstm,
                None => {}
            }
            cfg.validate()?;
            let tree = KnowledgeTree::load(&knowledge)?;
            let cases = load_cases(&data, &tree)?;
            let (tr, va, te) = split_dataset(&cases, SplitRatios::default(), cfg.seed)?;
            create_dir(&out)?;
            let log_path = out.join("train_log.jsonl");
            let log_file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
            let mut log = BufWriter::new(log_file);
            let mut write_err = None;
            let outcome = train(&cfg, &tr, &va, &tree, |entry| {
                eprintln!(
                    "epoch {:>3}  loss {:.4}  val acc {:.4}  val ma-f1 {:.4}",
                    entry.epoch, entry.train_loss, entry.val_acc, entry.val_maf1
                );
                let line = serde_json::to_string(entry).expect("log entry serializes");
                if let Err(e) = writeln!(log, "{line}") {
                    write_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = write_err {
                return Err(Error::io(&log_path, e));
            }
            log.flush().map_err(|e| Error::io(&log_path, e))?;
            save_checkpoint(&outcome.model, out.join("model.ckpt"))?;
            let test = evaluate(&outcome.model, &te)?;
            print_json(&serde_json::json!({
                "best_epoch": outcome.best_epoch,
                "epochs_run": outcome.log.len(),
                "stopped_early": outcome.stopped_early,
                "test": test.report,
            }))
        }
        Command::Eval { checkpoint, data, split } => {
            let model = load_checkpoint(&checkpoint)?;
            let cases = load_cases(&data, &model.knowledge)?;
            let (tr, va, te) = split_dataset(&cases, SplitRatios::default(), model.config.seed)?;
            let records = match split {
                Split::Train => tr,
                Split::Val => va,
                Split::Test => te,
            };
            print_json(&evaluate(&model, &records)?.report)
        }
        Command::Predict { checkpoint, fact } => {
            let model = load_checkpoint(&checkpoint)?;
            print_json(&model.predict(&fact)?)
        }
        Command::Synth { spec, out } => {
            let text = fs::read_to_string(&spec).map_err(|e| Error::io(&spec, e))?;
            let spec: SyntheticSpec = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            let (tree, cases) = generate_synthetic(&spec)?;
            create_dir(&out)?;
            tree.save(out.join("knowledge.json"))?;
            save_cases(out.join("cases.jsonl"), &cases)?;
            eprintln!("wrote {} charges and {} cases to {}", tree.num_charges(), cases.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
