mod config;
mod error;
mod experiment;
mod io;
mod tools;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hsln::corpus::TextType;
use hsln::transfer::InitMode;

use config::ExperimentConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "hsln", version, about = "Hierarchical sequential sentence classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TextTypeArg {
    Abstract,
    FullPaper,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Init1,
    Init2,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw corpus into canonical JSONL.
    Ingest {
        input: PathBuf,
        /// pubmed-rct or canonical
        #[arg(long, default_value = "canonical")]
        format: String,
        #[arg(long)]
        name: Option<String>,
        /// Comma-separated class list, in scheme order.
        #[arg(long)]
        classes: Option<String>,
        #[arg(long, value_enum, default_value = "abstract")]
        text_type: TextTypeArg,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Train single-task or transfer-initialized models.
    Train {
        config: PathBuf,
        /// Output directory; defaults to $HSLN_OUTPUT_ROOT/<name>.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Train a multi-task model.
    TrainMtl {
        config: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Initialize the config's first task from a source checkpoint.
    TransferInit {
        config: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long, value_enum)]
        mode: InitArg,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a dataset; prints metrics JSON.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        task: Option<String>,
        /// Precomputed store for the dataset.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        max_tokens: usize,
        /// Write per-sentence predictions here.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Collapse datasets onto a generic label scheme.
    CompileGeneric {
        #[arg(long)]
        mapping: PathBuf,
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
        /// Keep this fraction of documents, e.g. 1/20.
        #[arg(long)]
        fraction: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Relatedness, silhouette and PCA over prediction dumps.
    Analyze {
        #[arg(required = true)]
        dumps: Vec<PathBuf>,
        #[arg(long)]
        clusters: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Re-render SVGs from analysis CSVs.
    ExportPlot {
        #[arg(long)]
        relatedness: Option<PathBuf>,
        #[arg(long)]
        pca: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest { input, format, name, classes, text_type, output } => {
            let text_type = match text_type {
                TextTypeArg::Abstract => TextType::Abstract,
                TextTypeArg::FullPaper => TextType::FullPaper,
            };
            let n = tools::ingest(&tools::IngestArgs { input, format, name, classes, text_type, output: output.clone() })?;
            println!("{n} sentences -> {}", output.display());
        }
        Command::Train { config, out } => train(&config, out, false)?,
        Command::TrainMtl { config, out } => train(&config, out, true)?,
        Command::TransferInit { config, source, mode, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let mode = match mode {
                InitArg::Init1 => InitMode::Init1,
                InitArg::Init2 => InitMode::Init2,
            };
            experiment::transfer_init(&cfg, &source, mode, &out)?;
            println!("{}", out.display());
        }
        Command::Evaluate { checkpoint, data, task, embeddings, max_tokens, output } => {
            let r = tools::evaluate(&tools::EvaluateArgs { checkpoint, data, task, embeddings, max_tokens, predictions: output })?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Command::CompileGeneric { mapping, datasets, fraction, seed, out_dir } => {
            for (name, counts) in tools::compile_generic(&tools::CompileArgs { mapping, datasets, fraction, seed, out_dir })? {
                let cells: Vec<String> = counts.iter().map(|(c, n)| format!("{c}={n}")).collect();
                println!("{name}: {}", cells.join(" "));
            }
        }
        Command::Analyze { dumps, clusters, out_dir } => {
            for w in tools::analyze(&tools::AnalyzeArgs { dumps, clusters, out_dir: out_dir.clone() })? {
                eprintln!("warning: {w}");
            }
            println!("{}", out_dir.display());
        }
        Command::ExportPlot { relatedness, pca, out_dir } => {
            if relatedness.is_none() && pca.is_none() {
                return Err(CliError::input("nothing to plot; pass --relatedness and/or --pca"));
            }
            std::fs::create_dir_all(&out_dir)?;
            if let Some(p) = relatedness {
                tools::plot_heatmap(&p, &out_dir.join("relatedness.svg"))?;
            }
            if let Some(p) = pca {
                tools::plot_scatter(&p, &out_dir.join("pca.svg"))?;
            }
        }
    }
    Ok(())
}

fn train(config: &std::path::Path, out: Option<PathBuf>, multitask: bool) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(config)?;
    let dir = experiment::output_root(&cfg, out);
    let summary = experiment::run_experiment(&cfg, &dir, multitask)?;
    println!("{}", summary.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
