mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rawnet::backend::BackendKind;
use rawnet::config::RunConfig;

/// Raw-waveform speaker verification: data generation, training,
/// embedding extraction, trial scoring and EER evaluation.
#[derive(Parser)]
#[command(name = "rawnet", version = concat!(env!("CARGO_PKG_VERSION"), " (", env!("RAWNET_GIT_DESCRIBE"), ")"))]
#[command(args_conflicts_with_subcommands = true, arg_required_else_help = true)]
struct Cli {
    /// Print the full default configuration and exit.
    #[arg(long)]
    dump_config: bool,
    /// With --dump-config, print the shrunk desk-scale preset instead.
    #[arg(long, requires = "dump_config")]
    desk: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
pub struct OutArgs {
    /// Output directory; created on success only.
    #[arg(long)]
    out: PathBuf,
    /// Replace a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multi-speaker corpus.
    GenData {
        #[arg(long, default_value_t = 20)]
        speakers: usize,
        #[arg(long, default_value_t = 10)]
        utts: usize,
        /// Speakers held out of training for the trial list.
        #[arg(long, default_value_t = 6)]
        trial_speakers: usize,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train the convolutional pre-training network.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Corpus directory or manifest.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train the full network with the configured loss profile.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Pre-trained network (checkpoint or pretrain output directory).
        #[arg(long)]
        pretrained: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Extract whole-utterance embeddings for a corpus.
    Extract {
        /// Front-end checkpoint or train output directory.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = commands::SplitSel::All)]
        split: commands::SplitSel,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train a back-end classifier on extracted embeddings.
    BackendTrain {
        #[arg(long)]
        config: PathBuf,
        /// Embedding file or extract output directory.
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, value_parser = parse_backend)]
        backend: BackendKind,
        /// Restrict training to the corpus's train split.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Score a trial list.
    Score {
        #[arg(long, value_parser = parse_backend, default_value = "cosine")]
        backend: BackendKind,
        /// Back-end checkpoint or backend-train output directory.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Embedding file or extract output directory.
        #[arg(long, conflicts_with = "frontend")]
        embeddings: Option<PathBuf>,
        /// Front-end checkpoint to embed trial utterances on the fly.
        #[arg(long, requires = "data")]
        frontend: Option<PathBuf>,
        /// Corpus directory; its trials.csv is used unless --trials is given.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        trials: Option<PathBuf>,
        /// Embed every utterance once per trial instead of once per run.
        #[arg(long)]
        no_cache: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Print `EER%  threshold  n_trials` for a score file.
    Eval {
        /// Score file or score output directory.
        #[arg(long)]
        scores: PathBuf,
        /// Also write metrics and DET points here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    s.parse().map_err(|e: rawnet::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if cli.dump_config {
        let cfg = if cli.desk { RunConfig::desk() } else { RunConfig::default() };
        print!("{}", cfg.to_documented_toml());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        return ExitCode::SUCCESS;
    };
    let result = match command {
        Command::GenData {
            speakers,
            utts,
            trial_speakers,
            trials,
            seed,
            out,
        } => commands::gen_data(speakers, utts, trial_speakers, trials, seed, &out),
        Command::Pretrain { config, data, out } => commands::pretrain(&config, &data, &out),
        Command::Train {
            config,
            data,
            pretrained,
            out,
        } => commands::train(&config, &data, pretrained.as_deref(), &out),
        Command::Extract { model, data, split, out } => commands::extract(&model, &data, split, &out),
        Command::BackendTrain {
            config,
            embeddings,
            backend,
            data,
            out,
        } => commands::backend_train(&config, &embeddings, backend, data.as_deref(), &out),
        Command::Score {
            backend,
            model,
            embeddings,
            frontend,
            data,
            trials,
            no_cache,
            out,
        } => commands::score(commands::ScoreArgs {
            backend,
            model,
            embeddings,
            frontend,
            data,
            trials,
            cache: !no_cache,
            out,
        }),
        Command::Eval { scores, out, force } => commands::eval(&scores, out.as_deref(), force),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
