//! `wavegan` command-line tool.

mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use wavegan::Error;

/// Non-autoregressive GAN vocoder with separate voiced and unvoiced discriminators.
#[derive(Parser, Debug)]
#[command(name = "wavegan", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract conditioning features from WAV files into feature caches and a manifest.
    Featurize(FeaturizeArgs),
    /// Render the synthetic harmonic/noise corpus to disk with caches and a manifest.
    SynthCorpus(SynthCorpusArgs),
    /// Train generator and discriminators on a manifest.
    Train(TrainArgs),
    /// Synthesize a waveform from a checkpoint and features.
    Synth(SynthArgs),
    /// Print parameter counts, receptive fields and dilation schedules.
    Inspect(InspectArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct FeaturizeArgs {
    /// Input WAV files.
    #[arg(required = true)]
    wavs: Vec<PathBuf>,
    /// Directory for the feature caches and the manifest.
    #[arg(long, default_value = "features")]
    out: PathBuf,
    /// Analysis frame shift in milliseconds.
    #[arg(long, default_value_t = 5.0)]
    frame_shift_ms: f64,
}

#[derive(Args, Debug)]
struct SynthCorpusArgs {
    /// Output directory.
    #[arg(long, default_value = "corpus")]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    clips: usize,
    /// Length of each clip in seconds.
    #[arg(long, default_value_t = 0.5)]
    seconds: f64,
    #[arg(long, default_value_t = 8000)]
    sample_rate: u32,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// key = value file applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the single-core desk preset instead of the full-scale one.
    #[arg(long)]
    desk: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Corpus manifest (`wav<TAB>cache` per line).
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for metrics.csv and checkpoints.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Continue from this checkpoint; its config wins over --config and --desk.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the total step count.
    #[arg(long)]
    steps: Option<usize>,
    /// Print a progress line every N steps (0 disables).
    #[arg(long, default_value_t = 50)]
    log_every: usize,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Feature cache to synthesize from.
    #[arg(long, conflicts_with = "wav", required_unless_present = "wav")]
    features: Option<PathBuf>,
    /// WAV to analyse and resynthesize.
    #[arg(long)]
    wav: Option<PathBuf>,
    /// Output WAV.
    #[arg(long, default_value = "out.wav")]
    out: PathBuf,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the output's magnitude spectrogram as CSV (frames x bins).
    #[arg(long)]
    dump_spec: Option<PathBuf>,
    /// Write the input WAV's spectrogram as CSV at the same resolution.
    #[arg(long, requires = "wav")]
    dump_reference: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Read the config stored in a checkpoint instead.
    #[arg(long, conflicts_with_all = ["config", "desk"])]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

/// 0 ok, 1 usage or config, 2 missing or unreadable input, 3 numeric abort.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } | Error::Format { .. } => 2,
        Error::NonFiniteGradient(_) | Error::NonFiniteLoss { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Featurize(a) => commands::featurize(&a.wavs, &a.out, a.frame_shift_ms).map(|()| ExitCode::SUCCESS),
        Command::SynthCorpus(a) => commands::synth_corpus(&a).map(|()| ExitCode::SUCCESS),
        Command::Train(a) => commands::train(&a).map(|()| ExitCode::SUCCESS),
        Command::Synth(a) => commands::synth(&a).map(|()| ExitCode::SUCCESS),
        Command::Inspect(a) => commands::inspect(&a).map(|()| ExitCode::SUCCESS),
        Command::Gradcheck(a) => commands::gradcheck(a.seed).map(|passed| {
            if passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
