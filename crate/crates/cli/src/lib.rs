//! `onmf`: train spectrogram dictionaries, denoise recordings and score the
//! results.
//!
//! Exit codes: 0 on success, 2 for usage or configuration problems (bad
//! flags, missing files, mismatched inputs), 3 for numeric failures and 1
//! for anything else, such as an unwritable output path.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use onmf_core::onmf::SamplingMode;
use onmf_core::pipeline::Trainer;
use onmf_core::stft::StftParams;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: String) -> Self {
        Self { code: 2, message }
    }
}

impl From<onmf_core::Error> for CliError {
    fn from(e: onmf_core::Error) -> Self {
        let code = if e.is_numeric() {
            3
        } else if matches!(e, onmf_core::Error::Io(_)) {
            1
        } else {
            2
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        onmf_core::Error::from(e).into()
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "onmf",
    version,
    about = "Dictionary-based audio denoising with batch and online NMF"
)]
pub struct Cli {
    /// Read defaults from a `key = value` file; flags on the command line win
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic chord-plus-white-noise fixture
    Synth(SynthArgs),
    /// Learn signal and noise dictionaries from prior recordings
    Train(TrainArgs),
    /// Denoise a recording with trained dictionaries
    Denoise(DenoiseArgs),
    /// Score estimates against clean and noise references
    Eval(EvalArgs),
    /// Score the denoiser over a grid of sparsity weights
    Sweep(SweepArgs),
    /// Write the magnitude spectrogram of a recording
    Spectrogram(SpectrogramArgs),
}

#[derive(Debug, Clone, Args)]
pub struct StftArgs {
    /// Analysis window length in samples
    #[arg(long, default_value_t = 1024)]
    pub window: usize,
    /// Hop between frames in samples (window/2 or window/4)
    #[arg(long, default_value_t = 512)]
    pub hop: usize,
    /// FFT length, a power of two no shorter than the window
    #[arg(long, default_value_t = 1024)]
    pub fft: usize,
}

impl StftArgs {
    pub fn params(&self) -> Result<StftParams, CliError> {
        let p = StftParams::new(self.window, self.hop, self.fft)?;
        p.check_reconstructible()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Directory for clean_prior.wav, noise_prior.wav, clean.wav, noise.wav and mixture.wav
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// RMS level of the clean parts
    #[arg(long, default_value_t = 0.2)]
    pub clean_rms: f64,
    /// Signal-to-noise ratio of the test mixture
    #[arg(long, default_value_t = 5.0)]
    pub snr_db: f64,
    #[arg(long, default_value_t = 10.0)]
    pub prior_seconds: f64,
    #[arg(long, default_value_t = 5.0)]
    pub test_seconds: f64,
    #[arg(long, default_value_t = 16_000)]
    pub sample_rate: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Nmf,
    Onmf,
}

impl From<Method> for Trainer {
    fn from(m: Method) -> Self {
        match m {
            Method::Nmf => Trainer::BatchNmf,
            Method::Onmf => Trainer::OnlineNmf,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Sampling {
    Random,
    Consecutive,
}

impl From<Sampling> for SamplingMode {
    fn from(s: Sampling) -> Self {
        match s {
            Sampling::Random => SamplingMode::UniformRandom,
            Sampling::Consecutive => SamplingMode::Consecutive,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = Method::Onmf)]
    pub method: Method,
    /// Clean prior recording
    #[arg(long)]
    pub signal: PathBuf,
    /// Noise prior recording
    #[arg(long)]
    pub noise: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub k_signal: usize,
    #[arg(long, default_value_t = 10)]
    pub k_noise: usize,
    /// Directory for signal.onmfdict and noise.onmfdict
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// L1 weight on the codes during training
    #[arg(long, default_value_t = 0.0)]
    pub train_alpha: f64,
    /// Columns per online batch
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    /// Online steps
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, value_enum, default_value_t = Sampling::Random)]
    pub sampling: Sampling,
    /// Iteration cap for batch NMF
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    /// Relative loss change that stops batch NMF
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Write signal.jsonl and noise.jsonl training logs here
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
    #[command(flatten)]
    pub stft: StftArgs,
}

#[derive(Debug, Clone, Args)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub signal_dict: PathBuf,
    #[arg(long)]
    pub noise_dict: PathBuf,
    /// Noisy recording
    #[arg(long)]
    pub input: PathBuf,
    /// Denoised output WAV
    #[arg(long)]
    pub output: PathBuf,
    /// L1 weight on the codes of the noisy recording
    #[arg(long, default_value_t = 100.0)]
    pub alpha: f64,
    /// Also write the estimated noise part here
    #[arg(long)]
    pub noise_output: Option<PathBuf>,
    /// Write noisy.pgm, denoised_<label>.pgm and, with --clean, clean.pgm here
    #[arg(long, value_name = "DIR")]
    pub emit_spectrograms: Option<PathBuf>,
    /// Clean reference, only used for --emit-spectrograms
    #[arg(long)]
    pub clean: Option<PathBuf>,
    /// Name for this run's spectrogram image
    #[arg(long, default_value = "output")]
    pub label: String,
    #[command(flatten)]
    pub stft: StftArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub clean: PathBuf,
    #[arg(long)]
    pub noise: PathBuf,
    /// Noisy recording, scored as the ORIGINAL row
    #[arg(long)]
    pub mixture: PathBuf,
    /// LABEL=PATH; repeat for several methods, rows keep this order
    #[arg(long, value_name = "LABEL=PATH")]
    pub estimate: Vec<String>,
    /// CSV destination; stdout when absent
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub signal_dict: PathBuf,
    #[arg(long)]
    pub noise_dict: PathBuf,
    /// Noisy recording
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub clean: PathBuf,
    #[arg(long)]
    pub noise: PathBuf,
    /// Comma-separated sparsity weights
    #[arg(long, value_delimiter = ',', default_value = "50,60,70,80,90")]
    pub alphas: Vec<f64>,
    /// CSV destination; stdout when absent
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub stft: StftArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SpectrogramArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// PGM image destination
    #[arg(long)]
    pub output: PathBuf,
    /// Also write the magnitudes as CSV, one row per frequency bin
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub stft: StftArgs,
}

/// Parses `args` (program name first) and runs the chosen command.
pub fn run(args: Vec<OsString>) -> Result<(), CliError> {
    let args = config::expand_args(args)?;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return if code == 0 {
                Ok(())
            } else {
                Err(CliError {
                    code,
                    message: String::new(),
                })
            };
        }
    };
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Denoise(a) => commands::denoise(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Spectrogram(a) => commands::spectrogram(&a),
    }
}
