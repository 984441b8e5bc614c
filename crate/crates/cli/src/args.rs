use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Duet separation laboratory: datasets, metrics, losses, label geometry,
/// metric analysis and the toy conditional separator.
///
/// Every flag can also be set through an environment variable named
/// `DUETSEP_<FLAG>` (upper case, dashes as underscores).
#[derive(Debug, Parser, Serialize)]
#[command(name = "duetsep", version)]
pub struct Cli {
    /// Worker threads. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1, env = "DUETSEP_JOBS",
          value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: u16,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Scan a dataset directory and write a manifest (default `<root>/manifest.json`).
    Manifest(ManifestArgs),
    /// Average two stems into a mixture.
    Mix(MixArgs),
    /// Write one augmented example of a manifest track.
    Augment(AugmentArgs),
    /// Rasterize a note CSV into one piano roll per guitar.
    Rasterize(RasterizeArgs),
    /// Score two estimates against two references (CSV on stdout).
    Eval(EvalArgs),
    /// PIT L1 + mixture loss between two stem pairs (JSON on stdout).
    PitLoss(PitLossArgs),
    /// Sweep the mixing ratio and record SDR / SI-SDR curves.
    AlphaSweep(AlphaSweepArgs),
    /// Render synthetic duets in the dataset layout.
    SynthDuets(SynthDuetsArgs),
    /// Train the toy separator on the toy benchmark.
    ToyTrain(ToyTrainArgs),
    /// Evaluate a toy checkpoint on the toy benchmark test duets.
    ToyEval(ToyEvalArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TagArg {
    Real,
    Synthetic,
    External,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingArg {
    Pcm16,
    Float32,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RollFormat {
    Binary,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairArg {
    Mono,
    Multi,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainConditioning {
    None,
    GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalConditioning {
    None,
    GroundTruth,
    Degraded,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchArg {
    Both,
    Temporal,
    Spectral,
}

#[derive(Debug, Args, Serialize)]
pub struct ManifestArgs {
    /// Directory holding one sub-directory per track.
    #[arg(long, env = "DUETSEP_ROOT")]
    pub root: PathBuf,
    #[arg(long, value_enum, default_value = "real", env = "DUETSEP_TAG")]
    pub tag: TagArg,
    /// Fraction of non-test tracks assigned to train; the rest go to val.
    #[arg(long, requires = "seed", env = "DUETSEP_SPLIT_RATIO")]
    pub split_ratio: Option<f64>,
    #[arg(long, env = "DUETSEP_SEED")]
    pub seed: Option<u64>,
    /// Output path; `<root>/manifest.json` when absent.
    #[arg(long, env = "DUETSEP_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct MixArgs {
    #[arg(long, num_args = 2, value_names = ["G1", "G2"], required = true)]
    pub stems: Vec<PathBuf>,
    #[arg(long, env = "DUETSEP_OUT")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "pcm16", env = "DUETSEP_ENCODING")]
    pub encoding: EncodingArg,
}

#[derive(Debug, Args, Serialize)]
pub struct AugmentArgs {
    #[arg(long, env = "DUETSEP_MANIFEST")]
    pub manifest: PathBuf,
    #[arg(long, env = "DUETSEP_TRACK")]
    pub track: String,
    #[arg(long, env = "DUETSEP_OUT_DIR")]
    pub out_dir: PathBuf,
    #[arg(long, env = "DUETSEP_SEED")]
    pub seed: u64,
    #[arg(long, default_value_t = 0, env = "DUETSEP_EPOCH")]
    pub epoch: u64,
    #[arg(long, default_value_t = 4.0, env = "DUETSEP_CROP_SECONDS")]
    pub crop_seconds: f64,
    #[arg(long, default_value_t = 0.25, env = "DUETSEP_REMIX_PROBABILITY")]
    pub remix_probability: f64,
    #[arg(long, default_value_t = 0.5, env = "DUETSEP_SWAP_PROBABILITY")]
    pub swap_probability: f64,
    #[arg(long, value_enum, default_value = "pcm16", env = "DUETSEP_ENCODING")]
    pub encoding: EncodingArg,
}

#[derive(Debug, Args, Serialize)]
pub struct RasterizeArgs {
    #[arg(long, env = "DUETSEP_NOTES")]
    pub notes: PathBuf,
    /// Roll length in seconds.
    #[arg(long, env = "DUETSEP_DURATION")]
    pub duration: f64,
    #[arg(long, default_value_t = 100.0, env = "DUETSEP_FPS")]
    pub fps: f64,
    #[arg(long, default_value_t = 0, env = "DUETSEP_LOWEST_PITCH")]
    pub lowest_pitch: u8,
    #[arg(long, default_value_t = 128, env = "DUETSEP_PITCHES")]
    pub pitches: usize,
    #[arg(long, value_enum, default_value = "binary", env = "DUETSEP_FORMAT")]
    pub format: RollFormat,
    #[arg(long, env = "DUETSEP_OUT_DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long, num_args = 2, value_names = ["E1", "E2"], required = true)]
    pub est: Vec<PathBuf>,
    #[arg(long = "ref", num_args = 2, value_names = ["G1", "G2"], required = true)]
    pub references: Vec<PathBuf>,
    #[arg(long, default_value_t = 512, env = "DUETSEP_FILTER_LENGTH")]
    pub filter_length: usize,
    #[arg(long, default_value = "track", env = "DUETSEP_TRACK_ID")]
    pub track_id: String,
}

#[derive(Debug, Args, Serialize)]
pub struct PitLossArgs {
    #[arg(long, num_args = 2, value_names = ["E1", "E2"], required = true)]
    pub est: Vec<PathBuf>,
    #[arg(long = "ref", num_args = 2, value_names = ["G1", "G2"], required = true)]
    pub references: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.8, env = "DUETSEP_ALPHA")]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.2, env = "DUETSEP_BETA")]
    pub beta: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct AlphaSweepArgs {
    /// First source of the pair (the target of the metrics).
    #[arg(long, requires = "x2", conflicts_with = "standard", env = "DUETSEP_X1")]
    pub x1: Option<PathBuf>,
    #[arg(long, requires = "x1", env = "DUETSEP_X2")]
    pub x2: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mono", env = "DUETSEP_LABEL")]
    pub label: PairArg,
    /// Synthesize the standard monotimbral and multitimbral pairs instead.
    #[arg(long, requires = "seed", required_unless_present = "x1")]
    pub standard: bool,
    /// Score seed for `--standard`.
    #[arg(long, env = "DUETSEP_SEED")]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 8000, env = "DUETSEP_SAMPLE_RATE")]
    pub sample_rate: u32,
    #[arg(long, default_value_t = 4.0, env = "DUETSEP_DURATION")]
    pub duration: f64,
    #[arg(long, default_value_t = 512, env = "DUETSEP_FILTER_LENGTH")]
    pub filter_length: usize,
    #[arg(long, env = "DUETSEP_OUT_DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthDuetsArgs {
    #[arg(long, env = "DUETSEP_COUNT")]
    pub count: usize,
    #[arg(long, env = "DUETSEP_SEED")]
    pub seed: u64,
    #[arg(long, default_value_t = 7.0, env = "DUETSEP_DENSITY")]
    pub density: f64,
    #[arg(long, default_value_t = 4.0, env = "DUETSEP_DURATION")]
    pub duration: f64,
    #[arg(long, default_value_t = 8000, env = "DUETSEP_SAMPLE_RATE")]
    pub sample_rate: u32,
    #[arg(long, env = "DUETSEP_OUT_DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchmarkArgs {
    /// Benchmark spec JSON; the standard benchmark when absent.
    #[arg(long, env = "DUETSEP_BENCHMARK")]
    pub benchmark: Option<PathBuf>,
    /// Override the number of training duets.
    #[arg(long, env = "DUETSEP_TRAIN_DUETS")]
    pub train_duets: Option<usize>,
    /// Override the number of test duets.
    #[arg(long, env = "DUETSEP_TEST_DUETS")]
    pub test_duets: Option<usize>,
    /// Override the duet length in seconds.
    #[arg(long, env = "DUETSEP_DURATION")]
    pub duration: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct ToyTrainArgs {
    #[arg(long, env = "DUETSEP_SEED")]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "ground-truth", env = "DUETSEP_CONDITIONING")]
    pub conditioning: TrainConditioning,
    #[arg(long, default_value_t = duetsep_toylab::benchmark::STANDARD_EPOCHS, env = "DUETSEP_EPOCHS")]
    pub epochs: usize,
    #[arg(long, default_value_t = 4, env = "DUETSEP_BATCH_SIZE")]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3, env = "DUETSEP_LEARNING_RATE")]
    pub learning_rate: f64,
    #[command(flatten)]
    pub bench: BenchmarkArgs,
    #[arg(long, env = "DUETSEP_OUT_DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ToyEvalArgs {
    #[arg(long, env = "DUETSEP_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "ground-truth", env = "DUETSEP_CONDITIONING")]
    pub conditioning: EvalConditioning,
    /// Branches that receive labels.
    #[arg(long, value_enum, default_value = "both", env = "DUETSEP_BRANCHES")]
    pub branches: BranchArg,
    #[arg(long, default_value_t = 0.25, env = "DUETSEP_DROP_PROBABILITY")]
    pub drop_probability: f64,
    #[arg(long, default_value_t = 2, env = "DUETSEP_JITTER_FRAMES")]
    pub jitter_frames: usize,
    /// Label-degradation seed; required with `--conditioning degraded`.
    #[arg(long, required_if_eq("conditioning", "degraded"), env = "DUETSEP_SEED")]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 512, env = "DUETSEP_FILTER_LENGTH")]
    pub filter_length: usize,
    #[command(flatten)]
    pub bench: BenchmarkArgs,
    #[arg(long, env = "DUETSEP_OUT_DIR")]
    pub out_dir: PathBuf,
}
