use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "klredact", version, about = "Learned redaction of sensitive corpora with privacy estimates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the word ranker on a sensitive and a safe corpus.
    Train(TrainArgs),
    /// Redact a corpus with a trained ranker or baseline.
    Redact(RedactArgs),
    /// Estimate divergence and epsilon for an already redacted pair.
    Evaluate(EvaluateArgs),
    /// Epsilon against redaction level for the ranker and/or baseline.
    Sweep(SweepArgs),
    /// Fit the TF-IDF + logistic regression baseline.
    Baseline(BaselineArgs),
    /// Generate a synthetic marker-token corpus pair.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProviderArgs {
    /// Built-in embedding dimension.
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Built-in embedder seed.
    #[arg(long, default_value_t = 0)]
    pub embed_seed: u64,
    /// Contextual embeddings for the sensitive corpus (JSON-lines).
    #[arg(long, requires = "safe_embeddings")]
    pub sensitive_embeddings: Option<PathBuf>,
    /// Contextual embeddings for the safe corpus (JSON-lines).
    #[arg(long, requires = "sensitive_embeddings")]
    pub safe_embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdArg {
    Midpoint,
    KthRank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleArg {
    Sensitive,
    Safe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ConversionArg {
    Zcdp,
    Rdp,
}

/// `median` or a fixed positive bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthArg {
    Median,
    Fixed(f64),
}

impl FromStr for BandwidthArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "median" {
            return Ok(BandwidthArg::Median);
        }
        match s.parse::<f64>() {
            Ok(h) if h > 0.0 && h.is_finite() => Ok(BandwidthArg::Fixed(h)),
            _ => Err(format!("expected `median` or a positive number, got `{s}`")),
        }
    }
}

impl fmt::Display for BandwidthArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BandwidthArg::Median => f.write_str("median"),
            BandwidthArg::Fixed(h) => write!(f, "{h}"),
        }
    }
}

/// `one-over-n` or a fixed δ in (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaArg {
    OneOverN,
    Fixed(f64),
}

impl FromStr for DeltaArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "one-over-n" {
            return Ok(DeltaArg::OneOverN);
        }
        match s.parse::<f64>() {
            Ok(d) if d > 0.0 && d < 1.0 => Ok(DeltaArg::Fixed(d)),
            _ => Err(format!("expected `one-over-n` or a number in (0, 1), got `{s}`")),
        }
    }
}

impl fmt::Display for DeltaArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeltaArg::OneOverN => f.write_str("one-over-n"),
            DeltaArg::Fixed(d) => write!(f, "{d}"),
        }
    }
}

fn parse_percent(s: &str) -> Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(k) if (0.0..=100.0).contains(&k) => Ok(k),
        _ => Err(format!("expected a percentage in [0, 100], got `{s}`")),
    }
}

fn parse_hidden(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("bad hidden sizes `{s}`: {e}"))?;
    match parts.as_slice() {
        &[a, b, c] if a > 0 && b > 0 && c > 0 => Ok([a, b, c]),
        _ => Err(format!("expected three positive sizes like 256,128,64, got `{s}`")),
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimatorArgs {
    /// Rényi order.
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    /// k-means cluster count.
    #[arg(long, default_value_t = 10)]
    pub clusters: usize,
    /// Laplace smoothing constant.
    #[arg(long, default_value_t = 1.0)]
    pub smoothing: f64,
    #[arg(long, default_value_t = DeltaArg::OneOverN)]
    pub delta: DeltaArg,
    #[arg(long, value_enum, default_value_t = ConversionArg::Zcdp)]
    pub conversion: ConversionArg,
    /// Seed for the k-means quantizer.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub sensitive: PathBuf,
    #[arg(long)]
    pub safe: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss-trace CSV path.
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// Redaction percent used by the training mask.
    #[arg(long, default_value_t = 10.0, value_parser = parse_percent)]
    pub k: f64,
    /// Mask temperature.
    #[arg(long, default_value_t = 100.0)]
    pub t: f64,
    #[arg(long, value_enum, default_value_t = ThresholdArg::Midpoint)]
    pub threshold_mode: ThresholdArg,
    #[arg(long, default_value_t = BandwidthArg::Median)]
    pub bandwidth: BandwidthArg,
    #[arg(long, default_value_t = 1e-3)]
    pub bandwidth_floor: f64,
    #[arg(long, default_value = "256,128,64", value_parser = parse_hidden)]
    pub hidden: [usize; 3],
    #[arg(long, default_value_t = 10)]
    pub log_every: usize,
    /// Shuffle once instead of every epoch.
    #[arg(long)]
    pub no_reshuffle: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(group(ArgGroup::new("ranker").required(true).args(["checkpoint", "baseline"])))]
pub struct RedactArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = RoleArg::Sensitive)]
    pub role: RoleArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Trained ranker checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Baseline checkpoint.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0, value_parser = parse_percent)]
    pub k: f64,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    /// Redacted sensitive corpus.
    #[arg(long)]
    pub sensitive: PathBuf,
    /// Redacted safe corpus.
    #[arg(long)]
    pub safe: PathBuf,
    /// Redaction level the pair was produced at (recorded in the output).
    #[arg(long, default_value_t = 10.0, value_parser = parse_percent)]
    pub k: f64,
    /// Output CSV; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(group(ArgGroup::new("ranker").required(true).multiple(true).args(["checkpoint", "baseline"])))]
pub struct SweepArgs {
    #[arg(long)]
    pub sensitive: PathBuf,
    #[arg(long)]
    pub safe: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Comma-separated redaction levels.
    #[arg(long, value_delimiter = ',', default_value = "0,10,20,30,40,50,60,70,80", value_parser = parse_percent)]
    pub k: Vec<f64>,
    /// Directory receiving ranker.csv and/or baseline.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BaselineArgs {
    #[arg(long)]
    pub sensitive: PathBuf,
    #[arg(long)]
    pub safe: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    /// Directory receiving sensitive.jsonl and safe.jsonl.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Sentences per corpus.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub markers: usize,
    #[arg(long, default_value_t = 10)]
    pub background: usize,
    #[arg(long, default_value_t = 8)]
    pub marker_vocab: usize,
    #[arg(long, default_value_t = 200)]
    pub background_vocab: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
