use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use klredact::baseline::{Baseline, LogRegConfig};
use klredact::checkpoint::RankerCheckpoint;
use klredact::corpus::{load_corpus, load_redacted_corpus, write_corpus, write_redacted, Corpus, Role};
use klredact::divloss::{BandwidthRule, KdeConfig};
use klredact::embed::{BuiltinEmbedder, ContextualEmbeddings, CorpusEmbeddings, EmbeddingProvider};
use klredact::mask::{MaskConfig, ThresholdMode};
use klredact::privacy::{
    curve_csv, epsilon_curve, epsilon_from_divergence, estimate_divergence, grid_seed, Conversion, CurveConfig,
    CurveRow, DeltaRule, EstimatorConfig,
};
use klredact::ranker::AdamConfig;
use klredact::redact::{redact_corpus, MlpRanker, WordRanker};
use klredact::synthetic::SyntheticConfig;
use klredact::trainer::{loss_trace_export, train_ranker, TrainConfig};
use serde::Serialize;

use crate::args::*;

pub enum Failure {
    /// Bad flags or flag combinations: exit 1.
    Usage(String),
    /// Anything that went wrong reading, computing or writing: exit 2.
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<klredact::Error> for Failure {
    fn from(e: klredact::Error) -> Self {
        Failure::Data(e.into())
    }
}

type Outcome = Result<(), Failure>;

pub fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Redact(a) => redact(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Sweep(a) => sweep(a),
        Command::Baseline(a) => baseline(a),
        Command::Synth(a) => synth(a),
    }
}

/// Resolved configuration written next to every artifact.
#[derive(Serialize)]
struct Sidecar<'a, A: Serialize, R: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    args: &'a A,
    resolved: R,
}

fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".config.json");
    artifact.with_file_name(name)
}

fn write_sidecar<A: Serialize, R: Serialize>(
    artifact: &Path,
    command: &'static str,
    seed: u64,
    args: &A,
    resolved: R,
) -> Outcome {
    let sidecar = Sidecar {
        tool: "klredact",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        args,
        resolved,
    };
    let path = sidecar_path(artifact);
    let text = serde_json::to_string_pretty(&sidecar).context("serializing run configuration")?;
    fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Refuses to write an artifact over one of the inputs.
fn guard_output(out: &Path, inputs: &[&Path]) -> Outcome {
    let canon = |p: &Path| fs::canonicalize(p).ok();
    if let Some(o) = canon(out) {
        if inputs.iter().any(|i| canon(i).as_ref() == Some(&o)) {
            return Err(Failure::Usage(format!("{} is also an input; choose another output path", out.display())));
        }
    }
    Ok(())
}

fn provider(p: &ProviderArgs) -> Result<Box<dyn EmbeddingProvider>, Failure> {
    match (&p.sensitive_embeddings, &p.safe_embeddings) {
        (Some(s0), Some(s1)) => {
            let e0 = ContextualEmbeddings::load(s0)?;
            let e1 = ContextualEmbeddings::load(s1)?;
            Ok(Box::new(CorpusEmbeddings::new(e0, e1)?))
        }
        (None, None) => BuiltinEmbedder::new(p.dim, p.embed_seed)
            .map(|e| Box::new(e) as Box<dyn EmbeddingProvider>)
            .map_err(|e| Failure::Usage(e.to_string())),
        _ => Err(Failure::Usage(
            "--sensitive-embeddings and --safe-embeddings must be given together".into(),
        )),
    }
}

fn load(path: &Path, role: Role) -> Result<Corpus, Failure> {
    let corpus = load_corpus(path, role)?;
    if corpus.is_empty() {
        return Err(Failure::Data(anyhow::anyhow!("{} holds no sentences", path.display())));
    }
    Ok(corpus)
}

fn load_ranker(checkpoint: Option<&Path>, baseline: Option<&Path>) -> Result<Box<dyn WordRanker>, Failure> {
    match (checkpoint, baseline) {
        (Some(c), None) => Ok(Box::new(MlpRanker::new(RankerCheckpoint::load(c)?.params))),
        (None, Some(b)) => Ok(Box::new(Baseline::load(b)?)),
        _ => Err(Failure::Usage("give exactly one of --checkpoint or --baseline".into())),
    }
}

fn conversion(c: ConversionArg) -> Conversion {
    match c {
        ConversionArg::Zcdp => Conversion::Zcdp,
        ConversionArg::Rdp => Conversion::Rdp,
    }
}

fn delta_rule(d: DeltaArg) -> DeltaRule {
    match d {
        DeltaArg::OneOverN => DeltaRule::OneOverN,
        DeltaArg::Fixed(x) => DeltaRule::Fixed(x),
    }
}

fn estimator(e: &EstimatorArgs) -> Result<EstimatorConfig, Failure> {
    if !(e.alpha > 0.0 && e.alpha.is_finite()) {
        return Err(Failure::Usage(format!("--alpha must be positive, got {}", e.alpha)));
    }
    if e.conversion == ConversionArg::Rdp && e.alpha <= 1.0 {
        return Err(Failure::Usage("--conversion rdp needs --alpha > 1".into()));
    }
    if e.clusters < 2 {
        return Err(Failure::Usage("--clusters must be at least 2".into()));
    }
    if !(e.smoothing > 0.0 && e.smoothing.is_finite()) {
        return Err(Failure::Usage("--smoothing must be positive".into()));
    }
    Ok(EstimatorConfig {
        alpha: e.alpha,
        clusters: e.clusters,
        smoothing: e.smoothing,
        seed: e.seed,
    })
}

fn train(a: TrainArgs) -> Outcome {
    let mask = MaskConfig::new(
        a.k,
        a.t,
        match a.threshold_mode {
            ThresholdArg::Midpoint => ThresholdMode::Midpoint,
            ThresholdArg::KthRank => ThresholdMode::KthRank,
        },
    )
    .map_err(|e| Failure::Usage(e.to_string()))?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        mask,
        kde: KdeConfig {
            bandwidth: match a.bandwidth {
                BandwidthArg::Median => BandwidthRule::MedianHeuristic,
                BandwidthArg::Fixed(h) => BandwidthRule::Fixed(h),
            },
            floor_h: a.bandwidth_floor,
        },
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        seed: a.seed,
        loss_log_every: a.log_every,
        reshuffle_each_epoch: !a.no_reshuffle,
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    guard_output(&a.out, &[&a.sensitive, &a.safe])?;
    guard_output(&a.trace, &[&a.sensitive, &a.safe])?;
    let provider = provider(&a.provider)?;
    let d0 = load(&a.sensitive, Role::Sensitive)?;
    let d1 = load(&a.safe, Role::Safe)?;
    let out = train_ranker(&d0, &d1, provider.as_ref(), a.hidden, &cfg)?;

    let mut ckpt = RankerCheckpoint::new(out.params, Some(out.adam), a.seed);
    ckpt.metadata = serde_json::json!({ "args": &a, "train_config": &cfg });
    ckpt.save(&a.out)?;
    loss_trace_export(&out.trace, &a.trace)?;
    write_sidecar(&a.trace, "train", a.seed, &a, &cfg)?;
    let last = out.trace.entries().last().map_or(f64::NAN, |e| e.1);
    println!("trained {} steps; final average loss {last}", out.steps);
    Ok(())
}

fn redact(a: RedactArgs) -> Outcome {
    let provider = provider(&a.provider)?;
    let ranker = load_ranker(a.checkpoint.as_deref(), a.baseline.as_deref())?;
    let role = match a.role {
        RoleArg::Sensitive => Role::Sensitive,
        RoleArg::Safe => Role::Safe,
    };
    guard_output(&a.out, &[&a.input])?;
    let corpus = load(&a.input, role)?;
    let (red, indices) = redact_corpus(&corpus, ranker.as_ref(), provider.as_ref(), a.k)?;
    write_redacted(&a.out, red.sentences(), &indices)?;
    write_sidecar(&a.out, "redact", a.provider.embed_seed, &a, ())?;
    let masked: usize = indices.iter().map(|s| s.len()).sum();
    println!("redacted {masked} words across {} sentences", red.len());
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Outcome {
    let est_cfg = estimator(&a.estimator)?;
    let provider = provider(&a.provider)?;
    if let Some(out) = &a.out {
        guard_output(out, &[&a.sensitive, &a.safe])?;
    }
    let d0 = load_redacted_corpus(&a.sensitive, Role::Sensitive)?;
    let d1 = load_redacted_corpus(&a.safe, Role::Safe)?;
    if d0.is_empty() || d1.is_empty() {
        return Err(Failure::Data(anyhow::anyhow!("both redacted corpora must hold sentences")));
    }
    let delta = delta_rule(a.estimator.delta).resolve(d0.len(), d1.len())?;
    let seeded = EstimatorConfig {
        seed: grid_seed(est_cfg.seed, a.k),
        ..est_cfg
    };
    let est = estimate_divergence(&d0, &d1, provider.as_ref(), &seeded)?;
    let p = epsilon_from_divergence(&est, delta, conversion(a.estimator.conversion))?;
    let row = CurveRow {
        redaction_percent: a.k,
        alpha: est.alpha,
        divergence: est.value,
        rho: p.rho,
        epsilon: p.epsilon,
        delta,
    };
    let csv = curve_csv(&[row]);
    match &a.out {
        Some(path) => {
            write_text(path, &csv)?;
            write_sidecar(path, "evaluate", a.estimator.seed, &a, (&seeded, &est, &p))?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Outcome {
    let est_cfg = estimator(&a.estimator)?;
    if a.k.is_empty() {
        return Err(Failure::Usage("--k needs at least one level".into()));
    }
    let provider = provider(&a.provider)?;
    let d0 = load(&a.sensitive, Role::Sensitive)?;
    let d1 = load(&a.safe, Role::Safe)?;
    let cfg = CurveConfig {
        k_grid: a.k.clone(),
        delta_rule: delta_rule(a.estimator.delta),
        conversion: conversion(a.estimator.conversion),
        estimator: est_cfg,
    };
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut rankers: Vec<(&str, Box<dyn WordRanker>)> = Vec::new();
    if let Some(c) = &a.checkpoint {
        rankers.push(("ranker", load_ranker(Some(c), None)?));
    }
    if let Some(b) = &a.baseline {
        rankers.push(("baseline", load_ranker(None, Some(b))?));
    }
    for (name, ranker) in rankers {
        let rows = epsilon_curve(&d0, &d1, ranker.as_ref(), provider.as_ref(), &cfg)?;
        let path = a.out_dir.join(format!("{name}.csv"));
        write_text(&path, &curve_csv(&rows))?;
        write_sidecar(&path, "sweep", a.estimator.seed, &a, (name, &cfg))?;
        println!("{}: {} rows", path.display(), rows.len());
    }
    Ok(())
}

fn baseline(a: BaselineArgs) -> Outcome {
    if !(a.lr > 0.0 && a.lr.is_finite()) {
        return Err(Failure::Usage("--lr must be positive".into()));
    }
    guard_output(&a.out, &[&a.sensitive, &a.safe])?;
    let d0 = load(&a.sensitive, Role::Sensitive)?;
    let d1 = load(&a.safe, Role::Safe)?;
    let cfg = LogRegConfig {
        epochs: a.epochs,
        lr: a.lr,
        seed: a.seed,
    };
    let base = Baseline::fit(&d0, &d1, &cfg)?;
    base.save(&a.out)?;
    write_sidecar(&a.out, "baseline", a.seed, &a, &cfg)?;
    let acc = klredact::baseline::accuracy(&base.model, &base.vocab, &d0, &d1);
    println!("baseline vocabulary {} words; training accuracy {acc:.4}", base.vocab.len());
    Ok(())
}

fn synth(a: SynthArgs) -> Outcome {
    let cfg = SyntheticConfig {
        sentences_per_side: a.n,
        markers_per_sentence: a.markers,
        background_per_sentence: a.background,
        marker_vocab: a.marker_vocab,
        background_vocab: a.background_vocab,
        seed: a.seed,
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let pair = cfg.generate()?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    for (name, corpus) in [("sensitive", &pair.sensitive), ("safe", &pair.safe)] {
        let path = a.out_dir.join(format!("{name}.jsonl"));
        write_corpus(&path, corpus.sentences())?;
        write_sidecar(&path, "synth", a.seed, &a, &cfg)?;
    }
    Ok(())
}
