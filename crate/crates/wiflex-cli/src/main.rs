//! `wiflex` — synthetic CSI generation, feature extraction, training,
//! evaluation, and the inference-latency benchmark.
//!
//! On failure every subcommand exits non-zero after printing a single
//! machine-parsable `error_code: message` line to stderr.

mod pca_file;
mod spec_file;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wiflexformer::bench::bench_inference;
use wiflexformer::csi::{extract_windows, load_dataset, save_dataset, split_windows, CsiWindow, SplitSpec};
use wiflexformer::error::{Error, Result};
use wiflexformer::features::{
    pca_fit, save_feature_file, FeatureKind, FeaturePipeline, FeatureTensor, Strategy,
    SubsamplingSpec,
};
use wiflexformer::model::{load_checkpoint, ModelConfig};
use wiflexformer::training::{evaluate, train, TrainConfig};
use wiflexformer::Real;

#[derive(Parser)]
#[command(name = "wiflex", version, about = "WiFi-CSI sensing pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic CSIB dataset from a key=value spec file.
    Synth(SynthArgs),
    /// Extract per-window feature tensors plus a JSON manifest.
    Features(FeaturesArgs),
    /// Train on a CSIB dataset; writes the best checkpoint and a report.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a CSIB dataset.
    Eval(EvalArgs),
    /// Measure inference latency of a checkpoint.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Spec file: F, c, sample_rate_hz, class_doppler_hz (comma list),
    /// snr_db, packets_per_sequence, sequences_per_class, seed.
    #[arg(long)]
    spec: PathBuf,
    /// Output CSIB path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Amplitude,
    Dfs,
}

impl From<KindArg> for FeatureKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Amplitude => FeatureKind::Amplitude,
            KindArg::Dfs => FeatureKind::DfsMagnitude,
        }
    }
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long, default_value_t = 351)]
    window: usize,
    #[arg(long, default_value_t = 351)]
    stride: usize,
    /// Zero-pad sequences shorter than the window.
    #[arg(long, default_value_t = false)]
    pad_short: bool,
    /// Subcarrier strategy: none | R<n> | U<n> | B<n>-<m> | PC<n>.
    #[arg(long, default_value = "none")]
    subsample: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for tensor files and manifest.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long, default_value = "none")]
    subsample: String,
    /// Ratio split, e.g. 3:1:1 (train:val:test; extra parts are held out).
    #[arg(long, default_value = "3:1:1")]
    split: String,
    #[arg(long, default_value_t = 351)]
    window: usize,
    #[arg(long, default_value_t = 351)]
    stride: usize,
    #[arg(long, default_value_t = false)]
    pad_short: bool,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1e-3)]
    wd: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Positional Gaussian count.
    #[arg(long, default_value_t = 10)]
    gauss: usize,
    #[arg(long, value_parser = ["32", "64"], default_value = "64")]
    precision: String,
    /// Output directory for best.wflx and report.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long, default_value = "none")]
    subsample: String,
    /// WPCA sidecar, required for PC<n> strategies.
    #[arg(long)]
    pca: Option<PathBuf>,
    /// Defaults to the checkpoint's sequence length.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, default_value_t = false)]
    pad_short: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = ["32", "64"], default_value = "64")]
    precision: String,
    /// Metrics JSON output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 100)]
    warmup: usize,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = ["32", "64"], default_value = "32")]
    precision: String,
    /// Report JSON output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Human-readable table instead of JSON on stdout.
    #[arg(long, default_value_t = false)]
    pretty: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Synth(a) => run_synth(a),
        Cmd::Features(a) => run_features(a),
        Cmd::Train(a) => run_train(a),
        Cmd::Eval(a) => run_eval(a),
        Cmd::Bench(a) => run_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {}", e.code(), e);
            ExitCode::FAILURE
        }
    }
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let spec = spec_file::parse_synth_spec(&args.spec)?;
    let dataset = wiflexformer::csi::synth_generate(&spec)?;
    save_dataset(&dataset, &args.out)?;
    println!(
        "{}",
        serde_json::json!({
            "out": args.out,
            "sequences": dataset.sequences.len(),
            "packets": dataset.total_packets(),
            "subcarriers": dataset.subcarrier_count,
            "classes": dataset.class_count,
        })
    );
    Ok(())
}

/// Builds the shared window -> feature pipeline; PCA strategies are fitted on
/// `fit_windows` unless a sidecar model is supplied.
fn build_pipeline(
    kind: FeatureKind,
    subsample: &str,
    seed: u64,
    sample_rate_hz: f64,
    fit_windows: Option<&[CsiWindow]>,
    pca_path: Option<&Path>,
) -> Result<FeaturePipeline> {
    let spec = SubsamplingSpec::parse(subsample, seed)?;
    let mut pipeline = FeaturePipeline::new(kind, spec, sample_rate_hz);
    if let Strategy::Pca(n) = spec.strategy {
        pipeline.pca = Some(match (pca_path, fit_windows) {
            (Some(path), _) => pca_file::load_pca(path)?,
            (None, Some(windows)) => pca_fit(windows, n)?,
            (None, None) => {
                return Err(Error::Validation(
                    "PC strategies need --pca <file> here".into(),
                ))
            }
        });
    }
    Ok(pipeline)
}

fn run_features(args: FeaturesArgs) -> Result<()> {
    let dataset = load_dataset(&args.input)?;
    let windows = extract_windows(&dataset, args.window, args.stride, args.pad_short)?;
    if windows.is_empty() {
        return Err(Error::Validation("no windows extracted".into()));
    }
    let pipeline = build_pipeline(
        args.kind.into(),
        &args.subsample,
        args.seed,
        dataset.sample_rate_hz as f64,
        Some(&windows),
        None,
    )?;
    std::fs::create_dir_all(&args.out)?;
    if let Some(pca) = &pipeline.pca {
        pca_file::save_pca(pca, &args.out.join("pca.wpca"))?;
    }
    let mut files = Vec::with_capacity(windows.len());
    let mut labels = Vec::with_capacity(windows.len());
    let mut shape = [0usize; 3];
    for (i, w) in windows.iter().enumerate() {
        let feat: FeatureTensor<f32> = pipeline.extract(w)?;
        let s = feat.data.shape();
        shape = [s[0], s[1], s[2]];
        let name = format!("win_{:05}.ftr", i);
        save_feature_file(&feat, &args.out.join(&name))?;
        files.push(name);
        labels.push(w.label);
    }
    let manifest = serde_json::json!({
        "window_count": windows.len(),
        "kind": pipeline.kind,
        "shape": shape,
        "subsample": args.subsample,
        "seed": args.seed,
        "labels": labels,
        "files": files,
    });
    let manifest_path = args.out.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    println!("{}", manifest);
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let dataset = load_dataset(&args.input)?;
    let windows = extract_windows(&dataset, args.window, args.stride, args.pad_short)?;
    let split = SplitSpec::parse(&args.split, args.seed)?;
    if split.ratios.len() < 2 {
        return Err(Error::Validation(
            "train needs at least a train:val split".into(),
        ));
    }
    let mut parts = split_windows(windows, &split)?;
    let val = parts.remove(1);
    let train_part = parts.remove(0);

    let mut cfg = TrainConfig::new(args.kind.into(), dataset.sample_rate_hz as f64, args.seed);
    cfg.epochs = args.epochs;
    cfg.lr = args.lr;
    cfg.weight_decay = args.wd;
    cfg.batch_size = args.batch;
    cfg.subsampling = SubsamplingSpec::parse(&args.subsample, args.seed)?;

    let pipeline = build_pipeline(
        cfg.feature_kind,
        &args.subsample,
        args.seed,
        cfg.sample_rate_hz,
        Some(&train_part),
        None,
    )?;
    let first = train_part
        .first()
        .ok_or_else(|| Error::Validation("empty training split".into()))?;
    let [c, f, t] = pipeline.output_shape(first.subcarriers(), first.len())?;
    let mut model_cfg = ModelConfig::new(c, f, t, dataset.class_count as usize);
    model_cfg.gauss_count = args.gauss;

    let report = match args.precision.as_str() {
        "32" => train::<f32>(
            &train_part,
            &val,
            dataset.class_count,
            &model_cfg,
            &cfg,
            &args.out,
        )?,
        _ => train::<f64>(
            &train_part,
            &val,
            dataset.class_count,
            &model_cfg,
            &cfg,
            &args.out,
        )?,
    };
    if let Some(pca) = &pipeline.pca {
        pca_file::save_pca(pca, &args.out.join("pca.wpca"))?;
    }
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(args.out.join("report.json"), &json)?;
    println!("{}", json);
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let dataset = load_dataset(&args.input)?;
    match args.precision.as_str() {
        "32" => eval_with::<f32>(&args, &dataset),
        _ => eval_with::<f64>(&args, &dataset),
    }
}

fn eval_with<T: Real>(args: &EvalArgs, dataset: &wiflexformer::csi::CsiDataset) -> Result<()> {
    let ckpt = load_checkpoint::<T>(&args.ckpt)?;
    let window = args.window.unwrap_or(ckpt.model.cfg.seq_len);
    let stride = args.stride.unwrap_or(window);
    let windows = extract_windows(dataset, window, stride, args.pad_short)?;
    if windows.is_empty() {
        return Err(Error::Validation("no windows extracted".into()));
    }
    let pipeline = build_pipeline(
        args.kind.into(),
        &args.subsample,
        args.seed,
        dataset.sample_rate_hz as f64,
        None,
        args.pca.as_deref(),
    )?;
    let metrics = evaluate(&ckpt.model, &windows, &pipeline)?;
    let json = serde_json::to_string_pretty(&metrics)?;
    if let Some(out) = &args.out {
        std::fs::write(out, &json)?;
    }
    println!("{}", json);
    Ok(())
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let report = match args.precision.as_str() {
        "32" => {
            let ckpt = load_checkpoint::<f32>(&args.ckpt)?;
            bench_inference(&ckpt.model, args.warmup, args.iters, args.batch, args.seed)?
        }
        _ => {
            let ckpt = load_checkpoint::<f64>(&args.ckpt)?;
            bench_inference(&ckpt.model, args.warmup, args.iters, args.batch, args.seed)?
        }
    };
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(out) = &args.out {
        std::fs::write(out, &json)?;
    }
    if args.pretty {
        println!(
            "input [C, F, T] = {:?}  batch = {}  precision = f{}",
            report.input_shape, report.batch, report.precision
        );
        println!(
            "warmup {}  measured {}  mean {:.3} ms  std {:.3} ms  min {:.3} ms  max {:.3} ms",
            report.warmup_iters,
            report.measure_iters,
            report.mean_ms,
            report.std_ms,
            report.min_ms,
            report.max_ms
        );
    } else {
        println!("{}", json);
    }
    Ok(())
}
