use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use asckit::audio::synth_dataset;
use asckit::fusion::{dump_probs, evaluate, evaluated_combinations, fuse_systems, load_probs, Strategy, Truth};
use asckit::models::{load_checkpoint, save_checkpoint, write_epoch_log, Model};
use asckit::pipeline::{
    evaluate_combinations, file_probs, load_split, predict_split, train_model, FeatureStore, PipelineError,
};
use asckit::{Architecture, FrameParams, Manifest, RunConfig, SpectrogramKind, Split, SynthSpec};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

/// Multi-spectrogram acoustic scene classification.
///
/// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
/// ASCKIT_THREADS (default 1) sizes the worker pool used by extract.
#[derive(Parser)]
#[command(name = "asckit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic scene corpus and its manifest.
    Synth(SynthArgs),
    /// Write one feature file per clip and spectrogram kind.
    Extract(ExtractArgs),
    /// Train one model per spectrogram kind.
    Train(TrainArgs),
    /// Emit file-level class probabilities for one checkpoint.
    Infer(InferArgs),
    /// Fuse probability files and score them against a manifest.
    FuseEval(FuseEvalArgs),
    /// Score every single kind and proposed combination from trained checkpoints.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// SynthSpec JSON; defaults apply when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory for WAVs and manifest.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated kinds (stft, logmel, mfcc, cqt, gam) or `all`.
    #[arg(long, default_value = "all")]
    kinds: String,
    /// Feature directory.
    #[arg(long)]
    out: PathBuf,
    /// Rewrite features that already exist.
    #[arg(long)]
    force: bool,
    /// Run config whose frame parameters replace the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Spectrogram kind to train on.
    #[arg(long)]
    kind: Option<String>,
    /// Several kinds, trained one after another.
    #[arg(long, conflicts_with = "kind")]
    kinds: Option<String>,
    /// cdnn or joint; overrides the config.
    #[arg(long)]
    arch: Option<String>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Output probability CSV.
    #[arg(long)]
    out: PathBuf,
    /// Feature directory to read from; clips are decoded and extracted when absent.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Expected spectrogram kind; must match the checkpoint.
    #[arg(long)]
    kind: Option<String>,
    /// Run config whose frame parameters replace the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct FuseEvalArgs {
    /// Probability CSVs, one per system.
    #[arg(long, num_args = 1.., required = true)]
    probs: Vec<PathBuf>,
    /// mean, prod or max.
    #[arg(long, default_value = "mean")]
    strategy: String,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Report JSON path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-category accuracy CSV for plotting.
    #[arg(long)]
    categories_csv: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Kinds whose checkpoints to load; default is every kind with a checkpoint.
    #[arg(long)]
    kinds: Option<String>,
    #[arg(long, default_value = "mean,prod,max")]
    strategies: String,
    #[arg(long)]
    arch: Option<String>,
}

/// An error together with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Classify<T> {
    /// Bad input or configuration: exit code 2.
    fn usage(self) -> Result<T, Failure>;
    /// Failure while doing the work: exit code 1.
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: 2,
            error: e.into(),
        })
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: 1,
            error: e.into(),
        })
    }
}

/// Configuration problems surfacing from the pipeline keep exit code 2.
fn pipeline<T>(r: Result<T, PipelineError>) -> Result<T, Failure> {
    match r {
        Err(e @ PipelineError::Config(_)) => Err(e).usage(),
        Err(PipelineError::Train(e @ asckit::models::TrainError::Config(_))) => Err(e).usage(),
        other => other.runtime(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = thread_pool().and_then(|()| match cli.command {
        Command::Synth(a) => synth(a),
        Command::Extract(a) => extract(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::FuseEval(a) => fuse_eval(a),
        Command::Evaluate(a) => evaluate_all(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn thread_pool() -> Result<(), Failure> {
    let threads = match std::env::var("ASCKIT_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| anyhow!("ASCKIT_THREADS must be a positive integer, got `{v}`"))
            .usage()?,
        Err(_) => 1,
    };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().runtime()
}

fn parse_kinds(s: &str) -> Result<Vec<SpectrogramKind>, Failure> {
    SpectrogramKind::parse_list(s).usage()
}

fn parse_split(s: &str) -> Result<Split, Failure> {
    s.parse::<Split>().map_err(|e| anyhow!(e)).usage()
}

fn load_manifest(path: &Path) -> Result<Manifest, Failure> {
    Manifest::load(path)
        .with_context(|| format!("loading manifest {}", path.display()))
        .usage()
}

fn frame_from(config: Option<&Path>) -> Result<FrameParams, Failure> {
    match config {
        Some(p) => Ok(RunConfig::load(p).usage()?.frame),
        None => Ok(FrameParams::default()),
    }
}

fn checkpoint_path(dir: &Path, kind: SpectrogramKind, arch: Architecture) -> PathBuf {
    dir.join(format!("{kind}.{arch}.ckpt"))
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let spec: SynthSpec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).usage()?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display())).usage()?
        }
        None => SynthSpec::default(),
    };
    spec.validate().usage()?;
    let out = synth_dataset(&spec, &a.out).runtime()?;
    let mut hash = Sha256::new();
    hash.update(fs::read(&out.manifest_path).runtime()?);
    for p in &out.wav_paths {
        hash.update(p.file_name().map(|n| n.as_encoded_bytes()).unwrap_or_default());
        hash.update(fs::read(p).runtime()?);
    }
    let digest: String = hash.finalize().iter().map(|b| format!("{b:02x}")).collect();
    println!("{}", out.manifest_path.display());
    println!("checksum sha256:{digest}");
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<(), Failure> {
    let kinds = parse_kinds(&a.kinds)?;
    let params = frame_from(a.config.as_deref())?;
    let manifest = load_manifest(&a.manifest)?;
    let store = FeatureStore::new(&a.out);
    let results: Vec<_> = manifest
        .entries
        .par_iter()
        .map(|e| store.extract_entry(&manifest, e, &kinds, &params, a.force))
        .collect();
    let (mut written, mut skipped, mut failed) = (0, 0, Vec::new());
    for (e, r) in manifest.entries.iter().zip(results) {
        match r {
            Ok(n) => {
                written += n;
                skipped += kinds.len() - n;
            }
            Err(err) => failed.push(format!("{}: {err}", e.path)),
        }
    }
    println!("written {written} skipped {skipped} failed {}", failed.len());
    if !failed.is_empty() {
        for f in &failed {
            eprintln!("failed: {f}");
        }
        return Err(anyhow!("{} clips could not be processed", failed.len())).runtime();
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let cfg = RunConfig::load(&a.config).usage()?;
    let kinds = match (&a.kind, &a.kinds) {
        (Some(k), None) => vec![k.parse::<SpectrogramKind>().usage()?],
        (None, Some(ks)) => parse_kinds(ks)?,
        _ => return Err(anyhow!("pass --kind or --kinds")).usage(),
    };
    let arch = match &a.arch {
        Some(s) => s.parse::<Architecture>().usage()?,
        None => cfg.architecture,
    };
    let manifest = load_manifest(&cfg.paths.manifest)?;
    let store = FeatureStore::new(&cfg.paths.feature_dir);
    fs::create_dir_all(&cfg.paths.checkpoint_dir).runtime()?;
    for kind in kinds {
        let specs = pipeline(load_split(&manifest, Split::Train, kind, &cfg.frame, Some(&store)))?;
        println!("training {arch} on {kind}: {} clips", specs.len());
        let (model, log) = pipeline(train_model(
            &specs,
            kind,
            arch,
            manifest.categories.len(),
            &cfg.train,
            &cfg.mixup,
            |r| println!("epoch {} loss {:.6} train_acc {:.4}", r.epoch, r.loss, r.train_acc),
        ))?;
        let ckpt = checkpoint_path(&cfg.paths.checkpoint_dir, kind, arch);
        save_checkpoint(&model, &ckpt).runtime()?;
        let log_path = ckpt.with_extension("epochs.csv");
        let mut w = fs::File::create(&log_path).runtime()?;
        write_epoch_log(&mut w, &log).runtime()?;
        let last = log.last().expect("at least one epoch");
        println!("checkpoint {}", ckpt.display());
        println!("epoch log {}", log_path.display());
        println!("final train_acc {:.4}", last.train_acc);
    }
    Ok(())
}

fn infer(a: InferArgs) -> Result<(), Failure> {
    let split = parse_split(&a.split)?;
    let params = frame_from(a.config.as_deref())?;
    let wanted = a.kind.as_deref().map(str::parse::<SpectrogramKind>).transpose().usage()?;
    let manifest = load_manifest(&a.manifest)?;
    let model = load_checkpoint(&a.checkpoint)
        .with_context(|| format!("loading {}", a.checkpoint.display()))
        .usage()?;
    let kind = model.config.spectrogram_kind;
    if let Some(w) = wanted.filter(|&w| w != kind) {
        return Err(anyhow!("checkpoint was trained on {kind}, requested features are {w}")).usage();
    }
    let store = a.features.map(FeatureStore::new);
    let specs = pipeline(load_split(&manifest, split, kind, &params, store.as_ref()))?;
    let probs = pipeline(file_probs(&model, &specs))?;
    let mut buf = Vec::new();
    dump_probs(&mut buf, &probs).runtime()?;
    fs::write(&a.out, buf).runtime()?;
    println!("{} files -> {}", probs.len(), a.out.display());
    Ok(())
}

fn fuse_eval(a: FuseEvalArgs) -> Result<(), Failure> {
    let strategy: Strategy = a.strategy.parse().usage()?;
    let split = parse_split(&a.split)?;
    let manifest = load_manifest(&a.manifest)?;
    let systems = a
        .probs
        .iter()
        .map(|p| {
            let f = fs::File::open(p).with_context(|| format!("opening {}", p.display())).runtime()?;
            load_probs(f).with_context(|| format!("reading {}", p.display())).runtime()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let fused = fuse_systems(&systems, strategy).runtime()?;
    let truth: Vec<Truth> = manifest
        .split(split)
        .map(|e| Truth {
            file_id: e.file_id(),
            label: manifest.label_index(e),
            device: e.device.clone(),
        })
        .collect();
    let report = evaluate(&fused, &truth, manifest.categories.names(), Some(strategy)).runtime()?;
    eprint!("{}", report.table());
    let json = serde_json::to_string_pretty(&report).runtime()?;
    match &a.out {
        Some(p) => fs::write(p, json + "\n").runtime()?,
        None => println!("{json}"),
    }
    if let Some(p) = &a.categories_csv {
        report.write_category_csv(fs::File::create(p).runtime()?).runtime()?;
    }
    Ok(())
}

fn evaluate_all(a: EvaluateArgs) -> Result<(), Failure> {
    let cfg = RunConfig::load(&a.config).usage()?;
    let strategies = a
        .strategies
        .split(',')
        .map(str::parse::<Strategy>)
        .collect::<Result<Vec<_>, _>>()
        .usage()?;
    let arch = match &a.arch {
        Some(s) => s.parse::<Architecture>().usage()?,
        None => cfg.architecture,
    };
    let kinds = match &a.kinds {
        Some(k) => parse_kinds(k)?,
        None => SpectrogramKind::ALL
            .into_iter()
            .filter(|&k| checkpoint_path(&cfg.paths.checkpoint_dir, k, arch).exists())
            .collect(),
    };
    if kinds.is_empty() {
        return Err(anyhow!("no {arch} checkpoints in {}", cfg.paths.checkpoint_dir.display())).usage();
    }
    let mut models: BTreeMap<SpectrogramKind, Model> = BTreeMap::new();
    for &k in &kinds {
        let p = checkpoint_path(&cfg.paths.checkpoint_dir, k, arch);
        models.insert(k, load_checkpoint(&p).with_context(|| format!("loading {}", p.display())).usage()?);
    }
    let manifest = load_manifest(&cfg.paths.manifest)?;
    let store = FeatureStore::new(&cfg.paths.feature_dir);
    let (probs, truth) = pipeline(predict_split(&manifest, Split::Test, &models, &cfg.frame, Some(&store)))?;
    let combos: Vec<_> = evaluated_combinations()
        .into_iter()
        .filter(|c| c.iter().all(|k| models.contains_key(k)))
        .collect();
    let reports = pipeline(evaluate_combinations(
        &probs,
        &truth,
        manifest.categories.names(),
        &combos,
        &strategies,
    ))?;
    fs::create_dir_all(&cfg.paths.report_dir).runtime()?;
    for (k, p) in &probs {
        let mut buf = Vec::new();
        dump_probs(&mut buf, p).runtime()?;
        fs::write(cfg.paths.report_dir.join(format!("probs_{k}.csv")), buf).runtime()?;
    }
    let out = cfg.paths.report_dir.join("evaluation.json");
    fs::write(&out, serde_json::to_string_pretty(&reports).runtime()? + "\n").runtime()?;
    let mut stdout = std::io::stdout().lock();
    for r in &reports {
        let strategy = r.strategy.map_or("-".to_string(), |s| s.to_string());
        writeln!(stdout, "{:<28} {:<5} {:.4}", r.systems, strategy, r.accuracy).runtime()?;
    }
    writeln!(stdout, "report {}", out.display()).runtime()?;
    Ok(())
}
