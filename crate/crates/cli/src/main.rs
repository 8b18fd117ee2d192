//! `rcunet`: corpus generation, training, enhancement, evaluation and
//! architecture analysis for recurrent-convolutional U-net speech enhancers.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rcunet_core::data::{load_corpus, CorpusConfig, NoiseChoice};
use rcunet_core::dsp::{self, MelBank, SAMPLE_RATE};
use rcunet_core::model::analysis::{block_table, count_params, receptive_field};
use rcunet_core::model::{checkpoint, ModelSpec, Network, OutputMode, CANONICAL_NAMES};
use rcunet_core::pipeline;
use rcunet_core::train::{train, TrainConfig, TrainLog};
use rcunet_tensor::ClipScope;

const DEFAULT_LEVELS: usize = 5;

#[derive(Parser, Debug)]
#[command(name = "rcunet", version, about = "Speech enhancement with recurrent-convolutional U-nets")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a train/test corpus of speech-like signals mixed with noise.
    #[command(args_override_self = true)]
    GenData(GenDataArgs),
    /// Train a network on a corpus and write the best checkpoint.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Enhance a single WAV file with a trained checkpoint.
    #[command(args_override_self = true)]
    Enhance(EnhanceArgs),
    /// Score the test split of a corpus and write per-utterance metrics as CSV.
    #[command(args_override_self = true)]
    Evaluate(EvaluateArgs),
    /// Print block tables, parameter counts and receptive fields.
    #[command(args_override_self = true)]
    Analyze(AnalyzeArgs),
}

/// Every subcommand accepts `--config FILE`; its `key=value` lines act as
/// flags placed before the command line ones, so explicit flags win.
#[derive(Args, Debug)]
struct ConfigArg {
    /// key=value file of flag overrides (keys are flag names without dashes).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    train_count: usize,
    #[arg(long, default_value_t = 16)]
    test_count: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    snr_db: f64,
    /// babble, factory or mixed (alternating per utterance).
    #[arg(long, default_value = "mixed")]
    noise_kind: NoiseChoice,
    #[arg(long, default_value_t = 2.0)]
    min_duration: f64,
    #[arg(long, default_value_t = 4.0)]
    max_duration: f64,
}

#[derive(Args, Debug)]
struct ArchArgs {
    /// Canonical U-net name or FCLN / RNN.
    #[arg(long)]
    arch: String,
    /// Number of encoder-decoder levels of a U-net.
    #[arg(long, default_value_t = DEFAULT_LEVELS)]
    levels: usize,
    /// Feature width of U-net conv layers, or hidden size of a baseline.
    #[arg(long)]
    width: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    arch: ArchArgs,
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    /// Checkpoint path for the best snapshot.
    #[arg(long, value_name = "CKPT")]
    out: PathBuf,
    /// Per-epoch CSV log [default: CKPT with a .csv extension].
    #[arg(long, value_name = "CSV")]
    log: Option<PathBuf>,
    /// mapping (clean and noise log-mel) or irm (ratio mask).
    #[arg(long, default_value = "mapping")]
    target: OutputMode,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 15)]
    batch_size: usize,
    /// Initial learning rate [default: 0.01 with recurrent layers, else 0.001].
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 0.99)]
    lr_decay: f64,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100.0)]
    clip_threshold: f64,
    /// Clip every gradient instead of only the recurrent weights.
    #[arg(long)]
    clip_all: bool,
    /// Utterances per forward pass inside a batch.
    #[arg(long, default_value_t = 1)]
    micro_batch: usize,
    /// Keep convolutions in double precision.
    #[arg(long)]
    precise: bool,
    /// Skip per-epoch validation and keep the last epoch.
    #[arg(long)]
    no_validate: bool,
}

#[derive(Args, Debug)]
struct EnhanceArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, value_name = "CKPT")]
    ckpt: PathBuf,
    #[arg(long = "in", value_name = "WAV")]
    input: PathBuf,
    #[arg(long, value_name = "WAV")]
    out: PathBuf,
    #[arg(long)]
    precise: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Checkpoint to score; may be omitted with --passthrough.
    #[arg(long, value_name = "CKPT")]
    ckpt: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    #[arg(long, value_name = "CSV")]
    out: PathBuf,
    /// Also score the unprocessed mixtures.
    #[arg(long)]
    passthrough: bool,
    #[arg(long)]
    precise: bool,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Architecture to analyze.
    #[arg(long, conflicts_with = "all", required_unless_present = "all")]
    arch: Option<String>,
    /// Analyze every canonical U-net and both baselines.
    #[arg(long)]
    all: bool,
    #[arg(long, default_value_t = DEFAULT_LEVELS)]
    levels: usize,
    #[arg(long)]
    width: Option<usize>,
}

/// Errors caused by how the tool was invoked; reported with exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

/// Ordered `key = value` listing of a command's resolved settings.
#[derive(Default)]
struct Resolved(Vec<(String, String)>);

impl Resolved {
    fn set(&mut self, key: &str, value: impl fmt::Display) -> &mut Self {
        self.0.push((key.to_string(), value.to_string()));
        self
    }

    fn print(&self, command: &str) {
        println!("[{command}]");
        for (k, v) in &self.0 {
            println!("{k} = {v}");
        }
    }
}

fn show_path(p: &Path) -> String {
    p.display().to_string()
}

/// Reads `key=value` lines, skipping blanks and `#` comments.
fn read_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return usage(format!("{}:{}: expected key=value", path.display(), n + 1));
        };
        out.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    Ok(out)
}

/// Splices `--config` entries in right after the subcommand name.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let strings: Vec<Option<&str>> = args.iter().map(|a| a.to_str()).collect();
    let mut config_path = None;
    for (i, a) in strings.iter().enumerate() {
        match a {
            Some("--config") => {
                let Some(Some(p)) = strings.get(i + 1) else {
                    return usage("--config requires a file");
                };
                config_path = Some(PathBuf::from(p));
            }
            Some(s) if s.starts_with("--config=") => config_path = Some(PathBuf::from(&s[9..])),
            _ => {}
        }
    }
    let Some(path) = config_path else {
        return Ok(args);
    };
    let entries = read_config(&path)?;
    let names = ["gen-data", "train", "enhance", "evaluate", "analyze"];
    let Some(pos) = strings.iter().position(|a| a.is_some_and(|s| names.contains(&s))) else {
        return Ok(args);
    };
    let mut out = args[..=pos].to_vec();
    for (k, v) in entries {
        if k == "config" {
            return usage("config files cannot include other config files");
        }
        match v.as_str() {
            "true" => out.push(format!("--{k}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{k}").into());
                out.push(v.into());
            }
        }
    }
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

fn model_spec(name: &str, levels: usize, width: Option<usize>) -> Result<ModelSpec> {
    ModelSpec::named(name, levels, width).map_err(|e| match e {
        rcunet_core::CoreError::InvalidArch(msg) => UsageError(msg).into(),
        other => anyhow::Error::from(other),
    })
}

fn load_checkpoint(path: &Path) -> Result<(Network, checkpoint::Meta)> {
    if !path.is_file() {
        return usage(format!("checkpoint {} not found", path.display()));
    }
    checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    if !(args.min_duration > 0.0 && args.max_duration >= args.min_duration) {
        return usage("durations must satisfy 0 < min-duration <= max-duration");
    }
    let cfg = CorpusConfig {
        seed: args.seed,
        train_count: args.train_count,
        test_count: args.test_count,
        min_duration_secs: args.min_duration,
        max_duration_secs: args.max_duration,
        snr_db: args.snr_db,
        noise: args.noise_kind,
    };
    Resolved::default()
        .set("out", show_path(&args.out))
        .set("seed", cfg.seed)
        .set("train_count", cfg.train_count)
        .set("test_count", cfg.test_count)
        .set("min_duration_s", cfg.min_duration_secs)
        .set("max_duration_s", cfg.max_duration_secs)
        .set("snr_db", cfg.snr_db)
        .set("noise_kind", cfg.noise)
        .set("sample_rate", SAMPLE_RATE)
        .print("gen-data");
    let corpus = cfg.generate()?;
    corpus.write(&args.out)?;
    println!(
        "wrote {} train and {} test utterances to {}",
        corpus.train.len(),
        corpus.test.len(),
        args.out.display()
    );
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let spec = model_spec(&args.arch.arch, args.arch.levels, args.arch.width)?.with_output_mode(args.target);
    let defaults = TrainConfig::for_spec(&spec);
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr0: args.lr.unwrap_or(defaults.lr0),
        lr_decay: args.lr_decay,
        val_fraction: args.val_fraction,
        seed: args.seed,
        clip_threshold: args.clip_threshold,
        clip_scope: if args.clip_all { ClipScope::All } else { ClipScope::Recurrent },
        micro_batch: args.micro_batch,
        fast_math: !args.precise,
        validate: !args.no_validate,
    };
    if let Err(e) = cfg.check() {
        return usage(e.to_string());
    }
    let log_path = args.log.clone().unwrap_or_else(|| args.out.with_extension("csv"));
    Resolved::default()
        .set("arch", spec.name())
        .set("levels", args.arch.levels)
        .set("width", args.arch.width.map_or("default".to_string(), |w| w.to_string()))
        .set("target", spec.output_mode())
        .set("corpus", show_path(&args.corpus))
        .set("out", show_path(&args.out))
        .set("log", show_path(&log_path))
        .set("epochs", cfg.epochs)
        .set("batch_size", cfg.batch_size)
        .set("lr", cfg.lr0)
        .set("lr_decay", cfg.lr_decay)
        .set("val_fraction", cfg.val_fraction)
        .set("seed", cfg.seed)
        .set("clip_threshold", cfg.clip_threshold)
        .set("clip_scope", if args.clip_all { "all" } else { "recurrent" })
        .set("micro_batch", cfg.micro_batch)
        .set("precision", if cfg.fast_math { "f32 conv" } else { "f64" })
        .set("validate", cfg.validate)
        .print("train");

    let corpus = load_corpus(&args.corpus).with_context(|| format!("loading corpus {}", args.corpus.display()))?;
    if corpus.train.is_empty() {
        bail!("corpus {} has no training utterances", args.corpus.display());
    }
    let network = Network::build(&spec, cfg.seed)?;
    println!("trainable parameters: {}", network.params.trainable_count());
    let mel = MelBank::new();
    let mut log = TrainLog::create(&log_path)?;
    let meta_for = |epoch: usize, val: Option<f64>| {
        let mut meta = checkpoint::Meta::new();
        meta.insert("epoch".into(), epoch.to_string());
        meta.insert("seed".into(), cfg.seed.to_string());
        meta.insert("lr0".into(), cfg.lr0.to_string());
        meta.insert("corpus".into(), show_path(&args.corpus));
        if let Some(v) = val {
            meta.insert("val_sdr".into(), format!("{v:.6}"));
        }
        meta
    };
    let outcome = train(network, &corpus.train, &cfg, &mel, |record, net| {
        log.append(record)?;
        if record.snapshot {
            checkpoint::save(&args.out, net, &meta_for(record.epoch, record.val_sdr))?;
        }
        println!(
            "epoch {:>3}  lr {:.6}  loss {:.5}  val_sdr {}{}",
            record.epoch,
            record.lr,
            record.train_loss,
            record.val_sdr.map_or("-".to_string(), |v| format!("{v:.3} dB")),
            if record.snapshot { "  (saved)" } else { "" }
        );
        Ok(())
    })?;
    let state = outcome.state;
    checkpoint::save(&args.out, &outcome.best, &meta_for(state.best_epoch, state.best_val_sdr))?;
    println!(
        "best epoch {} (val_sdr {}) written to {}",
        state.best_epoch,
        state.best_val_sdr.map_or("-".to_string(), |v| format!("{v:.3} dB")),
        args.out.display()
    );
    Ok(())
}

fn enhance_cmd(args: EnhanceArgs) -> Result<()> {
    let (network, _) = load_checkpoint(&args.ckpt)?;
    Resolved::default()
        .set("ckpt", show_path(&args.ckpt))
        .set("arch", network.spec.name())
        .set("target", network.output_mode())
        .set("in", show_path(&args.input))
        .set("out", show_path(&args.out))
        .set("precision", if args.precise { "f64" } else { "f32 conv" })
        .print("enhance");
    let wave = dsp::read_wav(&args.input)?;
    let wave = if wave.sample_rate == SAMPLE_RATE {
        wave
    } else {
        dsp::resample(&wave, SAMPLE_RATE)?
    };
    let mel = MelBank::new();
    let enhanced = pipeline::enhance(&network, &wave, &mel, !args.precise)?;
    dsp::write_wav(&args.out, &enhanced)?;
    println!("wrote {} samples to {}", enhanced.len(), args.out.display());
    Ok(())
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<()> {
    if args.ckpt.is_none() && !args.passthrough {
        return usage("evaluate needs --ckpt, --passthrough, or both");
    }
    let network = match &args.ckpt {
        Some(p) => Some(load_checkpoint(p)?.0),
        None => None,
    };
    Resolved::default()
        .set("ckpt", args.ckpt.as_deref().map_or("none".to_string(), show_path))
        .set("arch", network.as_ref().map_or("none", |n| n.spec.name()))
        .set("corpus", show_path(&args.corpus))
        .set("out", show_path(&args.out))
        .set("passthrough", args.passthrough)
        .set("precision", if args.precise { "f64" } else { "f32 conv" })
        .print("evaluate");
    let corpus = load_corpus(&args.corpus).with_context(|| format!("loading corpus {}", args.corpus.display()))?;
    if corpus.test.is_empty() {
        bail!("corpus {} has no test utterances", args.corpus.display());
    }
    let mel = MelBank::new();
    let report = pipeline::evaluate(network.as_ref(), &corpus.test, &mel, !args.precise, args.passthrough)?;
    report.write_csv(&args.out)?;
    for row in report.mean().into_iter().chain(report.passthrough_mean()) {
        println!(
            "{:<12} SDR {:>7.3}  SIR {:>7.3}  SAR {:>7.3}  STOI {:.4}",
            row.id, row.sdr, row.sir, row.sar, row.stoi
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn analyze_one(spec: &ModelSpec) -> Result<()> {
    println!("== {}", spec.name());
    match spec {
        ModelSpec::UNet(arch) => print!("{}", block_table(arch)?),
        ModelSpec::Baseline(b) => println!("{b}"),
    }
    println!("trainable parameters: {}", count_params(spec)?);
    println!("receptive field (time, freq): {}", receptive_field(spec)?);
    Ok(())
}

fn analyze_cmd(args: AnalyzeArgs) -> Result<()> {
    let names: Vec<String> = if args.all {
        CANONICAL_NAMES.iter().chain(["FCLN", "RNN"].iter()).map(|s| s.to_string()).collect()
    } else {
        vec![args.arch.clone().unwrap_or_default()]
    };
    let specs = names
        .iter()
        .map(|n| model_spec(n, args.levels, args.width))
        .collect::<Result<Vec<_>>>()?;
    Resolved::default()
        .set("arch", names.join(","))
        .set("levels", args.levels)
        .set("width", args.width.map_or("default".to_string(), |w| w.to_string()))
        .print("analyze");
    for spec in &specs {
        analyze_one(spec)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Enhance(a) => enhance_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Analyze(a) => analyze_cmd(a),
    }
}

fn main() -> ExitCode {
    let args = match expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
