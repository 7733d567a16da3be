//! Command-line front end: train, eval, gradcheck, memreport, hwreport,
//! synth-data. Logs and config echoes go to stderr, data to stdout. Exit
//! codes: 0 success, 1 validation/config error, 2 data error, 3 numeric
//! failure.

use clap::{Args, Parser, Subcommand, ValueEnum};
use efflif_core::data::{save_csv, split, synth_temporal_xor, Manifest, Standardizer};
use efflif_core::gradcheck::{self, SuiteConfig};
use efflif_core::hwcost::{self, HwConfig};
use efflif_core::memmodel::{self, mem_report};
use efflif_core::network::{Network, NetworkSpec, SharingScheme};
use efflif_core::trainer::{
    evaluate, load_checkpoint, save_checkpoint, train, BackwardMode, TrainConfig,
};
use efflif_core::{Error, Result};
use std::io::Write;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "efflif",
    version,
    about = "Spiking-network training with shared LIF membranes"
)]
struct Cli {
    /// Worker thread cap (0 uses all cores)
    #[arg(long, global = true, default_value_t = 0, env = "EFFLIF_THREADS")]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network described by a spec file on a dataset manifest
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a dataset manifest
    Eval(EvalArgs),
    /// Check BPTT gradients against finite differences on random networks
    Gradcheck(GradcheckArgs),
    /// Analytic LIF/weight/spike memory accounting for a spec
    Memreport(MemreportArgs),
    /// Analytic accelerator cost counts for a spec
    Hwreport(HwreportArgs),
    /// Generate a synthetic dataset with train/val/test splits
    SynthData(SynthArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    Baseline,
    Layer,
    Channel,
    LayerChannel,
    All,
}

impl SchemeArg {
    fn resolve(self, groups: usize) -> Vec<SharingScheme> {
        match self {
            SchemeArg::Baseline => vec![SharingScheme::Baseline],
            SchemeArg::Layer => vec![SharingScheme::CrossLayer],
            SchemeArg::Channel => vec![SharingScheme::CrossChannel { groups }],
            SchemeArg::LayerChannel => vec![SharingScheme::CrossLayerChannel { groups }],
            SchemeArg::All => vec![
                SharingScheme::Baseline,
                SharingScheme::CrossLayer,
                SharingScheme::CrossChannel { groups },
                SharingScheme::CrossLayerChannel { groups },
            ],
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackwardArg {
    Cached,
    Recompute,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Table,
    Kv,
}

#[derive(Args)]
struct TrainArgs {
    /// Network description file
    #[arg(long)]
    spec: PathBuf,
    /// Dataset manifest
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr0: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long, default_value_t = 0, env = "EFFLIF_SEED")]
    seed: u64,
    #[arg(long, value_enum, default_value_t = BackwardArg::Cached)]
    backward: BackwardArg,
    /// Skip per-channel standardization fitted on the training split
    #[arg(long)]
    raw: bool,
    /// Checkpoint output path (best-validation weights)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Append per-epoch records to this file as well as stdout
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Split to evaluate: train, val, or test
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    raw: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = SchemeArg::All)]
    scheme: SchemeArg,
    #[arg(long, default_value_t = 2)]
    groups: usize,
    /// Maximum hidden layers per random network
    #[arg(long, default_value_t = 3)]
    layers: usize,
    /// Maximum neurons per layer
    #[arg(long, default_value_t = 8)]
    neurons: usize,
    /// Maximum timesteps
    #[arg(long, default_value_t = 4)]
    timesteps: usize,
    /// Number of random networks per scheme
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = 0, env = "EFFLIF_SEED")]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct MemreportArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Override the spec's timestep count
    #[arg(long)]
    timesteps: Option<usize>,
    /// Override the spec's sharing scheme
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    #[arg(long, default_value_t = 2)]
    groups: usize,
    #[arg(long, value_enum, default_value_t = FormatArg::Table)]
    format: FormatArg,
    /// Run an instrumented forward/backward and check the analytic counts
    #[arg(long)]
    verify: bool,
    #[arg(long, default_value_t = 0, env = "EFFLIF_SEED")]
    seed: u64,
}

#[derive(Args)]
struct HwreportArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 128)]
    pes: usize,
    /// LIF-unit sharing ratio; defaults to the spec's channel group count
    #[arg(long)]
    share_ratio: Option<usize>,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long)]
    timesteps: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    /// Task name (currently: xor)
    #[arg(long, default_value = "xor")]
    task: String,
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    seq_len: usize,
    #[arg(long, default_value_t = 0, env = "EFFLIF_SEED")]
    seed: u64,
    /// Output directory for the CSVs and manifest
    #[arg(long)]
    out: PathBuf,
    /// Train/val/test fractions
    #[arg(long, default_value = "0.64,0.16,0.20")]
    fractions: String,
}

fn load_spec(path: &PathBuf) -> Result<NetworkSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read spec {}: {e}", path.display())))?;
    NetworkSpec::parse(&text).map_err(|e| match e {
        // a malformed spec file is a validation failure, not a data failure
        Error::Parse { line, msg } => {
            Error::config(format!("{} line {line}: {msg}", path.display()))
        }
        other => other,
    })
}

type Splits = (
    efflif_core::data::SequenceDataset,
    efflif_core::data::SequenceDataset,
    efflif_core::data::SequenceDataset,
);

fn load_standardized(manifest: &Manifest, raw: bool) -> Result<Splits> {
    let mut train_ds = manifest.load_split("train")?;
    let mut val_ds = manifest.load_split("val")?;
    let mut test_ds = manifest.load_split("test")?;
    if !raw {
        let std = Standardizer::fit(&train_ds);
        std.apply(&mut train_ds);
        std.apply(&mut val_ds);
        std.apply(&mut test_ds);
    }
    Ok((train_ds, val_ds, test_ds))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let spec = load_spec(&args.spec)?;
    let manifest = Manifest::load(&args.data)?;
    let cfg = TrainConfig {
        lr0: args.lr0,
        momentum: args.momentum,
        weight_decay: args.weight_decay,
        epochs: args.epochs,
        batch: args.batch,
        seed: args.seed,
        backward: match args.backward {
            BackwardArg::Cached => BackwardMode::Cached,
            BackwardArg::Recompute => BackwardMode::Recompute,
        },
    };
    eprintln!(
        "config: spec={} scheme={} data={} epochs={} lr0={} momentum={} weight_decay={} \
         batch={} seed={} backward={:?} standardize={}",
        args.spec.display(),
        spec.scheme.name(),
        args.data.display(),
        cfg.epochs,
        cfg.lr0,
        cfg.momentum,
        cfg.weight_decay,
        cfg.batch,
        cfg.seed,
        args.backward,
        !args.raw
    );
    let (train_ds, val_ds, test_ds) = load_standardized(&manifest, args.raw)?;
    let mut log_file = match &args.log {
        Some(path) => Some(std::fs::File::create(path)?),
        None => None,
    };
    let val_opt = if val_ds.is_empty() { None } else { Some(&val_ds) };
    let outcome = train(&spec, &train_ds, val_opt, &cfg, &mut |record| {
        println!("{}", record.to_kv());
        if let Some(f) = log_file.as_mut() {
            let _ = writeln!(f, "{}", record.to_kv());
        }
    })?;
    let test_metrics = evaluate(&outcome.best, &test_ds)?;
    println!(
        "final: best_epoch={} best_val_acc={} test_acc={:.4} test_loss={:.4}",
        outcome.best_epoch,
        outcome
            .best_val_acc
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "n/a".into()),
        test_metrics.accuracy,
        test_metrics.loss
    );
    for (i, r) in test_metrics.spike_rates.iter().enumerate() {
        println!("spike_rate_layer{} = {r:.4}", i + 1);
    }
    if let Some(out) = &args.out {
        save_checkpoint(&outcome.best, out)?;
        eprintln!("checkpoint written to {}", out.display());
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let spec = load_spec(&args.spec)?;
    let manifest = Manifest::load(&args.data)?;
    eprintln!(
        "config: spec={} ckpt={} data={} split={} standardize={}",
        args.spec.display(),
        args.ckpt.display(),
        args.data.display(),
        args.split,
        !args.raw
    );
    let (train_ds, val_ds, test_ds) = load_standardized(&manifest, args.raw)?;
    let ds = match args.split.as_str() {
        "train" => &train_ds,
        "val" => &val_ds,
        "test" => &test_ds,
        other => return Err(Error::config(format!("unknown split `{other}`"))),
    };
    let net = load_checkpoint(&args.ckpt, &spec)?;
    let metrics = evaluate(&net, ds)?;
    println!("split = {}", args.split);
    println!("accuracy = {:.4}", metrics.accuracy);
    println!("loss = {:.4}", metrics.loss);
    for (i, r) in metrics.spike_rates.iter().enumerate() {
        println!("spike_rate_layer{} = {r:.4}", i + 1);
    }
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    let schemes = args.scheme.resolve(args.groups);
    eprintln!(
        "config: scheme={:?} groups={} layers<={} neurons<={} timesteps<={} seeds={} tolerance={}",
        args.scheme, args.groups, args.layers, args.neurons, args.timesteps, args.seeds,
        args.tolerance
    );
    let mut worst = 0.0f64;
    for scheme in schemes {
        let cfg = SuiteConfig {
            scheme,
            max_layers: args.layers,
            max_neurons: args.neurons,
            max_timesteps: args.timesteps,
            seeds: args.seeds,
            base_seed: args.seed,
            h: 1e-3,
            floor: 1e-7,
        };
        let report = gradcheck::run_suite(&cfg)?;
        println!(
            "scheme={} networks={} weights={} max_rel_err={:.3e}",
            scheme.name(),
            report.networks,
            report.weights_checked,
            report.max_rel_err
        );
        worst = worst.max(report.max_rel_err);
        gradcheck::require_tolerance(&report, args.tolerance)?;
    }
    println!(
        "max_rel_err_overall={worst:.3e} tolerance={:.0e} ok",
        args.tolerance
    );
    Ok(())
}

fn apply_overrides(mut spec: NetworkSpec, args: &MemreportArgs) -> Result<NetworkSpec> {
    if let Some(t) = args.timesteps {
        spec.timesteps = t;
    }
    if let Some(scheme_arg) = args.scheme {
        let schemes = scheme_arg.resolve(args.groups);
        if schemes.len() != 1 {
            return Err(Error::config("memreport needs a single scheme override"));
        }
        spec.scheme = schemes[0];
        if spec.scheme.shares_layers() && spec.blocks.is_empty() {
            spec.blocks = default_blocks(&spec);
        }
    }
    spec.validate()?;
    Ok(spec)
}

/// Runs of equal activation shape become blocks when a layer-sharing
/// override is requested on a spec that declares none.
fn default_blocks(spec: &NetworkSpec) -> Vec<Vec<usize>> {
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = vec![0];
    for l in 1..spec.layers.len() {
        if spec.activation_shape(l) == spec.activation_shape(l - 1) {
            current.push(l);
        } else {
            blocks.push(std::mem::replace(&mut current, vec![l]));
        }
    }
    blocks.push(current);
    blocks.retain(|b| b.len() > 1);
    blocks
}

fn cmd_memreport(args: MemreportArgs) -> Result<()> {
    let spec = apply_overrides(load_spec(&args.spec)?, &args)?;
    eprintln!(
        "config: spec={} scheme={} timesteps={} verify={}",
        args.spec.display(),
        spec.scheme.name(),
        spec.timesteps,
        args.verify
    );
    let report = mem_report(&spec, spec.timesteps);
    match args.format {
        FormatArg::Kv => print!("{}", memmodel::format_kv(&report)),
        FormatArg::Table => print!("{}", memmodel::format_table(&report)),
    }
    if args.verify {
        verify_instrumented(&spec, args.seed)?;
        println!("verified = true");
    }
    Ok(())
}

fn verify_instrumented(spec: &NetworkSpec, seed: u64) -> Result<()> {
    use efflif_core::autograd::{forward, ForwardOptions, RecordMode};
    use efflif_core::memmodel::{lif_bytes, MemMode};
    use rand::Rng;
    use rand::SeedableRng;

    if spec.param_count() > 20_000_000 {
        return Err(Error::config(
            "--verify instantiates the network; this spec is too large to run",
        ));
    }
    let net: Network<f32> = Network::init(spec.clone(), seed)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let len = spec.input.channels * spec.input.length;
    let input = efflif_core::tensor::Tensor::new(
        vec![spec.input.channels, spec.input.length],
        (0..len).map(|_| rng.gen::<f32>() * 2.0 - 1.0).collect(),
    )?;
    let cached = forward(&net, &input, ForwardOptions::training(RecordMode::Cached))?;
    let fwd = lif_bytes(spec, spec.timesteps, MemMode::Forward).lif_forward;
    let bwd_cached = lif_bytes(spec, spec.timesteps, MemMode::BackwardCached).lif_backward;
    let live = cached.counters.live_membrane_floats as u64 * 4;
    let tape = cached.counters.cached_membrane_floats as u64 * 4;
    if live != fwd || tape != bwd_cached {
        return Err(Error::Numeric(format!(
            "instrumented counts diverge from analytic: live {live} vs {fwd}, tape {tape} vs {bwd_cached}"
        )));
    }
    if spec.scheme.is_shared() {
        let rec = forward(&net, &input, ForwardOptions::training(RecordMode::Recompute))?;
        let bwd_rec = lif_bytes(spec, spec.timesteps, MemMode::BackwardRecompute).lif_backward;
        let snap = rec.counters.snapshot_floats as u64 * 4;
        if snap != bwd_rec {
            return Err(Error::Numeric(format!(
                "instrumented snapshot bytes {snap} diverge from analytic {bwd_rec}"
            )));
        }
    }
    Ok(())
}

fn cmd_hwreport(args: HwreportArgs) -> Result<()> {
    let mut spec = load_spec(&args.spec)?;
    if let Some(t) = args.timesteps {
        spec.timesteps = t;
    }
    let ratio = args.share_ratio.unwrap_or_else(|| spec.scheme.groups());
    let hw = HwConfig::new(args.pes, ratio, args.batch)?;
    eprintln!(
        "config: spec={} scheme={} pes={} share_ratio={} batch={} timesteps={}",
        args.spec.display(),
        spec.scheme.name(),
        args.pes,
        ratio,
        args.batch,
        spec.timesteps
    );
    print!("{}", hwcost::format_kv(&spec, &hw, spec.timesteps)?);
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    if args.task != "xor" {
        return Err(Error::config(format!("unknown task `{}`", args.task)));
    }
    let parts: Vec<f64> = args
        .fractions
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::config(format!("bad fraction `{s}`")))
        })
        .collect::<Result<_>>()?;
    if parts.len() != 3 {
        return Err(Error::config(
            "fractions must be three comma-separated values",
        ));
    }
    eprintln!(
        "config: task={} n={} seq_len={} seed={} out={} fractions={:?}",
        args.task,
        args.n,
        args.seq_len,
        args.seed,
        args.out.display(),
        parts
    );
    let ds = synth_temporal_xor(args.n, args.seq_len, args.seed)?;
    let (train_ds, val_ds, test_ds) = split(&ds, (parts[0], parts[1], parts[2]), args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    save_csv(&train_ds, args.out.join("train.csv"))?;
    save_csv(&val_ds, args.out.join("val.csv"))?;
    save_csv(&test_ds, args.out.join("test.csv"))?;
    let manifest = Manifest {
        n_channels: ds.n_channels,
        seq_len: ds.seq_len,
        n_classes: ds.n_classes,
        train: "train.csv".into(),
        val: "val.csv".into(),
        test: "test.csv".into(),
    };
    manifest.save(args.out.join("data.manifest"))?;
    println!(
        "wrote {} samples ({}/{}/{}) to {}",
        ds.len(),
        train_ds.len(),
        val_ds.len(),
        test_ds.len(),
        args.out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Memreport(args) => cmd_memreport(args),
        Command::Hwreport(args) => cmd_hwreport(args),
        Command::SynthData(args) => cmd_synth(args),
    }
}

fn main() {
    // argument errors are validation failures (exit 1); help and version
    // displays exit 0
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = i32::from(e.use_stderr());
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
