//! Command-line front end: train and evaluate the compact
//! globally-connected models, compare the learnable-activation variant
//! against the conventional baseline, verify gradients against finite
//! differences, and inspect saved checkpoints.
//!
//! Exit codes: 0 success, 2 input error (flags, data, file formats),
//! 3 numerical failure (non-finite loss, failed gradient check).

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gcnet::checkpoint;
use gcnet::data::{load_mnist, synth_blobs, Dataset};
use gcnet::gradcheck::check_network;
use gcnet::layers::Activation;
use gcnet::net::{build_smallnet, build_toy, ActivationKind, GcNet, Topology};
use gcnet::trainer::{
    act_snapshots, evaluate, train_with, write_metrics_csv, write_metrics_jsonl, ActSnapshot,
    EpochRecord, TrainConfig,
};
use gcnet::{Error, Result};

/// Spatial extent of generated synthetic images; even and divisible by
/// four so every model's pooling stages fit.
const SYNTH_HW: usize = 16;
const SYNTH_TRAIN_PER_CLASS: usize = 400;
const SYNTH_TEST_PER_CLASS: usize = 40;
/// Offset mixed into the seed for the held-out synthetic split so it
/// never collides with the training draw.
const SYNTH_TEST_SEED_OFFSET: u64 = 0x7E57;

#[derive(Parser)]
#[command(
    name = "gcnet",
    version,
    about = "Train, evaluate, and inspect compact convolutional networks whose every \
             block feeds the classifier and whose activations are learnable piecewise-linear functions"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model; writes metrics.csv, metrics.jsonl, model.ckpt, and summary.txt
    Train(TrainArgs),
    /// Evaluate a saved checkpoint on a dataset split
    Eval(EvalArgs),
    /// Check analytic gradients against central finite differences
    Gradcheck(GradcheckArgs),
    /// Print a checkpoint's structure and its activation parameters
    Inspect(InspectArgs),
    /// Train both compact variants with matched settings and write a joined error curve
    Compare(CompareArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Model {
    /// Three blocks (16/16/32 maps), every block tapped into the classifier,
    /// learnable piecewise activations
    SmallnetGcGrelu,
    /// Three blocks (16/16/36 maps), last block only, fixed rectifier
    SmallnetConvRelu,
    /// Two tiny blocks (4/8 maps) for fast runs and gradient checks
    Toy,
}

impl Model {
    fn build(self, with_bias: bool, seed: u64) -> GcNet {
        match self {
            Model::SmallnetGcGrelu => {
                build_smallnet(ActivationKind::GRelu, Topology::Global, with_bias, seed)
            }
            Model::SmallnetConvRelu => {
                build_smallnet(ActivationKind::Relu, Topology::LastOnly, with_bias, seed)
            }
            Model::Toy => build_toy(ActivationKind::GRelu, Topology::Global, with_bias, seed),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Model::SmallnetGcGrelu => "smallnet-gc-grelu",
            Model::SmallnetConvRelu => "smallnet-conv-relu",
            Model::Toy => "toy",
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum DatasetKind {
    /// Handwritten-digit IDX files read from --data-dir
    Mnist,
    /// Deterministic synthetic class blobs, generated in memory
    Synth,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset to use
    #[arg(long, value_enum, default_value_t = DatasetKind::Mnist)]
    dataset: DatasetKind,
    /// Directory holding the four digit IDX files (train/t10k images and labels)
    #[arg(long, env = "GRELU_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
}

#[derive(Args)]
struct OptimArgs {
    /// Number of training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size
    #[arg(long)]
    batch_size: Option<usize>,
    /// Base learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Momentum coefficient for the non-activation parameters
    #[arg(long)]
    momentum: Option<f64>,
    /// L2 penalty on convolution/classifier weights and normalization scales
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Epochs during which the activation parameters stay frozen
    #[arg(long)]
    freeze_epochs: Option<usize>,
    /// Evaluate on the test split every this-many epochs
    #[arg(long)]
    eval_every: Option<usize>,
    /// Comma-separated epochs at whose start the learning rate drops
    #[arg(long, value_delimiter = ',')]
    lr_drop_epochs: Option<Vec<usize>>,
    /// Factor applied to the learning rate at each drop epoch
    #[arg(long)]
    lr_drop_factor: Option<f64>,
}

impl OptimArgs {
    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.momentum {
            cfg.momentum = Some(v);
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = self.freeze_epochs {
            cfg.freeze_epochs = v;
        }
        if let Some(v) = self.eval_every {
            cfg.eval_every = v;
        }
        if let Some(v) = &self.lr_drop_epochs {
            cfg.lr_drop_epochs = v.clone();
        }
        if let Some(v) = self.lr_drop_factor {
            cfg.lr_drop_factor = v;
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Model to train
    #[arg(long, value_enum)]
    model: Model,
    #[command(flatten)]
    data: DataArgs,
    /// Directory for metrics.csv, metrics.jsonl, model.ckpt, summary.txt
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[command(flatten)]
    optim: OptimArgs,
    /// Seed for initialization and batch shuffling
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Zero the wall-clock column so identical runs write identical files
    #[arg(long)]
    deterministic: bool,
    /// Train the bias-free classifier variant
    #[arg(long)]
    strict_paper: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Which split to evaluate
    #[arg(long, value_enum, default_value_t = Split::Test)]
    split: Split,
    /// Evaluation batch size
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    /// Seed used when generating a synthetic split
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Model to check (toy finishes in well under a second; the
    /// smallnets probe ~8K parameters and take tens of seconds)
    #[arg(long, value_enum, default_value_t = Model::Toy)]
    model: Model,
    /// Maximum allowed relative error
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
    /// Base finite-difference step
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Seed for the probe batch and initialization
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write the per-parameter table as CSV to this path
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Check the bias-free classifier variant
    #[arg(long)]
    strict_paper: bool,
}

#[derive(Args)]
struct InspectArgs {
    /// Checkpoint to inspect
    checkpoint: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Directory for compare.csv and the per-model metrics files
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[command(flatten)]
    optim: OptimArgs,
    /// Seed shared by both runs
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Zero the wall-clock column so identical runs write identical files
    #[arg(long)]
    deterministic: bool,
    /// Train the bias-free classifier variants
    #[arg(long)]
    strict_paper: bool,
}

fn main() -> ExitCode {
    // Die quietly when a downstream pipe (e.g. `head`) closes stdout,
    // instead of panicking on the failed write.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let outcome = match cli.command {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
        Cmd::Inspect(a) => cmd_inspect(a),
        Cmd::Compare(a) => cmd_compare(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> ExitCode {
    if matches!(e, Error::Numeric(..) | Error::Oracle(..)) {
        ExitCode::from(3)
    } else {
        ExitCode::from(2)
    }
}

fn dataset_label(kind: DatasetKind) -> &'static str {
    match kind {
        DatasetKind::Mnist => "mnist",
        DatasetKind::Synth => "synth",
    }
}

/// Training and held-out splits for the requested source.
fn load_train_test(data: &DataArgs, classes: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    match data.dataset {
        DatasetKind::Mnist => Ok((
            load_mnist(&data.data_dir, "train")?,
            load_mnist(&data.data_dir, "test")?,
        )),
        DatasetKind::Synth => Ok((
            synth_blobs(classes, SYNTH_TRAIN_PER_CLASS, SYNTH_HW, seed)?,
            synth_blobs(
                classes,
                SYNTH_TEST_PER_CLASS,
                SYNTH_HW,
                seed.wrapping_add(SYNTH_TEST_SEED_OFFSET),
            )?,
        )),
    }
}

fn format_vec(values: &[f64]) -> String {
    let inner: Vec<String> = values.iter().map(|v| format!("{v:.4}")).collect();
    format!("[{}]", inner.join(", "))
}

fn epoch_line(rec: &EpochRecord) -> String {
    let test = match rec.test_err {
        Some(e) => format!("{:6.2}%", 100.0 * e),
        None => "      -".to_string(),
    };
    format!(
        "epoch {:>3}  train loss {:>8.4}  train err {:6.2}%  test err {}",
        rec.epoch,
        rec.train_loss,
        100.0 * rec.train_err,
        test
    )
}

fn topology_line(t: Topology) -> &'static str {
    match t {
        Topology::Global => "every block feeds the classifier",
        Topology::LastOnly => "last block only feeds the classifier",
    }
}

fn activation_section(initial: &[ActSnapshot], fin: &[ActSnapshot]) -> String {
    if initial.is_empty() {
        return "activation parameters: none (fixed rectifier)\n".to_string();
    }
    let mut s = String::from("activation parameters (initial -> final, ascending order):\n");
    for (a, b) in initial.iter().zip(fin) {
        let _ = writeln!(s, "block {} unit {}:", a.block + 1, a.unit + 1);
        let _ = writeln!(
            s,
            "  endpoints: {} -> {}",
            format_vec(&a.endpoints),
            format_vec(&b.endpoints)
        );
        let _ = writeln!(
            s,
            "  slopes:    {} -> {}",
            format_vec(&a.slopes),
            format_vec(&b.slopes)
        );
    }
    s
}

#[allow(clippy::too_many_arguments)]
fn render_summary(
    model_name: &str,
    net: &GcNet,
    dataset_desc: &str,
    cfg: &TrainConfig,
    deterministic: bool,
    records: &[EpochRecord],
    initial_acts: &[ActSnapshot],
    final_acts: &[ActSnapshot],
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "gcnet training summary");
    let _ = writeln!(s, "model: {model_name}");
    let _ = writeln!(s, "topology: {}", topology_line(net.topology));
    let _ = writeln!(
        s,
        "classifier bias: {}",
        if net
            .classifier
            .as_ref()
            .is_some_and(|c| c.bias.is_some())
        {
            "yes"
        } else {
            "no"
        }
    );
    let _ = writeln!(s, "dataset: {dataset_desc}");
    let momentum = match cfg.momentum {
        Some(m) => format!("{m}"),
        None => "none".to_string(),
    };
    let _ = writeln!(
        s,
        "config: epochs {}, batch {}, lr {}, momentum {}, weight decay {}, \
         activation freeze {}, lr drops {:?} x{}, seed {}, deterministic {}",
        cfg.epochs,
        cfg.batch_size,
        cfg.lr,
        momentum,
        cfg.weight_decay,
        cfg.freeze_epochs,
        cfg.lr_drop_epochs,
        cfg.lr_drop_factor,
        cfg.seed,
        if deterministic { "yes" } else { "no" }
    );
    let _ = writeln!(s, "\ntrainable parameters: {}", net.param_count());
    s.push_str(&net.param_report().render());
    if let Some(last) = records.last() {
        let _ = writeln!(s, "\nfinal train loss:  {:.6}", last.train_loss);
        let _ = writeln!(s, "final train error: {:.2}%", 100.0 * last.train_err);
        if let Some(te) = last.test_err {
            let _ = writeln!(s, "final test error:  {:.2}%", 100.0 * te);
        }
    }
    s.push('\n');
    s.push_str(&activation_section(initial_acts, final_acts));
    s.push_str("\nper-epoch metrics: metrics.csv, metrics.jsonl\ncheckpoint: model.ckpt\n");
    s
}

fn cmd_train(a: TrainArgs) -> Result<ExitCode> {
    let mut cfg = TrainConfig {
        seed: a.seed,
        deterministic: a.deterministic,
        ..TrainConfig::default()
    };
    a.optim.apply(&mut cfg);
    cfg.seed = a.seed;
    cfg.deterministic = a.deterministic;
    cfg.validate()?;

    let mut net = a.model.build(!a.strict_paper, a.seed);
    let (train_ds, test_ds) = load_train_test(&a.data, net.class_count, a.seed)?;
    let dataset_desc = format!(
        "{} ({} train / {} test samples)",
        dataset_label(a.data.dataset),
        train_ds.len(),
        test_ds.len()
    );
    println!(
        "training {} on {}, {} trainable parameters",
        a.model.name(),
        dataset_desc,
        net.param_count()
    );

    let initial_acts = act_snapshots(&net);
    let records = train_with(&mut net, &train_ds, Some(&test_ds), &cfg, |_, rec| {
        println!("{}", epoch_line(rec));
        Ok(())
    })?;
    let final_acts = act_snapshots(&net);

    fs::create_dir_all(&a.out_dir)?;
    write_metrics_csv(&a.out_dir.join("metrics.csv"), &records)?;
    write_metrics_jsonl(&a.out_dir.join("metrics.jsonl"), &records)?;
    checkpoint::save(&net, &a.out_dir.join("model.ckpt"))?;
    let summary = render_summary(
        a.model.name(),
        &net,
        &dataset_desc,
        &cfg,
        a.deterministic,
        &records,
        &initial_acts,
        &final_acts,
    );
    fs::write(a.out_dir.join("summary.txt"), &summary)?;
    println!(
        "wrote metrics.csv, metrics.jsonl, model.ckpt, summary.txt to {}",
        a.out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(a: EvalArgs) -> Result<ExitCode> {
    let mut net = checkpoint::load(&a.checkpoint)?;
    let ds = match (a.data.dataset, a.split) {
        (DatasetKind::Mnist, Split::Train) => load_mnist(&a.data.data_dir, "train")?,
        (DatasetKind::Mnist, Split::Test) => load_mnist(&a.data.data_dir, "test")?,
        (DatasetKind::Synth, Split::Train) => {
            synth_blobs(net.class_count, SYNTH_TRAIN_PER_CLASS, SYNTH_HW, a.seed)?
        }
        (DatasetKind::Synth, Split::Test) => synth_blobs(
            net.class_count,
            SYNTH_TEST_PER_CLASS,
            SYNTH_HW,
            a.seed.wrapping_add(SYNTH_TEST_SEED_OFFSET),
        )?,
    };
    let result = evaluate(&mut net, &ds, a.batch_size)?;
    println!(
        "checkpoint {} on {} {} split ({} samples): loss {:.6}, error {:.2}%",
        a.checkpoint.display(),
        dataset_label(a.data.dataset),
        match a.split {
            Split::Train => "train",
            Split::Test => "test",
        },
        ds.len(),
        result.loss,
        100.0 * result.error_rate
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    if !(a.tolerance.is_finite() && a.tolerance > 0.0) {
        return Err(Error::Config(format!(
            "tolerance must be positive and finite, got {}",
            a.tolerance
        )));
    }
    if !(a.step.is_finite() && a.step > 0.0) {
        return Err(Error::Config(format!(
            "step must be positive and finite, got {}",
            a.step
        )));
    }
    let net = a.model.build(!a.strict_paper, a.seed);
    // A small, varied, deterministic probe batch: one synthetic image
    // from each of three classes.
    let probe = synth_blobs(net.class_count, 1, SYNTH_HW, a.seed)?;
    let take: Vec<usize> = vec![0, 1 % probe.len(), 2 % probe.len()];
    let (input, labels) = probe.gather(&take)?;
    println!(
        "checking {} ({} parameters) against central differences, tolerance {:e}, step {:e}",
        a.model.name(),
        net.param_count(),
        a.tolerance,
        a.step
    );
    let report = check_network(&net, &input, &labels, a.tolerance, a.step)?;
    print!("{}", report.render());
    if let Some(path) = &a.csv {
        fs::write(path, report.to_csv())?;
        println!("wrote per-parameter table to {}", path.display());
    }
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

fn cmd_inspect(a: InspectArgs) -> Result<ExitCode> {
    let info = checkpoint::inspect(&a.checkpoint)?;
    print!("{}", info.render());
    let net = checkpoint::load(&a.checkpoint)?;
    let mut any = false;
    for (i, block) in net.blocks.iter().enumerate() {
        if let Activation::GRelu(layer) = &block.act {
            any = true;
            for (u, params) in layer.units().iter().enumerate() {
                println!("block {} activation unit {}:", i + 1, u + 1);
                println!(
                    "  endpoints: {}",
                    format_vec(&params.ascending_endpoints())
                );
                println!("  slopes:    {}", format_vec(&params.ascending_slopes()));
            }
        }
    }
    if !any {
        println!("activation parameters: none (fixed rectifier)");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(a: CompareArgs) -> Result<ExitCode> {
    let mut cfg = TrainConfig {
        seed: a.seed,
        deterministic: a.deterministic,
        ..TrainConfig::default()
    };
    a.optim.apply(&mut cfg);
    cfg.seed = a.seed;
    cfg.deterministic = a.deterministic;
    // The joined curve needs an error value at every epoch.
    cfg.eval_every = 1;
    cfg.validate()?;

    let (train_ds, test_ds) = load_train_test(&a.data, 10, a.seed)?;
    println!(
        "comparing both smallnet variants on {} ({} train / {} test samples), matched seed {}",
        dataset_label(a.data.dataset),
        train_ds.len(),
        test_ds.len(),
        a.seed
    );

    let run = |model: Model| -> Result<(GcNet, Vec<EpochRecord>)> {
        let mut net = model.build(!a.strict_paper, a.seed);
        println!("-- {} ({} parameters)", model.name(), net.param_count());
        let records = train_with(&mut net, &train_ds, Some(&test_ds), &cfg, |_, rec| {
            println!("{}", epoch_line(rec));
            Ok(())
        })?;
        Ok((net, records))
    };
    let (gc_net, gc_records) = run(Model::SmallnetGcGrelu)?;
    let (conv_net, conv_records) = run(Model::SmallnetConvRelu)?;

    let mut csv = String::from("epoch,gc_err,conv_err\n");
    for (g, c) in gc_records.iter().zip(&conv_records) {
        let _ = writeln!(
            csv,
            "{},{},{}",
            g.epoch,
            g.test_err.unwrap_or(f64::NAN),
            c.test_err.unwrap_or(f64::NAN)
        );
    }
    fs::create_dir_all(&a.out_dir)?;
    fs::write(a.out_dir.join("compare.csv"), &csv)?;
    write_metrics_csv(&a.out_dir.join("gc_metrics.csv"), &gc_records)?;
    write_metrics_csv(&a.out_dir.join("conv_metrics.csv"), &conv_records)?;

    let gc_final = gc_records.last().and_then(|r| r.test_err).unwrap_or(f64::NAN);
    let conv_final = conv_records
        .last()
        .and_then(|r| r.test_err)
        .unwrap_or(f64::NAN);
    println!(
        "final test error: {} {:.2}% vs {} {:.2}%",
        Model::SmallnetGcGrelu.name(),
        100.0 * gc_final,
        Model::SmallnetConvRelu.name(),
        100.0 * conv_final
    );
    println!(
        "parameters: {} {} vs {} {}",
        Model::SmallnetGcGrelu.name(),
        gc_net.param_count(),
        Model::SmallnetConvRelu.name(),
        conv_net.param_count()
    );
    println!("wrote compare.csv (epoch,gc_err,conv_err) to {}", a.out_dir.display());
    Ok(ExitCode::SUCCESS)
}
