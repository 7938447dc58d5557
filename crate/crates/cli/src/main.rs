use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lwdd_core::bundle::{ModelBundle, Payload, Provenance};
use lwdd_core::cycles::{total_cycles, CycleConstants};
use lwdd_core::data::{read_idx, IdxFile, LabeledDataset, MnistSplit};
use lwdd_core::engine::{infer_fxp_traced, write_mantissa_dump};
use lwdd_core::fixed::{QFormat, RoundingStrategy};
use lwdd_core::frame::{preprocess_gray, preprocess_rgb, GrayImage};
use lwdd_core::nn::{build_lwdd, infer_float, random_small_model, ModelConfig, Shape, Tensor, WeightSet};
use lwdd_core::packed::export_packed;
use lwdd_core::pnm::{read_pnm, write_pgm, PnmImage};
use lwdd_core::quant::{calibrated_ranges, quantize, sweep_bitwidths, worst_case_ranges, MarginMode, ReductionProfile};
use lwdd_core::train::{grad_check, image_tensor, train, write_trace_csv, AugmentationConfig, TrainConfig};

#[derive(Parser)]
#[command(name = "lwdd", version, about = "Fixed-point toolkit for the LWDD digit classifier")]
struct Cli {
    /// Seed for every random choice made by the subcommand.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the float network on MNIST and write a float bundle.
    Train(TrainArgs),
    /// Quantize a float bundle into a fixed-point bundle.
    Quantize(QuantizeArgs),
    /// Mismatch rate versus bit width for both rounding strategies.
    Sweep(SweepArgs),
    /// Classify one PGM/PPM image.
    Infer(InferArgs),
    /// Convert a PGM/PPM image into the 28x28 network input.
    Preprocess(PreprocessArgs),
    /// Clock-cycle budget of the hardware pipeline.
    Cycles(CyclesArgs),
    /// Write the packed weight memory image of a quantized bundle.
    ExportPacked(ExportArgs),
    /// Compare back-propagated and finite-difference gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Directory with the four MNIST IDX files.
    #[arg(long, default_value = "data/mnist")]
    data_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Learning-rate multiplier applied after each epoch.
    #[arg(long, default_value_t = 0.8)]
    lr_decay: f64,
    /// Number of output classes (10 digits, or 11 with a "no digit" class).
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Use only the first N training images.
    #[arg(long)]
    limit: Option<usize>,
    /// Train on unmodified images.
    #[arg(long)]
    no_augment: bool,
    /// Invert images (dark digit on light background).
    #[arg(long)]
    invert: bool,
    /// Output bundle directory.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch accuracy CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    PerOperation,
    AtEnd,
    Both,
}

impl StrategyArg {
    fn strategies(self) -> Vec<RoundingStrategy> {
        match self {
            StrategyArg::PerOperation => vec![RoundingStrategy::PerOperation],
            StrategyArg::AtEnd => vec![RoundingStrategy::AtEnd],
            StrategyArg::Both => RoundingStrategy::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Copy)]
enum ProfileArg {
    WorstCase,
    Calibrated(MarginMode),
}

fn parse_profile(s: &str) -> Result<ProfileArg, String> {
    if s == "worst-case" {
        return Ok(ProfileArg::WorstCase);
    }
    s.parse::<MarginMode>()
        .map(ProfileArg::Calibrated)
        .map_err(|e| format!("{e}; expected worst-case, three-sigma or percent:P"))
}

#[derive(Args)]
struct ProfileArgs {
    /// worst-case, three-sigma or percent:P (P as a fraction, e.g. 0.05).
    #[arg(long, default_value = "worst-case", value_parser = parse_profile)]
    profile: ProfileArg,
    /// IDX image file used for calibrated profiles.
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Use only the first N calibration images.
    #[arg(long)]
    calib_limit: Option<usize>,
}

#[derive(Args)]
struct QuantizeArgs {
    /// Float bundle directory.
    #[arg(long)]
    model: PathBuf,
    /// Fractional bits N.
    #[arg(long)]
    bits: u32,
    #[command(flatten)]
    profile: ProfileArgs,
    /// Output bundle directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Float bundle directory.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 10)]
    bits_from: u32,
    #[arg(long, default_value_t = 18)]
    bits_to: u32,
    #[arg(long, value_enum, default_value_t = StrategyArg::Both)]
    strategy: StrategyArg,
    #[command(flatten)]
    profile: ProfileArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Evaluate only the first N test images.
    #[arg(long)]
    limit: Option<usize>,
    /// Output CSV (standard output if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    /// Bundle directory (quantized runs the integer engine, float the reference).
    #[arg(long)]
    model: PathBuf,
    /// PGM or PPM image: 320x240, 224x224 or 28x28.
    #[arg(long)]
    image: PathBuf,
    #[arg(long, value_enum, default_value_t = StrategyArg::AtEnd)]
    strategy: StrategyArg,
    /// Write every layer's mantissas to this file.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CyclesArgs {
    /// Number of parallel convolution blocks.
    #[arg(long, default_value_t = 1)]
    conv_blocks: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Clock frequency used for the frame-rate line.
    #[arg(long, default_value_t = 50.0)]
    clock_mhz: f64,
    /// Also write the stage table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Quantized bundle directory.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Number of random models to check.
    #[arg(long, default_value_t = 10)]
    models: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    /// Check the full-size network instead of small random ones.
    #[arg(long)]
    lwdd: bool,
}

/// Bad flag values that clap cannot see (exit code 1).
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Train(a) => cmd_train(a, seed),
        Command::Quantize(a) => cmd_quantize(a, seed),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Cycles(a) => cmd_cycles(a),
        Command::ExportPacked(a) => cmd_export(a),
        Command::Gradcheck(a) => cmd_gradcheck(a, seed),
    }
}

fn cmd_train(a: TrainArgs, seed: u64) -> Result<()> {
    let model = build_lwdd(a.classes).map_err(|e| usage(e.to_string()))?;
    let mut tr = LabeledDataset::load_mnist(&a.data.data_dir, MnistSplit::Train)?;
    if let Some(n) = a.limit {
        tr = tr.take(n);
    }
    let te = LabeledDataset::load_mnist(&a.data.data_dir, MnistSplit::Test)?;
    let aug = if a.no_augment {
        AugmentationConfig::none(a.invert)
    } else {
        AugmentationConfig {
            invert: a.invert,
            ..AugmentationConfig::default()
        }
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        momentum: a.momentum,
        lr_decay: a.lr_decay,
        seed,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let out = train(&model, &tr, Some(&te), &aug, &cfg, |s| {
        eprintln!(
            "epoch {}: loss {:.4}, train acc {:.4}, test acc {:.4}",
            s.epoch,
            s.mean_loss,
            s.train_acc,
            s.test_acc.unwrap_or(f64::NAN)
        );
    })?;
    let provenance = Provenance {
        seed,
        source: format!("train epochs={} lr={} images={}", a.epochs, a.lr, tr.len()),
    };
    ModelBundle::from_float(&model, &out.weights, provenance)?.save(&a.out)?;
    if let Some(path) = &a.trace {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_trace_csv(&out.trace, f)?;
    }
    let acc = out.trace.last().and_then(|s| s.test_acc).unwrap_or(f64::NAN);
    println!("test accuracy {acc:.4}");
    Ok(())
}

fn load_calibration(p: &ProfileArgs) -> Result<(Vec<Vec<u8>>, String)> {
    let path = p
        .calib
        .as_ref()
        .ok_or_else(|| usage("calibrated profiles need --calib <idx image file>"))?;
    let IdxFile::Images { mut images, .. } = read_idx(path)? else {
        bail!("{} is not an IDX image file", path.display());
    };
    if let Some(n) = p.calib_limit {
        images.truncate(n);
    }
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let id = format!("{name}:{}", images.len());
    Ok((images, id))
}

fn build_profile(p: &ProfileArgs, model: &ModelConfig, weights: &WeightSet) -> Result<ReductionProfile> {
    Ok(match p.profile {
        ProfileArg::WorstCase => worst_case_ranges(model, weights)?,
        ProfileArg::Calibrated(margin) => {
            let (images, id) = load_calibration(p)?;
            calibrated_ranges(model, weights, &images, margin, &id)?
        }
    })
}

fn qformat(bits: u32) -> Result<QFormat> {
    QFormat::new(bits).map_err(|e| usage(e.to_string()))
}

fn cmd_quantize(a: QuantizeArgs, seed: u64) -> Result<()> {
    let fmt = qformat(a.bits)?;
    let bundle = ModelBundle::load(&a.model)?;
    let weights = bundle.float_weights()?;
    let profile = build_profile(&a.profile, &bundle.config, &weights)?;
    let qm = quantize(&bundle.config, &weights, &profile, fmt)?;
    let provenance = Provenance {
        seed,
        source: format!("quantize {} N={}", bundle.provenance.source, a.bits),
    };
    ModelBundle::from_quantized(&qm, provenance)?.save(&a.out)?;
    for r in &profile.layers {
        println!("layer {}: min {:.6} max {:.6} M {:.6}", r.layer, r.mn, r.mx, r.m);
    }
    println!("weights clipped: {}", qm.weight_saturations);
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    if a.bits_from > a.bits_to {
        return Err(usage("--bits-from must not exceed --bits-to"));
    }
    qformat(a.bits_from)?;
    qformat(a.bits_to)?;
    let bundle = ModelBundle::load(&a.model)?;
    let weights = bundle.float_weights()?;
    let profile = build_profile(&a.profile, &bundle.config, &weights)?;
    let mut test = LabeledDataset::load_mnist(&a.data.data_dir, MnistSplit::Test)?;
    if let Some(n) = a.limit {
        test = test.take(n);
    }
    let widths: Vec<u32> = (a.bits_from..=a.bits_to).collect();
    let report = sweep_bitwidths(
        &bundle.config,
        &weights,
        &profile,
        &test,
        &widths,
        &a.strategy.strategies(),
        |r| {
            eprintln!(
                "N={:2} {:13} mismatches {}/{}",
                r.frac_bits, r.strategy, r.mismatches, r.samples
            )
        },
    )?;
    match &a.out {
        Some(path) => {
            let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            report.write_csv(f)?;
        }
        None => report.write_csv(io::stdout().lock())?,
    }
    Ok(())
}

fn load_input(path: &Path) -> Result<GrayImage> {
    Ok(match read_pnm(path)? {
        PnmImage::Gray(g) => preprocess_gray(&g)?,
        PnmImage::Rgb(c) => preprocess_rgb(&c)?,
    })
}

fn cmd_infer(a: InferArgs) -> Result<()> {
    let bundle = ModelBundle::load(&a.model)?;
    let img = load_input(&a.image)?;
    let strategy = match a.strategy {
        StrategyArg::PerOperation => RoundingStrategy::PerOperation,
        StrategyArg::AtEnd => RoundingStrategy::AtEnd,
        StrategyArg::Both => return Err(usage("infer takes a single strategy")),
    };
    let Shape::Map { height, width, .. } = bundle.config.input else {
        bail!("model input is not an image");
    };
    if (height, width) != (img.height, img.width) {
        bail!("model expects {width}x{height} input, image is {}x{}", img.width, img.height);
    }
    if let Payload::Float(_) = bundle.payload {
        let weights = bundle.float_weights()?;
        let t = Tensor::from_pixels(height, width, &img.data)?;
        let out = infer_float(&bundle.config, &weights, &t)?;
        println!("class {}", out.class);
        println!("logits {}", join(out.logits.iter().map(|v| format!("{v:.6}"))));
        println!("overflow 0");
        return Ok(());
    }
    let qm = bundle.quantized_model()?;
    let trace = infer_fxp_traced(&qm, &img.data, strategy)?;
    let out = &trace.outcome;
    println!("class {}", out.class);
    println!("logits {}", join(out.fxp_logits.iter().map(|&m| format!("{:.6}", qm.fmt.to_real(m)))));
    println!("mantissas {}", join(out.fxp_logits.iter().map(|m| m.to_string())));
    println!("overflow {}", out.overflow_events);
    if let Some(path) = &a.dump {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(f);
        write_mantissa_dump(&trace, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn join(items: impl Iterator<Item = String>) -> String {
    items.collect::<Vec<_>>().join(" ")
}

fn cmd_preprocess(a: PreprocessArgs) -> Result<()> {
    let img = load_input(&a.image)?;
    write_pgm(&a.out, &img)?;
    println!("wrote {}x{} {}", img.width, img.height, a.out.display());
    Ok(())
}

fn cmd_cycles(a: CyclesArgs) -> Result<()> {
    if a.conv_blocks == 0 {
        return Err(usage("--conv-blocks must be at least 1"));
    }
    let model = build_lwdd(a.classes).map_err(|e| usage(e.to_string()))?;
    let report = total_cycles(&model, a.conv_blocks, &CycleConstants::default())?;
    print!("{}", report.to_table());
    println!("speedup {:.2}", report.speedup);
    println!("fps at {} MHz {:.2}", a.clock_mhz, report.fps(a.clock_mhz)?);
    if let Some(path) = &a.csv {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        report.write_csv(f)?;
    }
    Ok(())
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let qm = ModelBundle::load(&a.model)?.quantized_model()?;
    let img = export_packed(&qm, &a.out)?;
    let words: usize = img.layers.iter().map(|l| l.words.len()).sum();
    println!("wrote {words} words to {}", a.out.display());
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..a.models.max(1) {
        let model = if a.lwdd { build_lwdd(10)? } else { random_small_model(&mut rng) };
        let weights = WeightSet::he_init(&model, &mut rng);
        let Shape::Map { height, width, .. } = model.input else { unreachable!() };
        let img = if a.lwdd {
            image_tensor(&(0..784).map(|_| rng.gen()).collect::<Vec<u8>>())
        } else {
            Tensor::from_vec(1, height, width, (0..height * width).map(|_| rng.gen()).collect())?
        };
        let label = rng.gen_range(0..model.output_len()?);
        let err = grad_check(&model, &weights, &img, label, a.epsilon, seed.wrapping_add(i as u64))
            .map_err(|e| usage(e.to_string()))?;
        eprintln!("model {i}: {} weights, max relative error {err:.3e}", model.param_count());
        worst = worst.max(err);
    }
    println!("max relative error {worst:.3e}");
    Ok(())
}
