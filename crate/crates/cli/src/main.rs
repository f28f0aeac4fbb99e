//! Batch command-line surface for the quantization toolkit.
//!
//! Exit codes: 0 success, 2 i/o errors, 3 file-format errors, 4 math or
//! contract violations. Flag errors use clap's own nonzero exit.

use clap::{Parser, Subcommand, ValueEnum};
use requant_core::io::{self, FormatError};
use requant_core::model::init_model;
use requant_core::pipeline::{
    ablation_grid, benchmark_instance, evaluate, run_pipeline, truncate_sequences, GridToggles,
    LnHandling, PrefixMode, QuantConfig,
};
use requant_core::quant::LogBase;
use requant_core::synth::{gen_interchannel, gen_powerlaw, SynthSpec};
use requant_core::CoreError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "requant",
    about = "Post-training quantization of toy transformer blocks with scale reparameterization",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetKind {
    Interchannel,
    Powerlaw,
}

#[derive(Clone, Copy, ValueEnum)]
enum SoftmaxBaseArg {
    Log2,
    Logsqrt2,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrefixModeArg {
    Quantized,
    Fp,
}

#[derive(Clone, Copy, ValueEnum)]
enum GranularityArg {
    Channel,
    Layer,
}

#[derive(clap::Args)]
struct ConfigArgs {
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(2..=8))]
    act_bits: u32,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(2..=8))]
    weight_bits: u32,
    #[arg(long, default_value_t = 0.9999)]
    percentile: f64,
    #[arg(long, default_value_t = 100)]
    clip_iters: usize,
    #[arg(long, default_value_t = 0.01)]
    clip_lr: f64,
    #[arg(long, default_value_t = 4.0)]
    clip_init: f64,
    #[arg(long, value_enum, default_value_t = SoftmaxBaseArg::Logsqrt2)]
    softmax_base: SoftmaxBaseArg,
    #[arg(long, value_enum, default_value_t = PrefixModeArg::Quantized)]
    prefix_mode: PrefixModeArg,
    /// Granularity used for LayerNorm activations before reparameterization.
    #[arg(long, value_enum, default_value_t = GranularityArg::Channel)]
    quantizer_granularity: GranularityArg,
    /// Disable learned dual clipping (channel-wise minmax instead).
    #[arg(long)]
    no_clip: bool,
    /// Disable Hessian-based weight reconstruction (round-to-nearest instead).
    #[arg(long)]
    no_gptq: bool,
    /// Quantize softmax activations with a plain log2 quantizer instead of
    /// the reparameterized log-sqrt2 one.
    #[arg(long)]
    no_reparam_softmax: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ConfigArgs {
    /// `apply_softmax_toggle` folds --no-reparam-softmax into the base
    /// config; `ablate` instead uses that flag to request an extra grid row.
    fn to_config(&self, apply_softmax_toggle: bool) -> QuantConfig {
        let softmax_base = if apply_softmax_toggle && self.no_reparam_softmax {
            LogBase::Two
        } else {
            match self.softmax_base {
                SoftmaxBaseArg::Log2 => LogBase::Two,
                SoftmaxBaseArg::Logsqrt2 => LogBase::SqrtTwo,
            }
        };
        QuantConfig {
            weight_bits: self.weight_bits,
            act_bits: self.act_bits,
            percentile: self.percentile,
            clip: requant_core::clip::ClipOptions {
                iters: self.clip_iters,
                lr: self.clip_lr,
                init: self.clip_init,
            },
            clip_enabled: !self.no_clip,
            gptq_enabled: !self.no_gptq,
            softmax_base,
            ln_handling: match self.quantizer_granularity {
                GranularityArg::Channel => LnHandling::ChannelReparam,
                GranularityArg::Layer => LnHandling::Layer,
            },
            prefix_mode: match self.prefix_mode {
                PrefixModeArg::Quantized => PrefixMode::Quantized,
                PrefixModeArg::Fp => PrefixMode::Fp,
            },
            seed: self.seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic calibration dataset.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = DatasetKind::Interchannel)]
        kind: DatasetKind,
        #[arg(long, default_value_t = 64)]
        channels: usize,
        #[arg(long, default_value_t = 16)]
        tokens: usize,
        #[arg(long, default_value_t = 32)]
        samples: usize,
        #[arg(long, default_value_t = 33.0)]
        range_ratio: f64,
        #[arg(long, default_value_t = 0.25)]
        left_frac: f64,
        #[arg(long, default_value_t = 0.25)]
        right_frac: f64,
        #[arg(long, default_value_t = 4.5)]
        powerlaw_exponent: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Create a randomly initialized toy transformer model.
    InitModel {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        embed_dim: usize,
        #[arg(long, default_value_t = 16)]
        tokens: usize,
        #[arg(long, default_value_t = 1)]
        blocks: usize,
        #[arg(long, default_value_t = 2)]
        heads: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the sequential quantization pipeline.
    Quantize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional per-layer report file.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Use only the first N calibration sequences.
        #[arg(long)]
        calib_size: Option<usize>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Compare a quantized artifact against its full-precision model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        quantized: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the clip x gptq ablation grid and emit it as a report.
    Ablate {
        #[arg(long, required_unless_present = "benchmark")]
        model: Option<PathBuf>,
        #[arg(long, required_unless_present = "benchmark")]
        data: Option<PathBuf>,
        /// Held-out inputs for evaluation; defaults to the calibration data.
        #[arg(long)]
        heldout: Option<PathBuf>,
        /// Use the shipped synthetic benchmark instance with this seed
        /// instead of model/data files.
        #[arg(long)]
        benchmark: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Convert a report, metrics, or grid file to CSV.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum CliError {
    Format(FormatError),
    Core(CoreError),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Format(e) => write!(f, "{}", e),
            CliError::Core(e) => write!(f, "{}", e),
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Core(c) => CliError::Core(c),
            other => CliError::Format(other),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Format(FormatError::Io(_)) => 2,
            CliError::Format(_) => 3,
            CliError::Core(_) => 4,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen {
            out,
            kind,
            channels,
            tokens,
            samples,
            range_ratio,
            left_frac,
            right_frac,
            powerlaw_exponent,
            seed,
        } => {
            let spec = SynthSpec {
                channels,
                tokens,
                samples,
                range_ratio,
                left_frac,
                right_frac,
                powerlaw_exponent,
                seed,
            };
            let data = match kind {
                DatasetKind::Interchannel => gen_interchannel(&spec)?,
                DatasetKind::Powerlaw => gen_powerlaw(&spec)?,
            };
            io::write_dataset(&out, &data)?;
            println!("wrote dataset {:?} with shape {:?}", out, data.shape());
        }
        Command::InitModel {
            out,
            embed_dim,
            tokens,
            blocks,
            heads,
            seed,
        } => {
            let model = init_model(embed_dim, tokens, blocks, heads, seed)?;
            io::write_model(&out, &model)?;
            println!(
                "wrote model {:?}: {} blocks, embed_dim {}, {} heads",
                out, blocks, embed_dim, heads
            );
        }
        Command::Quantize {
            model,
            data,
            out,
            report,
            calib_size,
            config,
        } => {
            let model = io::read_model(&model)?;
            let mut calib = io::read_dataset(&data)?;
            if let Some(n) = calib_size {
                calib = truncate_sequences(&calib, n)?;
            }
            let cfg = config.to_config(true);
            let (qm, reports) = run_pipeline(&model, &calib, &cfg)?;
            io::write_quantized(&out, &qm)?;
            if let Some(report_path) = report {
                io::write_report(&report_path, &cfg, &reports)?;
            }
            let fallbacks = qm.weights.values().filter(|w| w.cholesky_fallback).count();
            println!(
                "quantized {} blocks at W{}/A{}; {} reparameterizations, {} cholesky fallbacks",
                qm.model.blocks.len(),
                cfg.weight_bits,
                cfg.act_bits,
                qm.audits.len(),
                fallbacks
            );
        }
        Command::Eval {
            model,
            quantized,
            data,
            out,
        } => {
            let fp = io::read_model(&model)?;
            let qm = io::read_quantized(&quantized)?;
            let inputs = io::read_dataset(&data)?;
            let metrics = evaluate(&qm, &fp, &inputs)?;
            io::write_metrics(&out, &qm.config, &metrics)?;
            println!(
                "output_mse {:.6e} cosine_similarity {:.6}",
                metrics.output_mse, metrics.cosine_similarity
            );
        }
        Command::Ablate {
            model,
            data,
            heldout,
            benchmark,
            out,
            config,
        } => {
            let base = config.to_config(false);
            let toggles = GridToggles {
                clip_rows: !config.no_clip,
                gptq_rows: !config.no_gptq,
                softmax_log2_row: config.no_reparam_softmax,
                ln_layer_row: matches!(config.quantizer_granularity, GranularityArg::Layer),
            };
            let (model, calib, eval_set) = if let Some(seed) = benchmark {
                let b = benchmark_instance(seed)?;
                // The shipped benchmark brings its own isolation settings.
                let cfg = QuantConfig {
                    weight_bits: base.weight_bits,
                    act_bits: base.act_bits,
                    ..b.config
                };
                let rows = ablation_grid(&b.model, &b.calib, &b.heldout, &cfg, &toggles)?;
                io::write_grid(&out, &cfg, &rows)?;
                for r in &rows {
                    println!(
                        "{:18} output_mse {:.6e} cos {:.6}",
                        r.label, r.output_mse, r.cosine_similarity
                    );
                }
                return Ok(());
            } else {
                let model = io::read_model(model.as_ref().unwrap())?;
                let calib = io::read_dataset(data.as_ref().unwrap())?;
                let eval_set = match &heldout {
                    Some(p) => io::read_dataset(p)?,
                    None => calib.clone(),
                };
                (model, calib, eval_set)
            };
            let rows = ablation_grid(&model, &calib, &eval_set, &base, &toggles)?;
            io::write_grid(&out, &base, &rows)?;
            for r in &rows {
                println!(
                    "{:18} output_mse {:.6e} cos {:.6}",
                    r.label, r.output_mse, r.cosine_similarity
                );
            }
        }
        Command::Report { input, out } => {
            let doc = io::read_output(&input)?;
            std::fs::write(&out, io::to_csv(&doc)).map_err(FormatError::Io)?;
            println!("wrote {:?}", out);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code())
        }
    }
}
