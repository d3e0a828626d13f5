use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use astro_ptq::container::{Tensor, TensorContainer, TensorData};
use astro_ptq::pipeline::{
    self, Backend, LayerSource, Mode, PipelineConfig, PipelineOutputs, ACTS_ENTRY, WEIGHTS_ENTRY,
};
use astro_ptq::synth::{gen_synthetic, SynthConfig};
use astro_ptq::{project_l1_ball, Error, Result};

#[derive(Parser)]
#[command(
    name = "astro-ptq",
    version,
    about = "Activation-guided regularization and group-wise weight quantization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct and quantize one layer, writing a quantized container and a JSON report.
    Quantize(QuantizeArgs),
    /// Report on existing weights, activations and a quantized container.
    Analyze(AnalyzeArgs),
    /// Write a synthetic layer with outlier activation channels.
    GenSynth(GenSynthArgs),
    /// Project each row of a float32 tensor onto the L1 ball.
    ProjectL1(ProjectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Astro,
    Uniform,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Rtn,
    Gptq,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = SynthConfig::default().rows)]
    rows: usize,
    #[arg(long, default_value_t = SynthConfig::default().c_in)]
    cin: usize,
    #[arg(long, default_value_t = SynthConfig::default().c_out)]
    cout: usize,
    #[arg(long, default_value_t = SynthConfig::default().outlier_frac)]
    outlier_frac: f64,
    #[arg(long, default_value_t = SynthConfig::default().outlier_scale)]
    outlier_scale: f64,
    #[arg(long, default_value_t = SynthConfig::default().weight_tail)]
    weight_tail: f64,
    #[arg(long, default_value_t = SynthConfig::default().act_std)]
    act_std: f64,
}

impl SynthArgs {
    fn config(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            rows: self.rows,
            c_in: self.cin,
            c_out: self.cout,
            outlier_frac: self.outlier_frac,
            outlier_scale: self.outlier_scale,
            weight_tail: self.weight_tail,
            act_std: self.act_std,
            seed,
        }
    }
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long, conflicts_with = "synth", requires = "acts")]
    weights: Option<PathBuf>,
    /// Generate the layer instead of reading it.
    #[arg(long, required_unless_present = "weights")]
    synth: bool,
    #[arg(long, conflicts_with = "synth")]
    acts: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    bits: u8,
    #[arg(long, default_value_t = 128)]
    group: usize,
    #[arg(long, value_enum, default_value = "astro")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "rtn")]
    backend: BackendArg,
    #[arg(long, default_value_t = 3e-5)]
    beta: f64,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    #[arg(long, default_value_t = 0.01)]
    damping: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Also write the reconstructed weights to this container.
    #[arg(long)]
    out_reconstructed: Option<PathBuf>,
    #[command(flatten)]
    synth_args: SynthArgs,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    acts: PathBuf,
    #[arg(long)]
    quantized: PathBuf,
    /// Reconstructed weights; defaults to the original weights.
    #[arg(long)]
    reconstructed: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    group: usize,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct GenSynthArgs {
    #[command(flatten)]
    synth_args: SynthArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_weights: PathBuf,
    #[arg(long)]
    out_acts: PathBuf,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    radius: f64,
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Quantize(a) => {
            let cfg = PipelineConfig {
                bits: a.bits,
                group_size: a.group,
                beta: a.beta,
                iters: a.iters,
                mode: match a.mode {
                    ModeArg::Astro => Mode::Astro,
                    ModeArg::Uniform => Mode::Uniform,
                    ModeArg::None => Mode::None,
                },
                backend: match a.backend {
                    BackendArg::Rtn => Backend::Rtn,
                    BackendArg::Gptq => Backend::Gptq,
                },
                damping_ratio: a.damping,
                seed: a.seed,
                synth: a.synth_args.config(a.seed),
            };
            let source = match (a.weights, a.acts) {
                (Some(weights), Some(acts)) => LayerSource::Files { weights, acts },
                _ => LayerSource::Synthetic,
            };
            let out = PipelineOutputs {
                quantized: a.out,
                report: a.report,
                reconstructed: a.out_reconstructed,
            };
            pipeline::run_pipeline(&cfg, &source, &out)?;
        }
        Command::Analyze(a) => {
            let report = pipeline::analyze(
                &a.weights,
                &a.acts,
                &a.quantized,
                a.reconstructed.as_deref(),
                a.group,
            )?;
            pipeline::write_report(&report, &a.report)?;
        }
        Command::GenSynth(a) => {
            let layer = gen_synthetic(&a.synth_args.config(a.seed))?;
            pipeline::matrix_container(WEIGHTS_ENTRY, &layer.weights)?.write(&a.out_weights)?;
            pipeline::matrix_container(ACTS_ENTRY, &layer.acts)?.write(&a.out_acts)?;
        }
        Command::ProjectL1(a) => {
            let input = TensorContainer::read(&a.input)?;
            let mut out = TensorContainer::new();
            for (name, t) in input.iter() {
                let TensorData::F32(values) = t.data() else {
                    return Err(Error::Argument(format!("tensor {name:?} is not float32")));
                };
                let width = t.dims().last().copied().unwrap_or(1);
                let mut projected = Vec::with_capacity(values.len());
                if width > 0 {
                    for row in values.chunks(width) {
                        let v: Vec<f64> = row.iter().map(|&x| x as f64).collect();
                        projected
                            .extend(project_l1_ball(&v, a.radius)?.into_iter().map(|x| x as f32));
                    }
                }
                out.insert(
                    name,
                    Tensor::new(t.dims().to_vec(), TensorData::F32(projected))?,
                )?;
            }
            out.write(&a.out)?;
        }
    }
    Ok(())
}

fn error_record(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("{}", error_record("usage", first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_record(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
