//! End-to-end layer pipeline: load or generate, reconstruct, quantize, report.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{layer_report, LayerReport};
use crate::container::{write_atomic, Tensor, TensorContainer, TensorData};
use crate::error::{Error, Result};
use crate::gptq::{gptq_quantize, DEFAULT_DAMPING_RATIO};
use crate::quant::{rtn_quantize, GroupScheme, QuantConfig, QuantizedLayer};
use crate::reg::{compute_alpha, reconstruct_layer, AlphaVector, RegConfig, RegMode};
use crate::synth::{gen_synthetic, SynthConfig};
use crate::tensor::{DenseMatrix, SpectralEstimate};

pub const WEIGHTS_ENTRY: &str = "weights";
pub const ACTS_ENTRY: &str = "acts";
pub const CODES_ENTRY: &str = "codes";
pub const SCALES_ENTRY: &str = "scales";
pub const METADATA_ENTRY: &str = "metadata";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Astro,
    Uniform,
    /// Skip reconstruction and quantize the original weights.
    None,
}

impl Mode {
    fn reg_mode(self) -> Option<RegMode> {
        match self {
            Mode::Astro => Some(RegMode::Astro),
            Mode::Uniform => Some(RegMode::Uniform),
            Mode::None => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Astro => "astro",
            Mode::Uniform => "uniform",
            Mode::None => "none",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Rtn,
    Gptq,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Rtn => "rtn",
            Backend::Gptq => "gptq",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub bits: u8,
    pub group_size: usize,
    pub beta: f64,
    pub iters: usize,
    pub mode: Mode,
    pub backend: Backend,
    pub damping_ratio: f64,
    /// Drives the synthetic generator; reconstruction and quantization are deterministic.
    pub seed: u64,
    /// Generator settings used when no input files are given. Its `seed` is
    /// overridden by [`PipelineConfig::seed`].
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            bits: 3,
            group_size: 128,
            beta: 3e-5,
            iters: 200,
            mode: Mode::Astro,
            backend: Backend::Rtn,
            damping_ratio: DEFAULT_DAMPING_RATIO,
            seed: 0,
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn quant_config(&self) -> Result<QuantConfig> {
        QuantConfig::new(self.bits, self.group_size)
    }

    pub fn reg_config(&self) -> Option<RegConfig> {
        self.mode.reg_mode().map(|mode| RegConfig {
            beta: self.beta,
            iters: self.iters,
            mode,
            ..Default::default()
        })
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth
        }
    }
}

/// Metadata stored next to the codes and scales of a quantized container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantMetadata {
    pub bits: u8,
    pub group_size: usize,
    pub mode: Mode,
    pub backend: Backend,
    pub beta: f64,
    pub iters: usize,
    pub damping_ratio: f64,
    pub seed: u64,
}

/// Everything produced for one layer.
#[derive(Debug, Clone)]
pub struct LayerOutcome {
    /// Weights handed to the quantizer (the originals when mode is `none`).
    pub reconstructed: DenseMatrix,
    pub quantized: QuantizedLayer,
    pub alpha: AlphaVector,
    pub spectral: Option<SpectralEstimate>,
    pub report: LayerReport,
}

/// Runs reconstruction, quantization and analysis on an in-memory layer.
pub fn run_layer(cfg: &PipelineConfig, w: &DenseMatrix, x: &DenseMatrix) -> Result<LayerOutcome> {
    let qcfg = cfg.quant_config()?;
    if x.cols() != w.rows() {
        return Err(Error::Shape(format!(
            "activations have {} columns but weights have {} rows",
            x.cols(),
            w.rows()
        )));
    }
    let scheme = GroupScheme::new(w.rows(), cfg.group_size)?;

    let (reconstructed, alpha, spectral) = match cfg.reg_config() {
        Some(reg) => {
            let rec = reconstruct_layer(x, w, &scheme, &reg)?;
            (rec.weights, rec.alpha, Some(rec.spectral))
        }
        None => (
            w.clone(),
            compute_alpha(x, &scheme, RegMode::Uniform)?,
            None,
        ),
    };

    let quantized = match cfg.backend {
        Backend::Rtn => rtn_quantize(&reconstructed, qcfg)?,
        Backend::Gptq => gptq_quantize(&reconstructed, x, qcfg, cfg.damping_ratio)?,
    };

    let mut report = layer_report(x, w, &reconstructed, &quantized, &alpha, &scheme)?;
    report.config.mode = Some(cfg.mode.to_string());
    report.config.backend = Some(cfg.backend.to_string());
    report.config.beta = Some(cfg.beta);
    report.config.iters = Some(cfg.iters);
    report.config.damping_ratio = Some(cfg.damping_ratio);
    report.config.seed = Some(cfg.seed);

    Ok(LayerOutcome {
        reconstructed,
        quantized,
        alpha,
        spectral,
        report,
    })
}

/// Where the pipeline writes its artifacts.
#[derive(Debug, Clone)]
pub struct PipelineOutputs {
    pub quantized: PathBuf,
    pub report: PathBuf,
    /// Optional container holding the reconstructed weights.
    pub reconstructed: Option<PathBuf>,
}

/// Where the layer comes from.
#[derive(Debug, Clone)]
pub enum LayerSource {
    Files { weights: PathBuf, acts: PathBuf },
    Synthetic,
}

pub fn run_pipeline(
    cfg: &PipelineConfig,
    source: &LayerSource,
    out: &PipelineOutputs,
) -> Result<LayerOutcome> {
    let (w, x, synthetic) = match source {
        LayerSource::Files { weights, acts } => (
            read_matrix(weights, WEIGHTS_ENTRY)?,
            read_matrix(acts, ACTS_ENTRY)?,
            None,
        ),
        LayerSource::Synthetic => {
            let synth = cfg.synth_config();
            let layer = gen_synthetic(&synth)?;
            (
                layer.weights,
                layer.acts,
                Some(serde_json::to_value(synth)?),
            )
        }
    };
    let mut outcome = run_layer(cfg, &w, &x)?;
    outcome.report.config.synthetic = synthetic;

    let meta = QuantMetadata {
        bits: cfg.bits,
        group_size: cfg.group_size,
        mode: cfg.mode,
        backend: cfg.backend,
        beta: cfg.beta,
        iters: cfg.iters,
        damping_ratio: cfg.damping_ratio,
        seed: cfg.seed,
    };
    quantized_container(&outcome.quantized, &meta)?.write(&out.quantized)?;
    if let Some(path) = &out.reconstructed {
        matrix_container(WEIGHTS_ENTRY, &outcome.reconstructed)?.write(path)?;
    }
    write_report(&outcome.report, &out.report)?;
    Ok(outcome)
}

pub fn write_report(report: &LayerReport, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn matrix_container(name: &str, m: &DenseMatrix) -> Result<TensorContainer> {
    let mut c = TensorContainer::new();
    c.insert(name, Tensor::from_matrix(m)?)?;
    Ok(c)
}

/// Reads the tensor called `name`, or the only tensor if the container holds one.
pub fn read_matrix(path: &Path, name: &str) -> Result<DenseMatrix> {
    let c = TensorContainer::read(path)?;
    match c.get(name) {
        Some(t) => t.to_matrix(),
        None if c.len() == 1 => c.iter().next().unwrap().1.to_matrix(),
        None => Err(Error::Argument(format!(
            "{} has no tensor named {name:?}",
            path.display()
        ))),
    }
}

pub fn quantized_container(q: &QuantizedLayer, meta: &QuantMetadata) -> Result<TensorContainer> {
    let mut c = TensorContainer::new();
    c.insert(
        CODES_ENTRY,
        Tensor::new(
            vec![q.c_in(), q.c_out()],
            TensorData::I8(q.codes().to_vec()),
        )?,
    )?;
    c.insert(
        SCALES_ENTRY,
        Tensor::new(
            vec![q.scheme().num_groups(), q.c_out()],
            TensorData::F32(q.scales().to_vec()),
        )?,
    )?;
    let json = serde_json::to_vec(meta)?;
    c.insert(
        METADATA_ENTRY,
        Tensor::new(
            vec![json.len()],
            TensorData::I8(json.into_iter().map(|b| b as i8).collect()),
        )?,
    )?;
    Ok(c)
}

pub fn read_quantized(c: &TensorContainer) -> Result<(QuantizedLayer, QuantMetadata)> {
    let TensorData::I8(raw) = c.require(METADATA_ENTRY)?.data() else {
        return Err(Error::Argument("metadata entry must be int8".into()));
    };
    let bytes: Vec<u8> = raw.iter().map(|&b| b as u8).collect();
    let meta: QuantMetadata = serde_json::from_slice(&bytes)?;

    let codes = c.require(CODES_ENTRY)?;
    let (TensorData::I8(code_values), [c_in, c_out]) = (codes.data(), codes.dims()) else {
        return Err(Error::Shape("codes must be a 2-D int8 tensor".into()));
    };
    let scales = c.require(SCALES_ENTRY)?;
    let TensorData::F32(scale_values) = scales.data() else {
        return Err(Error::Shape("scales must be float32".into()));
    };
    let qcfg = QuantConfig::new(meta.bits, meta.group_size)?;
    let q = QuantizedLayer::new(
        *c_in,
        *c_out,
        code_values.clone(),
        scale_values.clone(),
        qcfg,
    )?;
    if scales.dims() != [q.scheme().num_groups(), *c_out] {
        return Err(Error::Shape(format!(
            "scales have dims {:?}",
            scales.dims()
        )));
    }
    Ok((q, meta))
}

/// Report on existing artifacts. `reconstructed` defaults to the original weights.
pub fn analyze(
    weights: &Path,
    acts: &Path,
    quantized: &Path,
    reconstructed: Option<&Path>,
    group_size: usize,
) -> Result<LayerReport> {
    let w = read_matrix(weights, WEIGHTS_ENTRY)?;
    let x = read_matrix(acts, ACTS_ENTRY)?;
    let w_new = match reconstructed {
        Some(p) => read_matrix(p, WEIGHTS_ENTRY)?,
        None => w.clone(),
    };
    let (q, meta) = read_quantized(&TensorContainer::read(quantized)?)?;
    if meta.group_size != group_size {
        return Err(Error::Config(format!(
            "group size {group_size} does not match the quantized container's {}",
            meta.group_size
        )));
    }
    let scheme = GroupScheme::new(w.rows(), group_size)?;
    let alpha = compute_alpha(
        &x,
        &scheme,
        meta.mode.reg_mode().unwrap_or(RegMode::Uniform),
    )?;
    let mut report = layer_report(&x, &w, &w_new, &q, &alpha, &scheme)?;
    report.config.mode = Some(meta.mode.to_string());
    report.config.backend = Some(meta.backend.to_string());
    report.config.beta = Some(meta.beta);
    report.config.iters = Some(meta.iters);
    report.config.damping_ratio = Some(meta.damping_ratio);
    report.config.seed = Some(meta.seed);
    Ok(report)
}
