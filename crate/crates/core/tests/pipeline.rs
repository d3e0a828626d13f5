use std::fs;

use astro_ptq::container::TensorContainer;
use astro_ptq::pipeline::{
    analyze, matrix_container, read_quantized, run_layer, run_pipeline, Backend, LayerSource, Mode,
    PipelineConfig, PipelineOutputs, ACTS_ENTRY, WEIGHTS_ENTRY,
};
use astro_ptq::{
    dequantize, gen_synthetic, rtn_quantize, DenseMatrix, LayerReport, QuantConfig, SynthConfig,
};

fn small_config(seed: u64) -> PipelineConfig {
    PipelineConfig {
        group_size: 64,
        seed,
        synth: SynthConfig {
            c_out: 32,
            ..SynthConfig::default()
        },
        ..PipelineConfig::default()
    }
}

fn outputs(dir: &std::path::Path) -> PipelineOutputs {
    PipelineOutputs {
        quantized: dir.join("q.astt"),
        report: dir.join("report.json"),
        reconstructed: Some(dir.join("w_new.astt")),
    }
}

#[test]
fn bare_rtn_on_grid_weights_is_exact() {
    let w =
        DenseMatrix::from_rows(&[[0.75, -0.5], [-0.25, 0.25], [0.5, 0.75], [0.0, -0.25]]).unwrap();
    let x = DenseMatrix::from_rows(&[[1.0, -2.0, 0.5, 3.0], [0.2, 0.1, -1.0, 0.4]]).unwrap();
    let cfg = PipelineConfig {
        group_size: 4,
        mode: Mode::None,
        ..PipelineConfig::default()
    };
    let out = run_layer(&cfg, &w, &x).unwrap();
    assert_eq!(out.report.recon_error, 0.0);
    assert_eq!(out.reconstructed, w);
    assert_eq!(
        out.quantized,
        rtn_quantize(&w, QuantConfig::new(3, 4).unwrap()).unwrap()
    );
}

#[test]
fn bare_rtn_reproduces_quantizer() {
    let layer = gen_synthetic(&small_config(3).synth_config()).unwrap();
    let cfg = PipelineConfig {
        mode: Mode::None,
        ..small_config(3)
    };
    let out = run_layer(&cfg, &layer.weights, &layer.acts).unwrap();
    assert_eq!(
        out.quantized,
        rtn_quantize(&layer.weights, cfg.quant_config().unwrap()).unwrap()
    );
    assert!(out.spectral.is_none());
    assert_eq!(out.report.fidelity_ratio, 0.0);
}

#[test]
fn astro_orderings_on_synthetic_layers() {
    for seed in 0..5 {
        let cfg = small_config(seed);
        let layer = gen_synthetic(&cfg.synth_config()).unwrap();
        let run = |c: &PipelineConfig| run_layer(c, &layer.weights, &layer.acts).unwrap().report;
        let astro = run(&cfg);
        let uniform = run(&PipelineConfig {
            mode: Mode::Uniform,
            ..cfg.clone()
        });
        let bare = run(&PipelineConfig {
            mode: Mode::None,
            ..cfg.clone()
        });
        assert!(
            astro.bound <= uniform.bound,
            "seed {seed}: {} vs {}",
            astro.bound,
            uniform.bound
        );
        assert!(astro.recon_error < bare.recon_error, "seed {seed}");
        assert!(astro.recon_error <= astro.bound && bare.recon_error <= bare.bound);
    }
}

#[test]
fn gptq_backend_runs_through_pipeline() {
    let cfg = PipelineConfig {
        backend: Backend::Gptq,
        ..small_config(1)
    };
    let layer = gen_synthetic(&cfg.synth_config()).unwrap();
    let out = run_layer(&cfg, &layer.weights, &layer.acts).unwrap();
    assert_eq!(out.report.config.backend.as_deref(), Some("gptq"));
    assert!(out.report.recon_error.is_finite());
}

#[test]
fn end_to_end_is_deterministic_and_round_trips() {
    let cfg = small_config(9);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_pipeline(&cfg, &LayerSource::Synthetic, &outputs(a.path())).unwrap();
    run_pipeline(&cfg, &LayerSource::Synthetic, &outputs(b.path())).unwrap();
    for f in ["q.astt", "report.json", "w_new.astt"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }

    let (q, meta) =
        read_quantized(&TensorContainer::read(a.path().join("q.astt")).unwrap()).unwrap();
    assert_eq!(dequantize(&q), dequantize(&first.quantized));
    assert_eq!(
        (meta.bits, meta.group_size, meta.mode, meta.seed),
        (3, 64, Mode::Astro, 9)
    );

    let report: LayerReport =
        serde_json::from_slice(&fs::read(a.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report, first.report);
    let synth = report.config.synthetic.as_ref().unwrap();
    assert_eq!(synth["seed"], 9);
}

#[test]
fn file_inputs_match_generated_layer() {
    let cfg = small_config(4);
    let layer = gen_synthetic(&cfg.synth_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (wp, xp) = (dir.path().join("w.astt"), dir.path().join("x.astt"));
    matrix_container(WEIGHTS_ENTRY, &layer.weights)
        .unwrap()
        .write(&wp)
        .unwrap();
    matrix_container(ACTS_ENTRY, &layer.acts)
        .unwrap()
        .write(&xp)
        .unwrap();

    let out = run_pipeline(
        &cfg,
        &LayerSource::Files {
            weights: wp.clone(),
            acts: xp.clone(),
        },
        &outputs(dir.path()),
    )
    .unwrap();
    let direct = run_layer(&cfg, &layer.weights, &layer.acts).unwrap();
    assert_eq!(out.quantized, direct.quantized);
    assert_eq!(out.report.recon_error, direct.report.recon_error);
    assert!(out.report.config.synthetic.is_none());

    // report-only pass over the written artifacts
    let again = analyze(
        &wp,
        &xp,
        &dir.path().join("q.astt"),
        Some(&dir.path().join("w_new.astt")),
        64,
    )
    .unwrap();
    assert_eq!(again.recon_error, direct.report.recon_error);
    assert_eq!(again.group_stats.len(), 2);
    assert!(
        (again.fidelity_ratio - direct.report.fidelity_ratio).abs()
            <= 1e-6 * direct.report.fidelity_ratio
    );
    assert!(analyze(&wp, &xp, &dir.path().join("q.astt"), None, 32).is_err());
}

#[test]
fn shape_and_config_errors_surface() {
    let w = DenseMatrix::zeros(6, 2).unwrap();
    let x = DenseMatrix::identity(6).unwrap();
    let cfg = PipelineConfig {
        group_size: 4,
        ..PipelineConfig::default()
    };
    let err = run_layer(&cfg, &w, &x).unwrap_err();
    assert_eq!(err.kind(), "config");
    let x = DenseMatrix::identity(5).unwrap();
    assert_eq!(
        run_layer(
            &PipelineConfig {
                group_size: 3,
                ..cfg
            },
            &w,
            &x
        )
        .unwrap_err()
        .kind(),
        "shape"
    );
}
