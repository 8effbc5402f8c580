use std::path::Path;

use condense_core::condensation::condensation_report;
use condense_core::config::ExperimentConfig;
use condense_core::data_io::{
    read_dataset_csv, read_matrix_csv, read_params, write_dataset_csv, write_matrix_csv, write_params_csv,
    write_params_json,
};
use condense_core::network::{init_params, layer_weights, loss_mse};
use condense_core::theory::{
    angular_sweep, line_distance, predict_case1, predict_case2, residuals, wrap_line_angle, DEFAULT_SWEEP_ANGLES,
};
use condense_core::training::{train, OptimizerSpec, StopRule};
use condense_core::{Activation, NetworkConfig};
use proptest::prelude::*;
use tempfile::tempdir;

fn preset(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets").join(name);
    ExperimentConfig::load(&path).unwrap()
}

#[test]
fn fresh_wide_layer_has_no_condensation() {
    let cfg = preset("sine5d-tanh.toml");
    let batch = cfg.batch().unwrap();
    let net = cfg.network_config(&batch).unwrap();
    let params = cfg.init_params(&net).unwrap();
    let report = condensation_report(&params, 1, 0.0, 0.95).unwrap();
    // in 6 dimensions a pair exceeds |cos| 0.95 with probability about 1e-3,
    // so a merge or two among 1225 pairs is expected; each merge costs one line
    let w = layer_weights(&params, 1).unwrap();
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (n(a) * n(b))
    };
    let close = (0..50)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .filter(|&(i, j)| cos(&w[i], &w[j]).abs() >= 0.95)
        .count();
    assert!(close <= 4, "{close}");
    assert!(report.n_lines + close >= 50);
    assert!(report.n_lines >= 46);
}

#[test]
fn tanh_run_condenses_on_one_line_predicted_by_the_weighted_input_sum() {
    let cfg = preset("sine5d-tanh.toml");
    let batch = cfg.batch().unwrap();
    let net = cfg.network_config(&batch).unwrap();
    let init = cfg.init_params(&net).unwrap();
    let (_, log) = train(&net, &init, &batch, &cfg.optimizer, &cfg.stop_rule()).unwrap();
    assert!(log.final_loss() >= 0.7 * log.initial_loss());
    let params = log.snapshot(100).unwrap();
    let report = condensation_report(params, 1, 0.0, 0.95).unwrap();
    assert_eq!(report.n_lines, 1);
    assert_eq!(report.n_directions, 2);

    let res = residuals(&net, params, &batch, 1).unwrap();
    let pred = predict_case1(&res).unwrap();
    assert_eq!(pred.n_lines(), 1);
    assert_eq!(pred.unit_directions[0].len(), 6);
}

#[test]
fn artifacts_round_trip_through_files() {
    let dir = tempdir().unwrap();
    let cfg = preset("curve1d-xtanh.toml");
    let batch = cfg.batch().unwrap();
    let net = cfg.network_config(&batch).unwrap();
    let params = cfg.init_params(&net).unwrap();

    write_dataset_csv(&batch, &dir.path().join("d.csv")).unwrap();
    let batch2 = read_dataset_csv(&dir.path().join("d.csv")).unwrap();
    assert_eq!(batch, batch2);

    for name in ["p.json", "p.csv"] {
        let path = dir.path().join(name);
        if name.ends_with("json") {
            write_params_json(&params, &path).unwrap();
        } else {
            write_params_csv(&params, &path).unwrap();
        }
        let back = read_params(&path).unwrap();
        assert_eq!(back, params);
        assert_eq!(loss_mse(&net, &back, &batch2).unwrap(), loss_mse(&net, &params, &batch).unwrap());
    }

    let report = condensation_report(&params, 1, 0.0, 0.95).unwrap();
    write_matrix_csv(&report.matrix, &dir.path().join("s.csv")).unwrap();
    assert_eq!(read_matrix_csv(&dir.path().join("s.csv")).unwrap(), report.matrix);
}

#[test]
fn csv_data_section_resolves_against_the_config_directory() {
    let dir = tempdir().unwrap();
    let source = preset("curve1d-tanh.toml").batch().unwrap();
    write_dataset_csv(&source, &dir.path().join("points.csv")).unwrap();
    let text = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets/curve1d-tanh.toml"),
    )
    .unwrap()
    .replace(
        "kind = \"custom_1d\"\nn = 40\ndomain = [-1.0, 1.5]",
        "kind = \"csv\"\npath = \"points.csv\"",
    );
    let path = dir.path().join("from-csv.toml");
    std::fs::write(&path, text).unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.batch().unwrap(), source);
}

#[test]
fn residual_preset_builds_the_declared_topology() {
    let cfg = preset("residual-sine3d.toml");
    let batch = cfg.batch().unwrap();
    let net = cfg.network_config(&batch).unwrap();
    assert_eq!(net.depth(), 5);
    assert!(net.residual);
    assert!(!net.has_skip(1));
    assert!((2..=5).all(|l| net.has_skip(l)));
    let names: Vec<String> = net.activations.iter().map(Activation::name).collect();
    assert_eq!(names, ["x2tanh", "xtanh", "sigmoid", "tanh", "softplus"]);
    let params = cfg.init_params(&net).unwrap();
    for layer in 1..=5 {
        let res = residuals(&net, &params, &batch, layer).unwrap();
        assert_eq!(res.input_dim(), if layer == 1 { 4 } else { 19 });
    }
}

#[test]
fn case2_matches_the_sweep_on_a_trained_quadratic_layer() {
    let cfg = preset("field1d-xtanh.toml");
    let batch = cfg.batch().unwrap();
    let net = cfg.network_config(&batch).unwrap();
    let init = cfg.init_params(&net).unwrap();
    let (params, _) = train(&net, &init, &batch, &cfg.optimizer, &cfg.stop_rule()).unwrap();
    let res = residuals(&net, &params, &batch, 1).unwrap();
    let poly = predict_case2(&res, 2).unwrap();
    let sweep = angular_sweep(&res, &Activation::XTANH, DEFAULT_SWEEP_ANGLES, 1e-4).unwrap();
    assert!(poly.n_lines() <= 2);
    assert_eq!(poly.n_lines(), sweep.n_lines());
    for a in poly.angles() {
        let best = sweep
            .angles()
            .iter()
            .map(|b| line_distance(wrap_line_angle(a), *b))
            .fold(f64::INFINITY, f64::min);
        assert!(best < 1e-3, "{best}");
    }

    // the prediction is leading order, so it holds for the smaller neurons
    let mut by_norm: Vec<(f64, f64)> = layer_weights(&params, 1)
        .unwrap()
        .iter()
        .map(|w| (w.iter().map(|v| v * v).sum::<f64>(), poly.best_alignment(w).unwrap().1))
        .collect();
    by_norm.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut small: Vec<f64> = by_norm[..by_norm.len() / 2].iter().map(|p| p.1).collect();
    small.sort_by(f64::total_cmp);
    assert!(small[small.len() / 2] > 0.95, "{small:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn small_enough_gd_steps_decrease_the_loss(seed in 0u64..1000, width in 2usize..8, act in 0usize..5) {
        let act = Activation::smooth_family()[act];
        let net = NetworkConfig::two_layer(2, width, act).unwrap();
        let batch = condense_core::data_io::SyntheticSpec::sine_sum(2, 10, 1.0, 2.0, [-1.0, 1.0], seed)
            .sample()
            .unwrap();
        let init = init_params(&net, seed, 0.3).unwrap();
        let stop = StopRule { max_epochs: 40, ..Default::default() };
        let mut lr = 1.0;
        let monotone = (0..40).any(|_| {
            lr *= 0.5;
            let (_, log) = train(&net, &init, &batch, &OptimizerSpec::gd(lr), &stop).unwrap();
            log.loss_history.windows(2).all(|w| w[1] <= w[0])
        });
        prop_assert!(monotone);
    }
}
