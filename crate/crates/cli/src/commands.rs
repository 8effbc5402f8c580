use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use condense_core::condensation::condensation_report;
use condense_core::config::ExperimentConfig;
use condense_core::data_io::{
    format_f64, read_params, write_dataset_csv, write_field_csv, write_loss_csv,
    write_params_csv, write_params_json, write_prediction_json, write_report_json, write_rows, write_similarity_csv,
    write_train_json,
};
use condense_core::network::layer_weights;
use condense_core::theory::{
    angular_sweep, field_grid, predict_case1, predict_case2, residuals, DirectionPrediction, DEFAULT_SWEEP_ANGLES,
};
use condense_core::training::train as run_training;
use condense_core::verify::{VerifyOptions, SUITES};
use condense_core::{Error, NetworkParams};
use rayon::prelude::*;

use crate::{Common, Method, Snapshot};

/// Radius of the circle the angular sweep samples on.
const SWEEP_RADIUS: f64 = 1e-4;

#[derive(Debug)]
pub enum Failure {
    Core(Error),
    Verification(usize),
    Other(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Verification(n) => write!(f, "{n} acceptance criteria failed"),
            Failure::Other(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome<T = ()> = Result<T, Failure>;

/// One seed replicate and the directory its artifacts live in.
struct Run {
    cfg: ExperimentConfig,
    dir: PathBuf,
}

fn load_runs(common: &Common) -> Outcome<Vec<Run>> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    let root = match (&common.out, &cfg.output_dir) {
        (Some(out), _) => out.clone(),
        (None, Some(dir)) => dir.clone(),
        (None, None) => {
            let stem = common.config.file_stem().unwrap_or_default();
            PathBuf::from("runs").join(stem)
        }
    };
    let replicates = cfg.run.replicates;
    Ok((0..replicates as u64)
        .map(|k| {
            let seed = cfg.seed.wrapping_add(k);
            let dir = if replicates == 1 {
                root.clone()
            } else {
                root.join(format!("seed-{seed}"))
            };
            Run { cfg: cfg.with_seed(seed), dir }
        })
        .collect())
}

/// Runs `job` on every replicate with `jobs` threads and prints the returned
/// lines in seed order.
fn for_each_run<F>(common: &Common, job: F) -> Outcome
where
    F: Fn(&Run) -> Outcome<Vec<String>> + Sync,
{
    let runs = load_runs(common)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.jobs.max(1))
        .build()
        .map_err(|e| Failure::Other(e.to_string()))?;
    let results: Vec<Outcome<Vec<String>>> = pool.install(|| runs.par_iter().map(&job).collect());
    let multi = runs.len() > 1;
    let mut first_err = None;
    for (run, result) in runs.iter().zip(results) {
        match result {
            Ok(lines) => {
                for line in lines {
                    if multi {
                        println!("seed {}: {line}", run.cfg.seed);
                    } else {
                        println!("{line}");
                    }
                }
            }
            Err(e) => {
                if multi {
                    eprintln!("seed {}: {e}", run.cfg.seed);
                }
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| {
        Failure::Core(Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })
    })
}

fn write_params_pair(params: &NetworkParams, dir: &Path, stem: &str) -> Outcome {
    write_params_json(params, &dir.join(format!("{stem}.json")))?;
    write_params_csv(params, &dir.join(format!("{stem}.csv")))?;
    Ok(())
}

pub fn train(common: &Common) -> Outcome {
    for_each_run(common, |run| {
        let cfg = &run.cfg;
        let batch = cfg.batch()?;
        let net = cfg.network_config(&batch)?;
        let init = cfg.init_params(&net)?;
        create_dir(&run.dir)?;
        fs::write(run.dir.join("config.toml"), cfg.to_toml_string()?).map_err(|e| Error::Io {
            path: run.dir.join("config.toml"),
            source: e,
        })?;
        write_dataset_csv(&batch, &run.dir.join("dataset.csv"))?;
        write_params_pair(&init, &run.dir, "params_init")?;

        let (last, log) = run_training(&net, &init, &batch, &cfg.optimizer, &cfg.stop_rule())?;
        write_loss_csv(&log, &run.dir.join("loss.csv"))?;
        write_train_json(&log, &run.dir.join("train.json"))?;
        write_params_pair(&last, &run.dir, "params_final")?;
        if let Some(p) = &log.analysis_params {
            write_params_pair(p, &run.dir, "params_analysis")?;
        }
        for (epoch, p) in &log.snapshots {
            write_params_pair(p, &run.dir, &format!("params_epoch{epoch}"))?;
        }
        let stage = match log.initial_stage_end {
            Some(e) => format!("initial stage ended at epoch {e}"),
            None => "still in the initial stage".to_string(),
        };
        Ok(vec![format!(
            "{} epochs, loss {} -> {}, {stage}, analysis epoch {} ({})",
            log.epochs_run(),
            format_f64(log.initial_loss()),
            format_f64(log.final_loss()),
            log.analysis_epoch,
            run.dir.display()
        )])
    })
}

/// Snapshot to analyze for `layer`: an explicit file, the configured epoch
/// for that layer, or the analysis snapshot.
fn params_for(run: &Run, explicit: Option<&Path>, layer: usize) -> Outcome<NetworkParams> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let epoch = run
                .cfg
                .analysis
                .layers
                .iter()
                .position(|&l| l == layer)
                .and_then(|i| run.cfg.analysis_epoch_for(i));
            match epoch {
                Some(e) => run.dir.join(format!("params_epoch{e}.json")),
                None => run.dir.join("params_analysis.json"),
            }
        }
    };
    if !path.is_file() {
        return Err(Failure::Other(format!(
            "{} not found; run `condense train` first or pass --params",
            path.display()
        )));
    }
    Ok(read_params(&path)?)
}

pub fn analyze(common: &Common, explicit: Option<&Path>) -> Outcome {
    for_each_run(common, |run| {
        let a = &run.cfg.analysis;
        create_dir(&run.dir)?;
        let mut lines = Vec::new();
        for &layer in &a.layers {
            let params = params_for(run, explicit, layer)?;
            let report = condensation_report(&params, layer, a.min_norm, a.cos_threshold)?;
            write_similarity_csv(&report, &run.dir.join(format!("similarity_layer{layer}.csv")))?;
            write_report_json(&report, &run.dir.join(format!("report_layer{layer}.json")))?;
            lines.push(format!(
                "layer {layer}: {} kept, {} discarded, {} lines, {} directions, line sizes {:?}",
                report.kept_indices.len(),
                report.discarded_count,
                report.n_lines,
                report.n_directions,
                report.line_sizes()
            ));
        }
        Ok(lines)
    })
}

fn chosen_layer(run: &Run, snapshot: &Snapshot) -> usize {
    snapshot.layer.unwrap_or(run.cfg.analysis.layers[0])
}

pub fn field(common: &Common, snapshot: &Snapshot, lo: Option<f64>, hi: Option<f64>, resolution: usize) -> Outcome {
    for_each_run(common, |run| {
        let layer = chosen_layer(run, snapshot);
        let params = params_for(run, snapshot.params.as_deref(), layer)?;
        let batch = run.cfg.batch()?;
        let net = run.cfg.network_config(&batch)?;
        let res = residuals(&net, &params, &batch, layer)?;
        let act = net.activations[layer - 1];

        let weights = layer_weights(&params, layer)?;
        let extent = 1.25 * weights.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
        let extent = if extent > 0.0 { extent } else { 1.0 };
        let grid = field_grid(&res, &act, lo.unwrap_or(-extent), hi.unwrap_or(extent), resolution)?;
        let sweep = angular_sweep(&res, &act, DEFAULT_SWEEP_ANGLES, SWEEP_RADIUS)?;

        create_dir(&run.dir)?;
        write_field_csv(&grid, &run.dir.join(format!("field_layer{layer}.csv")))?;
        write_prediction_json(&sweep, &run.dir.join(format!("sweep_layer{layer}.json")))?;
        write_rows(
            &run.dir.join(format!("weights_layer{layer}.csv")),
            Some(&["neuron", "w", "b"]),
            weights
                .iter()
                .enumerate()
                .map(|(i, w)| [i.to_string(), format_f64(w[0]), format_f64(w[1])]),
        )?;
        Ok(vec![format!(
            "layer {layer}: {}x{} field on [{}, {}], sweep found {} lines at [{}] rad",
            resolution,
            resolution,
            format_f64(grid.lo),
            format_f64(grid.hi),
            sweep.n_lines(),
            sweep.angles().iter().map(|a| format_f64(*a)).collect::<Vec<_>>().join(", ")
        )])
    })
}

fn method_name(method: Method) -> &'static str {
    match method {
        Method::Case1 => "case1",
        Method::Case2 => "case2",
        Method::Sweep => "sweep",
    }
}

pub fn predict(common: &Common, snapshot: &Snapshot, method: Method) -> Outcome {
    let name = method_name(method);
    for_each_run(common, |run| {
        let layer = chosen_layer(run, snapshot);
        let params = params_for(run, snapshot.params.as_deref(), layer)?;
        let batch = run.cfg.batch()?;
        let net = run.cfg.network_config(&batch)?;
        let res = residuals(&net, &params, &batch, layer)?;
        let act = net.activations[layer - 1];
        let p = act.multiplicity();

        let pred: DirectionPrediction = match method {
            Method::Case1 => {
                if p != Some(1) {
                    return Err(Error::Precondition(format!(
                        "case1 needs multiplicity 1 but layer {layer} uses {act}"
                    ))
                    .into());
                }
                predict_case1(&res)?
            }
            Method::Case2 => {
                let p = p.ok_or_else(|| Error::Unsupported(format!("multiplicity of {act}")))?;
                predict_case2(&res, p)?
            }
            Method::Sweep => angular_sweep(&res, &act, DEFAULT_SWEEP_ANGLES, SWEEP_RADIUS)?,
        };

        create_dir(&run.dir)?;
        write_prediction_json(&pred, &run.dir.join(format!("prediction_{name}_layer{layer}.json")))?;

        let min_norm = run.cfg.analysis.min_norm;
        let mut rows = Vec::new();
        let mut scores = Vec::new();
        for (i, w) in layer_weights(&params, layer)?.iter().enumerate() {
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < min_norm {
                continue;
            }
            if let Some((line, score)) = pred.best_alignment(w) {
                scores.push(score);
                rows.push([i.to_string(), format_f64(norm), line.to_string(), format_f64(score)]);
            }
        }
        write_rows(
            &run.dir.join(format!("alignment_{name}_layer{layer}.csv")),
            Some(&["neuron", "norm", "line", "alignment"]),
            rows,
        )?;
        let median = median(&mut scores).map_or("n/a".to_string(), format_f64);
        Ok(vec![format!(
            "layer {layer}: {} predicted lines{}, median alignment {median} over {} neurons",
            pred.n_lines(),
            if pred.degenerate { " (degenerate field)" } else { "" },
            scores.len()
        )])
    })
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn verify(seed: u64, jobs: usize, only: &[u8], corrupt_gradient: bool) -> Outcome {
    let opts = VerifyOptions { seed, corrupt_gradient };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Failure::Other(e.to_string()))?;
    let selected: Vec<_> = SUITES
        .iter()
        .enumerate()
        .filter(|(i, _)| only.is_empty() || only.contains(&(*i as u8 + 1)))
        .map(|(_, suite)| suite)
        .collect();
    let results: Vec<_> = pool.install(|| selected.par_iter().map(|suite| suite(&opts)).collect());
    let mut failed = 0;
    for r in results {
        let r = r?;
        println!("{r}");
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        return Err(Failure::Verification(failed));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut []), None);
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn method_names_are_stable() {
        assert_eq!(method_name(Method::Case1), "case1");
        assert_eq!(method_name(Method::Sweep), "sweep");
    }
}
