//! Synthetic targets, MNIST IDX ingestion and every on-disk format the
//! experiment runner reads or writes.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::network::{Batch, NetworkParams};
use crate::theory::{DirectionPrediction, FieldGrid, LineStability, PredictionMethod};
use crate::training::TrainLog;
use crate::condensation::SimilarityReport;

/// RNG stream for dataset sampling.
pub const DATA_STREAM: u64 = 0;
/// RNG stream for parameter initialization.
pub const INIT_STREAM: u64 = 1;

/// Independent ChaCha8 stream `stream` under one experiment seed.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// `y = Σ_k A sin(ν x_k + phase)`.
    SineSum,
    /// `y = sin(3x) + sin(6x) / 2` on a 1-d input.
    Custom1d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Evenly spaced points including both endpoints (1-d only).
    #[default]
    Grid,
    Uniform,
}

fn default_phase() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub target_kind: TargetKind,
    pub dim: usize,
    pub n: usize,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub frequency: f64,
    #[serde(default = "default_phase")]
    pub phase: f64,
    pub domain: [f64; 2],
    /// Only consulted by `custom_1d`; `sine_sum` always samples uniformly.
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn sine_sum(dim: usize, n: usize, amplitude: f64, frequency: f64, domain: [f64; 2], seed: u64) -> Self {
        SyntheticSpec {
            target_kind: TargetKind::SineSum,
            dim,
            n,
            amplitude,
            frequency,
            phase: 1.0,
            domain,
            sampling: Sampling::Uniform,
            seed,
        }
    }

    pub fn custom_1d(n: usize, domain: [f64; 2], sampling: Sampling, seed: u64) -> Self {
        SyntheticSpec {
            target_kind: TargetKind::Custom1d,
            dim: 1,
            n,
            amplitude: 0.0,
            frequency: 0.0,
            phase: 0.0,
            domain,
            sampling,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.dim == 0 {
            return Err(Error::Config("synthetic data needs n >= 1 and dim >= 1".into()));
        }
        let [lo, hi] = self.domain;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!("empty domain [{lo}, {hi}]")));
        }
        if self.target_kind == TargetKind::Custom1d && self.dim != 1 {
            return Err(Error::Config("custom_1d targets take a 1-d input".into()));
        }
        for (name, v) in [("amplitude", self.amplitude), ("frequency", self.frequency), ("phase", self.phase)] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    pub fn sample(&self) -> Result<Batch> {
        match self.target_kind {
            TargetKind::SineSum => sample_sine_sum(self),
            TargetKind::Custom1d => sample_custom_1d(self.n, self.domain, self.seed, self.sampling),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    // the half-open draw can round up to `hi`; keep the domain closed
    rng.gen_range(lo..hi).min(hi)
}

pub fn sample_sine_sum(spec: &SyntheticSpec) -> Result<Batch> {
    spec.validate()?;
    if spec.target_kind != TargetKind::SineSum {
        return Err(Error::Precondition("spec is not a sine_sum target".into()));
    }
    let mut rng = seeded_rng(spec.seed, DATA_STREAM);
    let mut xs = Vec::with_capacity(spec.n * spec.dim);
    let mut ys = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let mut y = 0.0;
        for _ in 0..spec.dim {
            let x = uniform(&mut rng, spec.domain);
            y += spec.amplitude * (spec.frequency * x + spec.phase).sin();
            xs.push(x);
        }
        ys.push(y);
    }
    Batch::new(Matrix::from_vec(spec.n, spec.dim, xs)?, Matrix::from_vec(spec.n, 1, ys)?)
}

pub fn custom_1d_target(x: f64) -> f64 {
    (3.0 * x).sin() + (6.0 * x).sin() / 2.0
}

pub fn sample_custom_1d(n: usize, domain: [f64; 2], seed: u64, sampling: Sampling) -> Result<Batch> {
    SyntheticSpec::custom_1d(n, domain, sampling, seed).validate()?;
    let [lo, hi] = domain;
    let xs: Vec<f64> = match sampling {
        Sampling::Grid if n == 1 => vec![lo],
        Sampling::Grid => (0..n)
            .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
            .collect(),
        Sampling::Uniform => {
            let mut rng = seeded_rng(seed, DATA_STREAM);
            (0..n).map(|_| uniform(&mut rng, domain)).collect()
        }
    };
    let ys = xs.iter().map(|&x| custom_1d_target(x)).collect();
    Batch::new(Matrix::from_vec(n, 1, xs)?, Matrix::from_vec(n, 1, ys)?)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const MNIST_CLASSES: usize = 10;

fn be_u32(bytes: &[u8], offset: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            what,
            offset,
            message: "file ends inside the header".into(),
        })
}

fn check_magic(bytes: &[u8], want: u32, what: &'static str) -> Result<()> {
    let magic = be_u32(bytes, 0, what)?;
    if magic != want {
        return Err(Error::Parse {
            what,
            offset: 0,
            message: format!("magic {magic:#010x}, expected {want:#010x}"),
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], start: usize, len: usize, what: &'static str) -> Result<&'a [u8]> {
    bytes.get(start..start + len).ok_or_else(|| Error::Parse {
        what,
        offset: bytes.len(),
        message: format!("truncated: header promises {len} data bytes from offset {start}"),
    })
}

/// Images as `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    const WHAT: &str = "IDX image file";
    check_magic(bytes, IDX_IMAGES_MAGIC, WHAT)?;
    let n = be_u32(bytes, 4, WHAT)? as usize;
    let rows = be_u32(bytes, 8, WHAT)? as usize;
    let cols = be_u32(bytes, 12, WHAT)? as usize;
    let pixels = payload(bytes, 16, n * rows * cols, WHAT)?;
    Ok((n, rows, cols, pixels))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    const WHAT: &str = "IDX label file";
    check_magic(bytes, IDX_LABELS_MAGIC, WHAT)?;
    let n = be_u32(bytes, 4, WHAT)? as usize;
    let labels = payload(bytes, 8, n, WHAT)?;
    if let Some(pos) = labels.iter().position(|&l| l as usize >= MNIST_CLASSES) {
        return Err(Error::Parse {
            what: WHAT,
            offset: 8 + pos,
            message: format!("label {} outside 0..10", labels[pos]),
        });
    }
    Ok(labels)
}

/// Pixels scaled to `[0, 1]`, labels one-hot over ten classes.
pub fn mnist_batch(images: &[u8], labels: &[u8], limit: Option<usize>) -> Result<Batch> {
    let (n, rows, cols, pixels) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != n {
        return Err(Error::Parse {
            what: "IDX label file",
            offset: 4,
            message: format!("{} labels for {n} images", labels.len()),
        });
    }
    let keep = limit.map_or(n, |l| l.min(n));
    let d = rows * cols;
    let xs = pixels[..keep * d].iter().map(|&p| f64::from(p) / 255.0).collect();
    let mut ys = vec![0.0; keep * MNIST_CLASSES];
    for (i, &l) in labels[..keep].iter().enumerate() {
        ys[i * MNIST_CLASSES + l as usize] = 1.0;
    }
    Batch::new(Matrix::from_vec(keep, d, xs)?, Matrix::from_vec(keep, MNIST_CLASSES, ys)?)
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Batch> {
    load_mnist_idx_limited(images_path, labels_path, None)
}

/// Like [`load_mnist_idx`], keeping only the first `limit` examples.
pub fn load_mnist_idx_limited(images_path: &Path, labels_path: &Path, limit: Option<usize>) -> Result<Batch> {
    let images = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    mnist_batch(&images, &labels, limit).map_err(|e| match e {
        Error::Parse { what, offset, message } => Error::Format {
            path: if what.contains("label") { labels_path } else { images_path }.to_path_buf(),
            message: format!("malformed {what} at byte offset {offset}: {message}"),
        },
        other => other,
    })
}

/// Shortest text that parses back to the same `f64`; scientific notation
/// for very small or very large magnitudes.
pub fn format_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 {
        "0".to_string()
    } else if a < 1e-5 || a >= 1e16 {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Format {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

/// Writes CSV rows with an optional header line.
pub fn write_rows<I, R>(path: &Path, header: Option<&[&str]>, rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv_writer(path)?;
    if let Some(h) = header {
        w.write_record(h).map_err(|e| csv_error(path, e))?;
    }
    for r in rows {
        w.write_record(r.into_iter().collect::<Vec<_>>())
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_matrix_csv(matrix: &Matrix, path: &Path) -> Result<()> {
    write_rows(path, None, matrix.row_iter().map(|r| r.iter().map(|v| format_f64(*v))))
}

fn read_records(path: &Path) -> Result<(Option<Vec<String>>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut header = None;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if i == 0 => header = Some(rec.iter().map(str::to_string).collect()),
            Err(e) => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    message: format!("line {}: {e}", i + 1),
                })
            }
        }
    }
    Ok((header, rows))
}

/// Reads a numeric CSV, skipping a non-numeric first line.
pub fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    let (_, rows) = read_records(path)?;
    Matrix::from_rows(&rows).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_report_json(report: &SimilarityReport, path: &Path) -> Result<()> {
    write_json(&report.summary(), path)
}

/// The report's similarity matrix with a header row of kept neuron indices.
pub fn write_similarity_csv(report: &SimilarityReport, path: &Path) -> Result<()> {
    let header: Vec<String> = report.kept_indices.iter().map(usize::to_string).collect();
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    let m = &report.matrix;
    write_rows(path, Some(&h), (0..m.rows()).map(|i| m.row(i).iter().map(|v| format_f64(*v)).collect::<Vec<_>>()))
}

/// One line per weight-matrix row: `block,row,v_0,v_1,...` where blocks
/// `1..=L` are the hidden layers and block `L+1` is the output layer.
pub fn write_params_csv(params: &NetworkParams, path: &Path) -> Result<()> {
    let blocks: Vec<&Matrix> = params.layers.iter().chain(std::iter::once(&params.output)).collect();
    let rows = blocks.iter().enumerate().flat_map(|(b, m)| {
        m.row_iter().enumerate().map(move |(i, r)| {
            [format!("{}", b + 1), i.to_string()]
                .into_iter()
                .chain(r.iter().map(|v| format_f64(*v)))
                .collect::<Vec<_>>()
        })
    });
    write_rows(path, None, rows)
}

pub fn read_params_csv(path: &Path) -> Result<NetworkParams> {
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let (header, rows) = read_records(path)?;
    if header.is_some() {
        return Err(bad("parameter CSV has no header line".into()));
    }
    let mut blocks: Vec<Vec<Vec<f64>>> = Vec::new();
    for (line, r) in rows.into_iter().enumerate() {
        if r.len() < 3 {
            return Err(bad(format!("line {}: too few fields", line + 1)));
        }
        let (b, i) = (r[0] as usize, r[1] as usize);
        if r[0] != b as f64 || r[1] != i as f64 || b == 0 {
            return Err(bad(format!("line {}: bad block/row index", line + 1)));
        }
        if b == blocks.len() + 1 {
            blocks.push(Vec::new());
        }
        if b != blocks.len() || i != blocks[b - 1].len() {
            return Err(bad(format!("line {}: rows out of order", line + 1)));
        }
        blocks[b - 1].push(r[2..].to_vec());
    }
    let mut mats = blocks
        .iter()
        .map(|rows| Matrix::from_rows(rows).map_err(|e| bad(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    if mats.len() < 2 {
        return Err(bad("need at least one hidden block and the output block".into()));
    }
    let output = mats.pop().expect("checked");
    Ok(NetworkParams { layers: mats, output })
}

pub fn write_params_json(params: &NetworkParams, path: &Path) -> Result<()> {
    write_json(params, path)
}

pub fn read_params_json(path: &Path) -> Result<NetworkParams> {
    read_json(path)
}

/// Reads parameters from `.json` or `.csv` by extension.
pub fn read_params(path: &Path) -> Result<NetworkParams> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => read_params_json(path),
        Some("csv") => read_params_csv(path),
        _ => Err(Error::Format {
            path: path.to_path_buf(),
            message: "parameter files end in .json or .csv".into(),
        }),
    }
}

pub fn write_loss_csv(log: &TrainLog, path: &Path) -> Result<()> {
    write_rows(
        path,
        Some(&["epoch", "loss"]),
        log.loss_history
            .iter()
            .enumerate()
            .map(|(e, l)| [e.to_string(), format_f64(*l)]),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub initial_stage_end: Option<usize>,
    pub stop_reason: crate::training::StopReason,
    pub analysis_epoch: usize,
    pub snapshot_epochs: Vec<usize>,
}

impl From<&TrainLog> for TrainSummary {
    fn from(log: &TrainLog) -> Self {
        TrainSummary {
            epochs_run: log.epochs_run(),
            initial_loss: log.initial_loss(),
            final_loss: log.final_loss(),
            initial_stage_end: log.initial_stage_end,
            stop_reason: log.stop_reason,
            analysis_epoch: log.analysis_epoch,
            snapshot_epochs: log.snapshots.iter().map(|(e, _)| *e).collect(),
        }
    }
}

pub fn write_train_json(log: &TrainLog, path: &Path) -> Result<()> {
    write_json(&TrainSummary::from(log), path)
}

/// Header `x0,..,x{d-1},y0,..`, one sample per line.
pub fn write_dataset_csv(batch: &Batch, path: &Path) -> Result<()> {
    let header: Vec<String> = (0..batch.input_dim())
        .map(|k| format!("x{k}"))
        .chain((0..batch.output_dim()).map(|k| format!("y{k}")))
        .collect();
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = batch
        .inputs
        .row_iter()
        .zip(batch.targets.row_iter())
        .map(|(x, y)| x.iter().chain(y).map(|v| format_f64(*v)).collect::<Vec<_>>());
    write_rows(path, Some(&h), rows)
}

pub fn read_dataset_csv(path: &Path) -> Result<Batch> {
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let (header, rows) = read_records(path)?;
    let header = header.ok_or_else(|| bad("missing x0,..,y0,.. header".into()))?;
    let d = header.iter().take_while(|h| h.starts_with('x')).count();
    if d == 0 || d == header.len() || !header[d..].iter().all(|h| h.starts_with('y')) {
        return Err(bad("header must list x columns then y columns".into()));
    }
    if rows.is_empty() {
        return Err(bad("no samples".into()));
    }
    let mut xs = Vec::with_capacity(rows.len());
    let mut ys = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if r.len() != header.len() {
            return Err(bad(format!("line {}: expected {} fields", i + 2, header.len())));
        }
        xs.push(r[..d].to_vec());
        ys.push(r[d..].to_vec());
    }
    Batch::new(Matrix::from_rows(&xs)?, Matrix::from_rows(&ys)?)
}

/// Columns `w,b,dw,db`, rows in lattice order.
pub fn write_field_csv(grid: &FieldGrid, path: &Path) -> Result<()> {
    write_rows(
        path,
        Some(&["w", "b", "dw", "db"]),
        grid.points.iter().zip(&grid.vectors).map(|(p, v)| {
            [p[0], p[1], v[0], v[1]].map(format_f64)
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedLine {
    /// Line angle in `(-π/2, π/2]`; absent unless the layer input is 2-d.
    pub angle_radians: Option<f64>,
    pub vector: Vec<f64>,
    pub stability: LineStability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub method: PredictionMethod,
    pub p: u32,
    pub degenerate: bool,
    pub directions: Vec<PredictedLine>,
}

impl From<&DirectionPrediction> for PredictionFile {
    fn from(pred: &DirectionPrediction) -> Self {
        PredictionFile {
            method: pred.method,
            p: pred.p_used,
            degenerate: pred.degenerate,
            directions: pred
                .unit_directions
                .iter()
                .zip(&pred.stability)
                .map(|(u, s)| PredictedLine {
                    angle_radians: (u.len() == 2).then(|| {
                        let a = u[1].atan2(u[0]);
                        if a <= -PI / 2.0 { a + PI } else { a }
                    }),
                    vector: u.clone(),
                    stability: *s,
                })
                .collect(),
        }
    }
}

pub fn write_prediction_json(pred: &DirectionPrediction, path: &Path) -> Result<()> {
    write_json(&PredictionFile::from(pred), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condensation::report_from_weights;
    use crate::network::{init_params, NetworkConfig};
    use crate::Activation;
    use tempfile::tempdir;

    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGES_MAGIC, n, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn sine_sum_targets_and_domain() {
        let spec = SyntheticSpec::sine_sum(5, 80, 3.5, 5.0, [-4.0, 2.0], 3);
        let b = spec.sample().unwrap();
        assert_eq!((b.len(), b.input_dim(), b.output_dim()), (80, 5, 1));
        assert!(b.inputs.as_slice().iter().all(|x| (-4.0..=2.0).contains(x)));
        for (x, y) in b.inputs.row_iter().zip(b.targets.row_iter()) {
            let want: f64 = x.iter().map(|xk| 3.5 * (5.0 * xk + 1.0).sin()).sum();
            assert_eq!(y[0], want);
            assert!(y[0].abs() <= 17.5);
        }
        assert_eq!(b, spec.sample().unwrap());
        let other = SyntheticSpec { seed: 4, ..spec.clone() }.sample().unwrap();
        assert_ne!(b.inputs, other.inputs);

        let zero = SyntheticSpec { amplitude: 0.0, ..spec }.sample().unwrap();
        assert!(zero.targets.as_slice().iter().all(|y| *y == 0.0));
    }

    #[test]
    fn synthetic_spec_validation() {
        assert!(SyntheticSpec::sine_sum(1, 0, 1.0, 1.0, [0.0, 1.0], 0).validate().is_err());
        assert!(SyntheticSpec::sine_sum(1, 3, 1.0, 1.0, [1.0, 1.0], 0).validate().is_err());
        let mut bad = SyntheticSpec::custom_1d(5, [0.0, 1.0], Sampling::Grid, 0);
        bad.dim = 2;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn custom_1d_examples() {
        assert_eq!(custom_1d_target(0.0), 0.0);
        assert!((custom_1d_target(PI / 6.0) - 1.0).abs() < 1e-15);
        let g = sample_custom_1d(40, [-1.0, 1.5], 0, Sampling::Grid).unwrap();
        assert_eq!(g.inputs[(0, 0)], -1.0);
        assert_eq!(g.inputs[(39, 0)], 1.5);
        let u = sample_custom_1d(40, [-1.0, 1.5], 9, Sampling::Uniform).unwrap();
        assert!(u.inputs.as_slice().iter().all(|x| (-1.0..=1.5).contains(x)));
        assert_eq!(u, sample_custom_1d(40, [-1.0, 1.5], 9, Sampling::Uniform).unwrap());
        assert_eq!(sample_custom_1d(1, [2.0, 3.0], 0, Sampling::Grid).unwrap().inputs[(0, 0)], 2.0);
    }

    #[test]
    fn seed_streams_differ() {
        let a: u64 = seeded_rng(7, DATA_STREAM).gen();
        let b: u64 = seeded_rng(7, INIT_STREAM).gen();
        assert_ne!(a, b);
        assert_eq!(a, seeded_rng(7, DATA_STREAM).gen::<u64>());
    }

    #[test]
    fn idx_fixture_round_trip() {
        let pixels = [0u8, 255, 128, 1, 2, 3, 4, 5];
        let batch = mnist_batch(&idx_images(2, 2, 2, &pixels), &idx_labels(&[7, 0]), None).unwrap();
        assert_eq!((batch.len(), batch.input_dim(), batch.output_dim()), (2, 4, 10));
        for (got, want) in batch.inputs.as_slice().iter().zip(pixels) {
            assert_eq!(*got, f64::from(want) / 255.0);
        }
        assert_eq!(batch.targets.row(0)[7], 1.0);
        assert_eq!(batch.targets.row(0).iter().sum::<f64>(), 1.0);
        assert_eq!(batch.targets.row(1)[0], 1.0);
        let one = mnist_batch(&idx_images(2, 2, 2, &pixels), &idx_labels(&[7, 0]), Some(1)).unwrap();
        assert_eq!(one.len(), 1);

        let dir = tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        fs::write(&ip, idx_images(2, 2, 2, &pixels)).unwrap();
        fs::write(&lp, idx_labels(&[7, 0])).unwrap();
        assert_eq!(load_mnist_idx(&ip, &lp).unwrap(), batch);
    }

    #[test]
    fn idx_errors_are_typed() {
        let mut labels = idx_labels(&[1]);
        labels[3] = 0x03;
        match mnist_batch(&idx_images(1, 1, 1, &[0]), &labels, None) {
            Err(Error::Parse { what, offset, .. }) => {
                assert!(what.contains("label"));
                assert_eq!(offset, 0);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            mnist_batch(&idx_images(2, 2, 2, &[0; 5]), &idx_labels(&[1, 2]), None),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            mnist_batch(&idx_images(2, 1, 1, &[0; 2]), &idx_labels(&[1]), None),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(parse_idx_images(&[0, 0, 8]), Err(Error::Parse { .. })));
        assert!(matches!(parse_idx_labels(&idx_labels(&[12])), Err(Error::Parse { offset: 8, .. })));
    }

    #[test]
    fn matrix_csv_examples() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("id.csv");
        write_matrix_csv(&Matrix::identity(2), &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "1,0\n0,1\n");

        let m = Matrix::from_rows(&[vec![0.1, -1.0 / 3.0, 1e-300], vec![6.02e23, -0.0, 2.5e-6]]).unwrap();
        write_matrix_csv(&m, &p).unwrap();
        let back = read_matrix_csv(&p).unwrap();
        assert_eq!(back.shape(), m.shape());
        for (a, b) in back.as_slice().iter().zip(m.as_slice()) {
            assert!((a - b).abs() <= 1e-15 * b.abs());
        }
        let bytes = fs::read(&p).unwrap();
        write_matrix_csv(&m, &p).unwrap();
        assert_eq!(bytes, fs::read(&p).unwrap());
    }

    #[test]
    fn format_round_trips_exactly() {
        for x in [0.1, 1.0 / 3.0, -2.5e-7, 1e300, 123456.789, f64::MIN_POSITIVE, 1e16, 9.999999e15] {
            assert_eq!(format_f64(x).parse::<f64>().unwrap(), x, "{}", format_f64(x));
        }
        assert_eq!(format_f64(0.0), "0");
        assert_eq!(format_f64(1.0), "1");
    }

    #[test]
    fn io_errors_carry_the_path() {
        let err = read_matrix_csv(Path::new("/nonexistent/dir/m.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/m.csv"));
        let err = write_matrix_csv(&Matrix::identity(1), Path::new("/nonexistent/dir/m.csv")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn empty_report_json() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("r.json");
        let report = report_from_weights(&[vec![0.0, 0.0], vec![1e-9, 0.0]], 1, 1e-3, 0.95).unwrap();
        write_report_json(&report, &p).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(v["n_lines"], 0);
        assert_eq!(v["kept"].as_array().unwrap().len(), 0);
    }

    #[test]
    fn similarity_csv_has_kept_index_header() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let ws = [vec![1.0, 0.0], vec![0.0, 1e-9], vec![-2.0, 0.0]];
        let report = report_from_weights(&ws, 1, 1e-3, 0.95).unwrap();
        write_similarity_csv(&report, &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "0,2\n1,-1\n-1,1\n");
    }

    #[test]
    fn params_round_trip_csv_and_json() {
        let cfg = NetworkConfig::new(3, vec![4, 2], 2, vec![Activation::TANH, Activation::XTANH]).unwrap();
        let params = init_params(&cfg, 11, 0.7).unwrap();
        let dir = tempdir().unwrap();
        for name in ["p.csv", "p.json"] {
            let path = dir.path().join(name);
            if name.ends_with("csv") {
                write_params_csv(&params, &path).unwrap();
            } else {
                write_params_json(&params, &path).unwrap();
            }
            let back = read_params(&path).unwrap();
            assert_eq!(back, params);
            back.check_against(&cfg).unwrap();
        }
        let text = fs::read_to_string(dir.path().join("p.csv")).unwrap();
        assert_eq!(text.lines().count(), 4 + 2 + 2);
        assert!(text.lines().next().unwrap().starts_with("1,0,"));
        assert!(text.lines().last().unwrap().starts_with("3,1,"));
        assert!(read_params(&dir.path().join("p.txt")).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let b = SyntheticSpec::sine_sum(2, 7, 1.0, 2.0, [-1.0, 1.0], 5).sample().unwrap();
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_dataset_csv(&b, &p).unwrap();
        assert!(fs::read_to_string(&p).unwrap().starts_with("x0,x1,y0\n"));
        assert_eq!(read_dataset_csv(&p).unwrap(), b);
        fs::write(&p, "1,2\n3,4\n").unwrap();
        assert!(read_dataset_csv(&p).is_err());
    }

    #[test]
    fn prediction_file_angles() {
        let pred = DirectionPrediction {
            p_used: 2,
            unit_directions: vec![vec![0.0, 1.0], vec![1.0, 0.0, 0.0]],
            stability: vec![LineStability::Unclassified; 2],
            method: PredictionMethod::Case2Poly,
            degenerate: false,
        };
        let f = PredictionFile::from(&pred);
        assert!((f.directions[0].angle_radians.unwrap() - PI / 2.0).abs() < 1e-15);
        assert_eq!(f.directions[1].angle_radians, None);
        let v = serde_json::to_value(&f).unwrap();
        assert_eq!(v["method"], "case2_poly");
    }
}
