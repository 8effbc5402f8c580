//! Similarity of neuron orientations and the count of condensed directions.
//!
//! `D(u, v)` is the inner product of two normalized input weights. Neurons are
//! grouped by union-find over the thresholded similarity: sign-sensitive
//! grouping yields *directions*, grouping on `|D|` yields *lines*
//! (antipodal pairs).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};
use crate::network::{layer_weights, NetworkParams};

pub const DEFAULT_COS_THRESHOLD: f64 = 0.95;

/// `M_ij = (w_i / ‖w_i‖) · (w_j / ‖w_j‖)`.
pub fn similarity_matrix(weights: &[Vec<f64>]) -> Result<Matrix> {
    let units = weights
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let n = norm(w);
            if n > 0.0 && n.is_finite() {
                Ok(w.iter().map(|x| x / n).collect::<Vec<f64>>())
            } else {
                Err(Error::Precondition(format!(
                    "weight {i} has norm {n}; filter zero-norm neurons first"
                )))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let k = units.len();
    let mut m = Matrix::zeros(k, k);
    for i in 0..k {
        m[(i, i)] = 1.0;
        for j in (i + 1)..k {
            let d = dot(&units[i], &units[j]).clamp(-1.0, 1.0);
            m[(i, j)] = d;
            m[(j, i)] = d;
        }
    }
    Ok(m)
}

/// Indices with `‖w‖ >= min_norm` in their original order, and how many were dropped.
pub fn norm_filter(weights: &[Vec<f64>], min_norm: f64) -> Result<(Vec<usize>, usize)> {
    if !(min_norm >= 0.0) {
        return Err(Error::Precondition(format!("min_norm must be >= 0, got {min_norm}")));
    }
    let kept: Vec<usize> = weights
        .iter()
        .enumerate()
        .filter(|(_, w)| {
            let n = norm(w);
            // a zero vector has no orientation, even when min_norm is 0
            n >= min_norm && n > 0.0
        })
        .map(|(i, _)| i)
        .collect();
    let discarded = weights.len() - kept.len();
    Ok((kept, discarded))
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Connected components of `i ~ j iff M_ij >= t` (or `|M_ij| >= t` when not
/// sign-sensitive). Each component is sorted and components are ordered by
/// their smallest member; entries are row indices of `matrix`.
pub fn cluster_orientations(
    matrix: &Matrix,
    cos_threshold: f64,
    sign_sensitive: bool,
) -> Result<Vec<Vec<usize>>> {
    if !(cos_threshold > 0.0 && cos_threshold < 1.0) {
        return Err(Error::Precondition(format!(
            "cos_threshold must lie in (0, 1), got {cos_threshold}"
        )));
    }
    if matrix.rows() != matrix.cols() {
        return Err(Error::Shape("similarity matrix must be square".into()));
    }
    let k = matrix.rows();
    let mut uf = UnionFind::new(k);
    for i in 0..k {
        for j in (i + 1)..k {
            let d = matrix[(i, j)];
            let linked = if sign_sensitive {
                d >= cos_threshold
            } else {
                d.abs() >= cos_threshold
            };
            if linked {
                uf.union(i, j);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; k];
    for i in 0..k {
        let root = uf.find(i);
        if slot[root] == usize::MAX {
            slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[root]].push(i);
    }
    Ok(groups)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub layer_index: usize,
    pub kept_indices: Vec<usize>,
    pub discarded_count: usize,
    #[serde(skip)]
    pub matrix: Matrix,
    /// Sign-sensitive partition of `kept_indices` (neuron indices).
    pub clusters_directions: Vec<Vec<usize>>,
    /// Sign-insensitive partition of `kept_indices` (neuron indices).
    pub clusters_lines: Vec<Vec<usize>>,
    pub n_directions: usize,
    pub n_lines: usize,
    pub cos_threshold: f64,
    pub min_norm: f64,
}

/// Compact JSON form of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub layer: usize,
    pub kept: Vec<usize>,
    pub discarded: usize,
    pub n_directions: usize,
    pub n_lines: usize,
    pub threshold: f64,
    pub min_norm: f64,
    pub clusters_lines: Vec<Vec<usize>>,
    pub clusters_directions: Vec<Vec<usize>>,
}

impl SimilarityReport {
    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            layer: self.layer_index,
            kept: self.kept_indices.clone(),
            discarded: self.discarded_count,
            n_directions: self.n_directions,
            n_lines: self.n_lines,
            threshold: self.cos_threshold,
            min_norm: self.min_norm,
            clusters_lines: self.clusters_lines.clone(),
            clusters_directions: self.clusters_directions.clone(),
        }
    }

    /// Clusters of lines sorted by size, largest first.
    pub fn line_sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.clusters_lines.iter().map(Vec::len).collect();
        s.sort_unstable_by(|a, b| b.cmp(a));
        s
    }
}

/// Filters, measures and clusters the input weights of hidden layer `layer` (1-based).
pub fn condensation_report(
    params: &NetworkParams,
    layer: usize,
    min_norm: f64,
    cos_threshold: f64,
) -> Result<SimilarityReport> {
    let weights = layer_weights(params, layer)?;
    report_from_weights(&weights, layer, min_norm, cos_threshold)
}

pub fn report_from_weights(
    weights: &[Vec<f64>],
    layer: usize,
    min_norm: f64,
    cos_threshold: f64,
) -> Result<SimilarityReport> {
    let (kept, discarded) = norm_filter(weights, min_norm)?;
    let selected: Vec<Vec<f64>> = kept.iter().map(|&i| weights[i].clone()).collect();
    let matrix = similarity_matrix(&selected)?;
    let to_neurons = |groups: Vec<Vec<usize>>| -> Vec<Vec<usize>> {
        groups
            .into_iter()
            .map(|g| g.into_iter().map(|i| kept[i]).collect())
            .collect()
    };
    let directions = to_neurons(cluster_orientations(&matrix, cos_threshold, true)?);
    let lines = to_neurons(cluster_orientations(&matrix, cos_threshold, false)?);
    Ok(SimilarityReport {
        layer_index: layer,
        n_directions: directions.len(),
        n_lines: lines.len(),
        kept_indices: kept,
        discarded_count: discarded,
        matrix,
        clusters_directions: directions,
        clusters_lines: lines,
        cos_threshold,
        min_norm,
    })
}
