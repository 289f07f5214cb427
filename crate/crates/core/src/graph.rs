//! Weighted kNN graph over superpixels.
//!
//! The similarity of superpixels `i` and `j` is `w_ij = s_ij · l_ij` with
//!
//! ```text
//! s_ij = exp(((β-1)‖S̄ᵢʷ - S̄ⱼʷ‖² - β‖S̄ᵢᵐ - S̄ⱼᵐ‖²) / σ_s²)
//! l_ij = exp(-‖p̂_i - p̂_j‖² / σ_l²)
//! ```
//!
//! where `p̂` are centroids divided by `max(height, width)`. Edge `(i, j)`
//! is kept when either endpoint is among the other's `K` most similar nodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SuperpixelFeatures;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphParams {
    pub beta: f64,
    pub sigma_s: f64,
    pub sigma_l: f64,
    pub k: usize,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self { beta: 0.9, sigma_s: 0.20, sigma_l: 0.20, k: 8 }
    }
}

impl GraphParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.sigma_s > 0.0 && self.sigma_l > 0.0) {
            return Err(Error::Config("kernel widths must be positive".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("kNN count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Symmetric weighted superpixel graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    /// Undirected edges `(i, j, w)` with `i < j`, sorted.
    pub edges: Vec<(usize, usize, f64)>,
    /// Dense symmetric weight matrix with zero diagonal.
    pub dense: Matrix,
}

impl SpatialGraph {
    pub fn node_count(&self) -> usize {
        self.dense.rows()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.dense.row(i).iter().filter(|&&w| w > 0.0).count()
    }

    pub fn to_edge_csv(&self) -> String {
        let mut out = String::from("i,j,w\n");
        for &(i, j, w) in &self.edges {
            out.push_str(&format!("{i},{j},{w:e}\n"));
        }
        out
    }

    /// Builds a graph from a dense symmetric matrix.
    pub fn from_dense(dense: Matrix) -> Result<Self> {
        let n = dense.rows();
        if dense.cols() != n {
            return Err(Error::Shape(format!("adjacency {:?} is not square", dense.shape())));
        }
        let mut edges = Vec::new();
        for i in 0..n {
            if dense.get(i, i) != 0.0 {
                return Err(Error::Data(format!("adjacency has self loop at {i}")));
            }
            for j in (i + 1)..n {
                if dense.get(i, j) != dense.get(j, i) {
                    return Err(Error::Data(format!("adjacency not symmetric at ({i}, {j})")));
                }
                if dense.get(i, j) > 0.0 {
                    edges.push((i, j, dense.get(i, j)));
                }
            }
        }
        Ok(Self { edges, dense })
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Similarity `w_ij ∈ (0, 1]`; underflow is floored at the smallest
/// positive normal `f64`.
pub fn pair_weight(i: usize, j: usize, feats: &SuperpixelFeatures, params: &GraphParams) -> f64 {
    let dw = squared_distance(feats.weighted.row(i), feats.weighted.row(j));
    let dm = squared_distance(feats.mean.row(i), feats.mean.row(j));
    let scale = feats.extent.max(1) as f64;
    let (ci, cj) = (feats.centroid.row(i), feats.centroid.row(j));
    let dp = ((ci[0] - cj[0]) / scale).powi(2) + ((ci[1] - cj[1]) / scale).powi(2);

    let log_s = ((params.beta - 1.0) * dw - params.beta * dm) / (params.sigma_s * params.sigma_s);
    let log_l = -dp / (params.sigma_l * params.sigma_l);
    (log_s + log_l).exp().clamp(f64::MIN_POSITIVE, 1.0)
}

pub fn build_knn_graph(feats: &SuperpixelFeatures, params: &GraphParams) -> Result<SpatialGraph> {
    params.validate()?;
    let n = feats.len();
    if n < 2 {
        return Err(Error::DegenerateGraph(format!("need at least 2 superpixels, got {n}")));
    }
    let mut weights = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let w = pair_weight(i, j, feats, params);
            weights.set(i, j, w);
            weights.set(j, i, w);
        }
    }

    let mut keep = vec![vec![false; n]; n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for j in 0..n {
        order.clear();
        order.extend((0..n).filter(|&i| i != j));
        // most similar first; equal weights prefer the smaller id
        order.sort_by(|&a, &b| weights.get(j, b).total_cmp(&weights.get(j, a)).then(a.cmp(&b)));
        for &i in order.iter().take(params.k) {
            keep[i][j] = true;
            keep[j][i] = true;
        }
    }

    let mut dense = Matrix::zeros(n, n);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if keep[i][j] {
                let w = weights.get(i, j);
                dense.set(i, j, w);
                dense.set(j, i, w);
                edges.push((i, j, w));
            }
        }
    }
    Ok(SpatialGraph { edges, dense })
}
