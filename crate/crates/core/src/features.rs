//! Per-superpixel descriptors and training seeds.
//!
//! For superpixel `S_i` with `n_i` pixels and neighbor set `ζ_i`:
//!
//! * mean: `S̄ᵢᵐ = Σ_j Î(p_ij) / n_i`
//! * weighted: `S̄ᵢʷ = Σ_{z∈ζ_i} w_iz S̄_zᵐ`, with
//!   `w_iz = softmax_z(-‖S̄_zᵐ - S̄ᵢᵐ‖² / h)`
//! * centroid: mean `(row, col)` of the member pixels.

use std::collections::BTreeSet;

use crate::hsi_io::{GroundTruth, ReducedCube};
use crate::segmentation::Segmentation;
use crate::tensor::Matrix;
use crate::error::{Error, Result};

/// Default softmax kernel width for the weighted features.
pub const DEFAULT_KERNEL_H: f64 = 15.0;

#[derive(Debug, Clone)]
pub struct SuperpixelFeatures {
    pub mean: Matrix,
    pub weighted: Matrix,
    /// `(row, col)` centroids in pixel coordinates.
    pub centroid: Matrix,
    /// Sorted neighbor ids of each superpixel.
    pub adjacency: Vec<Vec<usize>>,
    pub h: f64,
    /// `max(height, width)` of the source image, used to scale centroids.
    pub extent: usize,
}

impl SuperpixelFeatures {
    pub fn build(seg: &Segmentation, reduced: &ReducedCube, h: f64) -> Result<Self> {
        let mean = compute_mean(seg, reduced)?;
        let adjacency = compute_adjacency(seg);
        let weighted = compute_weighted(&mean, &adjacency, h);
        let centroid = compute_centroids(seg);
        Ok(Self { mean, weighted, centroid, adjacency, h, extent: seg.height.max(seg.width) })
    }

    pub fn len(&self) -> usize {
        self.mean.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.rows() == 0
    }

    pub fn dims(&self) -> usize {
        self.mean.cols()
    }

    /// Node features fed to the graph models: `[mean | weighted]`.
    pub fn node_features(&self) -> Matrix {
        let d = self.dims();
        Matrix::from_fn(self.len(), 2 * d, |i, j| {
            if j < d {
                self.mean.get(i, j)
            } else {
                self.weighted.get(i, j - d)
            }
        })
    }
}

/// Superpixels `i != j` are adjacent iff some pixel of one has a
/// 4-neighbor in the other.
pub fn compute_adjacency(seg: &Segmentation) -> Vec<Vec<usize>> {
    let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); seg.count()];
    let (h, w) = (seg.height, seg.width);
    for row in 0..h {
        for col in 0..w {
            let a = seg.id(row, col);
            let mut link = |b: usize| {
                if a != b {
                    sets[a].insert(b);
                    sets[b].insert(a);
                }
            };
            if col + 1 < w {
                link(seg.id(row, col + 1));
            }
            if row + 1 < h {
                link(seg.id(row + 1, col));
            }
        }
    }
    sets.into_iter().map(|s| s.into_iter().collect()).collect()
}

pub fn compute_mean(seg: &Segmentation, reduced: &ReducedCube) -> Result<Matrix> {
    if seg.height != reduced.height || seg.width != reduced.width {
        return Err(Error::Shape(format!(
            "segmentation {}x{} vs features {}x{}",
            seg.height, seg.width, reduced.height, reduced.width
        )));
    }
    let d = reduced.dims;
    let mut sums = Matrix::zeros(seg.count(), d);
    for (p, &id) in seg.ids.iter().enumerate() {
        let src = &reduced.values[p * d..(p + 1) * d];
        for (o, v) in sums.row_mut(id as usize).iter_mut().zip(src) {
            *o += v;
        }
    }
    for (i, &size) in seg.sizes.iter().enumerate() {
        sums.row_mut(i).iter_mut().for_each(|v| *v /= size as f64);
    }
    Ok(sums)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Softmax weights over the neighbors of `i`, in `adjacency[i]` order.
pub fn neighbor_weights(mean: &Matrix, adjacency: &[Vec<usize>], i: usize, h: f64) -> Vec<f64> {
    let logits: Vec<f64> = adjacency[i]
        .iter()
        .map(|&z| -squared_distance(mean.row(z), mean.row(i)) / h)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Isolated superpixels keep their own mean.
pub fn compute_weighted(mean: &Matrix, adjacency: &[Vec<usize>], h: f64) -> Matrix {
    let mut out = Matrix::zeros(mean.rows(), mean.cols());
    for i in 0..mean.rows() {
        if adjacency[i].is_empty() {
            out.row_mut(i).copy_from_slice(mean.row(i));
            continue;
        }
        let weights = neighbor_weights(mean, adjacency, i, h);
        for (&z, w) in adjacency[i].iter().zip(weights) {
            for (o, v) in out.row_mut(i).iter_mut().zip(mean.row(z)) {
                *o += w * v;
            }
        }
    }
    out
}

pub fn compute_centroids(seg: &Segmentation) -> Matrix {
    let mut sums = Matrix::zeros(seg.count(), 2);
    for row in 0..seg.height {
        for col in 0..seg.width {
            let r = sums.row_mut(seg.id(row, col));
            r[0] += row as f64;
            r[1] += col as f64;
        }
    }
    for (i, &size) in seg.sizes.iter().enumerate() {
        sums.row_mut(i).iter_mut().for_each(|v| *v /= size as f64);
    }
    sums
}

/// One-hot seed labels per superpixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedLabels {
    /// `n x c`; row `i` is one-hot on its seed class or all zero.
    pub y: Matrix,
    pub train_mask: Vec<bool>,
}

impl SeedLabels {
    pub fn classes(&self) -> usize {
        self.y.cols()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.train_mask.len()).filter(|&i| self.train_mask[i]).collect()
    }

    /// 1-based seed class of superpixel `i`, if any.
    pub fn class_of(&self, i: usize) -> Option<u32> {
        if !self.train_mask[i] {
            return None;
        }
        self.y.row(i).iter().position(|&v| v == 1.0).map(|c| c as u32 + 1)
    }
}

/// Labels each superpixel with the majority class of its sampled pixels
/// (ties to the smallest class id). Superpixels without sampled pixels
/// get an all-zero row.
pub fn seed_labels(seg: &Segmentation, gt: &GroundTruth, sampled: &[bool]) -> Result<SeedLabels> {
    if sampled.len() != seg.ids.len() || gt.labels().len() != seg.ids.len() {
        return Err(Error::Shape("sample mask, ground truth and segmentation differ in size".into()));
    }
    let c = gt.class_count();
    let n = seg.count();
    // column 0 stays zero: sampled pixels are always labeled
    let mut counts = vec![vec![0usize; c + 1]; n];
    for (p, (&id, &label)) in seg.ids.iter().zip(gt.labels()).enumerate() {
        if sampled[p] {
            if label == 0 {
                return Err(Error::Contract(format!("sampled pixel {p} is unlabeled")));
            }
            counts[id as usize][label as usize] += 1;
        }
    }
    let mut y = Matrix::zeros(n, c);
    let mut train_mask = vec![false; n];
    for (i, row) in counts.iter().enumerate() {
        let mut best = 0;
        for class in 1..=c {
            if row[class] > row[best] {
                best = class;
            }
        }
        if best > 0 {
            y.set(i, best - 1, 1.0);
            train_mask[i] = true;
        }
    }
    Ok(SeedLabels { y, train_mask })
}
