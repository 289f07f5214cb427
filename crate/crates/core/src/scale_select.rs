//! Optimal-resolution selection from the spread of K-means clusters.
//!
//! For every candidate cluster count `n` the superpixel features are
//! clustered, each cluster `p` gets the spread statistic
//!
//! ```text
//! CV_p = (1/B) Σ_j √( Σ_{i∈p} (x_ij − μ_pj)² / N_p )
//! ```
//!
//! outlying clusters are dropped by an isolation forest and the remaining
//! `P` values are averaged into `CV_avg(n)`. The curve is min-max
//! normalized into `NN-nCV(n)` and
//!
//! ```text
//! NN-nRoC(n) = |(NN-nCV(n) − NN-nCV(n−1)) / NN-nCV(n−1)| / P(n)
//! ```
//!
//! Peaks of `NN-nRoC` are the candidate resolutions.

use log::warn;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::{seeded_rng, SeededRng};

/// Lower bound applied to normalized CV values.
pub const NCV_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansParams {
    pub max_iter: usize,
    /// Stop once the relative inertia change drops below this.
    pub tol: f64,
    /// Independent restarts; the lowest inertia wins.
    pub n_init: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-6, n_init: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignment: Vec<usize>,
    pub centers: Matrix,
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center, ties to the lower index.
fn nearest(point: &[f64], centers: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centers.rows() {
        let d = sq_dist(point, centers.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(x: &Matrix, k: usize, rng: &mut SeededRng) -> Matrix {
    let n = x.rows();
    let mut centers = Matrix::zeros(k, x.cols());
    centers.row_mut(0).copy_from_slice(x.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), centers.row(0))).collect();
    for c in 1..k {
        let pick = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // every point already coincides with a center
            Err(_) => rng.random_range(0..n),
        };
        centers.row_mut(c).copy_from_slice(x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), centers.row(c)));
        }
    }
    centers
}

fn lloyd(x: &Matrix, mut centers: Matrix, params: &KMeansParams) -> KMeansResult {
    let (n, d) = x.shape();
    let k = centers.rows();
    let mut assignment = vec![0usize; n];
    let mut dist = vec![0.0; n];
    let mut prev = f64::INFINITY;
    let mut inertia = 0.0;
    let mut iterations = 0;
    for _ in 0..params.max_iter {
        iterations += 1;
        for i in 0..n {
            let (c, dd) = nearest(x.row(i), &centers);
            assignment[i] = c;
            dist[i] = dd;
        }
        let mut counts = vec![0usize; k];
        for &c in &assignment {
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] == 0 {
                // move the worst-fitting point into the empty cluster
                let far = (0..n)
                    .filter(|&i| counts[assignment[i]] > 1)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
                if let Some(far) = far {
                    counts[assignment[far]] -= 1;
                    assignment[far] = c;
                    dist[far] = 0.0;
                    counts[c] = 1;
                }
            }
        }
        let mut sums = Matrix::zeros(k, d);
        for i in 0..n {
            for (s, v) in sums.row_mut(assignment[i]).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / counts[c] as f64;
                }
            }
        }
        inertia = (0..n).map(|i| sq_dist(x.row(i), centers.row(assignment[i]))).sum();
        if inertia == 0.0 || (prev - inertia).abs() <= params.tol * prev {
            break;
        }
        prev = inertia;
    }
    KMeansResult { assignment, centers, inertia, iterations }
}

/// Lloyd's algorithm from k-means++ seeds.
pub fn kmeans(x: &Matrix, k: usize, seed: u64, params: &KMeansParams) -> Result<KMeansResult> {
    let n = x.rows();
    if k == 0 || k > n {
        return Err(Error::Config(format!("cannot form {k} clusters from {n} points")));
    }
    let mut rng = seeded_rng(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..params.n_init.max(1) {
        let run = lloyd(x, plus_plus_init(x, k, &mut rng), params);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// How a cluster's spread is summarized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvPolicy {
    /// Population standard deviation per dimension, averaged over dimensions.
    #[default]
    Std,
    /// Standard deviation over `|mean|` per dimension (zero where the mean is zero).
    Relative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvStats {
    pub per_cluster: Vec<f64>,
    pub average: f64,
}

pub fn cv_statistics(x: &Matrix, assignment: &[usize], k: usize, policy: CvPolicy) -> Result<CvStats> {
    let (n, d) = x.shape();
    if assignment.len() != n {
        return Err(Error::Shape(format!("{} assignments for {n} points", assignment.len())));
    }
    let mut counts = vec![0usize; k];
    let mut sums = Matrix::zeros(k, d);
    for (i, &c) in assignment.iter().enumerate() {
        if c >= k {
            return Err(Error::Contract(format!("cluster id {c} out of range for k={k}")));
        }
        counts[c] += 1;
        for (s, v) in sums.row_mut(c).iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Contract(format!("cluster {empty} is empty")));
    }
    let means = Matrix::from_fn(k, d, |c, j| sums.get(c, j) / counts[c] as f64);
    let mut sq = Matrix::zeros(k, d);
    for (i, &c) in assignment.iter().enumerate() {
        for j in 0..d {
            let diff = x.get(i, j) - means.get(c, j);
            sq.set(c, j, sq.get(c, j) + diff * diff);
        }
    }
    let per_cluster: Vec<f64> = (0..k)
        .map(|c| {
            let total: f64 = (0..d)
                .map(|j| {
                    let std = (sq.get(c, j) / counts[c] as f64).sqrt();
                    match policy {
                        CvPolicy::Std => std,
                        CvPolicy::Relative => {
                            let m = means.get(c, j).abs();
                            if m > 0.0 {
                                std / m
                            } else {
                                0.0
                            }
                        }
                    }
                })
                .sum();
            total / d.max(1) as f64
        })
        .collect();
    let average = per_cluster.iter().sum::<f64>() / k as f64;
    Ok(CvStats { per_cluster, average })
}

/// How many of the `P` top-scored values are flagged as outliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierCount {
    #[default]
    Floor,
    Ceil,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IsolationParams {
    pub trees: usize,
    pub max_subsample: usize,
    pub contamination: f64,
    pub rounding: OutlierCount,
}

impl Default for IsolationParams {
    fn default() -> Self {
        Self { trees: 100, max_subsample: 256, contamination: 0.05, rounding: OutlierCount::Floor }
    }
}

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Average unsuccessful-search path length in a binary search tree of `n` keys.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = (n - 1) as f64;
            2.0 * (m.ln() + EULER_GAMMA) - 2.0 * m / n as f64
        }
    }
}

enum ITree {
    Leaf { size: usize },
    Split { at: f64, left: Box<ITree>, right: Box<ITree> },
}

fn grow(values: &mut [f64], depth: usize, limit: usize, rng: &mut SeededRng) -> ITree {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.len() <= 1 || depth >= limit || lo >= hi {
        return ITree::Leaf { size: values.len() };
    }
    let at = rng.random_range(lo..hi);
    values.sort_by(f64::total_cmp);
    let cut = values.partition_point(|&v| v < at);
    let (l, r) = values.split_at_mut(cut);
    ITree::Split { at, left: Box::new(grow(l, depth + 1, limit, rng)), right: Box::new(grow(r, depth + 1, limit, rng)) }
}

fn path_length(tree: &ITree, x: f64, depth: usize) -> f64 {
    match tree {
        ITree::Leaf { size } => depth as f64 + average_path_length(*size),
        ITree::Split { at, left, right } => path_length(if x < *at { left } else { right }, x, depth + 1),
    }
}

/// Anomaly scores `2^(−E[h(x)]/c(ψ))` of 1-D values.
pub fn isolation_scores(values: &[f64], params: &IsolationParams, seed: u64) -> Vec<f64> {
    let n = values.len();
    if n < 2 {
        return vec![0.5; n];
    }
    let psi = params.max_subsample.clamp(2, n);
    let limit = (psi as f64).log2().ceil() as usize;
    let mut rng = seeded_rng(seed);
    let mut total = vec![0.0; n];
    for _ in 0..params.trees.max(1) {
        let mut sub: Vec<f64> = rand::seq::index::sample(&mut rng, n, psi).into_iter().map(|i| values[i]).collect();
        let tree = grow(&mut sub, 0, limit, &mut rng);
        for (t, &v) in total.iter_mut().zip(values) {
            *t += path_length(&tree, v, 0);
        }
    }
    let c = average_path_length(psi);
    let trees = params.trees.max(1) as f64;
    total.iter().map(|t| 2f64.powf(-(t / trees) / c)).collect()
}

/// Inlier mask: the highest-scoring values are outliers. Values tied with
/// the best-scoring inlier stay inliers, so identical inputs keep all.
pub fn isolation_forest(values: &[f64], params: &IsolationParams, seed: u64) -> Result<Vec<bool>> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Contract(format!("isolation forest needs at least 2 values, got {n}")));
    }
    if !(0.0..=0.5).contains(&params.contamination) {
        return Err(Error::Config(format!("contamination {} outside [0, 0.5]", params.contamination)));
    }
    let raw = params.contamination * n as f64;
    let count = match params.rounding {
        OutlierCount::Floor => raw.floor(),
        OutlierCount::Ceil => raw.ceil(),
    } as usize;
    if count == 0 || values.iter().all(|&v| v == values[0]) {
        return Ok(vec![true; n]);
    }
    let scores = isolation_scores(values, params, seed);
    let mut sorted = scores.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = sorted[count.min(n - 1)];
    Ok(scores.iter().map(|&s| s <= threshold).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleSelectParams {
    /// Number of resolutions to keep.
    pub m: usize,
    pub min_scale: usize,
    /// Defaults to `min(n, 100)` for `n` superpixels.
    pub max_scale: Option<usize>,
    pub kmeans: KMeansParams,
    pub forest: IsolationParams,
    pub cv: CvPolicy,
}

impl Default for ScaleSelectParams {
    fn default() -> Self {
        Self {
            m: 5,
            min_scale: 2,
            max_scale: None,
            kmeans: KMeansParams::default(),
            forest: IsolationParams::default(),
            cv: CvPolicy::Std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleProfile {
    pub scales: Vec<usize>,
    pub cv_avg: Vec<f64>,
    pub nn_ncv: Vec<f64>,
    /// Undefined for the first scale.
    pub nn_nroc: Vec<Option<f64>>,
    pub inliers: Vec<usize>,
}

impl ScaleProfile {
    /// Completes a profile from per-scale inlier `CV_avg` and `P`.
    pub fn from_cv(scales: Vec<usize>, cv_avg: Vec<f64>, inliers: Vec<usize>) -> Result<Self> {
        if scales.len() < 2 || cv_avg.len() != scales.len() || inliers.len() != scales.len() {
            return Err(Error::Contract("need matching CV and P values for at least 2 scales".into()));
        }
        let nn_ncv = min_max_normalize(&cv_avg);
        let nn_nroc = nn_nroc(&nn_ncv, &inliers);
        Ok(Self { scales, cv_avg, nn_ncv, nn_nroc, inliers })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scale,cv_avg,nn_ncv,nn_nroc,p\n");
        for i in 0..self.scales.len() {
            let roc = self.nn_nroc[i].map(|v| format!("{v:e}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{:e},{:e},{},{}\n",
                self.scales[i], self.cv_avg[i], self.nn_ncv[i], roc, self.inliers[i]
            ));
        }
        out
    }
}

/// Min-max normalization floored at [`NCV_FLOOR`]; a constant curve maps
/// to the floor everywhere.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|&v| if hi > lo { ((v - lo) / (hi - lo)).max(NCV_FLOOR) } else { NCV_FLOOR })
        .collect()
}

/// Rate of change against the previous scale. Terms whose predecessor sits
/// at the floor are set to zero.
pub fn nn_nroc(ncv: &[f64], inliers: &[usize]) -> Vec<Option<f64>> {
    let mut out = vec![None];
    for n in 1..ncv.len() {
        let prev = ncv[n - 1];
        if prev <= NCV_FLOOR {
            if ncv[n] > NCV_FLOOR {
                warn!("normalized CV before position {n} is zero; rate of change skipped");
            }
            out.push(Some(0.0));
            continue;
        }
        let p = inliers[n].max(1) as f64;
        out.push(Some(((ncv[n] - prev) / prev).abs() / p));
    }
    out
}

/// Strict interior local maxima; a raised plateau reports its leftmost index.
/// `None` entries never qualify.
pub fn find_peaks(values: &[Option<f64>]) -> Vec<usize> {
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < values.len() {
        let (Some(left), Some(here)) = (values[i - 1], values[i]) else {
            i += 1;
            continue;
        };
        if here <= left {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < values.len() && values[j + 1] == Some(here) {
            j += 1;
        }
        if j + 1 < values.len() && values[j + 1].is_some_and(|r| r < here) {
            peaks.push(i);
        }
        i = j + 1;
    }
    peaks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalScales {
    /// `(scale, NN-nRoC)` by descending value, ties to the smaller scale.
    pub ranked_peaks: Vec<(usize, f64)>,
    /// Top-`m` peak scales, largest scale first.
    pub selected: Vec<usize>,
}

pub fn select_optimal_scales(profile: &ScaleProfile, m: usize) -> OptimalScales {
    let mut ranked: Vec<(usize, f64)> = find_peaks(&profile.nn_nroc)
        .into_iter()
        .map(|i| (profile.scales[i], profile.nn_nroc[i].unwrap_or(0.0)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if ranked.len() < m {
        warn!("only {} peaks found, fewer than the {m} requested", ranked.len());
    }
    let mut selected: Vec<usize> = ranked.iter().take(m).map(|p| p.0).collect();
    selected.sort_by(|a, b| b.cmp(a));
    OptimalScales { ranked_peaks: ranked, selected }
}

/// Clusters `features` at every candidate scale and assembles the profile.
pub fn scale_profile(features: &Matrix, params: &ScaleSelectParams, seed: u64) -> Result<ScaleProfile> {
    let n = features.rows();
    let hi = params.max_scale.unwrap_or(100).min(n);
    let lo = params.min_scale.max(2);
    if hi < lo + 1 {
        return Err(Error::Config(format!("candidate range {lo}..={hi} has fewer than 2 scales ({n} superpixels)")));
    }
    let scales: Vec<usize> = (lo..=hi).collect();
    let mut cv_avg = Vec::with_capacity(scales.len());
    let mut inliers = Vec::with_capacity(scales.len());
    for &k in &scales {
        let scale_seed = seed.wrapping_add(k as u64);
        let km = kmeans(features, k, scale_seed, &params.kmeans)?;
        let stats = cv_statistics(features, &km.assignment, k, params.cv)?;
        let mask = isolation_forest(&stats.per_cluster, &params.forest, scale_seed)?;
        let kept: Vec<f64> = stats.per_cluster.iter().zip(&mask).filter(|(_, &m)| m).map(|(v, _)| *v).collect();
        cv_avg.push(kept.iter().sum::<f64>() / kept.len() as f64);
        inliers.push(kept.len());
    }
    ScaleProfile::from_cv(scales, cv_avg, inliers)
}
