//! Stratified sampling, LGC training, pixel prediction and accuracy metrics.
//!
//! The training objective is
//!
//! ```text
//! ŷ        = softmax(logits)
//! L_sup    = -(1/|T|) Σ_{i∈T} Σ_c Y_ic log ŷ_ic
//! L_smooth = (1/|E|) Σ_{(i,j)∈E} ‖ŷ_i/√d_i − ŷ_j/√d_j‖²
//! L        = L_sup + μ L_smooth
//! ```
//!
//! with `T` the seeded superpixels (all rows when none are seeded), `E` the
//! undirected edges of the weighted adjacency and `d = A·1`.

use log::warn;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SeedLabels;
use crate::hsi_io::GroundTruth;
use crate::model::{predict_logits, record_forward, GraphInput, GraphModel, Mode};
use crate::segmentation::Segmentation;
use crate::tensor::{Adam, Matrix, Tape, Var, NORM_EPS};
use crate::{seeded_rng, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl SplitSpec {
    pub fn new(fraction: f64, seed: u64) -> Self {
        Self { fraction, seed, stratified: true }
    }
}

/// Chooses `⌈fraction·count⌉` labeled pixels per class without
/// replacement. Unlabeled pixels are never chosen. Without stratification
/// the same rule is applied to the pooled labeled pixels.
pub fn sample_training_pixels(gt: &GroundTruth, split: &SplitSpec) -> Result<Vec<bool>> {
    if !(split.fraction > 0.0 && split.fraction <= 1.0) {
        return Err(Error::Config(format!("training fraction must lie in (0, 1], got {}", split.fraction)));
    }
    let mut rng = seeded_rng(split.seed);
    let labels = gt.labels();
    let groups: Vec<Vec<usize>> = if split.stratified {
        let mut by_class = vec![Vec::new(); gt.class_count()];
        for (p, &l) in labels.iter().enumerate() {
            if l > 0 {
                by_class[l as usize - 1].push(p);
            }
        }
        by_class
    } else {
        vec![(0..labels.len()).filter(|&p| labels[p] > 0).collect()]
    };
    let mut mask = vec![false; labels.len()];
    for (class, pixels) in groups.iter().enumerate() {
        if pixels.is_empty() {
            warn!("class {} has no labeled pixels; skipped", class + 1);
            continue;
        }
        let take = ((split.fraction * pixels.len() as f64).ceil() as usize).clamp(1, pixels.len());
        for k in sample(&mut rng, pixels.len(), take) {
            mask[pixels[k]] = true;
        }
    }
    Ok(mask)
}

/// Labeled pixels outside the training mask.
pub fn test_mask(gt: &GroundTruth, train: &[bool]) -> Vec<bool> {
    gt.labels().iter().zip(train).map(|(&l, &t)| l > 0 && !t).collect()
}

/// Tape-ready constants of the loss that depend only on the graph.
#[derive(Debug, Clone)]
pub struct LossGraph {
    /// `n x 1` column of `1/√max(d_i, ε)`.
    inv_sqrt_degree: Matrix,
    /// `|E| x n` signed incidence matrix.
    incidence: Matrix,
    /// Incidence rows scaled by `√w_ij`.
    weighted_incidence: Matrix,
}

impl LossGraph {
    pub fn new(adjacency: &Matrix) -> Self {
        let n = adjacency.rows();
        let degrees = adjacency.row_sums();
        let inv_sqrt_degree = Matrix::from_fn(n, 1, |i, _| 1.0 / degrees[i].max(NORM_EPS).sqrt());
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let w = adjacency.get(i, j);
                if w > 0.0 {
                    edges.push((i, j, w));
                }
            }
        }
        let mut incidence = Matrix::zeros(edges.len(), n);
        let mut weighted_incidence = Matrix::zeros(edges.len(), n);
        for (e, &(i, j, w)) in edges.iter().enumerate() {
            incidence.set(e, i, 1.0);
            incidence.set(e, j, -1.0);
            weighted_incidence.set(e, i, w.sqrt());
            weighted_incidence.set(e, j, -w.sqrt());
        }
        Self { inv_sqrt_degree, incidence, weighted_incidence }
    }

    pub fn edge_count(&self) -> usize {
        self.incidence.rows()
    }
}

/// Scalar loss handles recorded on the tape.
#[derive(Debug, Clone, Copy)]
pub struct LgcTerms {
    pub total: Var,
    pub supervised: Var,
    pub smooth: Var,
    /// `Σ_{(i,j)∈E} w_ij ‖ŷ_i/√d_i − ŷ_j/√d_j‖²`, not part of `total`.
    pub weighted_smooth: Var,
}

fn squared_norm_sum(tape: &mut Tape, incidence: &Matrix, y_norm: Var) -> Result<Var> {
    let b = tape.constant(incidence.clone());
    let diff = tape.matmul(b, y_norm)?;
    let sq = tape.elementwise_mul(diff, diff)?;
    Ok(tape.sum(sq))
}

pub fn lgc_loss(tape: &mut Tape, logits: Var, graph: &LossGraph, seeds: &SeedLabels, mu: f64) -> Result<LgcTerms> {
    let (n, c) = tape.value(logits).shape();
    if seeds.y.shape() != (n, c) || graph.inv_sqrt_degree.rows() != n {
        return Err(Error::Shape(format!(
            "logits {:?}, seeds {:?}, graph of {} nodes",
            (n, c),
            seeds.y.shape(),
            graph.inv_sqrt_degree.rows()
        )));
    }
    let probs = tape.row_softmax(logits);

    let mut rows = seeds.train_indices();
    if rows.is_empty() {
        rows = (0..n).collect();
    }
    let log_probs = tape.log(probs);
    let picked = tape.gather_rows(log_probs, &rows)?;
    let targets = tape.constant(Matrix::from_fn(rows.len(), c, |r, k| seeds.y.get(rows[r], k)));
    let masked = tape.elementwise_mul(picked, targets)?;
    let total_ll = tape.sum(masked);
    let supervised = tape.scalar_mul(total_ll, -1.0 / rows.len() as f64);

    let scale = tape.constant(graph.inv_sqrt_degree.clone());
    let y_norm = tape.elementwise_mul(probs, scale)?;
    let edges = graph.edge_count();
    let (smooth, weighted_smooth) = if edges == 0 {
        let zero = tape.constant(Matrix::scalar(0.0));
        (zero, zero)
    } else {
        let s = squared_norm_sum(tape, &graph.incidence, y_norm)?;
        let smooth = tape.scalar_mul(s, 1.0 / edges as f64);
        (smooth, squared_norm_sum(tape, &graph.weighted_incidence, y_norm)?)
    };
    let reg = tape.scalar_mul(smooth, mu);
    let total = tape.add(supervised, reg)?;
    Ok(LgcTerms { total, supervised, smooth, weighted_smooth })
}

/// Evaluates the loss terms `(total, supervised, smooth, weighted_smooth)`
/// for fixed logits.
pub fn lgc_loss_value(logits: &Matrix, adjacency: &Matrix, seeds: &SeedLabels, mu: f64) -> Result<[f64; 4]> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let terms = lgc_loss(&mut tape, l, &LossGraph::new(adjacency), seeds, mu)?;
    let v = |x: Var| tape.value(x).get(0, 0);
    Ok([v(terms.total), v(terms.supervised), v(terms.smooth), v(terms.weighted_smooth)])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mu: f64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { mu: 0.01, epochs: 300, lr: 0.01, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0) {
            return Err(Error::Config(format!("mu must be non-negative, got {}", self.mu)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub supervised: f64,
    pub smooth: f64,
}

pub fn loss_trace_csv(trace: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,total,supervised,smooth\n");
    for e in trace {
        out.push_str(&format!("{},{:e},{:e},{:e}\n", e.epoch, e.total, e.supervised, e.smooth));
    }
    out
}

/// Runs Adam on the LGC loss for `cfg.epochs` full-batch steps. Gumbel
/// noise is drawn from an rng seeded with `cfg.seed`.
pub fn train<M: GraphModel + ?Sized>(
    model: &mut M,
    input: &GraphInput,
    seeds: &SeedLabels,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLoss>> {
    cfg.validate()?;
    let graph = LossGraph::new(&input.adjacency);
    let mut adam = Adam::new(cfg.lr);
    let mut rng: SeededRng = seeded_rng(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let logits = record_forward(model, &mut tape, input, Mode::Train, &mut rng)?;
        let terms = lgc_loss(&mut tape, logits, &graph, seeds, cfg.mu)?;
        let total = tape.value(terms.total).get(0, 0);
        if !total.is_finite() {
            return Err(Error::Divergence(format!("loss became {total} at epoch {epoch}")));
        }
        trace.push(EpochLoss {
            epoch,
            total,
            supervised: tape.value(terms.supervised).get(0, 0),
            smooth: tape.value(terms.smooth).get(0, 0),
        });
        let grads = tape.gradient(terms.total)?;
        adam.step(model.parameters_mut(), &grads)?;
    }
    Ok(trace)
}

/// 1-based class per superpixel from an eval-mode forward pass.
pub fn predict_superpixels<M: GraphModel + ?Sized>(model: &M, input: &GraphInput) -> Result<Vec<u32>> {
    // eval mode draws no noise, so the rng is never consulted
    let logits = predict_logits(model, input, Mode::Eval, &mut seeded_rng(0))?;
    Ok(logits.argmax_rows().into_iter().map(|k| k as u32 + 1).collect())
}

/// Every pixel takes the class of its superpixel.
pub fn expand_to_pixels(seg: &Segmentation, node_classes: &[u32]) -> Result<Vec<u32>> {
    if node_classes.len() != seg.count() {
        return Err(Error::Shape(format!(
            "{} node classes for {} superpixels",
            node_classes.len(),
            seg.count()
        )));
    }
    Ok(seg.ids.iter().map(|&id| node_classes[id as usize]).collect())
}

pub fn predict_pixels<M: GraphModel + ?Sized>(model: &M, input: &GraphInput, seg: &Segmentation) -> Result<Vec<u32>> {
    expand_to_pixels(seg, &predict_superpixels(model, input)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    /// Recall per class in percent; `None` for classes absent from the test set.
    pub per_class: Vec<Option<f64>>,
    /// `confusion[true - 1][pred - 1]`.
    pub confusion: Vec<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// OA, AA and Kappa (all in percent) from a confusion matrix.
pub fn metrics_from_confusion(confusion: Vec<Vec<u64>>) -> Result<MetricsReport> {
    let c = confusion.len();
    if confusion.iter().any(|r| r.len() != c) {
        return Err(Error::Shape("confusion matrix must be square".into()));
    }
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(Error::Data("no test pixels".into()));
    }
    let n = total as f64;
    let diag: u64 = (0..c).map(|k| confusion[k][k]).sum();
    let p_o = diag as f64 / n;

    let row_tot: Vec<u64> = confusion.iter().map(|r| r.iter().sum()).collect();
    let col_tot: Vec<u64> = (0..c).map(|k| confusion.iter().map(|r| r[k]).sum()).collect();
    let p_e: f64 = (0..c).map(|k| row_tot[k] as f64 * col_tot[k] as f64).sum::<f64>() / (n * n);

    let per_class: Vec<Option<f64>> = (0..c)
        .map(|k| {
            if row_tot[k] == 0 {
                warn!("class {} absent from the test set; excluded from AA", k + 1);
                None
            } else {
                Some(100.0 * confusion[k][k] as f64 / row_tot[k] as f64)
            }
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let aa = present.iter().sum::<f64>() / present.len() as f64;

    // chance agreement of 1 means a single class on both axes
    let kappa = if 1.0 - p_e <= 0.0 { if p_o >= 1.0 { 1.0 } else { 0.0 } } else { (p_o - p_e) / (1.0 - p_e) };
    Ok(MetricsReport { oa: 100.0 * p_o, aa, kappa: 100.0 * kappa, per_class, confusion, seed: None })
}

/// Confusion over pixels with `test[p]` set; predictions of 0 or above the
/// class count are rejected.
pub fn compute_metrics(pred: &[u32], gt: &GroundTruth, test: &[bool]) -> Result<MetricsReport> {
    let labels = gt.labels();
    if pred.len() != labels.len() || test.len() != labels.len() {
        return Err(Error::Shape("prediction, ground truth and test mask differ in size".into()));
    }
    let c = gt.class_count();
    let mut confusion = vec![vec![0u64; c]; c];
    for p in 0..labels.len() {
        if !test[p] || labels[p] == 0 {
            continue;
        }
        let guess = pred[p] as usize;
        if guess == 0 || guess > c {
            return Err(Error::Data(format!("prediction {guess} at pixel {p} is not a class in 1..={c}")));
        }
        confusion[labels[p] as usize - 1][guess - 1] += 1;
    }
    metrics_from_confusion(confusion)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub oa: MeanStd,
    pub aa: MeanStd,
    pub kappa: MeanStd,
    pub runs: Vec<MetricsReport>,
}

pub fn aggregate(runs: Vec<MetricsReport>) -> AggregateReport {
    let pick = |f: fn(&MetricsReport) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
    AggregateReport { oa: pick(|r| r.oa), aa: pick(|r| r.aa), kappa: pick(|r| r.kappa), runs: runs.clone() }
}
