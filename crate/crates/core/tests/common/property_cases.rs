//! Structural properties checked on one random instance per call.

use super::*;
use mobgcn::features::{SeedLabels, SuperpixelFeatures};
use mobgcn::graph::{build_knn_graph, GraphParams};
use mobgcn::model::{gumbel_softmax_matrix, GraphInput, GraphModel, Mode, MobGcnConfig, MobGcnModel};
use mobgcn::seeded_rng;
use mobgcn::tensor::{Matrix, Tape};
use mobgcn::training::lgc_loss_value;
use rand::seq::SliceRandom;
use rand::Rng;

pub const SUM_TOL: f64 = 1e-9;

fn max_row_sum_error(m: &Matrix) -> f64 {
    m.row_sums().iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
}

fn asymmetry(m: &Matrix) -> f64 {
    m.max_abs_diff(&m.transpose())
}

pub fn gumbel_rows_sum_to_one(seed: u64, n: usize, r: usize, tau: f64) -> Result<(), String> {
    let mut rng = seeded_rng(seed);
    let logits = random_matrix(n, r, &mut rng).map(|v| 5.0 * v);
    for mode in [Mode::Train, Mode::Eval] {
        let s = gumbel_softmax_matrix(&logits, tau, mode, &mut rng).map_err(|e| e.to_string())?;
        let err = max_row_sum_error(&s);
        if err > SUM_TOL || s.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(format!("{mode:?}: row sums off by {err:e}"));
        }
    }
    Ok(())
}

/// Runs a random MOB-GCN forward pass and checks every cumulative
/// assignment product and every coarsened adjacency.
pub fn hierarchy_is_consistent(seed: u64, n: usize, levels: &[usize]) -> Result<(), String> {
    let mut rng = seeded_rng(seed);
    let input = GraphInput::new(random_matrix(n, 4, &mut rng), random_adjacency(n, 0.5, &mut rng))
        .map_err(|e| e.to_string())?;
    let cfg = MobGcnConfig { hidden: 5, resolutions: levels.to_vec(), tau: 1.0, use_norm: true };
    let model = MobGcnModel::new(4, 3, cfg, &mut rng).map_err(|e| e.to_string())?;
    let mut tape = Tape::new();
    let params: Vec<_> = model.parameters().iter().map(|p| tape.parameter(p.clone())).collect();
    let trace = model.forward_trace(&mut tape, &params, &input, Mode::Train, &mut rng).map_err(|e| e.to_string())?;
    for (l, (&p, &a)) in trace.products.iter().zip(&trace.coarse_adjacency).enumerate() {
        let product = tape.value(p);
        if product.shape() != (n, levels[l]) {
            return Err(format!("level {l}: product shape {:?}", product.shape()));
        }
        let err = max_row_sum_error(product);
        if err > SUM_TOL {
            return Err(format!("level {l}: product rows off by {err:e}"));
        }
        let adj = tape.value(a);
        if asymmetry(adj) > SUM_TOL {
            return Err(format!("level {l}: coarse adjacency asymmetric by {:e}", asymmetry(adj)));
        }
    }
    Ok(())
}

pub fn random_superpixels(rng: &mut impl Rng, n: usize, d: usize) -> SuperpixelFeatures {
    let extent = 32;
    SuperpixelFeatures {
        mean: random_matrix(n, d, rng).map(|v| 0.3 * v),
        weighted: random_matrix(n, d, rng).map(|v| 0.3 * v),
        centroid: Matrix::from_fn(n, 2, |_, _| rng.random_range(0.0..extent as f64)),
        adjacency: vec![Vec::new(); n],
        h: 15.0,
        extent,
    }
}

/// Symmetry and the lower degree bound, which always hold.
pub fn knn_graph_is_symmetric(seed: u64, n: usize, k: usize) -> Result<Vec<usize>, String> {
    let mut rng = seeded_rng(seed);
    let feats = random_superpixels(&mut rng, n, 3);
    let g = build_knn_graph(&feats, &GraphParams { k, ..GraphParams::default() }).map_err(|e| e.to_string())?;
    if asymmetry(&g.dense) != 0.0 {
        return Err("dense weights not symmetric".into());
    }
    if (0..n).any(|i| g.dense.get(i, i) != 0.0) {
        return Err("self loop".into());
    }
    let degrees: Vec<usize> = (0..n).map(|i| g.degree(i)).collect();
    let floor = k.min(n - 1);
    if let Some(i) = degrees.iter().position(|&d| d < floor) {
        return Err(format!("node {i} has degree {} below {floor}", degrees[i]));
    }
    Ok(degrees)
}

/// Star layout: a hub with up to five leaves on a ring around it. Ring
/// neighbors sit farther apart than the radius, so every leaf's single
/// nearest neighbor is the hub and with `k = 1` the hub collects one edge
/// per leaf.
pub fn star_hub_degree(leaves: usize) -> usize {
    assert!((2..=5).contains(&leaves), "ring neighbors would beat the hub");
    let n = leaves + 1;
    let mut centroid = Matrix::zeros(n, 2);
    for l in 0..leaves {
        let angle = std::f64::consts::TAU * l as f64 / leaves as f64;
        centroid.set(l + 1, 0, 16.0 + 8.0 * angle.cos());
        centroid.set(l + 1, 1, 16.0 + 8.0 * angle.sin());
    }
    centroid.set(0, 0, 16.0);
    centroid.set(0, 1, 16.0);
    let feats = SuperpixelFeatures {
        mean: Matrix::zeros(n, 1),
        weighted: Matrix::zeros(n, 1),
        centroid,
        adjacency: vec![Vec::new(); n],
        h: 15.0,
        extent: 32,
    };
    let g = build_knn_graph(&feats, &GraphParams { k: 1, ..GraphParams::default() }).unwrap();
    g.degree(0)
}

/// Circulant graph: node `i` links to `i ± o` for each offset, all with the
/// same weight per offset, so every weighted degree is equal.
pub fn circulant(n: usize, offsets: &[(usize, f64)]) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    for &(o, w) in offsets {
        for i in 0..n {
            let j = (i + o) % n;
            a.set(i, j, w);
            a.set(j, i, w);
        }
    }
    a
}

pub fn smoothness_vanishes_on_regular_graph(seed: u64, n: usize, offsets: &[(usize, f64)]) -> Result<(), String> {
    let mut rng = seeded_rng(seed);
    let adj = circulant(n, offsets);
    let c = 3;
    let row = random_matrix(1, c, &mut rng);
    let logits = Matrix::from_fn(n, c, |_, j| row.get(0, j));
    let seeds = SeedLabels { y: Matrix::zeros(n, c), train_mask: vec![false; n] };
    let [_, _, smooth, weighted] = lgc_loss_value(&logits, &adj, &seeds, 1.0).map_err(|e| e.to_string())?;
    if smooth.abs() > 1e-12 || weighted.abs() > 1e-12 {
        return Err(format!("smoothness {smooth:e}, weighted {weighted:e}"));
    }
    Ok(())
}

/// Relabeling the superpixels relabels the graph the same way.
pub fn graph_is_permutation_equivariant(seed: u64, n: usize, k: usize) -> Result<(), String> {
    let mut rng = seeded_rng(seed);
    let feats = random_superpixels(&mut rng, n, 3);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    // node perm[i] of the new graph is node i of the old one
    let mut inverse = vec![0; n];
    for (i, &p) in perm.iter().enumerate() {
        inverse[p] = i;
    }
    let permute = |m: &Matrix| Matrix::from_fn(n, m.cols(), |r, c| m.get(inverse[r], c));
    let moved = SuperpixelFeatures {
        mean: permute(&feats.mean),
        weighted: permute(&feats.weighted),
        centroid: permute(&feats.centroid),
        ..feats.clone()
    };
    let params = GraphParams { k, ..GraphParams::default() };
    let g = build_knn_graph(&feats, &params).map_err(|e| e.to_string())?;
    let h = build_knn_graph(&moved, &params).map_err(|e| e.to_string())?;
    for i in 0..n {
        for j in 0..n {
            if g.dense.get(i, j) != h.dense.get(perm[i], perm[j]) {
                return Err(format!("edge ({i}, {j}) changed under relabeling"));
            }
        }
    }
    Ok(())
}
