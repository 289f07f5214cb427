//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod formula_cases;
pub mod property_cases;
pub mod seg_cases;

use mobgcn::hsi_io::GroundTruth;
use mobgcn::tensor::{Matrix, Tape, Var};

/// Central-difference check of `f` at `params`. Returns, per parameter,
/// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
pub fn gradient_check(params: &[Matrix], f: impl Fn(&mut Tape, &[Var]) -> Var, h: f64) -> Vec<f64> {
    let eval = |ps: &[Matrix]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.parameter(p.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).get(0, 0)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.parameter(p.clone())).collect();
    let loss = f(&mut tape, &vars);
    let analytic = tape.gradient(loss).unwrap();

    let mut errors = Vec::new();
    for (k, p) in params.iter().enumerate() {
        let mut num = Matrix::zeros(p.rows(), p.cols());
        for idx in 0..p.data().len() {
            let mut plus = params.to_vec();
            plus[k].data_mut()[idx] += h;
            let mut minus = params.to_vec();
            minus[k].data_mut()[idx] -= h;
            num.data_mut()[idx] = (eval(&plus) - eval(&minus)) / (2.0 * h);
        }
        let diff: f64 = analytic[k].data().iter().zip(num.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na = analytic[k].data().iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = num.data().iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = na.max(nn);
        errors.push(if scale == 0.0 { 0.0 } else { diff / scale });
    }
    errors
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Symmetric non-negative weights with zero diagonal; each pair is kept
/// with probability `density` and every node gets at least one neighbor.
pub fn random_adjacency(n: usize, density: f64, rng: &mut impl rand::Rng) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random_bool(density) {
                let w = rng.random_range(0.05..1.0);
                a.set(i, j, w);
                a.set(j, i, w);
            }
        }
    }
    for i in 0..n {
        if n > 1 && a.row(i).iter().all(|&v| v == 0.0) {
            let j = (i + 1) % n;
            a.set(i, j, 0.5);
            a.set(j, i, 0.5);
        }
    }
    a
}

/// Felzenszwalb merge rule applied literally on a scalar image.
///
/// Edges are the 8-neighbor pixel pairs with weight `|x_p − x_q|`. The
/// unprocessed edge of smallest weight is found by a linear scan each
/// round; two components merge when the weight is at most
/// `min(Int(C) + k/|C|)` over both, where `Int(C)` is the largest weight
/// among the merge edges recorded inside `C` and `|C|` is counted directly.
/// Components below `min_size` are then repeatedly joined through the
/// lightest edge touching any of them. Labels are numbered by first
/// appearance in row-major order.
pub fn brute_force_segment(values: &[f64], height: usize, width: usize, k: f64, min_size: usize) -> Vec<u32> {
    let n = height * width;
    let mut edges = Vec::new();
    for p in 0..n {
        for q in (p + 1)..n {
            let (pr, pc) = ((p / width) as i64, (p % width) as i64);
            let (qr, qc) = ((q / width) as i64, (q % width) as i64);
            if (pr - qr).abs() <= 1 && (pc - qc).abs() <= 1 {
                let d = values[p] - values[q];
                edges.push((p, q, (d * d).sqrt()));
            }
        }
    }
    let mut label: Vec<usize> = (0..n).collect();
    let mut merges: Vec<(usize, f64)> = Vec::new();
    let size = |label: &[usize], c: usize| label.iter().filter(|&&l| l == c).count();
    let internal = |label: &[usize], merges: &[(usize, f64)], c: usize| {
        merges.iter().filter(|(p, _)| label[*p] == c).map(|m| m.1).fold(0.0, f64::max)
    };

    let mut done = vec![false; edges.len()];
    loop {
        let next = (0..edges.len()).filter(|&e| !done[e]).min_by(|&a, &b| edges[a].2.total_cmp(&edges[b].2));
        let Some(e) = next else { break };
        done[e] = true;
        let (p, q, w) = edges[e];
        let (a, b) = (label[p], label[q]);
        if a == b {
            continue;
        }
        let ta = internal(&label, &merges, a) + k / size(&label, a) as f64;
        let tb = internal(&label, &merges, b) + k / size(&label, b) as f64;
        if w <= ta.min(tb) {
            label.iter_mut().filter(|l| **l == b).for_each(|l| *l = a);
            merges.push((p, w));
        }
    }
    loop {
        let next = edges
            .iter()
            .filter(|(p, q, _)| {
                let (a, b) = (label[*p], label[*q]);
                a != b && (size(&label, a) < min_size || size(&label, b) < min_size)
            })
            .min_by(|x, y| x.2.total_cmp(&y.2));
        let Some(&(p, q, _)) = next else { break };
        let (a, b) = (label[p], label[q]);
        label.iter_mut().filter(|l| **l == b).for_each(|l| *l = a);
    }
    let mut order: Vec<usize> = Vec::new();
    label
        .iter()
        .map(|l| match order.iter().position(|o| o == l) {
            Some(i) => i as u32,
            None => {
                order.push(*l);
                order.len() as u32 - 1
            }
        })
        .collect()
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Superpixel means by direct summation over member pixels.
pub fn oracle_means(ids: &[u32], pixels: &[Vec<f64>], count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|s| {
            let members: Vec<&Vec<f64>> = ids.iter().zip(pixels).filter(|(&i, _)| i as usize == s).map(|(_, p)| p).collect();
            let d = pixels[0].len();
            (0..d).map(|j| members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64).collect()
        })
        .collect()
}

/// Neighbor-weighted features with an unshifted softmax.
pub fn oracle_weighted(means: &[Vec<f64>], neighbors: &[Vec<usize>], h: f64) -> Vec<Vec<f64>> {
    means
        .iter()
        .enumerate()
        .map(|(i, mi)| {
            if neighbors[i].is_empty() {
                return mi.clone();
            }
            let raw: Vec<f64> = neighbors[i].iter().map(|&z| (-sq(&means[z], mi) / h).exp()).collect();
            let total: f64 = raw.iter().sum();
            let mut out = vec![0.0; mi.len()];
            for (&z, r) in neighbors[i].iter().zip(&raw) {
                for (o, v) in out.iter_mut().zip(&means[z]) {
                    *o += r / total * v;
                }
            }
            out
        })
        .collect()
}

/// Similarity weight written out as two separate Gaussian kernels.
pub fn oracle_pair_weight(
    mi: &[f64],
    mj: &[f64],
    wi: &[f64],
    wj: &[f64],
    ci: &[f64],
    cj: &[f64],
    extent: f64,
    beta: f64,
    sigma_s: f64,
    sigma_l: f64,
) -> f64 {
    let s = (((beta - 1.0) * sq(wi, wj) - beta * sq(mi, mj)) / (sigma_s * sigma_s)).exp();
    let pi: Vec<f64> = ci.iter().map(|v| v / extent).collect();
    let pj: Vec<f64> = cj.iter().map(|v| v / extent).collect();
    let l = (-sq(&pi, &pj) / (sigma_l * sigma_l)).exp();
    s * l
}

/// Edge set of the symmetric kNN rule from a full weight matrix.
pub fn oracle_knn_edges(w: &[Vec<f64>], k: usize) -> Vec<(usize, usize)> {
    let n = w.len();
    let in_top = |i: usize, j: usize| {
        // i is among j's k best: fewer than k others beat it
        let better = (0..n).filter(|&z| z != j && z != i && (w[j][z] > w[j][i] || (w[j][z] == w[j][i] && z < i))).count();
        better < k
    };
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if in_top(i, j) || in_top(j, i) {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// LGC loss evaluated with explicit loops.
pub fn oracle_lgc(logits: &[Vec<f64>], adj: &[Vec<f64>], y: &[Vec<f64>], train: &[bool], mu: f64) -> (f64, f64, f64, f64) {
    let n = logits.len();
    let probs: Vec<Vec<f64>> = logits
        .iter()
        .map(|z| {
            let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
            let t: f64 = e.iter().sum();
            e.iter().map(|v| v / t).collect()
        })
        .collect();
    let rows: Vec<usize> = if train.iter().any(|&t| t) { (0..n).filter(|&i| train[i]).collect() } else { (0..n).collect() };
    let mut sup = 0.0;
    for &i in &rows {
        for c in 0..probs[i].len() {
            sup -= y[i][c] * probs[i][c].ln();
        }
    }
    sup /= rows.len() as f64;
    let deg: Vec<f64> = adj.iter().map(|r| r.iter().sum()).collect();
    let (mut smooth, mut weighted, mut edges) = (0.0, 0.0, 0usize);
    for i in 0..n {
        for j in (i + 1)..n {
            if adj[i][j] > 0.0 {
                let d: f64 = (0..probs[i].len())
                    .map(|c| (probs[i][c] / deg[i].sqrt() - probs[j][c] / deg[j].sqrt()).powi(2))
                    .sum();
                smooth += d;
                weighted += adj[i][j] * d;
                edges += 1;
            }
        }
    }
    if edges > 0 {
        smooth /= edges as f64;
    }
    (sup + mu * smooth, sup, smooth, weighted)
}

/// Spread of each cluster by a direct double loop.
pub fn oracle_cv(points: &[Vec<f64>], assignment: &[usize], k: usize) -> (Vec<f64>, f64) {
    let d = points[0].len();
    let per: Vec<f64> = (0..k)
        .map(|p| {
            let members: Vec<&Vec<f64>> = points.iter().zip(assignment).filter(|(_, &a)| a == p).map(|(x, _)| x).collect();
            let mut total = 0.0;
            for j in 0..d {
                let mu = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
                let var = members.iter().map(|m| (m[j] - mu).powi(2)).sum::<f64>() / members.len() as f64;
                total += var.sqrt();
            }
            total / d as f64
        })
        .collect();
    let avg = per.iter().sum::<f64>() / k as f64;
    (per, avg)
}

/// OA, AA and Kappa in percent straight from label vectors.
pub fn oracle_accuracy(truth: &[u32], pred: &[u32], classes: u32) -> (f64, f64, f64) {
    let n = truth.len() as f64;
    let agree = truth.iter().zip(pred).filter(|(t, p)| t == p).count() as f64;
    let mut recalls = Vec::new();
    let mut chance = 0.0;
    for c in 1..=classes {
        let in_truth = truth.iter().filter(|&&t| t == c).count() as f64;
        let in_pred = pred.iter().filter(|&&p| p == c).count() as f64;
        chance += (in_truth / n) * (in_pred / n);
        if in_truth > 0.0 {
            let hit = truth.iter().zip(pred).filter(|(&t, &p)| t == c && p == c).count() as f64;
            recalls.push(hit / in_truth);
        }
    }
    let po = agree / n;
    let kappa = (po - chance) / (1.0 - chance);
    (100.0 * po, 100.0 * recalls.iter().sum::<f64>() / recalls.len() as f64, 100.0 * kappa)
}

/// Ground truth with every class present, from a raw label list.
pub fn ground_truth(h: usize, w: usize, labels: Vec<u32>) -> GroundTruth {
    GroundTruth::new(h, w, labels).unwrap()
}
