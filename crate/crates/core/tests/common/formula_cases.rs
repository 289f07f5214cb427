//! Randomized comparisons of library formulas against the loop oracles in
//! the parent module. Each check returns the largest error seen or a
//! description of the first failure.

use super::*;
use mobgcn::features::{compute_adjacency, compute_centroids, compute_mean, compute_weighted, SeedLabels, SuperpixelFeatures};
use mobgcn::graph::{build_knn_graph, pair_weight, GraphParams};
use mobgcn::hsi_io::ReducedCube;
use mobgcn::scale_select::{cv_statistics, min_max_normalize, nn_nroc, CvPolicy, ScaleProfile};
use mobgcn::segmentation::Segmentation;
use mobgcn::seeded_rng;
use mobgcn::tensor::Matrix;
use mobgcn::training::{compute_metrics, lgc_loss_value};
use rand::Rng;

pub const TOL: f64 = 1e-6;
pub const EXACT: f64 = 1e-9;

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn worst(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn within(label: &str, err: f64, tol: f64) -> Result<f64, String> {
    if err <= tol {
        Ok(err)
    } else {
        Err(format!("{label}: error {err:e} above {tol:e}"))
    }
}

/// A random raster of up to `labels` region ids plus random pixel features.
fn random_scene(rng: &mut impl Rng, labels: usize, dims: usize) -> (Segmentation, ReducedCube) {
    let h = rng.random_range(3..8);
    let w = rng.random_range(3..8);
    let raw: Vec<usize> = (0..h * w).map(|_| rng.random_range(0..labels)).collect();
    let seg = Segmentation::from_labels(h, w, &raw);
    let values: Vec<f64> = (0..h * w * dims).map(|_| rng.random_range(0.0..1.0)).collect();
    (seg, ReducedCube::from_features(h, w, dims, values).unwrap())
}

fn pixel_rows(cube: &ReducedCube) -> Vec<Vec<f64>> {
    (0..cube.height).flat_map(|r| (0..cube.width).map(move |c| (r, c))).map(|(r, c)| cube.pixel(r, c).to_vec()).collect()
}

/// 4-neighbor region adjacency by scanning every pixel pair.
fn oracle_adjacency(seg: &Segmentation) -> Vec<Vec<usize>> {
    let n = seg.count();
    let mut adj = vec![vec![false; n]; n];
    for r in 0..seg.height {
        for c in 0..seg.width {
            for (dr, dc) in [(0i64, 1i64), (1, 0), (0, -1), (-1, 0)] {
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                if rr < 0 || cc < 0 || rr >= seg.height as i64 || cc >= seg.width as i64 {
                    continue;
                }
                let (a, b) = (seg.id(r, c), seg.id(rr as usize, cc as usize));
                if a != b {
                    adj[a][b] = true;
                }
            }
        }
    }
    adj.iter().map(|row| (0..n).filter(|&j| row[j]).collect()).collect()
}

pub fn check_means(trials: usize, seed: u64) -> Result<f64, String> {
    let mut rng = seeded_rng(seed);
    let mut err: f64 = 0.0;
    for _ in 0..trials {
        let (seg, cube) = random_scene(&mut rng, 5, 3);
        let got = rows(&compute_mean(&seg, &cube).unwrap());
        let want = oracle_means(&seg.ids, &pixel_rows(&cube), seg.count());
        err = err.max(worst(&got, &want));
    }
    within("means", err, EXACT)
}

pub fn check_weighted(trials: usize, seed: u64) -> Result<f64, String> {
    let mut rng = seeded_rng(seed);
    let mut err: f64 = 0.0;
    for _ in 0..trials {
        let (seg, cube) = random_scene(&mut rng, 5, 3);
        let adjacency = compute_adjacency(&seg);
        if adjacency != oracle_adjacency(&seg) {
            return Err(format!("adjacency differs: {adjacency:?}"));
        }
        let mean = compute_mean(&seg, &cube).unwrap();
        for h in [0.5, 15.0] {
            let got = rows(&compute_weighted(&mean, &adjacency, h));
            err = err.max(worst(&got, &oracle_weighted(&rows(&mean), &adjacency, h)));
        }
    }
    within("weighted features", err, EXACT)
}

pub fn check_centroids(trials: usize, seed: u64) -> Result<f64, String> {
    let mut rng = seeded_rng(seed);
    let mut err: f64 = 0.0;
    for _ in 0..trials {
        let (seg, _) = random_scene(&mut rng, 4, 1);
        let coords: Vec<Vec<f64>> =
            (0..seg.height).flat_map(|r| (0..seg.width).map(move |c| vec![r as f64, c as f64])).collect();
        let got = rows(&compute_centroids(&seg));
        err = err.max(worst(&got, &oracle_means(&seg.ids, &coords, seg.count())));
    }
    within("centroids", err, EXACT)
}

fn random_features(rng: &mut impl Rng, n: usize, d: usize, extent: usize) -> SuperpixelFeatures {
    let mean = random_matrix(n, d, rng).map(|v| 0.2 * v);
    let weighted = random_matrix(n, d, rng).map(|v| 0.2 * v);
    let centroid = Matrix::from_fn(n, 2, |_, _| rng.random_range(0.0..extent as f64));
    SuperpixelFeatures { mean, weighted, centroid, adjacency: vec![Vec::new(); n], h: 15.0, extent }
}

fn oracle_weight_matrix(f: &SuperpixelFeatures, p: &GraphParams) -> Vec<Vec<f64>> {
    let n = f.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        return 0.0;
                    }
                    oracle_pair_weight(
                        f.mean.row(i),
                        f.mean.row(j),
                        f.weighted.row(i),
                        f.weighted.row(j),
                        f.centroid.row(i),
                        f.centroid.row(j),
                        f.extent as f64,
                        p.beta,
                        p.sigma_s,
                        p.sigma_l,
                    )
                })
                .collect()
        })
        .collect()
}

pub fn check_pair_weights(trials: usize, seed: u64) -> Result<f64, String> {
    let mut rng = seeded_rng(seed);
    let mut err: f64 = 0.0;
    for _ in 0..trials {
        let f = random_features(&mut rng, 6, 3, 20);
        let p = GraphParams { beta: rng.random_range(0.0..1.0), ..GraphParams::default() };
        let want = oracle_weight_matrix(&f, &p);
        for i in 0..6 {
            for j in 0..6 {
                if i != j {
                    let got = pair_weight(i, j, &f, &p);
                    // relative, since weights span many magnitudes
                    err = err.max((got - want[i][j]).abs() / want[i][j].max(f64::MIN_POSITIVE));
                }
            }
        }
    }
    within("pair weights", err, EXACT)
}

pub fn check_knn_edges(trials: usize, seed: u64) -> Result<f64, String> {
    let mut rng = seeded_rng(seed);
    for t in 0..trials {
        let f = random_features(&mut rng, 6, 2, 10);
        let p = GraphParams { k: 2, ..GraphParams::default() };
        let graph = build_knn_graph(&f, &p).unwrap();
        let got: Vec<(usize, usize)> = graph.edges.iter().map(|&(i, j, _)| (i, j)).collect();
        let want = oracle_knn_edges(&oracle_weight_matrix(&f, &p), 2);
        if got != want {
            return Err(format!("trial {t}: edges {got:?}, expected {want:?}"));
        }
    }
    Ok(0.0)
}

pub fn check_lgc(trials: usize, seed: u64) -> Result<f64, String> {
    let mut rng = seeded_rng(seed);
    let mut err: f64 = 0.0;
    for _ in 0..trials {
        let n = rng.random_range(3..9);
        let c = rng.random_range(2..5);
        let adj = random_adjacency(n, 0.5, &mut rng);
        let logits = random_matrix(n, c, &mut rng);
        let mut y = Matrix::zeros(n, c);
        let train: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        for i in 0..n {
            if train[i] {
                y.set(i, rng.random_range(0..c), 1.0);
            }
        }
        let mu = rng.random_range(0.0..2.0);
        let seeds = SeedLabels { y: y.clone(), train_mask: train.clone() };
        let got = lgc_loss_value(&logits, &adj, &seeds, mu).unwrap();
        let (t, s, m, w) = oracle_lgc(&rows(&logits), &rows(&adj), &rows(&y), &train, mu);
        for (a, b) in got.iter().zip([t, s, m, w]) {
            err = err.max((a - b).abs());
        }
    }
    within("LGC loss", err, EXACT)
}

pub fn check_cv(trials: usize, seed: u64) -> Result<f64, String> {
    let mut rng = seeded_rng(seed);
    let mut err: f64 = 0.0;
    for _ in 0..trials {
        let k = rng.random_range(1..5);
        let n = k + rng.random_range(0..12);
        // first k points seed every cluster so none is empty
        let assignment: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
        let x = random_matrix(n, 3, &mut rng);
        let got = cv_statistics(&x, &assignment, k, CvPolicy::Std).unwrap();
        let (per, avg) = oracle_cv(&rows(&x), &assignment, k);
        err = err.max(worst(&[got.per_cluster.clone()], &[per])).max((got.average - avg).abs());
    }
    within("CV statistics", err, EXACT)
}

pub fn check_nn_nroc(trials: usize, seed: u64) -> Result<f64, String> {
    let mut rng = seeded_rng(seed);
    let mut err: f64 = 0.0;
    for _ in 0..trials {
        let len = rng.random_range(3..20);
        let cv: Vec<f64> = (0..len).map(|_| rng.random_range(0.1..2.0)).collect();
        let p: Vec<usize> = (0..len).map(|_| rng.random_range(1..30)).collect();
        let lo = cv.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = cv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // the minimum maps to the floor rather than zero
        let ncv: Vec<f64> = cv.iter().map(|v| ((v - lo) / (hi - lo)).max(1e-12)).collect();
        let profile = ScaleProfile::from_cv((2..2 + len).collect(), cv.clone(), p.clone()).unwrap();
        err = err.max(worst(&[profile.nn_ncv.clone()], &[ncv.clone()]));
        if profile.nn_nroc[0].is_some() {
            return Err("first rate of change should be undefined".into());
        }
        for n in 1..len {
            let got = profile.nn_nroc[n].unwrap();
            let want = if ncv[n - 1] <= 1e-12 { 0.0 } else { ((ncv[n] - ncv[n - 1]) / ncv[n - 1]).abs() / p[n] as f64 };
            err = err.max((got - want).abs() / want.max(1.0));
        }
        if nn_nroc(&min_max_normalize(&cv), &p) != profile.nn_nroc {
            return Err("profile disagrees with the standalone helpers".into());
        }
    }
    within("NN-nRoC", err, EXACT)
}

pub fn check_accuracy(trials: usize, seed: u64) -> Result<f64, String> {
    let mut rng = seeded_rng(seed);
    let mut err: f64 = 0.0;
    for _ in 0..trials {
        let classes = rng.random_range(2..6u32);
        let n = rng.random_range(classes as usize..40);
        let mut truth: Vec<u32> = (1..=classes).collect();
        truth.extend((classes as usize..n).map(|_| rng.random_range(1..=classes)));
        // mostly right so kappa is away from zero
        let pred: Vec<u32> =
            truth.iter().map(|&t| if rng.random_bool(0.7) { t } else { rng.random_range(1..=classes) }).collect();
        let gt = ground_truth(1, n, truth.clone());
        let report = compute_metrics(&pred, &gt, &vec![true; n]).unwrap();
        let (oa, aa, kappa) = oracle_accuracy(&truth, &pred, classes);
        err = err.max((report.oa - oa).abs()).max((report.aa - aa).abs()).max((report.kappa - kappa).abs());
    }
    within("OA/AA/Kappa", err, EXACT)
}

/// Every check with its label, for runners that report them one by one.
pub fn all_checks() -> Vec<(&'static str, fn(usize, u64) -> Result<f64, String>)> {
    vec![
        ("superpixel means", check_means as fn(usize, u64) -> Result<f64, String>),
        ("weighted features", check_weighted),
        ("centroids", check_centroids),
        ("pair weights", check_pair_weights),
        ("kNN edges", check_knn_edges),
        ("LGC loss", check_lgc),
        ("CV statistics", check_cv),
        ("NN-nRoC", check_nn_nroc),
        ("OA/AA/Kappa", check_accuracy),
    ]
}
