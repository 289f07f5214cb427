use mobgcn::hsi_io::ReducedCube;
use mobgcn::seeded_rng;
use mobgcn::segmentation::{felzenszwalb_segment, Segmentation, SegmentationParams};
use rand::seq::SliceRandom;
use rand::Rng;

/// Permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        out.push(p.clone());
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| p[i] < p[i + 1]) else { break };
        let j = (i + 1..n).rev().find(|&j| p[j] > p[i]).unwrap();
        p.swap(i, j);
        p[i + 1..].reverse();
    }
    out
}

/// Every image shape with at most 12 pixels; all pixel orderings up to 6
/// pixels and 60 seeded orderings beyond. Pixel values are scaled distinct
/// powers of two, so all pairwise differences (edge weights) are distinct.
pub fn exhaustive_family() -> Vec<(usize, usize, Vec<f64>)> {
    let mut rng = seeded_rng(2024);
    let mut images = Vec::new();
    for h in 1..=12 {
        for w in 1..=12 / h {
            let n = h * w;
            let orders = if n <= 6 {
                permutations(n)
            } else {
                (0..60)
                    .map(|_| {
                        let mut p: Vec<usize> = (0..n).collect();
                        p.shuffle(&mut rng);
                        p
                    })
                    .collect()
            };
            for order in orders {
                let values = order.iter().map(|&e| 0.01 * 2f64.powi(e as i32)).collect();
                images.push((h, w, values));
            }
        }
    }
    images
}

pub fn segment(h: usize, w: usize, values: &[f64], k: f64, min_size: usize) -> Segmentation {
    let cube = ReducedCube::from_features(h, w, 1, values.to_vec()).unwrap();
    felzenszwalb_segment(&cube, &SegmentationParams { scale_k: Some(k), min_size, smoothing_sigma: 0.0 })
}

pub fn run_exhaustive() -> (usize, usize) {
    let mut cases = 0;
    let mut mismatches = 0;
    for (h, w, values) in exhaustive_family() {
        for k in [0.05, 0.5, 5.0, 50.0] {
            for min_size in [1, 2, 3, 5] {
                let got = segment(h, w, &values, k, min_size);
                let want = super::brute_force_segment(&values, h, w, k, min_size);
                cases += 1;
                if got.ids != want {
                    mismatches += 1;
                }
            }
        }
    }
    (cases, mismatches)
}

/// Checks the partition, size and connectivity invariants; returns a
/// description of the first violation.
pub fn check_invariants(seg: &Segmentation, min_size: usize) -> Result<(), String> {
    let n = seg.height * seg.width;
    if seg.ids.len() != n {
        return Err("id raster has the wrong length".into());
    }
    let mut next = 0u32;
    for &id in &seg.ids {
        if id > next {
            return Err(format!("id {id} appears before {next}"));
        }
        if id == next {
            next += 1;
        }
    }
    if next as usize != seg.count() {
        return Err("segment count disagrees with ids".into());
    }
    for (s, &size) in seg.sizes.iter().enumerate() {
        let counted = seg.ids.iter().filter(|&&i| i as usize == s).count();
        if counted != size {
            return Err(format!("segment {s} has {counted} pixels, recorded {size}"));
        }
        if size < min_size.min(n) {
            return Err(format!("segment {s} has {size} < {min_size} pixels"));
        }
    }
    if seg.sizes.iter().sum::<usize>() != n {
        return Err("sizes do not cover the image".into());
    }
    // every segment is one 8-connected piece
    for s in 0..seg.count() as u32 {
        let start = seg.ids.iter().position(|&i| i == s).unwrap();
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        let mut reached = 0;
        while let Some(p) = stack.pop() {
            reached += 1;
            let (r, c) = ((p / seg.width) as i64, (p % seg.width) as i64);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || cc < 0 || rr >= seg.height as i64 || cc >= seg.width as i64 {
                        continue;
                    }
                    let q = rr as usize * seg.width + cc as usize;
                    if !seen[q] && seg.ids[q] == s {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        if reached != seg.sizes[s as usize] {
            return Err(format!("segment {s} is not connected"));
        }
    }
    Ok(())
}

pub fn run_fuzz(count: usize) -> Result<(), String> {
    let mut rng = seeded_rng(77);
    for case in 0..count {
        let h = rng.random_range(1..=16);
        let w = rng.random_range(1..=16);
        let d = rng.random_range(1..=3);
        let values: Vec<f64> = (0..h * w * d).map(|_| rng.random_range(0.0..1.0)).collect();
        let params = SegmentationParams {
            scale_k: if rng.random_bool(0.2) { None } else { Some(rng.random_range(0.01..5.0)) },
            min_size: rng.random_range(1..=12),
            smoothing_sigma: if rng.random_bool(0.5) { 0.0 } else { 0.8 },
        };
        let cube = ReducedCube::from_features(h, w, d, values).unwrap();
        let seg = felzenszwalb_segment(&cube, &params);
        check_invariants(&seg, params.min_size).map_err(|e| format!("fuzz case {case} ({h}x{w}x{d}): {e}"))?;
    }
    Ok(())
}
