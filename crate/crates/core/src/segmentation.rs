//! Felzenszwalb–Huttenlocher graph-based superpixel segmentation.
//!
//! Pixels are nodes of an 8-connected grid graph whose edge weights are
//! Euclidean distances between (optionally Gaussian-smoothed) feature
//! vectors. Edges are visited in ascending weight; two components merge
//! when the edge weight does not exceed
//! `min(Int(C1) + k/|C1|, Int(C2) + k/|C2|)`, where `Int(C)` is the largest
//! weight merged into `C` so far. A second pass over the same edge order
//! absorbs components smaller than `min_size`.

use serde::{Deserialize, Serialize};

use crate::hsi_io::ReducedCube;

/// Partition of the image grid into superpixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    pub height: usize,
    pub width: usize,
    /// Row-major superpixel id per pixel, contiguous in `0..count()`.
    pub ids: Vec<u32>,
    /// Pixel count of each superpixel.
    pub sizes: Vec<usize>,
}

impl Segmentation {
    /// Relabels an arbitrary id raster contiguously in row-major
    /// first-occurrence order.
    pub fn from_labels(height: usize, width: usize, raw: &[usize]) -> Self {
        assert_eq!(raw.len(), height * width);
        let mut remap = std::collections::HashMap::new();
        let mut ids = Vec::with_capacity(raw.len());
        let mut sizes: Vec<usize> = Vec::new();
        for &r in raw {
            let next = remap.len() as u32;
            let id = *remap.entry(r).or_insert(next);
            if id as usize == sizes.len() {
                sizes.push(0);
            }
            sizes[id as usize] += 1;
            ids.push(id);
        }
        Self { height, width, ids, sizes }
    }

    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn id(&self, row: usize, col: usize) -> usize {
        self.ids[row * self.width + col] as usize
    }

    /// Pixel indices belonging to each superpixel, in row-major order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
        for (p, &id) in self.ids.iter().enumerate() {
            out[id as usize].push(p);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationParams {
    /// Threshold constant `k`. `None` selects three times the median edge
    /// weight of the image.
    pub scale_k: Option<f64>,
    pub min_size: usize,
    /// Gaussian pre-smoothing width in pixels; 0 disables smoothing.
    pub smoothing_sigma: f64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self { scale_k: None, min_size: 20, smoothing_sigma: 0.8 }
    }
}

/// Rule-of-thumb minimum segment size for a target node count.
pub fn target_min_size(height: usize, width: usize, target_nodes: usize) -> usize {
    let target_nodes = target_nodes.max(1);
    (height * width).div_ceil(target_nodes)
}

/// Union-find over pixels with per-root size and internal difference.
struct Forest {
    parent: Vec<usize>,
    rank: Vec<u8>,
    size: Vec<usize>,
    internal: Vec<f64>,
}

impl Forest {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), rank: vec![0; n], size: vec![1; n], internal: vec![0.0; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    fn join(&mut self, a: usize, b: usize, weight: f64) -> usize {
        let (hi, lo) = if self.rank[a] >= self.rank[b] { (a, b) } else { (b, a) };
        if self.rank[a] == self.rank[b] {
            self.rank[hi] += 1;
        }
        self.parent[lo] = hi;
        self.size[hi] += self.size[lo];
        self.internal[hi] = self.internal[hi].max(self.internal[lo]).max(weight);
        hi
    }
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    a: usize,
    b: usize,
    w: f64,
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (sigma * 4.0).ceil() as usize;
    let mut k: Vec<f64> = (0..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let total = k[0] + 2.0 * k[1..].iter().sum::<f64>();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable Gaussian blur of every feature channel with edge clamping.
fn smooth(values: &[f64], height: usize, width: usize, dims: usize, sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let r = kernel.len() as isize - 1;
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;

    let mut tmp = vec![0.0; values.len()];
    for row in 0..height {
        for col in 0..width {
            let out = &mut tmp[(row * width + col) * dims..][..dims];
            for t in -r..=r {
                let c = clamp(col as isize + t, width);
                let w = kernel[t.unsigned_abs()];
                let src = &values[(row * width + c) * dims..][..dims];
                out.iter_mut().zip(src).for_each(|(o, s)| *o += w * s);
            }
        }
    }
    let mut res = vec![0.0; values.len()];
    for row in 0..height {
        for col in 0..width {
            let out = &mut res[(row * width + col) * dims..][..dims];
            for t in -r..=r {
                let rr = clamp(row as isize + t, height);
                let w = kernel[t.unsigned_abs()];
                let src = &tmp[(rr * width + col) * dims..][..dims];
                out.iter_mut().zip(src).for_each(|(o, s)| *o += w * s);
            }
        }
    }
    res
}

/// 8-connected grid edges in construction order: right, down, down-right,
/// up-right for each pixel in row-major order.
fn grid_edges(values: &[f64], height: usize, width: usize, dims: usize) -> Vec<Edge> {
    let dist = |a: usize, b: usize| -> f64 {
        values[a * dims..][..dims]
            .iter()
            .zip(&values[b * dims..][..dims])
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut edges = Vec::with_capacity(height * width * 4);
    for row in 0..height {
        for col in 0..width {
            let p = row * width + col;
            let mut push = |q: usize| edges.push(Edge { a: p, b: q, w: dist(p, q) });
            if col + 1 < width {
                push(p + 1);
            }
            if row + 1 < height {
                push(p + width);
            }
            if row + 1 < height && col + 1 < width {
                push(p + width + 1);
            }
            if row > 0 && col + 1 < width {
                push(p - width + 1);
            }
        }
    }
    edges
}

fn median(sorted: &[Edge]) -> f64 {
    match sorted.len() {
        0 => 0.0,
        n if n % 2 == 1 => sorted[n / 2].w,
        n => 0.5 * (sorted[n / 2 - 1].w + sorted[n / 2].w),
    }
}

/// Threshold constant actually used for `params` on `reduced`.
pub fn resolve_scale_k(reduced: &ReducedCube, params: &SegmentationParams) -> f64 {
    if let Some(k) = params.scale_k {
        return k;
    }
    let (_, edges) = sorted_edges(reduced, params.smoothing_sigma);
    auto_scale_k(&edges)
}

fn auto_scale_k(sorted: &[Edge]) -> f64 {
    (3.0 * median(sorted)).max(f64::EPSILON)
}

fn sorted_edges(reduced: &ReducedCube, sigma: f64) -> (usize, Vec<Edge>) {
    let (h, w, d) = (reduced.height, reduced.width, reduced.dims);
    let values = if sigma > 0.0 {
        smooth(&reduced.values, h, w, d, sigma)
    } else {
        reduced.values.clone()
    };
    let mut edges = grid_edges(&values, h, w, d);
    // stable: equal weights keep construction order
    edges.sort_by(|x, y| x.w.total_cmp(&y.w));
    (h * w, edges)
}

pub fn felzenszwalb_segment(reduced: &ReducedCube, params: &SegmentationParams) -> Segmentation {
    let (n, edges) = sorted_edges(reduced, params.smoothing_sigma);
    let k = params.scale_k.unwrap_or_else(|| auto_scale_k(&edges));
    let min_size = params.min_size.max(1);

    let mut forest = Forest::new(n);
    for e in &edges {
        let a = forest.find(e.a);
        let b = forest.find(e.b);
        if a == b {
            continue;
        }
        let ta = forest.internal[a] + k / forest.size[a] as f64;
        let tb = forest.internal[b] + k / forest.size[b] as f64;
        if e.w <= ta.min(tb) {
            forest.join(a, b, e.w);
        }
    }
    for e in &edges {
        let a = forest.find(e.a);
        let b = forest.find(e.b);
        if a != b && (forest.size[a] < min_size || forest.size[b] < min_size) {
            forest.join(a, b, e.w);
        }
    }

    let roots: Vec<usize> = (0..n).map(|p| forest.find(p)).collect();
    Segmentation::from_labels(reduced.height, reduced.width, &roots)
}
