//! Synthetic scenes with planted classes.
//!
//! The image is cut into regions (a tile grid or a Voronoi partition), each
//! region gets a class, and each pixel is its class signature plus i.i.d.
//! Gaussian noise.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi_io::{GroundTruth, HsiCube};
use crate::seeded_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Geometry {
    /// `rows x cols` grid of equal tiles.
    Blocks { rows: usize, cols: usize },
    /// Nearest-site partition around uniformly drawn sites.
    Voronoi { sites: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: usize,
    pub geometry: Geometry,
    /// One signature of length `bands` per class; generated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signatures: Option<Vec<Vec<f64>>>,
    pub noise_std: f64,
}

impl SyntheticSceneSpec {
    /// Tile-grid scene with equidistant default signatures of unit
    /// separation and noise `noise_ratio` times that separation.
    pub fn blocks(height: usize, width: usize, bands: usize, classes: usize, tiles: usize, noise_ratio: f64) -> Self {
        Self {
            height,
            width,
            bands,
            classes,
            geometry: Geometry::Blocks { rows: tiles, cols: tiles },
            signatures: None,
            noise_std: noise_ratio,
        }
    }

    pub fn resolved_signatures(&self) -> Result<Vec<Vec<f64>>> {
        match &self.signatures {
            Some(s) => Ok(s.clone()),
            None => default_signatures(self.classes, self.bands),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return Err(Error::Config("scene dimensions must be positive".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config(format!("noise std must be non-negative, got {}", self.noise_std)));
        }
        let sig = self.resolved_signatures()?;
        if sig.len() != self.classes || sig.iter().any(|s| s.len() != self.bands) {
            return Err(Error::Config(format!("expected {} signatures of {} bands", self.classes, self.bands)));
        }
        for a in 0..sig.len() {
            for b in (a + 1)..sig.len() {
                if sig[a] == sig[b] {
                    return Err(Error::Config(format!("signatures of classes {} and {} coincide", a + 1, b + 1)));
                }
            }
        }
        let regions = match self.geometry {
            Geometry::Blocks { rows, cols } => {
                if rows == 0 || cols == 0 || rows > self.height || cols > self.width {
                    return Err(Error::Config(format!("{rows}x{cols} tiles do not fit the image")));
                }
                rows * cols
            }
            Geometry::Voronoi { sites } => {
                if sites > self.height * self.width {
                    return Err(Error::Config(format!("{sites} sites exceed the pixel count")));
                }
                sites
            }
        };
        if regions < self.classes {
            return Err(Error::Config(format!("{regions} regions cannot hold {} classes", self.classes)));
        }
        Ok(())
    }
}

/// Class `k` is `0.5` on its own contiguous band group and `0` elsewhere,
/// scaled so the smallest pairwise distance is 1. With evenly divisible
/// bands all classes are equidistant.
pub fn default_signatures(classes: usize, bands: usize) -> Result<Vec<Vec<f64>>> {
    if bands < classes {
        return Err(Error::Config(format!(
            "default signatures need at least one band per class ({bands} bands, {classes} classes)"
        )));
    }
    let mut sig: Vec<Vec<f64>> =
        (0..classes).map(|k| (0..bands).map(|b| if b * classes / bands == k { 1.0 } else { 0.0 }).collect()).collect();
    let sep = min_separation(&sig);
    for s in &mut sig {
        s.iter_mut().for_each(|v| *v /= sep);
    }
    Ok(sig)
}

/// Smallest Euclidean distance between two signatures.
pub fn min_separation(signatures: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..signatures.len() {
        for b in (a + 1)..signatures.len() {
            let d: f64 = signatures[a].iter().zip(&signatures[b]).map(|(x, y)| (x - y) * (x - y)).sum();
            best = best.min(d.sqrt());
        }
    }
    best
}

/// Region id of every pixel, row-major.
fn regions(spec: &SyntheticSceneSpec, rng: &mut crate::SeededRng) -> (usize, Vec<usize>) {
    let (h, w) = (spec.height, spec.width);
    match spec.geometry {
        Geometry::Blocks { rows, cols } => {
            let ids = (0..h * w).map(|p| (p / w) * rows / h * cols + (p % w) * cols / w).collect();
            (rows * cols, ids)
        }
        Geometry::Voronoi { sites } => {
            let picks = rand::seq::index::sample(rng, h * w, sites).into_vec();
            let coords: Vec<(f64, f64)> = picks.iter().map(|&p| ((p / w) as f64, (p % w) as f64)).collect();
            let ids = (0..h * w)
                .map(|p| {
                    let (r, c) = ((p / w) as f64, (p % w) as f64);
                    let mut best = (0, f64::INFINITY);
                    for (s, &(sr, sc)) in coords.iter().enumerate() {
                        let d = (r - sr).powi(2) + (c - sc).powi(2);
                        if d < best.1 {
                            best = (s, d);
                        }
                    }
                    best.0
                })
                .collect();
            (sites, ids)
        }
    }
}

/// Builds the cube and its ground truth; classes are dealt to regions in
/// balanced, shuffled order so each class owns at least one region.
pub fn generate_synthetic(spec: &SyntheticSceneSpec, seed: u64) -> Result<(HsiCube, GroundTruth)> {
    spec.validate()?;
    let signatures = spec.resolved_signatures()?;
    let mut rng = seeded_rng(seed);
    let (count, region_of) = regions(spec, &mut rng);
    let mut class_of: Vec<u32> = (0..count).map(|r| (r % spec.classes) as u32 + 1).collect();
    class_of.shuffle(&mut rng);

    // a Voronoi site can lose every pixel to a tie; keep all classes present
    let mut labels: Vec<u32> = region_of.iter().map(|&r| class_of[r]).collect();
    for class in 1..=spec.classes as u32 {
        if !labels.contains(&class) {
            let p = rng.random_range(0..labels.len());
            labels[p] = class;
        }
    }

    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut values = Vec::with_capacity(labels.len() * spec.bands);
    for &l in &labels {
        for &s in &signatures[l as usize - 1] {
            values.push((s + noise.sample(&mut rng)) as f32);
        }
    }
    let cube = HsiCube::new(spec.height, spec.width, spec.bands, values)?;
    let gt = GroundTruth::new(spec.height, spec.width, labels)?;
    Ok((cube, gt))
}
