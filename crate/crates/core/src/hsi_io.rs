//! Hyperspectral cube and ground-truth I/O, band normalization and PCA.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::jacobi_eigen;
use crate::npy::{self, NpyData};

/// Raw hyperspectral raster, pixel-interleaved `(height, width, bands)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    values: Vec<f32>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Data(format!(
                "cube dimensions must be positive, got {height}x{width}x{bands}"
            )));
        }
        if values.len() != height * width * bands {
            return Err(Error::Data(format!(
                "cube {height}x{width}x{bands} needs {} values, got {}",
                height * width * bands,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at flat index {pos}")));
        }
        Ok(Self { height, width, bands, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Spectrum of the pixel at `(row, col)`.
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.bands;
        &self.values[start..start + self.bands]
    }
}

/// Per-pixel class ids; 0 means unlabeled.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    class_count: usize,
}

impl GroundTruth {
    /// Builds a raster and infers the class count as the maximum label.
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Data("ground truth dimensions must be positive".into()));
        }
        if labels.len() != height * width {
            return Err(Error::Data(format!(
                "ground truth {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        let class_count = labels.iter().copied().max().unwrap_or(0) as usize;
        let mut seen = vec![false; class_count + 1];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if let Some(missing) = (1..=class_count).find(|&c| !seen[c]) {
            return Err(Error::Data(format!(
                "class {missing} of 1..={class_count} has no pixels"
            )));
        }
        Ok(Self { height, width, labels, class_count })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Errors unless the raster covers the same grid as `cube`.
    pub fn check_matches(&self, cube: &HsiCube) -> Result<()> {
        if self.height != cube.height || self.width != cube.width {
            return Err(Error::Data(format!(
                "ground truth is {}x{} but cube is {}x{}",
                self.height, self.width, cube.height, cube.width
            )));
        }
        Ok(())
    }
}

/// PCA scores per pixel, `(height, width, dims)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedCube {
    pub height: usize,
    pub width: usize,
    pub dims: usize,
    pub values: Vec<f64>,
    pub explained_variance_ratio: f64,
    /// All covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Kept loading vectors, one per output dimension, each of length `bands`.
    pub components: Vec<Vec<f64>>,
}

impl ReducedCube {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.dims;
        &self.values[start..start + self.dims]
    }

    /// Wraps arbitrary per-pixel features without running PCA.
    pub fn from_features(height: usize, width: usize, dims: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || dims == 0 || values.len() != height * width * dims {
            return Err(Error::Shape(format!(
                "feature raster {height}x{width}x{dims} does not match {} values",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            dims,
            values,
            explained_variance_ratio: 1.0,
            eigenvalues: Vec::new(),
            components: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CubeFormat {
    /// 3-D `(H, W, B)` NPY array.
    #[default]
    Npy,
    /// Band-sequential little-endian `f32` with a JSON sidecar.
    RawBsq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruthFormat {
    #[default]
    Npy,
    Csv,
}

/// Dimensions stored next to a raw BSQ file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BsqHeader {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
}

/// Sidecar location for a raw BSQ file: same path with a `.json` extension.
pub fn bsq_sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn load_cube(path: impl AsRef<Path>, format: CubeFormat) -> Result<HsiCube> {
    let path = path.as_ref();
    match format {
        CubeFormat::Npy => {
            let arr = npy::read_npy(path)?;
            let [h, w, b] = arr.shape[..] else {
                return Err(Error::Format(format!(
                    "cube npy must be 3-D (H, W, B), got shape {:?}",
                    arr.shape
                )));
            };
            let values = match arr.data {
                NpyData::Float32(v) => v,
                NpyData::Float64(v) => v.into_iter().map(|x| x as f32).collect(),
                NpyData::Int(_) => {
                    return Err(Error::Format("cube npy must be float32 or float64".into()))
                }
            };
            HsiCube::new(h, w, b, values)
        }
        CubeFormat::RawBsq => {
            let header: BsqHeader = serde_json::from_slice(&fs::read(bsq_sidecar(path))?)
                .map_err(|e| Error::Format(format!("bad bsq sidecar: {e}")))?;
            let BsqHeader { height, width, bands } = header;
            if height == 0 || width == 0 || bands == 0 {
                return Err(Error::Format(format!("bsq header has zero dimension: {header:?}")));
            }
            let bytes = fs::read(path)?;
            let plane = height * width;
            if bytes.len() != plane * bands * 4 {
                return Err(Error::Data(format!(
                    "bsq file holds {} bytes, header needs {}",
                    bytes.len(),
                    plane * bands * 4
                )));
            }
            let mut values = vec![0f32; plane * bands];
            for (i, chunk) in bytes.chunks_exact(4).enumerate() {
                let band = i / plane;
                let pixel = i % plane;
                values[pixel * bands + band] = f32::from_le_bytes(chunk.try_into().unwrap());
            }
            HsiCube::new(height, width, bands, values)
        }
    }
}

pub fn save_cube(cube: &HsiCube, path: impl AsRef<Path>, format: CubeFormat) -> Result<()> {
    let path = path.as_ref();
    match format {
        CubeFormat::Npy => npy::write_f32(path, &[cube.height, cube.width, cube.bands], &cube.values),
        CubeFormat::RawBsq => {
            let plane = cube.pixels();
            let mut bytes = Vec::with_capacity(cube.values.len() * 4);
            for band in 0..cube.bands {
                for pixel in 0..plane {
                    bytes.extend_from_slice(&cube.values[pixel * cube.bands + band].to_le_bytes());
                }
            }
            fs::write(path, bytes)?;
            let header = BsqHeader { height: cube.height, width: cube.width, bands: cube.bands };
            fs::write(bsq_sidecar(path), serde_json::to_vec(&header)?)?;
            Ok(())
        }
    }
}

fn labels_from_ints(values: impl IntoIterator<Item = i64>) -> Result<Vec<u32>> {
    values
        .into_iter()
        .map(|v| {
            u32::try_from(v).map_err(|_| Error::Data(format!("invalid class label {v}")))
        })
        .collect()
}

pub fn load_ground_truth(path: impl AsRef<Path>, format: GroundTruthFormat) -> Result<GroundTruth> {
    let path = path.as_ref();
    match format {
        GroundTruthFormat::Npy => {
            let arr = npy::read_npy(path)?;
            let [h, w] = arr.shape[..] else {
                return Err(Error::Format(format!(
                    "ground truth npy must be 2-D, got shape {:?}",
                    arr.shape
                )));
            };
            let ints: Vec<i64> = match arr.data {
                NpyData::Int(v) => v,
                NpyData::Float32(v) => v.iter().map(|&x| float_label(x as f64)).collect::<Result<_>>()?,
                NpyData::Float64(v) => v.iter().map(|&x| float_label(x)).collect::<Result<_>>()?,
            };
            GroundTruth::new(h, w, labels_from_ints(ints)?)
        }
        GroundTruthFormat::Csv => parse_ground_truth_csv(&fs::read_to_string(path)?),
    }
}

fn float_label(x: f64) -> Result<i64> {
    if x.fract() != 0.0 || !x.is_finite() {
        return Err(Error::Data(format!("non-integer class label {x}")));
    }
    Ok(x as i64)
}

/// Parses a comma-separated integer raster, one image row per line.
pub fn parse_ground_truth_csv(text: &str) -> Result<GroundTruth> {
    let mut rows: Vec<Vec<i64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<i64>().map_err(|_| {
                    Error::Format(format!("line {}: {cell:?} is not an integer", lineno + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Format(format!(
                    "line {} has {} columns, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    let height = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    GroundTruth::new(height, width, labels_from_ints(rows.into_iter().flatten())?)
}

pub fn save_ground_truth(gt: &GroundTruth, path: impl AsRef<Path>, format: GroundTruthFormat) -> Result<()> {
    match format {
        GroundTruthFormat::Npy => {
            let ints: Vec<i32> = gt.labels.iter().map(|&l| l as i32).collect();
            npy::write_i32(path, &[gt.height, gt.width], &ints)
        }
        GroundTruthFormat::Csv => {
            let mut text = String::new();
            for row in gt.labels.chunks(gt.width) {
                let cells: Vec<String> = row.iter().map(u32::to_string).collect();
                text.push_str(&cells.join(","));
                text.push('\n');
            }
            fs::write(path, text)?;
            Ok(())
        }
    }
}

/// Maps every band affinely onto `[0, 1]`; constant bands become zero.
pub fn normalize_bands(cube: &HsiCube) -> HsiCube {
    let b = cube.bands;
    let mut lo = vec![f32::INFINITY; b];
    let mut hi = vec![f32::NEG_INFINITY; b];
    for px in cube.values.chunks_exact(b) {
        for (j, &v) in px.iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    let mut values = cube.values.clone();
    for px in values.chunks_exact_mut(b) {
        for (j, v) in px.iter_mut().enumerate() {
            let range = hi[j] as f64 - lo[j] as f64;
            *v = if range > 0.0 { ((*v as f64 - lo[j] as f64) / range) as f32 } else { 0.0 };
        }
    }
    HsiCube { values, ..cube.clone() }
}

/// Projects pixels onto the leading principal components, keeping the
/// fewest components whose cumulative eigenvalue share reaches
/// `variance_target`.
pub fn pca_reduce(cube: &HsiCube, variance_target: f64) -> Result<ReducedCube> {
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::Config(format!(
            "variance target must lie in (0, 1], got {variance_target}"
        )));
    }
    let b = cube.bands;
    let n = cube.pixels();

    let mut mean = vec![0.0f64; b];
    for px in cube.values.chunks_exact(b) {
        for (m, &v) in mean.iter_mut().zip(px) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = vec![0.0f64; b * b];
    let mut centered = vec![0.0f64; b];
    for px in cube.values.chunks_exact(b) {
        for j in 0..b {
            centered[j] = px[j] as f64 - mean[j];
        }
        for i in 0..b {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..b {
                cov[i * b + j] += ci * centered[j];
            }
        }
    }
    for i in 0..b {
        for j in i..b {
            cov[i * b + j] /= n as f64;
            cov[j * b + i] = cov[i * b + j];
        }
    }

    let eig = jacobi_eigen(&cov, b);
    let eigenvalues: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();

    let (dims, ratio) = if total <= 0.0 {
        (1, 1.0)
    } else {
        let mut cumulative = 0.0;
        let mut picked = (b, 1.0);
        for (k, &l) in eigenvalues.iter().enumerate() {
            cumulative += l;
            let r = (cumulative / total).min(1.0);
            if r >= variance_target - 1e-12 {
                picked = (k + 1, r);
                break;
            }
        }
        picked
    };

    let components: Vec<Vec<f64>> = eig.vectors[..dims].to_vec();
    let mut values = Vec::with_capacity(n * dims);
    for px in cube.values.chunks_exact(b) {
        for comp in &components {
            let score: f64 = if total <= 0.0 {
                0.0
            } else {
                comp.iter()
                    .zip(px)
                    .zip(&mean)
                    .map(|((w, &x), m)| w * (x as f64 - m))
                    .sum()
            };
            values.push(score);
        }
    }

    Ok(ReducedCube {
        height: cube.height,
        width: cube.width,
        dims,
        values,
        explained_variance_ratio: ratio,
        eigenvalues,
        components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(h: usize, w: usize, b: usize, values: Vec<f32>) -> HsiCube {
        HsiCube::new(h, w, b, values).unwrap()
    }

    #[test]
    fn rejects_non_finite_and_bad_sizes() {
        assert!(matches!(HsiCube::new(1, 1, 1, vec![f32::NAN]), Err(Error::Data(_))));
        assert!(matches!(HsiCube::new(1, 2, 1, vec![0.0]), Err(Error::Data(_))));
        assert!(matches!(HsiCube::new(0, 2, 1, vec![]), Err(Error::Data(_))));
    }

    #[test]
    fn normalize_maps_band_to_unit_interval() {
        let c = normalize_bands(&cube(3, 1, 1, vec![2.0, 4.0, 6.0]));
        assert_eq!(c.values(), &[0.0, 0.5, 1.0]);
        let c = normalize_bands(&cube(2, 1, 1, vec![5.0, 5.0]));
        assert_eq!(c.values(), &[0.0, 0.0]);
    }

    #[test]
    fn csv_ground_truth_parses() {
        let gt = parse_ground_truth_csv("1,0\n2,2").unwrap();
        assert_eq!(gt.labels(), &[1, 0, 2, 2]);
        assert_eq!(gt.class_count(), 2);
        assert!(matches!(parse_ground_truth_csv("1,-1"), Err(Error::Data(_))));
        assert!(matches!(parse_ground_truth_csv("1,0\n2"), Err(Error::Format(_))));
    }

    #[test]
    fn all_zero_ground_truth_has_no_classes() {
        let gt = GroundTruth::new(2, 2, vec![0; 4]).unwrap();
        assert_eq!(gt.class_count(), 0);
    }

    #[test]
    fn missing_intermediate_class_is_rejected() {
        assert!(matches!(GroundTruth::new(1, 2, vec![1, 3]), Err(Error::Data(_))));
    }

    #[test]
    fn single_band_pca_is_centered_band() {
        let c = cube(2, 2, 1, vec![1.0, 2.0, 3.0, 6.0]);
        let r = pca_reduce(&c, 0.999).unwrap();
        assert_eq!(r.dims, 1);
        assert_eq!(r.values, vec![-2.0, -1.0, 0.0, 3.0]);
    }

    #[test]
    fn duplicated_bands_reduce_to_one_dimension() {
        let base = [0.1f32, 0.7, 0.3, 0.9, 0.5, 0.2];
        let values: Vec<f32> = base.iter().flat_map(|&v| [v, v, v]).collect();
        let r = pca_reduce(&cube(2, 3, 3, values), 0.999).unwrap();
        assert_eq!(r.dims, 1);
        assert!(r.explained_variance_ratio > 0.999);
    }

    #[test]
    fn constant_cube_keeps_one_zero_dimension() {
        let r = pca_reduce(&cube(2, 2, 3, vec![0.4; 12]), 0.999).unwrap();
        assert_eq!(r.dims, 1);
        assert!(r.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_variance_target_is_config_error() {
        let c = cube(1, 1, 1, vec![0.0]);
        assert!(matches!(pca_reduce(&c, 0.0), Err(Error::Config(_))));
        assert!(matches!(pca_reduce(&c, 1.5), Err(Error::Config(_))));
    }
}
