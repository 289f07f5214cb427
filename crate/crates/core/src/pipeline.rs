//! End-to-end orchestration: config, stages, repeats and run artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{in_stage, Error, Result};
use crate::features::{seed_labels, SuperpixelFeatures, DEFAULT_KERNEL_H};
use crate::graph::{build_knn_graph, GraphParams, SpatialGraph};
use crate::hsi_io::{self, CubeFormat, GroundTruth, GroundTruthFormat, HsiCube, ReducedCube};
use crate::model::{AnyModel, GcnBaseline, GcnConfig, GraphInput, GraphModel, MobGcnConfig, MobGcnModel};
use crate::scale_select::{scale_profile, select_optimal_scales, OptimalScales, ScaleProfile, ScaleSelectParams};
use crate::segmentation::{felzenszwalb_segment, Segmentation, SegmentationParams};
use crate::synth::{generate_synthetic, SyntheticSceneSpec};
use crate::tensor::save_checkpoint;
use crate::training::{
    aggregate, compute_metrics, loss_trace_csv, predict_pixels, sample_training_pixels, test_mask, train,
    AggregateReport, EpochLoss, MetricsReport, SplitSpec, TrainConfig,
};
use crate::{npy, render, seeded_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub cube: Option<PathBuf>,
    pub cube_format: CubeFormat,
    pub ground_truth: Option<PathBuf>,
    pub ground_truth_format: GroundTruthFormat,
    /// Used instead of the files when set.
    pub synthetic: Option<SyntheticSceneSpec>,
    pub synthetic_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            cube: None,
            cube_format: CubeFormat::Npy,
            ground_truth: None,
            ground_truth_format: GroundTruthFormat::Npy,
            synthetic: None,
            synthetic_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub normalize: bool,
    pub pca_variance: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { normalize: true, pca_variance: 0.999 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub h: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { h: DEFAULT_KERNEL_H }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gcn,
    Mobgcn,
    /// Both models on identical splits.
    Both,
}

impl ModelKind {
    pub fn names(self) -> &'static [&'static str] {
        match self {
            ModelKind::Gcn => &["gcn"],
            ModelKind::Mobgcn => &["mobgcn"],
            ModelKind::Both => &["gcn", "mobgcn"],
        }
    }
}

/// `"auto"` or an explicit list of cluster counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Resolutions {
    List(Vec<usize>),
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub kind: ModelKind,
    pub hidden: usize,
    /// Absent means one level with as many clusters as classes.
    pub resolutions: Option<Resolutions>,
    pub tau: f64,
    pub use_norm: bool,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self { kind: ModelKind::Mobgcn, hidden: 32, resolutions: None, tau: 1.0, use_norm: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSettings {
    pub fraction: f64,
    pub mu: f64,
    pub lr: f64,
    pub epochs: usize,
    pub repeats: usize,
    /// Repeat `r` uses seed `seed + r`.
    pub seed: u64,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        Self { fraction: 0.05, mu: 0.01, lr: 0.01, epochs: 300, repeats: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub preprocess: PreprocessConfig,
    pub segmentation: SegmentationParams,
    pub features: FeatureConfig,
    pub graph: GraphParams,
    pub model: ModelSettings,
    pub training: TrainingSettings,
    pub scale_select: ScaleSelectParams,
    pub output: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// The config with every default filled in, as pretty JSON.
    pub fn echo(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the compact JSON form, excluding the output directory.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output = None;
        let digest = Sha256::digest(serde_json::to_vec(&canonical)?);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        let t = &self.training;
        if !(t.fraction > 0.0 && t.fraction <= 1.0) {
            return Err(Error::Config(format!("training fraction must lie in (0, 1], got {}", t.fraction)));
        }
        if t.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.model.hidden == 0 || self.model.tau <= 0.0 {
            return Err(Error::Config("hidden width and temperature must be positive".into()));
        }
        if let Some(Resolutions::Keyword(k)) = &self.model.resolutions {
            if k != "auto" {
                return Err(Error::Config(format!("resolutions must be a list or \"auto\", got {k:?}")));
            }
        }
        if self.segmentation.min_size == 0 || self.segmentation.smoothing_sigma < 0.0 {
            return Err(Error::Config("min_size must be ≥ 1 and smoothing sigma ≥ 0".into()));
        }
        if self.segmentation.scale_k.is_some_and(|k| k <= 0.0) {
            return Err(Error::Config("scale_k must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub cube: HsiCube,
    pub gt: GroundTruth,
}

pub fn load_scene(data: &DataConfig) -> Result<Scene> {
    if let Some(spec) = &data.synthetic {
        let (cube, gt) = generate_synthetic(spec, data.synthetic_seed)?;
        return Ok(Scene { cube, gt });
    }
    let (Some(cube_path), Some(gt_path)) = (&data.cube, &data.ground_truth) else {
        return Err(Error::Config("data needs either a synthetic spec or cube and ground-truth paths".into()));
    };
    let cube = hsi_io::load_cube(cube_path, data.cube_format)?;
    let gt = hsi_io::load_ground_truth(gt_path, data.ground_truth_format)?;
    gt.check_matches(&cube)?;
    Ok(Scene { cube, gt })
}

/// Everything computed once per scene, before any labels are used.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub reduced: ReducedCube,
    pub segmentation: Segmentation,
    pub features: SuperpixelFeatures,
    pub graph: SpatialGraph,
    pub input: GraphInput,
}

/// Normalization, PCA and superpixel segmentation.
pub fn segment_cube(cfg: &PipelineConfig, cube: &HsiCube) -> Result<(ReducedCube, Segmentation)> {
    let normalized;
    let cube = if cfg.preprocess.normalize {
        normalized = hsi_io::normalize_bands(cube);
        &normalized
    } else {
        cube
    };
    let reduced = in_stage("pca", hsi_io::pca_reduce(cube, cfg.preprocess.pca_variance))?;
    let segmentation = felzenszwalb_segment(&reduced, &cfg.segmentation);
    Ok((reduced, segmentation))
}

pub fn prepare_scene(cfg: &PipelineConfig, cube: &HsiCube) -> Result<PreparedScene> {
    let (reduced, segmentation) = segment_cube(cfg, cube)?;
    let features = in_stage("features", SuperpixelFeatures::build(&segmentation, &reduced, cfg.features.h))?;
    let graph = in_stage("graph", build_knn_graph(&features, &cfg.graph))?;
    let input = in_stage("graph", GraphInput::new(features.node_features(), graph.dense.clone()))?;
    Ok(PreparedScene { reduced, segmentation, features, graph, input })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSelection {
    pub profile: ScaleProfile,
    pub optimal: OptimalScales,
}

pub fn auto_scales(cfg: &PipelineConfig, prepared: &PreparedScene) -> Result<ScaleSelection> {
    let profile = scale_profile(&prepared.features.mean, &cfg.scale_select, cfg.training.seed)?;
    let optimal = select_optimal_scales(&profile, cfg.scale_select.m);
    Ok(ScaleSelection { profile, optimal })
}

/// Resolution list for MOB-GCN, and the scale search when it was run.
pub fn resolve_resolutions(
    cfg: &PipelineConfig,
    prepared: &PreparedScene,
    classes: usize,
) -> Result<(Vec<usize>, Option<ScaleSelection>)> {
    match &cfg.model.resolutions {
        None => Ok((vec![classes], None)),
        Some(Resolutions::List(r)) => Ok((r.clone(), None)),
        Some(Resolutions::Keyword(_)) => {
            let sel = in_stage("scale_select", auto_scales(cfg, prepared))?;
            if sel.optimal.selected.is_empty() {
                return Err(Error::Stage {
                    stage: "scale_select",
                    source: Box::new(Error::Data("no peaks in the rate-of-change curve".into())),
                });
            }
            Ok((sel.optimal.selected.clone(), Some(sel)))
        }
    }
}

pub fn build_model(name: &str, cfg: &PipelineConfig, in_dim: usize, classes: usize, resolutions: &[usize], seed: u64) -> Result<AnyModel> {
    let mut rng = seeded_rng(seed);
    match name {
        "gcn" => Ok(AnyModel::Gcn(GcnBaseline::new(in_dim, classes, GcnConfig { hidden: cfg.model.hidden }, &mut rng))),
        "mobgcn" => {
            let mc = MobGcnConfig {
                hidden: cfg.model.hidden,
                resolutions: resolutions.to_vec(),
                tau: cfg.model.tau,
                use_norm: cfg.model.use_norm,
            };
            Ok(AnyModel::MobGcn(MobGcnModel::new(in_dim, classes, mc, &mut rng)?))
        }
        other => Err(Error::Config(format!("unknown model {other:?}"))),
    }
}

#[derive(Debug, Clone)]
pub struct RepeatOutcome {
    pub seed: u64,
    pub metrics: MetricsReport,
    pub loss_trace: Vec<EpochLoss>,
    pub prediction: Vec<u32>,
    pub model: AnyModel,
}

/// Trains and evaluates one model on the split drawn from `seed`.
pub fn run_repeat(
    cfg: &PipelineConfig,
    prepared: &PreparedScene,
    gt: &GroundTruth,
    name: &str,
    resolutions: &[usize],
    seed: u64,
) -> Result<RepeatOutcome> {
    let train_mask = in_stage("split", sample_training_pixels(gt, &SplitSpec::new(cfg.training.fraction, seed)))?;
    let seeds = in_stage("seed_labels", seed_labels(&prepared.segmentation, gt, &train_mask))?;
    let classes = gt.class_count();
    let mut model = in_stage("model", build_model(name, cfg, prepared.input.features.cols(), classes, resolutions, seed))?;
    let tc = TrainConfig { mu: cfg.training.mu, epochs: cfg.training.epochs, lr: cfg.training.lr, seed };
    let loss_trace = in_stage("train", train(&mut model, &prepared.input, &seeds, &tc))?;
    let prediction = in_stage("predict", predict_pixels(&model, &prepared.input, &prepared.segmentation))?;
    let mut metrics = in_stage("metrics", compute_metrics(&prediction, gt, &test_mask(gt, &train_mask)))?;
    metrics.seed = Some(seed);
    Ok(RepeatOutcome { seed, metrics, loss_trace, prediction, model })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub superpixels: usize,
    pub graph_edges: usize,
    pub pca_dims: usize,
    pub resolutions: Vec<usize>,
    pub models: BTreeMap<String, AggregateReport>,
}

/// All in-memory results of a run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub summary: RunSummary,
    pub prepared: PreparedScene,
    pub scales: Option<ScaleSelection>,
    /// Per model name, one outcome per repeat.
    pub outcomes: BTreeMap<String, Vec<RepeatOutcome>>,
    pub log: Vec<String>,
}

pub fn run_scene(cfg: &PipelineConfig, scene: &Scene) -> Result<RunResult> {
    cfg.validate()?;
    let mut log = Vec::new();
    let mut note = |line: String| {
        info!("{line}");
        log.push(line);
    };
    let hash = cfg.hash()?;
    note(format!("config hash {hash}"));
    note(format!(
        "scene {}x{}x{}, {} classes",
        scene.cube.height(),
        scene.cube.width(),
        scene.cube.bands(),
        scene.gt.class_count()
    ));
    let prepared = prepare_scene(cfg, &scene.cube)?;
    note(format!(
        "pca kept {} dims; {} superpixels; {} graph edges",
        prepared.reduced.dims,
        prepared.segmentation.count(),
        prepared.graph.edges.len()
    ));
    let (resolutions, scales) = resolve_resolutions(cfg, &prepared, scene.gt.class_count())?;
    note(format!("resolutions {resolutions:?}"));

    let seeds: Vec<u64> = (0..cfg.training.repeats as u64).map(|r| cfg.training.seed + r).collect();
    let mut outcomes = BTreeMap::new();
    let mut models = BTreeMap::new();
    for &name in cfg.model.kind.names() {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in &seeds {
            let out = run_repeat(cfg, &prepared, &scene.gt, name, &resolutions, seed)?;
            note(format!(
                "{name} seed {seed}: OA {:.4} AA {:.4} kappa {:.4}",
                out.metrics.oa, out.metrics.aa, out.metrics.kappa
            ));
            runs.push(out);
        }
        models.insert(name.to_string(), aggregate(runs.iter().map(|r| r.metrics.clone()).collect()));
        outcomes.insert(name.to_string(), runs);
    }
    let summary = RunSummary {
        config_hash: hash,
        seeds,
        superpixels: prepared.segmentation.count(),
        graph_edges: prepared.graph.edges.len(),
        pca_dims: prepared.reduced.dims,
        resolutions,
        models,
    };
    Ok(RunResult { summary, prepared, scales, outcomes, log })
}

/// Runs the configured pipeline and writes every artifact into `out`.
pub fn run_pipeline(cfg: &PipelineConfig, out: impl AsRef<Path>) -> Result<RunSummary> {
    let out = out.as_ref();
    let scene = in_stage("load", load_scene(&cfg.data))?;
    let result = run_scene(cfg, &scene)?;
    in_stage("write", write_artifacts(cfg, &scene, &result, out))?;
    Ok(result.summary)
}

fn write_artifacts(cfg: &PipelineConfig, scene: &Scene, result: &RunResult, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config_echo.json"), cfg.echo()?)?;
    fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&result.summary)?)?;

    let seg = &result.prepared.segmentation;
    let ids: Vec<i32> = seg.ids.iter().map(|&i| i as i32).collect();
    npy::write_i32(out.join("segments.npy"), &[seg.height, seg.width], &ids)?;
    fs::write(out.join("graph_edges.csv"), result.prepared.graph.to_edge_csv())?;

    if let Some(sel) = &result.scales {
        fs::write(out.join("scale_profile.csv"), sel.profile.to_csv())?;
        fs::write(out.join("scale_profile.ppm"), render::render_curve(&sel.profile.nn_nroc, 200, 400))?;
        fs::write(out.join("optimal_scales.json"), serde_json::to_string_pretty(&sel.optimal)?)?;
    }

    let mut trace = String::new();
    let (h, w) = (scene.gt.height(), scene.gt.width());
    for (name, runs) in &result.outcomes {
        for run in runs {
            let csv = loss_trace_csv(&run.loss_trace);
            for line in csv.lines().skip(1) {
                trace.push_str(&format!("{name},{},{line}\n", run.seed));
            }
            save_checkpoint(
                out.join("checkpoints").join(format!("{name}_seed{}", run.seed)),
                &run.model.parameter_names(),
                run.model.parameters(),
                run.seed,
                run.model.describe(),
            )?;
        }
        // maps come from the first repeat
        let first = &runs[0];
        render::render_map(out.join(format!("map_{name}.ppm")), h, w, &first.prediction, scene.gt.class_count())?;
        let pred: Vec<i32> = first.prediction.iter().map(|&c| c as i32).collect();
        npy::write_i32(out.join(format!("pred_{name}.npy")), &[h, w], &pred)?;
    }
    fs::write(out.join("loss_trace.csv"), format!("model,seed,epoch,total,supervised,smooth\n{trace}"))?;

    let mut log = result.log.join("\n");
    log.push('\n');
    fs::write(out.join("run.log"), log)?;
    Ok(())
}
