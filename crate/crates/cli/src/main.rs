use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mobgcn::hsi_io::{self, CubeFormat, GroundTruthFormat};
use mobgcn::pipeline::{self, ModelKind, PipelineConfig, Resolutions};
use mobgcn::synth::{generate_synthetic, Geometry, SyntheticSceneSpec};
use mobgcn::training::compute_metrics;
use mobgcn::{npy, render};

/// Superpixel graph classification of hyperspectral images.
#[derive(Debug, Parser)]
#[command(name = "mobgcn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the full pipeline and write a run directory.
    Run(RunArgs),
    /// Segment a cube into superpixels.
    Segment(SceneArgs),
    /// Compute the scale profile and the selected resolutions.
    Scales(ScalesArgs),
    /// Generate a synthetic scene.
    Synth(SynthArgs),
    /// Score a prediction raster against ground truth.
    Metrics(MetricsArgs),
    /// Render a class raster as a PPM image.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CubeFmt {
    Npy,
    RawBsq,
}

impl From<CubeFmt> for CubeFormat {
    fn from(f: CubeFmt) -> Self {
        match f {
            CubeFmt::Npy => CubeFormat::Npy,
            CubeFmt::RawBsq => CubeFormat::RawBsq,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GtFmt {
    Npy,
    Csv,
}

impl From<GtFmt> for GroundTruthFormat {
    fn from(f: GtFmt) -> Self {
        match f {
            GtFmt::Npy => GroundTruthFormat::Npy,
            GtFmt::Csv => GroundTruthFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Gcn,
    Mobgcn,
    Both,
}

/// Scene selection and preprocessing overrides shared by several commands.
#[derive(Debug, Args)]
struct SceneArgs {
    /// JSON pipeline config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    cube: Option<PathBuf>,
    #[arg(long, value_enum)]
    cube_format: Option<CubeFmt>,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long, value_enum)]
    gt_format: Option<GtFmt>,
    #[arg(long)]
    min_size: Option<usize>,
    #[arg(long)]
    scale_k: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Output directory.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Comma-separated cluster counts, or `auto`.
    #[arg(long)]
    resolutions: Option<String>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
}

#[derive(Debug, Args)]
struct ScalesArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Number of resolutions to keep.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    max_scale: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// JSON scene spec; overrides the geometry flags.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 8)]
    bands: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Tiles per side of the block grid.
    #[arg(long, default_value_t = 4)]
    tiles: usize,
    /// Use a Voronoi partition with this many sites instead of blocks.
    #[arg(long)]
    voronoi: Option<usize>,
    /// Noise standard deviation, relative to the unit signature separation.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    /// Predicted class raster (2-D integer NPY).
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_enum, default_value = "npy")]
    gt_format: GtFmt,
    /// Boolean or 0/1 NPY raster of training pixels to exclude.
    #[arg(long)]
    train_mask: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// Class raster (2-D integer NPY).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
}

fn scene_config(args: &SceneArgs) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::load(path).with_context(|| format!("reading config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(cube) = &args.cube {
        cfg.data.cube = Some(cube.clone());
        cfg.data.synthetic = None;
    }
    if let Some(f) = args.cube_format {
        cfg.data.cube_format = f.into();
    }
    if let Some(gt) = &args.gt {
        cfg.data.ground_truth = Some(gt.clone());
    }
    if let Some(f) = args.gt_format {
        cfg.data.ground_truth_format = f.into();
    }
    if let Some(s) = args.min_size {
        cfg.segmentation.min_size = s;
    }
    if args.scale_k.is_some() {
        cfg.segmentation.scale_k = args.scale_k;
    }
    if let Some(s) = args.sigma {
        cfg.segmentation.smoothing_sigma = s;
    }
    if let Some(o) = &args.output {
        cfg.output = Some(o.clone());
    }
    Ok(cfg)
}

fn output_dir(cfg: &PipelineConfig) -> Result<PathBuf> {
    match &cfg.output {
        Some(o) => Ok(o.clone()),
        None => bail!("no output directory; pass --output or set `output` in the config"),
    }
}

fn parse_resolutions(text: &str) -> Result<Resolutions> {
    if text == "auto" {
        return Ok(Resolutions::Keyword(text.into()));
    }
    let list = text
        .split(',')
        .map(|s| s.trim().parse::<usize>().with_context(|| format!("bad resolution {s:?}")))
        .collect::<Result<Vec<_>>>()?;
    Ok(Resolutions::List(list))
}

/// Cube only; ground truth is not needed for segmentation or scales.
fn load_cube_for(cfg: &PipelineConfig) -> Result<hsi_io::HsiCube> {
    if let Some(spec) = &cfg.data.synthetic {
        return Ok(generate_synthetic(spec, cfg.data.synthetic_seed)?.0);
    }
    let Some(path) = &cfg.data.cube else { bail!("no cube given; pass --cube or a config with data.cube") };
    Ok(hsi_io::load_cube(path, cfg.data.cube_format)?)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cfg = scene_config(&args.scene)?;
    if let Some(m) = args.model {
        cfg.model.kind = match m {
            ModelArg::Gcn => ModelKind::Gcn,
            ModelArg::Mobgcn => ModelKind::Mobgcn,
            ModelArg::Both => ModelKind::Both,
        };
    }
    if let Some(r) = &args.resolutions {
        cfg.model.resolutions = Some(parse_resolutions(r)?);
    }
    let t = &mut cfg.training;
    t.fraction = args.fraction.unwrap_or(t.fraction);
    t.epochs = args.epochs.unwrap_or(t.epochs);
    t.repeats = args.repeats.unwrap_or(t.repeats);
    t.seed = args.seed.unwrap_or(t.seed);
    t.lr = args.lr.unwrap_or(t.lr);
    t.mu = args.mu.unwrap_or(t.mu);
    cfg.model.hidden = args.hidden.unwrap_or(cfg.model.hidden);

    let out = output_dir(&cfg)?;
    let summary = pipeline::run_pipeline(&cfg, &out)?;
    for (name, report) in &summary.models {
        println!(
            "{name}: OA {:.2} ± {:.2}  AA {:.2} ± {:.2}  kappa {:.2} ± {:.2}",
            report.oa.mean, report.oa.std, report.aa.mean, report.aa.std, report.kappa.mean, report.kappa.std
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_segment(args: SceneArgs) -> Result<()> {
    let cfg = scene_config(&args)?;
    let out = output_dir(&cfg)?;
    let cube = load_cube_for(&cfg).context("stage `load` failed")?;
    let (reduced, seg) = pipeline::segment_cube(&cfg, &cube)?;
    fs::create_dir_all(&out)?;
    let ids: Vec<i32> = seg.ids.iter().map(|&i| i as i32).collect();
    npy::write_i32(out.join("segments.npy"), &[seg.height, seg.width], &ids)?;
    fs::write(out.join("boundaries.ppm"), render::encode_boundary_ppm(&seg))?;
    let summary = serde_json::json!({
        "superpixels": seg.count(),
        "pca_dims": reduced.dims,
        "explained_variance_ratio": reduced.explained_variance_ratio,
        "min_size": cfg.segmentation.min_size,
    });
    fs::write(out.join("segmentation.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("{} superpixels", seg.count());
    Ok(())
}

fn cmd_scales(args: ScalesArgs) -> Result<()> {
    let mut cfg = scene_config(&args.scene)?;
    if let Some(m) = args.m {
        cfg.scale_select.m = m;
    }
    if args.max_scale.is_some() {
        cfg.scale_select.max_scale = args.max_scale;
    }
    if let Some(s) = args.seed {
        cfg.training.seed = s;
    }
    let out = output_dir(&cfg)?;
    let cube = load_cube_for(&cfg).context("stage `load` failed")?;
    let prepared = pipeline::prepare_scene(&cfg, &cube)?;
    let sel = mobgcn::error::in_stage("scale_select", pipeline::auto_scales(&cfg, &prepared))?;
    fs::create_dir_all(&out)?;
    fs::write(out.join("scale_profile.csv"), sel.profile.to_csv())?;
    fs::write(out.join("scale_profile.ppm"), render::render_curve(&sel.profile.nn_nroc, 200, 400))?;
    fs::write(out.join("optimal_scales.json"), serde_json::to_string_pretty(&sel.optimal)?)?;
    println!("selected resolutions {:?}", sel.optimal.selected);
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = match &args.spec {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?).context("parsing scene spec")?,
        None => SyntheticSceneSpec {
            height: args.height,
            width: args.width,
            bands: args.bands,
            classes: args.classes,
            geometry: match args.voronoi {
                Some(sites) => Geometry::Voronoi { sites },
                None => Geometry::Blocks { rows: args.tiles, cols: args.tiles },
            },
            signatures: None,
            noise_std: args.noise,
        },
    };
    let (cube, gt) = generate_synthetic(&spec, args.seed)?;
    fs::create_dir_all(&args.output)?;
    hsi_io::save_cube(&cube, args.output.join("cube.npy"), CubeFormat::Npy)?;
    hsi_io::save_ground_truth(&gt, args.output.join("gt.npy"), GroundTruthFormat::Npy)?;
    fs::write(args.output.join("spec.json"), serde_json::to_string_pretty(&spec)?)?;
    println!("wrote {}", args.output.display());
    Ok(())
}

fn read_raster(path: &Path) -> Result<(usize, usize, Vec<u32>)> {
    let arr = npy::read_npy(path).with_context(|| format!("reading {}", path.display()))?;
    let [h, w] = arr.shape[..] else { bail!("{} is not a 2-D raster", path.display()) };
    let values = arr
        .to_f64()
        .into_iter()
        .map(|v| if v >= 0.0 && v.fract() == 0.0 { Ok(v as u32) } else { bail!("non-class value {v}") })
        .collect::<Result<Vec<_>>>()?;
    Ok((h, w, values))
}

fn cmd_metrics(args: MetricsArgs) -> Result<()> {
    let (h, w, pred) = read_raster(&args.pred)?;
    let gt = hsi_io::load_ground_truth(&args.gt, args.gt_format.into())?;
    if (gt.height(), gt.width()) != (h, w) {
        bail!("prediction is {h}x{w} but ground truth is {}x{}", gt.height(), gt.width());
    }
    let train = match &args.train_mask {
        Some(path) => read_raster(path)?.2.into_iter().map(|v| v != 0).collect(),
        None => vec![false; h * w],
    };
    let test: Vec<bool> = gt.labels().iter().zip(&train).map(|(&l, &t)| l > 0 && !t).collect();
    let report = compute_metrics(&pred, &gt, &test)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_render(args: RenderArgs) -> Result<()> {
    let (h, w, classes) = read_raster(&args.input)?;
    let count = classes.iter().copied().max().unwrap_or(0) as usize;
    render::render_map(&args.output, h, w, &classes, count)?;
    println!("wrote {}", args.output.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Segment(a) => cmd_segment(a),
        Command::Scales(a) => cmd_scales(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Render(a) => cmd_render(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
