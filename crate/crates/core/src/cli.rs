//! Command-line front end: `run`, `baseline`, `synth`, `extract`, `gt`, `iou`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{
    load_manifest, load_mask_checked, read_correspondences, resize_policy, write_descriptors, write_keypoints,
    DataError, DatasetManifest, DescriptorSet,
};
use crate::evaluation::{
    brute_force_baseline, ground_truth_for, pr_curve, prepare_features, random_baseline_over, recall_at_k,
    run_pipeline, BaselineKind, BestMatch, KeypointMatcher, LocalMatcher, Metrics, PipelineConfig, PipelineOutput,
    PrCurve, PrecomputedMatcher, RecallCurve,
};
use crate::geometry::RegistrationResult;
use crate::maskops::{OverlayColors, WarpedOverlay};
use crate::matching::{extract_features, extract_global, FeatureConfig};
use crate::raster::GrayRaster;
use crate::synth::{export_dataset, generate_survey, Pattern, SurveyParams};
use crate::{Error, Result};

/// Environment variable consulted for the seed when `--seed` is absent.
pub const SEED_ENV: &str = "UNDERLOC_SEED";

#[derive(Debug, Parser)]
#[command(name = "underloc", version, about = "Hierarchical place recognition and registration for survey imagery")]
pub struct Cli {
    /// Caps the worker threads used by parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Retrieval, reranking, registration, filtering and mask IoU.
    Run(RunArgs),
    /// A reference baseline on its own.
    Baseline(BaselineArgs),
    /// Render a synthetic survey dataset.
    Synth(SynthArgs),
    /// Built-in global descriptors and keypoints for a directory of images.
    Extract(ExtractArgs),
    /// Ground-truth matrix as CSV.
    Gt(GtArgs),
    /// Mask warp and IoU for a registration file.
    Iou(IouArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    Random,
    Bruteforce,
}

impl From<BaselineArg> for BaselineKind {
    fn from(b: BaselineArg) -> Self {
        match b {
            BaselineArg::Random => BaselineKind::Random,
            BaselineArg::Bruteforce => BaselineKind::Bruteforce,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    #[arg(long)]
    pub query: Option<PathBuf>,
    #[arg(long)]
    pub database: Option<PathBuf>,
    /// Precomputed correspondences (ULC1) replacing keypoint matching.
    #[arg(long)]
    pub correspondences: Option<PathBuf>,
    /// Start from a saved `config.json`; explicit flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(short = 'K', long = "k")]
    pub k: Option<usize>,
    #[arg(long)]
    pub chi: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub ratio: Option<f32>,
    /// Overrides the database manifest localization radius, meters.
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub self_match: bool,
    #[arg(long)]
    pub use_builtin_features: bool,
    #[arg(long)]
    pub distance_3d: bool,
    #[arg(long)]
    pub inlier_only_error: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Additional baselines to report next to the pipeline.
    #[arg(long, value_enum)]
    pub baseline: Vec<BaselineArg>,
    #[arg(long)]
    pub no_iou: bool,
    /// Also write the similarity matrix (ULS1).
    #[arg(long)]
    pub dump_similarity: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum)]
    pub kind: BaselineArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PatternArg {
    Lawnmower,
    Transect,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Survey parameters as JSON; flags override individual fields.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub pattern: Option<PatternArg>,
    /// Views per pass.
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub overlap: Option<f64>,
    #[arg(long)]
    pub passes: Option<usize>,
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub gain: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub haze: Option<f64>,
    /// Skip writing built-in feature files.
    #[arg(long)]
    pub no_features: bool,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Directory of PGM, PNG or JPEG images; ids are file stems.
    #[arg(long)]
    pub images: PathBuf,
    /// Downscale to fit 640x480 first.
    #[arg(long)]
    pub resize: bool,
    /// Writes `global.uld` and `keypoints.ulk` here.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GtArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// CSV destination.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IouArgs {
    #[arg(long)]
    pub query: PathBuf,
    #[arg(long)]
    pub database: PathBuf,
    /// `registrations.jsonl` from a run.
    #[arg(long)]
    pub registrations: PathBuf,
    /// Include rejected pairs that still have a homography.
    #[arg(long)]
    pub all: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Resolved, reproducible configuration of a run. Written to `config.json`
/// and echoed in `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub query: PathBuf,
    pub database: PathBuf,
    #[serde(default)]
    pub correspondences: Option<PathBuf>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
}

fn config_error(message: impl Into<String>) -> Error {
    Error::Config(message.into())
}

impl InputArgs {
    /// Defaults, then the config file, then `UNDERLOC_SEED` (only without a
    /// config file), then explicit flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut rc = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::Io {
                    context: path.display().to_string(),
                    source: e,
                })?;
                serde_json::from_str::<RunConfig>(&text)
                    .map_err(|e| config_error(format!("{}: {e}", path.display())))?
            }
            None => {
                let missing = |flag: &str| config_error(format!("--{flag} is required without --config"));
                let mut pipeline = PipelineConfig::default();
                if let Ok(v) = std::env::var(SEED_ENV) {
                    pipeline.seed = v
                        .trim()
                        .parse()
                        .map_err(|_| config_error(format!("{SEED_ENV}: not an unsigned integer: {v:?}")))?;
                }
                RunConfig {
                    query: self.query.clone().ok_or_else(|| missing("query"))?,
                    database: self.database.clone().ok_or_else(|| missing("database"))?,
                    correspondences: None,
                    pipeline,
                }
            }
        };
        let p = &mut rc.pipeline;
        if let Some(q) = &self.query {
            rc.query = q.clone();
        }
        if let Some(d) = &self.database {
            rc.database = d.clone();
        }
        if let Some(c) = &self.correspondences {
            rc.correspondences = Some(c.clone());
        }
        if let Some(k) = self.k {
            p.k = k;
        }
        if let Some(chi) = self.chi {
            p.chi = chi;
        }
        if let Some(n) = self.trials {
            p.n_trials = n;
        }
        if let Some(s) = self.seed {
            p.seed = s;
        }
        if let Some(r) = self.ratio {
            p.ratio = r;
        }
        if self.radius.is_some() {
            p.radius_m = self.radius;
        }
        p.self_match |= self.self_match;
        p.use_builtin_features |= self.use_builtin_features;
        p.distance_3d |= self.distance_3d;
        p.inlier_only_error |= self.inlier_only_error;
        p.validate()?;
        Ok(rc)
    }
}

struct Inputs {
    query: DatasetManifest,
    database: DatasetManifest,
    correspondences: Option<Vec<crate::matching::CorrespondenceSet>>,
}

fn load_inputs(rc: &RunConfig) -> Result<Inputs> {
    let query = load_manifest(&rc.query)?;
    let database = load_manifest(&rc.database)?;
    let correspondences = rc.correspondences.as_deref().map(read_correspondences).transpose()?;
    Ok(Inputs {
        query,
        database,
        correspondences,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io {
        context: path.display().to_string(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        context: path.display().to_string(),
        source: e,
    })
}

/// One row per K, one column per series.
pub fn recall_csv(recall: &BTreeMap<String, RecallCurve>) -> String {
    let mut out = String::from("k");
    for name in recall.keys() {
        write!(out, ",{name}").unwrap();
    }
    out.push('\n');
    let k_max = recall.values().map(RecallCurve::k_max).max().unwrap_or(0);
    for k in 1..=k_max {
        write!(out, "{k}").unwrap();
        for curve in recall.values() {
            match curve.values.get(k - 1) {
                Some(v) => write!(out, ",{v}").unwrap(),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Long format: one row per series and threshold.
pub fn pr_csv(pr: &BTreeMap<String, PrCurve>) -> String {
    let mut out = String::from("series,threshold,precision,recall\n");
    for (name, curve) in pr {
        for p in &curve.points {
            writeln!(out, "{name},{},{},{}", p.threshold, p.precision, p.recall).unwrap();
        }
    }
    out
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    config: &'a RunConfig,
    #[serde(flatten)]
    metrics: &'a Metrics,
}

fn registrations_jsonl(out: &PipelineOutput) -> Result<String> {
    let mut s = String::new();
    for r in out.registrations() {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

fn overlay_name(query_id: &str, database_id: &str) -> String {
    format!("{query_id}__{database_id}.ppm")
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let mut rc = args.input.resolve()?;
    for b in &args.baseline {
        rc.pipeline.baselines.push((*b).into());
    }
    rc.pipeline.baselines.sort();
    rc.pipeline.baselines.dedup();
    if args.no_iou {
        rc.pipeline.compute_iou = false;
    }
    let inputs = load_inputs(&rc)?;
    create_dir(&args.out)?;
    let output = run_pipeline(&inputs.query, &inputs.database, inputs.correspondences, &rc.pipeline)?;
    write_outputs(&rc, &output, &args.out)?;
    if args.dump_similarity {
        if let Some(s) = &output.similarity {
            s.write(&args.out.join("similarity.uls"))?;
        }
    }
    let m = output.metrics();
    info!(
        "R@1 hierarchical {:.3}, accepted {} of {} queries",
        m.recall["hierarchical"].values.first().copied().unwrap_or(0.0),
        m.registrations.accepted,
        m.queries
    );
    Ok(())
}

/// Writes every artifact of a pipeline run into `dir`.
pub fn write_outputs(rc: &RunConfig, output: &PipelineOutput, dir: &Path) -> Result<()> {
    let metrics = output.metrics();
    let file = MetricsFile {
        config: rc,
        metrics: &metrics,
    };
    write_file(&dir.join("metrics.json"), serde_json::to_string_pretty(&file)? + "\n")?;
    write_file(&dir.join("config.json"), serde_json::to_string_pretty(rc)? + "\n")?;
    write_file(&dir.join("recall.csv"), recall_csv(&metrics.recall))?;
    write_file(&dir.join("pr.csv"), pr_csv(&metrics.pr))?;
    write_file(&dir.join("registrations.jsonl"), registrations_jsonl(output)?)?;
    write_file(&dir.join("timing.json"), serde_json::to_string_pretty(&output.timings())? + "\n")?;
    let overlays: Vec<_> = output
        .outcomes
        .iter()
        .filter_map(|o| Some((o.registration.as_ref()?, o.overlay.as_ref()?)))
        .collect();
    if !overlays.is_empty() {
        let odir = dir.join("overlays");
        create_dir(&odir)?;
        let colors = OverlayColors::default();
        for (r, ov) in overlays {
            ov.write_ppm(&odir.join(overlay_name(&r.query_id, &r.database_id)), &colors)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct BaselineFile<'a> {
    config: &'a RunConfig,
    kind: BaselineKind,
    recall: &'a RecallCurve,
    #[serde(skip_serializing_if = "Option::is_none")]
    pr: Option<&'a PrCurve>,
    #[serde(skip_serializing_if = "Option::is_none")]
    local_match_invocations: Option<u64>,
}

fn cmd_baseline(args: &BaselineArgs) -> Result<()> {
    let mut rc = args.input.resolve()?;
    let kind: BaselineKind = args.kind.into();
    rc.pipeline.baselines = vec![kind];
    let inputs = load_inputs(&rc)?;
    let cfg = &rc.pipeline;
    let gt = ground_truth_for(&inputs.query, &inputs.database, cfg)?;
    let q_ids: Vec<String> = inputs.query.records.iter().map(|r| r.image_id.clone()).collect();
    let d_ids: Vec<String> = inputs.database.records.iter().map(|r| r.image_id.clone()).collect();
    let exclude = |i: usize, j: usize| !cfg.self_match && q_ids[i] == d_ids[j];
    let (recall, pr, invocations) = match kind {
        BaselineKind::Random => {
            let pool = |i: usize| (0..d_ids.len()).filter(|&j| !exclude(i, j)).collect();
            (random_baseline_over(&gt, cfg.k, cfg.n_trials, cfg.seed, pool), None, None)
        }
        BaselineKind::Bruteforce => {
            let keypoint_sides;
            let precomputed;
            let matcher: &dyn LocalMatcher = match inputs.correspondences {
                Some(sets) => {
                    precomputed = PrecomputedMatcher::new(q_ids.clone(), d_ids.clone(), sets);
                    &precomputed
                }
                None => {
                    let qf = prepare_features(&inputs.query, cfg.use_builtin_features, &cfg.features)?;
                    let df = prepare_features(&inputs.database, cfg.use_builtin_features, &cfg.features)?;
                    keypoint_sides = match (qf.local, df.local) {
                        (Some(q), Some(d)) => (q, d),
                        _ => return Err(config_error("brute force needs keypoints or --correspondences")),
                    };
                    &KeypointMatcher {
                        query: &keypoint_sides.0,
                        database: &keypoint_sides.1,
                        ratio: cfg.ratio,
                    }
                }
            };
            let bf = brute_force_baseline(q_ids.len(), d_ids.len(), matcher, exclude)?;
            let best: Vec<BestMatch> = bf
                .rankings
                .iter()
                .zip(&bf.inlier_counts)
                .enumerate()
                .filter_map(|(i, (r, c))| {
                    Some(BestMatch {
                        query_index: i,
                        database_index: *r.first()?,
                        score: c[0] as f64,
                    })
                })
                .collect();
            (
                recall_at_k(&bf.rankings, &gt, cfg.k),
                Some(pr_curve(&best, &gt)),
                Some(bf.counters.local_match_invocations),
            )
        }
    };
    create_dir(&args.out)?;
    let file = BaselineFile {
        config: &rc,
        kind,
        recall: &recall,
        pr: pr.as_ref(),
        local_match_invocations: invocations,
    };
    write_file(&args.out.join("metrics.json"), serde_json::to_string_pretty(&file)? + "\n")?;
    let name = kind.name().to_owned();
    write_file(&args.out.join("recall.csv"), recall_csv(&BTreeMap::from([(name.clone(), recall)])))?;
    if let Some(pr) = pr {
        write_file(&args.out.join("pr.csv"), pr_csv(&BTreeMap::from([(name, pr)])))?;
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut p = match &args.params {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io {
                context: path.display().to_string(),
                source: e,
            })?;
            serde_json::from_str::<SurveyParams>(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?
        }
        None => SurveyParams::default(),
    };
    if let Some(s) = args.seed {
        p.seed = s;
    }
    if let Some(pat) = args.pattern {
        p.pattern = match pat {
            PatternArg::Lawnmower => Pattern::Lawnmower,
            PatternArg::Transect => Pattern::Transect,
        };
    }
    if let Some(v) = args.views {
        p.n_views = v;
    }
    if let Some(o) = args.overlap {
        p.overlap_fraction = o;
    }
    if let Some(n) = args.passes {
        p.passes = n;
    }
    if let Some(j) = args.jitter {
        p.revisit_jitter_px = j;
    }
    if let Some(g) = args.gain {
        p.perturbation.brightness_gain = g;
    }
    if let Some(n) = args.noise {
        p.perturbation.additive_noise_sigma = n;
    }
    if let Some(h) = args.haze {
        p.perturbation.haze_strength = h;
    }
    let survey = generate_survey(&p)?;
    create_dir(&args.out)?;
    let features = (!args.no_features).then(FeatureConfig::default);
    let out = export_dataset(&survey, &args.out, features.as_ref())?;
    info!(
        "wrote {} views: {} and {}",
        survey.views.len(),
        out.database_manifest.display(),
        out.query_manifest.display()
    );
    Ok(())
}

fn cmd_extract(args: &ExtractArgs) -> Result<()> {
    let entries = fs::read_dir(&args.images).map_err(|e| Error::Io {
        context: args.images.display().to_string(),
        source: e,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    let cfg = FeatureConfig::default();
    let extracted: Vec<_> = files
        .par_iter()
        .map(|path| -> Result<_> {
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_owned();
            let mut img = GrayRaster::load(path)?;
            if args.resize {
                let (w, h) = resize_policy(img.width() as u32, img.height() as u32);
                img = img.resized(w as usize, h as usize);
            }
            Ok((extract_global(&id, &img), extract_features(&id, &img, &cfg)))
        })
        .collect::<Result<_>>()?;
    let (global, local): (Vec<_>, Vec<_>) = extracted.into_iter().unzip();
    create_dir(&args.out)?;
    write_descriptors(&args.out.join("global.uld"), &DescriptorSet::new(global)?)?;
    write_keypoints(&args.out.join("keypoints.ulk"), &local)?;
    info!("extracted features for {} images", files.len());
    Ok(())
}

fn cmd_gt(args: &GtArgs) -> Result<()> {
    let rc = args.input.resolve()?;
    let query = load_manifest(&rc.query)?;
    let database = load_manifest(&rc.database)?;
    let gt = ground_truth_for(&query, &database, &rc.pipeline)?;
    let ids = |m: &DatasetManifest| m.records.iter().map(|r| r.image_id.clone()).collect::<Vec<_>>();
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(&args.out, gt.to_csv(&ids(&database), &ids(&query)))
}

fn cmd_iou(args: &IouArgs) -> Result<()> {
    let query = load_manifest(&args.query)?;
    let database = load_manifest(&args.database)?;
    let text = fs::read_to_string(&args.registrations).map_err(|e| Error::Io {
        context: args.registrations.display().to_string(),
        source: e,
    })?;
    let odir = args.out.join("overlays");
    create_dir(&odir)?;
    let colors = OverlayColors::default();
    let mut csv = String::from("query_id,database_id,iou\n");
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: RegistrationResult = serde_json::from_str(line).map_err(|e| {
            DataError::parse(format!("{}:{}", args.registrations.display(), n + 1), e.to_string())
        })?;
        let Some(h) = r.homography.as_ref().filter(|_| args.all || r.is_accepted()) else {
            continue;
        };
        let lookup = |m: &DatasetManifest, id: &str| {
            m.index_of(id)
                .map(|i| m.records[i].clone())
                .ok_or_else(|| config_error(format!("{}: unknown image id {id}", args.registrations.display())))
        };
        let (qr, dr) = (lookup(&query, &r.query_id)?, lookup(&database, &r.database_id)?);
        let (Some(qp), Some(dp)) = (&qr.mask_path, &dr.mask_path) else {
            continue;
        };
        let qm = load_mask_checked(qp, qr.width_px, qr.height_px)?;
        let dm = load_mask_checked(dp, dr.width_px, dr.height_px)?;
        let ov = WarpedOverlay::new(&qm, dm, h);
        ov.write_ppm(&odir.join(overlay_name(&r.query_id, &r.database_id)), &colors)?;
        writeln!(csv, "{},{},{}", r.query_id, r.database_id, ov.iou).unwrap();
    }
    write_file(&args.out.join("iou.csv"), csv)
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| config_error(format!("--threads: {e}")))?;
    }
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Gt(a) => cmd_gt(a),
        Command::Iou(a) => cmd_iou(a),
    }
}

/// Parses `std::env::args`, runs, and returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
