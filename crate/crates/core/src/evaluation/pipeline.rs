use std::collections::BTreeMap;
use std::time::Instant;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baselines::{brute_force_baseline, random_baseline_over, KeypointMatcher, LocalMatcher, PrecomputedMatcher};
use super::{
    build_ground_truth, pr_curve, recall_at_k, AtomicCounters, BestMatch, CostCounters, EvalError, GroundTruthMatrix,
    PrCurve, RecallCurve,
};
use crate::dataio::{load_mask_checked, DatasetManifest, DescriptorSet, KeypointSet};
use crate::geometry::{register_pair, RansacConfig, RegistrationConfig, RegistrationResult, RegistrationStatus, DEFAULT_CHI};
use crate::maskops::WarpedOverlay;
use crate::matching::{extract_features, extract_global, rank_candidates, CorrespondenceSet, FeatureConfig, RerankedMatch, DEFAULT_RATIO};
use crate::raster::GrayRaster;
use crate::retrieval::{retrieve, CandidateSet, SimilarityMatrix, DEFAULT_DENSE_CAP};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Random,
    Bruteforce,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Random => "random",
            BaselineKind::Bruteforce => "bruteforce",
        }
    }
}

/// Everything that influences pipeline results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Candidates kept by global retrieval, and the largest K reported.
    pub k: usize,
    /// Reprojection error threshold, pixels, inclusive.
    pub chi: f64,
    /// Random-baseline trials per query.
    pub n_trials: usize,
    pub seed: u64,
    /// Allow a query to retrieve a database image with the same id.
    pub self_match: bool,
    pub distance_3d: bool,
    pub inlier_only_error: bool,
    /// Extract global and local features from the images instead of
    /// reading the descriptor and keypoint files.
    pub use_builtin_features: bool,
    pub ratio: f32,
    pub features: FeatureConfig,
    pub ransac: RansacConfig,
    pub baselines: Vec<BaselineKind>,
    pub dense_cap: usize,
    pub compute_iou: bool,
    /// Overrides the database manifest radius.
    pub radius_m: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 10,
            chi: DEFAULT_CHI,
            n_trials: 100,
            seed: 42,
            self_match: false,
            distance_3d: false,
            inlier_only_error: false,
            use_builtin_features: false,
            ratio: DEFAULT_RATIO,
            features: FeatureConfig::default(),
            ransac: RansacConfig::default(),
            baselines: Vec::new(),
            dense_cap: DEFAULT_DENSE_CAP,
            compute_iou: true,
            radius_m: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |field, message: &str| {
            Err(EvalError::InvalidConfig {
                field,
                message: message.to_owned(),
            })
        };
        if self.k < 1 {
            return bad("k", "must be at least 1");
        }
        if !(self.chi > 0.0 && self.chi.is_finite()) {
            return bad("chi", "must be a positive number of pixels");
        }
        if self.n_trials < 1 {
            return bad("n_trials", "must be at least 1");
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return bad("ratio", "must lie in (0, 1]");
        }
        if self.radius_m.is_some_and(|r| !(r > 0.0 && r.is_finite())) {
            return bad("radius_m", "must be positive");
        }
        if !(self.ransac.threshold_px > 0.0) || !(0.0..1.0).contains(&self.ransac.confidence) {
            return bad("ransac", "threshold must be positive and confidence in [0, 1)");
        }
        Ok(())
    }

    fn registration(&self) -> RegistrationConfig {
        RegistrationConfig {
            ransac: self.ransac,
            chi: self.chi,
            inlier_only_error: self.inlier_only_error,
        }
    }
}

/// Global descriptors and (optionally) keypoints for one dataset side, in
/// manifest order.
#[derive(Debug, Clone)]
pub struct SideFeatures {
    pub global: DescriptorSet,
    pub local: Option<Vec<KeypointSet>>,
}

fn load_raster(manifest: &DatasetManifest, index: usize) -> Result<GrayRaster> {
    let rec = &manifest.records[index];
    let path = manifest.image_path(index).ok_or_else(|| EvalError::MissingFeatures {
        side: manifest.name.clone(),
        what: "image_dir for built-in features".into(),
    })?;
    let img = GrayRaster::load(&path)?;
    let (w, h) = (rec.width_px as usize, rec.height_px as usize);
    Ok(if img.width() == w && img.height() == h {
        img
    } else {
        img.resized(w, h)
    })
}

/// Loads or computes the features used by the pipeline.
pub fn prepare_features(manifest: &DatasetManifest, builtin: bool, features: &FeatureConfig) -> Result<SideFeatures> {
    if builtin {
        let extracted: Vec<_> = (0..manifest.len())
            .into_par_iter()
            .map(|i| {
                let img = load_raster(manifest, i)?;
                let id = &manifest.records[i].image_id;
                Ok((extract_global(id, &img), extract_features(id, &img, features)))
            })
            .collect::<Result<_>>()?;
        let (global, local): (Vec<_>, Vec<_>) = extracted.into_iter().unzip();
        return Ok(SideFeatures {
            global: DescriptorSet::new(global)?,
            local: Some(local),
        });
    }
    let global = manifest.descriptors.clone().ok_or_else(|| EvalError::MissingFeatures {
        side: manifest.name.clone(),
        what: "descriptor_file".into(),
    })?;
    Ok(SideFeatures {
        global,
        local: manifest.keypoints.clone(),
    })
}

/// Per-query pipeline trace.
#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub query_index: usize,
    /// Global retrieval candidates, ascending distance.
    pub candidates: CandidateSet,
    /// Candidates after reranking by inlier count.
    pub ranked: Vec<RerankedMatch>,
    /// Registration of the best reranked candidate.
    pub registration: Option<RegistrationResult>,
    pub overlay: Option<WarpedOverlay>,
}

impl QueryOutcome {
    pub fn best(&self) -> Option<&RerankedMatch> {
        self.ranked.first()
    }

    pub fn iou(&self) -> Option<f64> {
        self.overlay.as_ref().map(|o| o.iou)
    }
}

/// Counts of registration outcomes over all queries.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistrationSummary {
    pub accepted: usize,
    pub accepted_correct: usize,
    pub rejected_error_above_threshold: usize,
    pub rejected_insufficient_matches: usize,
    pub rejected_degenerate: usize,
    pub no_candidates: usize,
}

/// Deterministic metric set. Wall times are deliberately absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub queries: usize,
    pub database: usize,
    pub queries_with_positives: usize,
    pub radius_m: f64,
    pub recall: BTreeMap<String, RecallCurve>,
    pub pr: BTreeMap<String, PrCurve>,
    pub counters: BTreeMap<String, CostCounters>,
    pub registrations: RegistrationSummary,
    pub mean_iou: Option<f64>,
    pub iou_pairs: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub config: PipelineConfig,
    pub query_ids: Vec<String>,
    pub database_ids: Vec<String>,
    pub ground_truth: GroundTruthMatrix,
    pub similarity: Option<SimilarityMatrix>,
    pub outcomes: Vec<QueryOutcome>,
    pub recall: BTreeMap<String, RecallCurve>,
    pub pr: BTreeMap<String, PrCurve>,
    pub counters: BTreeMap<String, CostCounters>,
    /// Brute-force rankings when that baseline ran.
    pub brute_force: Option<super::BruteForceResult>,
}

impl PipelineOutput {
    /// Registration results in query order.
    pub fn registrations(&self) -> impl Iterator<Item = &RegistrationResult> {
        self.outcomes.iter().filter_map(|o| o.registration.as_ref())
    }

    pub fn hierarchical_counters(&self) -> &CostCounters {
        &self.counters["hierarchical"]
    }

    pub fn metrics(&self) -> Metrics {
        let mut reg = RegistrationSummary::default();
        for o in &self.outcomes {
            let Some(r) = &o.registration else {
                reg.no_candidates += 1;
                continue;
            };
            match r.status {
                RegistrationStatus::Accepted => {
                    reg.accepted += 1;
                    let best = o.best().expect("registered queries have a best match");
                    reg.accepted_correct += usize::from(self.ground_truth.get(best.database_index, o.query_index));
                }
                RegistrationStatus::RejectedErrorAboveThreshold => reg.rejected_error_above_threshold += 1,
                RegistrationStatus::RejectedInsufficientMatches => reg.rejected_insufficient_matches += 1,
                RegistrationStatus::RejectedDegenerate => reg.rejected_degenerate += 1,
            }
        }
        let ious: Vec<f64> = self.outcomes.iter().filter_map(QueryOutcome::iou).collect();
        Metrics {
            queries: self.query_ids.len(),
            database: self.database_ids.len(),
            queries_with_positives: self.ground_truth.queries_with_positives(),
            radius_m: self.ground_truth.radius_m,
            recall: self.recall.clone(),
            pr: self.pr.clone(),
            counters: self.counters.clone(),
            registrations: reg,
            mean_iou: (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64),
            iou_pairs: ious.len(),
        }
    }

    /// Wall-clock seconds per variant and stage.
    pub fn timings(&self) -> BTreeMap<String, BTreeMap<String, f64>> {
        self.counters
            .iter()
            .map(|(k, c)| (k.clone(), c.wall_time_s.clone()))
            .collect()
    }
}

/// Radius ground truth for two manifests under `cfg`: the database radius
/// unless overridden, and same-id pairs cleared unless self matches are
/// allowed.
pub fn ground_truth_for(query: &DatasetManifest, database: &DatasetManifest, cfg: &PipelineConfig) -> Result<GroundTruthMatrix> {
    let radius = cfg.radius_m.unwrap_or(database.localization_radius_m);
    let mut gt = build_ground_truth(&query.positions(), &database.positions(), radius, cfg.distance_3d)?;
    if !cfg.self_match {
        for (i, q) in query.records.iter().enumerate() {
            for (j, d) in database.records.iter().enumerate() {
                if q.image_id == d.image_id {
                    gt.set(j, i, false);
                }
            }
        }
    }
    Ok(gt)
}

fn ids(m: &DatasetManifest) -> Vec<String> {
    m.records.iter().map(|r| r.image_id.clone()).collect()
}

fn overlay_for(query: &DatasetManifest, database: &DatasetManifest, i: usize, j: usize, r: &RegistrationResult) -> Option<WarpedOverlay> {
    let h = r.homography.as_ref()?;
    let (qr, dr) = (&query.records[i], &database.records[j]);
    let (qp, dp) = (qr.mask_path.as_ref()?, dr.mask_path.as_ref()?);
    let masks = load_mask_checked(qp, qr.width_px, qr.height_px)
        .and_then(|q| Ok((q, load_mask_checked(dp, dr.width_px, dr.height_px)?)));
    match masks {
        Ok((qm, dm)) => Some(WarpedOverlay::new(&qm, dm, h)),
        Err(e) => {
            warn!("skipping IoU for {} / {}: {e}", qr.image_id, dr.image_id);
            None
        }
    }
}

/// Runs retrieval, reranking, registration, the threshold filter, mask IoU
/// and the requested baselines.
///
/// `correspondences`, when given, replaces keypoint matching; pairs absent
/// from it have no correspondences. A query whose registration fails is
/// recorded with its failure status and never aborts the run.
pub fn run_pipeline(
    query: &DatasetManifest,
    database: &DatasetManifest,
    correspondences: Option<Vec<CorrespondenceSet>>,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    let query_ids = ids(query);
    let database_ids = ids(database);
    let exclude = |i: usize, j: usize| !cfg.self_match && query_ids[i] == database_ids[j];

    let gt = ground_truth_for(query, database, cfg)?;

    let mut hier = CostCounters::default();
    let t = Instant::now();
    let qf = prepare_features(query, cfg.use_builtin_features, &cfg.features)?;
    let df = prepare_features(database, cfg.use_builtin_features, &cfg.features)?;
    hier.add_time("features", t.elapsed().as_secs_f64());

    let keypoint_matcher;
    let precomputed;
    let matcher: &dyn LocalMatcher = match (correspondences, &qf.local, &df.local) {
        (Some(sets), _, _) => {
            precomputed = PrecomputedMatcher::new(query_ids.clone(), database_ids.clone(), sets);
            &precomputed
        }
        (None, Some(q), Some(d)) => {
            keypoint_matcher = KeypointMatcher {
                query: q,
                database: d,
                ratio: cfg.ratio,
            };
            &keypoint_matcher
        }
        (None, q, _) => {
            let side = if q.is_none() { &query.name } else { &database.name };
            return Err(EvalError::MissingFeatures {
                side: side.clone(),
                what: "keypoints or correspondences".into(),
            }
            .into());
        }
    };

    let t = Instant::now();
    let (similarity, candidates) = retrieve(&qf.global, &df.global, cfg.k, cfg.dense_cap, exclude)?;
    hier.global_descriptor_comparisons = (query.len() * database.len()) as u64;
    hier.add_time("retrieval", t.elapsed().as_secs_f64());
    info!("retrieved top-{} for {} queries", cfg.k, query.len());

    let counters = AtomicCounters::default();
    let reg_cfg = cfg.registration();
    let t = Instant::now();
    let outcomes: Vec<QueryOutcome> = candidates
        .into_par_iter()
        .map(|cands| {
            let i = cands.query_index;
            let mut sets = Vec::with_capacity(cands.len());
            for &(j, _) in &cands.entries {
                counters.add_local(1);
                sets.push(matcher.correspondences(i, j)?);
            }
            let counts: Vec<usize> = sets.iter().map(CorrespondenceSet::len).collect();
            let ranked = rank_candidates(&cands, &counts);
            let registration = ranked.first().map(|best| {
                let pos = cands
                    .entries
                    .iter()
                    .position(|e| e.0 == best.database_index)
                    .expect("best match is a candidate");
                register_pair(&sets[pos], &reg_cfg, cfg.seed)
            });
            let overlay = match (&registration, ranked.first()) {
                (Some(r), Some(best)) if cfg.compute_iou && r.is_accepted() => {
                    overlay_for(query, database, i, best.database_index, r)
                }
                _ => None,
            };
            if let Some(r) = &registration {
                debug!("{} -> {}: {:?}", r.query_id, r.database_id, r.status);
            }
            Ok(QueryOutcome {
                query_index: i,
                candidates: cands,
                ranked,
                registration,
                overlay,
            })
        })
        .collect::<Result<_>>()?;
    let local = counters.snapshot();
    hier.local_match_invocations = local.local_match_invocations;
    hier.add_time("matching_registration", t.elapsed().as_secs_f64());

    let mut recall = BTreeMap::new();
    let mut pr = BTreeMap::new();
    let global_rank: Vec<Vec<usize>> = outcomes.iter().map(|o| o.candidates.indices()).collect();
    let hier_rank: Vec<Vec<usize>> = outcomes
        .iter()
        .map(|o| o.ranked.iter().map(|m| m.database_index).collect())
        .collect();
    recall.insert("global".to_owned(), recall_at_k(&global_rank, &gt, cfg.k));
    recall.insert("hierarchical".to_owned(), recall_at_k(&hier_rank, &gt, cfg.k));
    let global_best: Vec<BestMatch> = outcomes
        .iter()
        .filter_map(|o| {
            o.candidates.entries.first().map(|&(j, d)| BestMatch {
                query_index: o.query_index,
                database_index: j,
                score: -d,
            })
        })
        .collect();
    let hier_best: Vec<BestMatch> = outcomes
        .iter()
        .filter(|o| o.registration.as_ref().is_some_and(RegistrationResult::is_accepted))
        .filter_map(|o| {
            o.best().map(|b| BestMatch {
                query_index: o.query_index,
                database_index: b.database_index,
                score: b.inlier_count as f64,
            })
        })
        .collect();
    pr.insert("global".to_owned(), pr_curve(&global_best, &gt));
    pr.insert("hierarchical".to_owned(), pr_curve(&hier_best, &gt));

    let mut all_counters = BTreeMap::from([("hierarchical".to_owned(), hier)]);
    let mut brute_force = None;
    let mut kinds = cfg.baselines.clone();
    kinds.sort();
    kinds.dedup();
    for kind in kinds {
        let t = Instant::now();
        match kind {
            BaselineKind::Random => {
                let pool = |i: usize| (0..database.len()).filter(|&j| !exclude(i, j)).collect();
                recall.insert(kind.name().to_owned(), random_baseline_over(&gt, cfg.k, cfg.n_trials, cfg.seed, pool));
            }
            BaselineKind::Bruteforce => {
                let bf = brute_force_baseline(query.len(), database.len(), matcher, exclude).map_err(Error::from)?;
                recall.insert(kind.name().to_owned(), recall_at_k(&bf.rankings, &gt, cfg.k));
                let best: Vec<BestMatch> = bf
                    .rankings
                    .iter()
                    .zip(&bf.inlier_counts)
                    .enumerate()
                    .filter_map(|(i, (r, c))| {
                        r.first().map(|&j| BestMatch {
                            query_index: i,
                            database_index: j,
                            score: c[0] as f64,
                        })
                    })
                    .collect();
                pr.insert(kind.name().to_owned(), pr_curve(&best, &gt));
                let mut c = bf.counters.clone();
                c.add_time("matching", t.elapsed().as_secs_f64());
                all_counters.insert(kind.name().to_owned(), c);
                brute_force = Some(bf);
            }
        }
        info!("{} baseline done in {:.2?}", kind.name(), t.elapsed());
    }

    Ok(PipelineOutput {
        config: cfg.clone(),
        query_ids,
        database_ids,
        ground_truth: gt,
        similarity,
        outcomes,
        recall,
        pr,
        counters: all_counters,
        brute_force,
    })
}
