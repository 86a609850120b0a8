use std::ops::Range;

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::world::{Bounds, World};
use super::SynthError;
use crate::dataio::{BinaryMask, GeoPosition, ImageRecord};
use crate::evaluation::GroundTruthMatrix;
use crate::geometry::Homography;
use crate::raster::GrayRaster;
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    /// Back-and-forth rows covering an area.
    Lawnmower,
    /// A single straight line.
    Transect,
}

/// Photometric change applied to revisit passes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Perturbation {
    /// Multiplies intensities.
    pub brightness_gain: f64,
    /// Standard deviation of additive Gaussian noise, intensity units.
    pub additive_noise_sigma: f64,
    /// Blend weight towards a uniform veil.
    pub haze_strength: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self {
            brightness_gain: 1.0,
            additive_noise_sigma: 0.0,
            haze_strength: 0.0,
        }
    }
}

impl Perturbation {
    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }
}

const HAZE_LEVEL: f64 = 0.55;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveyParams {
    pub seed: u64,
    pub pattern: Pattern,
    /// Views per pass.
    pub n_views: usize,
    /// Shared area between consecutive views along and across track.
    pub overlap_fraction: f64,
    /// Pass 0 is the reference survey; later passes revisit it.
    pub passes: usize,
    /// Lawnmower row length; defaults to `ceil(sqrt(n_views))`.
    pub views_per_row: Option<usize>,
    pub view_width: usize,
    pub view_height: usize,
    pub meters_per_px: f64,
    /// Revisit positions are shifted by a whole number of pixels drawn
    /// uniformly from `[-jitter, jitter]` on each axis.
    pub revisit_jitter_px: f64,
    pub revisit_yaw_jitter_rad: f64,
    /// Relative scale change of revisits, e.g. `0.05` for up to 5%.
    pub revisit_scale_jitter: f64,
    pub perturbation: Perturbation,
    pub organism_density: f64,
    /// Explicit world extent in meters; views must fit inside it.
    pub world_bounds: Option<Bounds>,
    /// Samples per pixel side when rendering.
    pub supersample: usize,
    /// Ground-truth radius written to the manifests. Defaults to half the
    /// smaller view spacing.
    pub radius_m: Option<f64>,
}

impl Default for SurveyParams {
    fn default() -> Self {
        Self {
            seed: 42,
            pattern: Pattern::Lawnmower,
            n_views: 36,
            overlap_fraction: 0.5,
            passes: 2,
            views_per_row: None,
            view_width: 160,
            view_height: 120,
            meters_per_px: 0.01,
            revisit_jitter_px: 0.0,
            revisit_yaw_jitter_rad: 0.0,
            revisit_scale_jitter: 0.0,
            perturbation: Perturbation::default(),
            organism_density: 2.0,
            world_bounds: None,
            supersample: 2,
            radius_m: None,
        }
    }
}

impl SurveyParams {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidParameters(m.to_owned()));
        if self.n_views < 2 && self.passes < 2 {
            return bad("need at least two views");
        }
        if self.n_views < 1 || self.passes < 1 {
            return bad("n_views and passes must be at least 1");
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return bad("overlap_fraction must lie in [0, 1)");
        }
        if self.view_width < 16 || self.view_height < 16 {
            return bad("views must be at least 16x16 pixels");
        }
        if !(self.meters_per_px > 0.0) || self.supersample < 1 {
            return bad("meters_per_px and supersample must be positive");
        }
        if self.perturbation.brightness_gain <= 0.0
            || self.perturbation.additive_noise_sigma < 0.0
            || !(0.0..=1.0).contains(&self.perturbation.haze_strength)
        {
            return bad("perturbation out of range");
        }
        if self.revisit_scale_jitter.abs() >= 0.5 {
            return bad("revisit_scale_jitter must be below 0.5");
        }
        Ok(())
    }

    /// Along-track and cross-track spacing in pixels.
    pub fn spacing_px(&self) -> [f64; 2] {
        let s = |len: usize| (len as f64 * (1.0 - self.overlap_fraction)).round().max(1.0);
        [s(self.view_width), s(self.view_height)]
    }

    pub fn radius(&self) -> f64 {
        self.radius_m.unwrap_or_else(|| {
            let sp = self.spacing_px();
            let min = match self.pattern {
                Pattern::Transect => sp[0],
                Pattern::Lawnmower => sp[0].min(sp[1]),
            };
            0.5 * min * self.meters_per_px
        })
    }
}

/// View placement in world pixel units (world meters / meters_per_px).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewPose {
    pub center_px: [f64; 2],
    pub yaw_rad: f64,
    /// World pixels per view pixel.
    pub scale: f64,
}

impl ViewPose {
    /// Maps continuous view pixel coordinates to world pixel coordinates.
    pub fn view_to_world(&self, width: usize, height: usize) -> Matrix3<f64> {
        let (sn, c) = self.yaw_rad.sin_cos();
        let s = self.scale;
        let (hw, hh) = (width as f64 / 2.0, height as f64 / 2.0);
        Matrix3::new(
            s * c,
            -s * sn,
            self.center_px[0] - s * (c * hw - sn * hh),
            s * sn,
            s * c,
            self.center_px[1] - s * (sn * hw + c * hh),
            0.0,
            0.0,
            1.0,
        )
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticView {
    pub record: ImageRecord,
    pub pass: usize,
    pub pose: ViewPose,
    pub image: GrayRaster,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone)]
pub struct SyntheticSurvey {
    pub params: SurveyParams,
    pub world: World,
    /// Pass-major order: all of pass 0, then pass 1, ...
    pub views: Vec<SyntheticView>,
}

fn trajectory(p: &SurveyParams) -> Vec<[f64; 2]> {
    let [sx, sy] = p.spacing_px();
    let per_row = match p.pattern {
        Pattern::Transect => p.n_views,
        Pattern::Lawnmower => p
            .views_per_row
            .unwrap_or_else(|| (p.n_views as f64).sqrt().ceil() as usize)
            .max(1),
    };
    (0..p.n_views)
        .map(|k| {
            let (row, mut col) = (k / per_row, k % per_row);
            if row % 2 == 1 {
                col = per_row - 1 - col;
            }
            [
                col as f64 * sx + (p.view_width / 2) as f64,
                row as f64 * sy + (p.view_height / 2) as f64,
            ]
        })
        .collect()
}

fn corners(pose: &ViewPose, w: usize, h: usize) -> [[f64; 2]; 4] {
    let m = pose.view_to_world(w, h);
    let (w, h) = (w as f64, h as f64);
    [[0.0, 0.0], [w, 0.0], [0.0, h], [w, h]].map(|[x, y]| [m[(0, 0)] * x + m[(0, 1)] * y + m[(0, 2)], m[(1, 0)] * x + m[(1, 1)] * y + m[(1, 2)]])
}

fn render(world: &World, pose: &ViewPose, p: &SurveyParams) -> (GrayRaster, BinaryMask) {
    let m = pose.view_to_world(p.view_width, p.view_height);
    let mpp = p.meters_per_px;
    let to_world = |x: f64, y: f64| {
        [
            (m[(0, 0)] * x + m[(0, 1)] * y + m[(0, 2)]) * mpp,
            (m[(1, 0)] * x + m[(1, 1)] * y + m[(1, 2)]) * mpp,
        ]
    };
    let ss = p.supersample;
    let rows: Vec<Vec<f32>> = (0..p.view_height)
        .into_par_iter()
        .map(|r| {
            (0..p.view_width)
                .map(|c| {
                    let mut acc = 0.0;
                    for a in 0..ss {
                        for b in 0..ss {
                            let x = c as f64 + (a as f64 + 0.5) / ss as f64;
                            let y = r as f64 + (b as f64 + 0.5) / ss as f64;
                            acc += world.intensity(to_world(x, y));
                        }
                    }
                    (acc / (ss * ss) as f64) as f32
                })
                .collect()
        })
        .collect();
    let image = GrayRaster::new(p.view_width, p.view_height, rows.concat());
    let mask = BinaryMask::from_fn(p.view_width, p.view_height, |c, r| {
        world.in_organism(to_world(c as f64 + 0.5, r as f64 + 0.5))
    });
    (image, mask)
}

fn perturb(img: &GrayRaster, pert: &Perturbation, seed: u64) -> GrayRaster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (pert.additive_noise_sigma > 0.0).then(|| Normal::new(0.0, pert.additive_noise_sigma).expect("sigma checked"));
    let mut out = img.clone();
    for r in 0..img.height() {
        for c in 0..img.width() {
            let mut v = pert.brightness_gain * f64::from(img.get(c, r));
            v = (1.0 - pert.haze_strength) * v + pert.haze_strength * HAZE_LEVEL;
            if let Some(n) = &noise {
                v += n.sample(&mut rng);
            }
            out.set(c, r, v.clamp(0.0, 1.0) as f32);
        }
    }
    out
}

/// Renders a seeded multi-pass survey.
///
/// Pass 0 follows the nominal trajectory; later passes revisit every
/// station with optional pose jitter and photometric perturbation.
pub fn generate_survey(params: &SurveyParams) -> Result<SyntheticSurvey, SynthError> {
    params.validate()?;
    let p = params;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(p.seed, &["trajectory"]));
    let nominal = trajectory(p);
    let mut poses = Vec::with_capacity(p.n_views * p.passes);
    for pass in 0..p.passes {
        for center in &nominal {
            let mut pose = ViewPose {
                center_px: *center,
                yaw_rad: 0.0,
                scale: 1.0,
            };
            if pass > 0 {
                let j = p.revisit_jitter_px;
                if j > 0.0 {
                    pose.center_px[0] += rng.random_range(-j..=j).round();
                    pose.center_px[1] += rng.random_range(-j..=j).round();
                }
                if p.revisit_yaw_jitter_rad > 0.0 {
                    pose.yaw_rad = rng.random_range(-p.revisit_yaw_jitter_rad..=p.revisit_yaw_jitter_rad);
                }
                if p.revisit_scale_jitter > 0.0 {
                    pose.scale = 1.0 + rng.random_range(-p.revisit_scale_jitter..=p.revisit_scale_jitter);
                }
            }
            poses.push((pass, pose));
        }
    }

    let mpp = p.meters_per_px;
    let all_corners: Vec<[f64; 2]> = poses
        .iter()
        .flat_map(|(_, pose)| corners(pose, p.view_width, p.view_height))
        .map(|c| [c[0] * mpp, c[1] * mpp])
        .collect();
    let bounds = match p.world_bounds {
        Some(b) => {
            if let Some(k) = all_corners.iter().position(|c| !b.contains(*c)) {
                return Err(SynthError::OutsideWorld { view: k / 4 });
            }
            b
        }
        None => {
            let margin = 8.0 * mpp;
            let fold = |f: fn(f64, f64) -> f64, axis: usize, init: f64| all_corners.iter().map(|c| c[axis]).fold(init, f);
            Bounds {
                min: [fold(f64::min, 0, f64::INFINITY) - margin, fold(f64::min, 1, f64::INFINITY) - margin],
                max: [fold(f64::max, 0, f64::NEG_INFINITY) + margin, fold(f64::max, 1, f64::NEG_INFINITY) + margin],
            }
        }
    };
    let mut world_rng = ChaCha8Rng::seed_from_u64(derive_seed(p.seed, &["world"]));
    let world = World::generate(bounds, 4.0 * mpp, p.organism_density, &mut world_rng);

    let per_pass = p.n_views;
    let views = poses
        .into_iter()
        .enumerate()
        .map(|(n, (pass, pose))| {
            let k = n % per_pass;
            let image_id = format!("p{pass}_{k:04}");
            let (mut image, mask) = render(&world, &pose, p);
            if pass > 0 && !p.perturbation.is_identity() {
                image = perturb(&image, &p.perturbation, derive_seed(p.seed, &["noise", &image_id]));
            }
            let record = ImageRecord {
                image_id,
                sequence_id: format!("pass{pass}"),
                timestamp: 1.6e9 + pass as f64 * 31_536_000.0 + k as f64 * 2.0,
                position: GeoPosition::Local {
                    x: pose.center_px[0] * mpp,
                    y: pose.center_px[1] * mpp,
                    depth: Some(12.0),
                },
                width_px: p.view_width as u32,
                height_px: p.view_height as u32,
                mask_path: None,
            };
            SyntheticView {
                record,
                pass,
                pose,
                image,
                mask,
            }
        })
        .collect();
    Ok(SyntheticSurvey {
        params: p.clone(),
        world,
        views,
    })
}

impl SyntheticSurvey {
    pub fn pass_range(&self, pass: usize) -> Range<usize> {
        pass * self.params.n_views..(pass + 1) * self.params.n_views
    }

    /// Views of pass 0.
    pub fn database_range(&self) -> Range<usize> {
        self.pass_range(0)
    }

    /// Views of every revisit pass.
    pub fn query_range(&self) -> Range<usize> {
        self.params.n_views..self.views.len()
    }

    fn view_to_world(&self, v: usize) -> Matrix3<f64> {
        self.views[v]
            .pose
            .view_to_world(self.params.view_width, self.params.view_height)
    }

    /// True homography with `p_to = H p_from` in pixel coordinates.
    pub fn homography(&self, from: usize, to: usize) -> Homography {
        let to_inv = self.view_to_world(to).try_inverse().expect("similarity is invertible");
        Homography::new(to_inv * self.view_to_world(from)).expect("similarity is invertible")
    }

    /// Fraction of view `a` that is also seen by view `b`, estimated on a
    /// 4-pixel sampling grid.
    pub fn overlap(&self, a: usize, b: usize) -> f64 {
        let h = self.homography(a, b);
        let (w, hh) = (self.params.view_width as f64, self.params.view_height as f64);
        let (mut inside, mut total) = (0usize, 0usize);
        let mut y = 2.0;
        while y < hh {
            let mut x = 2.0;
            while x < w {
                total += 1;
                if let Some(p) = h.apply(&nalgebra::Point2::new(x, y)) {
                    inside += usize::from(p.x >= 0.0 && p.x < w && p.y >= 0.0 && p.y < hh);
                }
                x += 4.0;
            }
            y += 4.0;
        }
        inside as f64 / total as f64
    }

    /// Query-versus-database labels: true when the views share at least
    /// `min_overlap` of the query's footprint.
    pub fn overlap_ground_truth(&self, min_overlap: f64) -> GroundTruthMatrix {
        let (q, d) = (self.query_range(), self.database_range());
        GroundTruthMatrix::from_fn(d.len(), q.len(), self.params.radius(), |j, i| {
            self.overlap(q.start + i, d.start + j) >= min_overlap
        })
    }
}
