use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Axis-aligned world extent in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (self.min[0]..=self.max[0]).contains(&p[0]) && (self.min[1]..=self.max[1]).contains(&p[1])
    }

    pub fn size(&self) -> [f64; 2] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1]]
    }
}

/// Lattice of random values with smooth interpolation.
#[derive(Debug, Clone)]
struct NoiseOctave {
    cell_m: f64,
    amplitude: f64,
    cols: usize,
    rows: usize,
    values: Vec<f64>,
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

impl NoiseOctave {
    fn new(bounds: &Bounds, cell_m: f64, amplitude: f64, rng: &mut ChaCha8Rng) -> Self {
        let size = bounds.size();
        let cols = (size[0] / cell_m).ceil() as usize + 2;
        let rows = (size[1] / cell_m).ceil() as usize + 2;
        let values = (0..cols * rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self {
            cell_m,
            amplitude,
            cols,
            rows,
            values,
        }
    }

    fn sample(&self, u: f64, v: f64) -> f64 {
        let (gx, gy) = (u / self.cell_m, v / self.cell_m);
        let (x0, y0) = (gx.floor(), gy.floor());
        let (tx, ty) = (smoothstep(gx - x0), smoothstep(gy - y0));
        let xi = (x0.max(0.0) as usize).min(self.cols - 2);
        let yi = (y0.max(0.0) as usize).min(self.rows - 2);
        let at = |c: usize, r: usize| self.values[r * self.cols + c];
        let top = at(xi, yi) * (1.0 - tx) + at(xi + 1, yi) * tx;
        let bottom = at(xi, yi + 1) * (1.0 - tx) + at(xi + 1, yi + 1) * tx;
        self.amplitude * (top * (1.0 - ty) + bottom * ty)
    }
}

/// An elliptical patch of distinct tone: a coral head, sponge or rock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Organism {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    pub angle: f64,
    pub tone: f64,
}

impl Organism {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        let (s, c) = self.angle.sin_cos();
        let u = (c * dx + s * dy) / self.semi_axes[0];
        let v = (-s * dx + c * dy) / self.semi_axes[1];
        u * u + v * v <= 1.0
    }
}

/// Procedural seafloor: multi-octave value noise with scattered organisms.
/// Evaluated continuously in world meters.
#[derive(Debug, Clone)]
pub struct World {
    pub bounds: Bounds,
    octaves: Vec<NoiseOctave>,
    pub organisms: Vec<Organism>,
    /// Organisms indexed by coarse grid cell for fast lookup.
    cell_m: f64,
    grid_cols: usize,
    grid: Vec<Vec<usize>>,
}

impl World {
    /// `feature_m` sets the finest texture scale; organism density is per
    /// square meter.
    pub fn generate(bounds: Bounds, feature_m: f64, organism_density: f64, rng: &mut ChaCha8Rng) -> Self {
        let octaves = [(8.0, 0.45), (4.0, 0.25), (2.0, 0.17), (1.0, 0.13)]
            .iter()
            .map(|&(mult, amp)| NoiseOctave::new(&bounds, feature_m * mult, amp, rng))
            .collect();
        let size = bounds.size();
        let count = (organism_density * size[0] * size[1]).round() as usize;
        let organisms: Vec<Organism> = (0..count)
            .map(|_| {
                let a = rng.random_range(2.5..9.0) * feature_m;
                let b = a * rng.random_range(0.45..1.0);
                let tone = if rng.random_bool(0.5) {
                    rng.random_range(0.25..0.4)
                } else {
                    -rng.random_range(0.25..0.4)
                };
                Organism {
                    center: [
                        rng.random_range(bounds.min[0]..bounds.max[0]),
                        rng.random_range(bounds.min[1]..bounds.max[1]),
                    ],
                    semi_axes: [a, b],
                    angle: rng.random_range(0.0..std::f64::consts::PI),
                    tone,
                }
            })
            .collect();

        let cell_m = 9.0 * feature_m;
        let grid_cols = (size[0] / cell_m).ceil() as usize + 1;
        let grid_rows = (size[1] / cell_m).ceil() as usize + 1;
        let mut grid = vec![Vec::new(); grid_cols * grid_rows];
        for (n, o) in organisms.iter().enumerate() {
            let r = o.semi_axes[0];
            let c0 = ((o.center[0] - r - bounds.min[0]) / cell_m).floor().max(0.0) as usize;
            let c1 = (((o.center[0] + r - bounds.min[0]) / cell_m).floor().max(0.0) as usize).min(grid_cols - 1);
            let r0 = ((o.center[1] - r - bounds.min[1]) / cell_m).floor().max(0.0) as usize;
            let r1 = (((o.center[1] + r - bounds.min[1]) / cell_m).floor().max(0.0) as usize).min(grid_rows - 1);
            for gr in r0..=r1 {
                for gc in c0..=c1 {
                    grid[gr * grid_cols + gc].push(n);
                }
            }
        }
        Self {
            bounds,
            octaves,
            organisms,
            cell_m,
            grid_cols,
            grid,
        }
    }

    fn nearby(&self, p: [f64; 2]) -> &[usize] {
        let gc = ((p[0] - self.bounds.min[0]) / self.cell_m).floor();
        let gr = ((p[1] - self.bounds.min[1]) / self.cell_m).floor();
        if gc < 0.0 || gr < 0.0 {
            return &[];
        }
        self.grid
            .get(gr as usize * self.grid_cols + gc as usize)
            .filter(|_| (gc as usize) < self.grid_cols)
            .map_or(&[], Vec::as_slice)
    }

    /// True when `p` lies inside any organism.
    pub fn in_organism(&self, p: [f64; 2]) -> bool {
        self.nearby(p).iter().any(|&n| self.organisms[n].contains(p))
    }

    /// Intensity in `[0, 1]` before photometric perturbation.
    pub fn intensity(&self, p: [f64; 2]) -> f64 {
        let (u, v) = (p[0] - self.bounds.min[0], p[1] - self.bounds.min[1]);
        let mut value = 0.5 + self.octaves.iter().map(|o| o.sample(u, v)).sum::<f64>() * 0.6;
        for &n in self.nearby(p) {
            let o = &self.organisms[n];
            if o.contains(p) {
                value += o.tone;
            }
        }
        value.clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn world(seed: u64) -> World {
        let b = Bounds {
            min: [-1.0, -1.0],
            max: [3.0, 2.0],
        };
        World::generate(b, 0.04, 3.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn deterministic_and_bounded() {
        let (a, b) = (world(1), world(1));
        for k in 0..200 {
            let p = [-1.0 + f64::from(k) * 0.02, -1.0 + f64::from(k) * 0.015];
            assert_eq!(a.intensity(p), b.intensity(p));
            assert!((0.0..=1.0).contains(&a.intensity(p)));
        }
        assert_eq!(a.organisms, b.organisms);
    }

    #[test]
    fn spatial_index_agrees_with_scan() {
        let w = world(5);
        for k in 0..2000 {
            let p = [-1.0 + f64::from(k % 50) * 0.08, -1.0 + f64::from(k / 50) * 0.075];
            let scan = w.organisms.iter().any(|o| o.contains(p));
            assert_eq!(w.in_organism(p), scan, "{p:?}");
        }
    }

    #[test]
    fn ellipse_membership() {
        let o = Organism {
            center: [1.0, 1.0],
            semi_axes: [0.5, 0.1],
            angle: std::f64::consts::FRAC_PI_2,
            tone: 0.3,
        };
        assert!(o.contains([1.0, 1.45]));
        assert!(!o.contains([1.45, 1.0]));
    }
}
