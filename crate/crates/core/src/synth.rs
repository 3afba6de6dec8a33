//! Deterministic synthetic particle corpus: Gaussian halos over a uniform
//! background in a periodic-free cube `[0, L)^3`.
//!
//! Halo particles are emitted halo by halo, followed by the background, so
//! neighbouring elements of a coordinate array are spatially correlated the
//! way they are in a real particle dump.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const DEFAULT_PARTICLES: usize = 2_000_000;
pub const DEFAULT_HALOS: usize = 64;
pub const DEFAULT_BOX: f64 = 256.0;
pub const DEFAULT_BACKGROUND: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub n_particles: usize,
    pub n_halos: usize,
    pub box_side: f64,
    /// Halo standard deviation; `None` means `box_side / 64`.
    pub halo_sigma: Option<f64>,
    pub background_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        SyntheticCorpusSpec {
            n_particles: DEFAULT_PARTICLES,
            n_halos: DEFAULT_HALOS,
            box_side: DEFAULT_BOX,
            halo_sigma: None,
            background_fraction: DEFAULT_BACKGROUND,
            seed: 0,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn with_particles(n_particles: usize, seed: u64) -> Self {
        SyntheticCorpusSpec {
            n_particles,
            seed,
            ..Default::default()
        }
    }

    pub fn sigma(&self) -> f64 {
        self.halo_sigma.unwrap_or(self.box_side / 64.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Particles {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub id: Vec<i64>,
}

impl Particles {
    pub fn len(&self) -> usize {
        self.id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id.is_empty()
    }

    pub fn axis(&self, axis: Axis) -> &[f64] {
        match axis {
            Axis::X => &self.x,
            Axis::Y => &self.y,
            Axis::Z => &self.z,
        }
    }

    fn push(&mut self, p: [f64; 3]) {
        self.id.push(self.x.len() as i64);
        self.x.push(p[0]);
        self.y.push(p[1]);
        self.z.push(p[2]);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Largest f64 strictly below `side`.
fn below(side: f64) -> f64 {
    if side > 0.0 {
        f64::from_bits(side.to_bits() - 1)
    } else {
        0.0
    }
}

pub fn generate(spec: &SyntheticCorpusSpec) -> Particles {
    let n = spec.n_particles;
    let side = spec.box_side;
    let top = below(side);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Particles {
        x: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        z: Vec::with_capacity(n),
        id: Vec::with_capacity(n),
    };

    let frac = spec.background_fraction.clamp(0.0, 1.0);
    let n_background = if spec.n_halos == 0 { n } else { (frac * n as f64).round() as usize };
    let n_clustered = n - n_background;
    if n_clustered > 0 {
        let normal = Normal::new(0.0, spec.sigma()).expect("halo sigma must be finite and non-negative");
        let per_halo = n_clustered / spec.n_halos;
        let extra = n_clustered % spec.n_halos;
        for halo in 0..spec.n_halos {
            let center: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>() * side);
            let members = per_halo + usize::from(halo < extra);
            for _ in 0..members {
                let p = center.map(|c| (c + normal.sample(&mut rng)).clamp(0.0, top));
                out.push(p);
            }
        }
    }
    for _ in 0..n_background {
        let p: [f64; 3] = std::array::from_fn(|_| (rng.random::<f64>() * side).min(top));
        out.push(p);
    }
    out
}

/// Seed of one rank's slice at one step.
pub fn rank_seed(seed: u64, rank: u64, step: u64) -> u64 {
    seed ^ rank.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ step.wrapping_add(1).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// Particles owned by `rank` at `step` in the mini-simulation. Ids are
/// global: rank `r` holds `r * n .. (r + 1) * n`.
pub fn rank_slice(seed: u64, rank: u64, step: u64, n_particles: usize, n_halos: usize) -> Particles {
    let mut p = generate(&SyntheticCorpusSpec {
        n_halos,
        ..SyntheticCorpusSpec::with_particles(n_particles, rank_seed(seed, rank, step))
    });
    let base = rank as i64 * n_particles as i64;
    p.id.iter_mut().for_each(|id| *id += base);
    p
}
