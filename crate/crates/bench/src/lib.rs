//! Shared inputs for the criterion benchmarks.

use stagex::image::{self, ProjectionImage};
use stagex::synth::{self, Axis, Particles, SyntheticCorpusSpec};
use stagex::wire::Request;

/// Clustered particles with the default halo layout.
pub fn corpus(n_particles: usize) -> Particles {
    synth::generate(&SyntheticCorpusSpec::with_particles(n_particles, 7))
}

/// A PUT request with a `len`-byte patterned value.
pub fn put_request(len: usize) -> Request {
    let value: Vec<u8> = (0..len).map(|i| (i * 31 % 251) as u8).collect();
    Request::put("bench/sim/0/0/x/data", value)
}

/// Density projections down z of a corpus and of a copy with every
/// coordinate shifted by `shift`.
pub fn projection_pair(n_particles: usize, width: usize, height: usize, shift: f64) -> (ProjectionImage, ProjectionImage) {
    let side = SyntheticCorpusSpec::default().box_side;
    let a = corpus(n_particles);
    let mut b = a.clone();
    for v in b.x.iter_mut().chain(b.y.iter_mut()) {
        *v = (*v + shift).min(side);
    }
    let project = |p: &Particles| image::project(p, Axis::Z, side, width, height).expect("valid grid");
    (project(&a), project(&b))
}
