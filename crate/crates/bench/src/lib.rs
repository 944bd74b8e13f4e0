//! Shared inputs for the solver benchmarks in `benches/`.

use conewave::{CharGrid, HarmonicPotential, RadialProfile};

pub fn grid(h: f64) -> CharGrid {
    CharGrid::new(h, 1.0).expect("aligned grid")
}

pub fn radial_bump(h: f64) -> RadialProfile {
    RadialProfile::from_fn(h, 1.0, |r| 0.3 * (-(r - 0.6f64).powi(2) / 0.02).exp()).expect("profile")
}

/// Every mode up to `lmax` carries a shifted bump.
pub fn harmonic_bump(lmax: usize, h: f64) -> HarmonicPotential {
    HarmonicPotential::from_fn(lmax, h, 1.0, |n, r| {
        0.2 / (1.0 + n as f64) * (-(r - 0.4 - 0.01 * n as f64).powi(2) / 0.03).exp()
    })
    .expect("potential")
}
