//! Shared fixtures for the criterion benches.

use ttr_core::synth::{make_noise_volume, make_smooth_field};
use ttr_core::{Dims, DisplacementField, Volume};

/// Smooth random image pair and a smooth field on an `n^3` grid.
pub fn fixture(n: usize, seed: u64) -> (Volume, Volume, DisplacementField) {
    let dims = Dims::cube(n);
    let spacing = [1.0; 3];
    let fixed = make_noise_volume(dims, spacing, 2.0, seed).expect("fixed image");
    let moving = make_noise_volume(dims, spacing, 2.0, seed + 1).expect("moving image");
    let field = make_smooth_field(dims, spacing, 2.0, 4.0, seed + 2).expect("field");
    (fixed, moving, field)
}
