//! Analytic-versus-numeric gradient comparison on seeded small instances.

use serde::{Deserialize, Serialize};

use super::{finite_diff_grad, hybrid_loss_grad, LossOptions, LossWeights};
use crate::error::Result;
use crate::synth::{make_noise_volume, make_smooth_field};
use crate::volume::{Dims, DisplacementField, GradField, Volume};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// Largest relative error over components whose magnitude exceeds the floor.
    pub max_rel_error: f64,
    /// Largest absolute error over components at or below the floor.
    pub max_abs_error: f64,
    pub components: usize,
    pub large_components: usize,
    pub passed: bool,
}

/// Compares two gradients component by component. Components where
/// `max(|a|, |b|) > floor` are judged by relative error against `rel_tol`,
/// the rest by absolute error against `floor`.
pub fn compare_gradients(analytic: &GradField, numeric: &GradField, rel_tol: f64, floor: f64) -> GradCheckReport {
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut large = 0;
    let mut components = 0;
    for (a, n) in analytic.data().iter().flatten().zip(numeric.data().iter().flatten()) {
        components += 1;
        let scale = a.abs().max(n.abs());
        let err = (a - n).abs();
        if scale > floor {
            large += 1;
            max_rel = max_rel.max(err / scale);
        } else {
            max_abs = max_abs.max(err);
        }
    }
    // NaN comparisons fall through to a failure.
    let passed = max_rel <= rel_tol && max_abs <= floor;
    GradCheckReport {
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        components,
        large_components: large,
        passed,
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckInstance {
    pub fixed: Volume,
    pub moving: Volume,
    pub field: DisplacementField,
    pub options: LossOptions,
}

/// Minimum distance kept between any sample coordinate and a lattice plane.
/// The trilinear interpolant has kinks on lattice planes; central
/// differences straddling one do not estimate the one-sided derivative.
pub const LATTICE_MARGIN: f64 = 1e-2;

fn keep_off_lattice(field: &mut DisplacementField, margin: f64) {
    let dims = field.dims();
    for (idx, u) in field.data_mut().iter_mut().enumerate() {
        let pos = dims.coords(idx);
        for c in 0..3 {
            let p = pos[c] as f64 + u[c];
            let off = p - p.round();
            if off.abs() < margin {
                u[c] += if off >= 0.0 { margin - off } else { -margin - off };
            }
        }
    }
}

/// Seeded pair of smooth random images and a smooth random field on `dims`,
/// with every sample coordinate at least [`LATTICE_MARGIN`] from a lattice
/// plane.
pub fn gradcheck_instance(seed: u64, dims: Dims) -> Result<GradCheckInstance> {
    let spacing = [1.0; 3];
    let fixed = make_noise_volume(dims, spacing, 1.0, seed.wrapping_mul(3))?;
    let moving = make_noise_volume(dims, spacing, 1.0, seed.wrapping_mul(3).wrapping_add(1))?;
    let mut field = make_smooth_field(dims, spacing, 1.5, 2.0, seed.wrapping_mul(3).wrapping_add(2))?;
    keep_off_lattice(&mut field, LATTICE_MARGIN);
    let options = LossOptions {
        ncc_window: 5.min(odd_floor(dims.min_axis())),
        ssim_window: 3,
        ..LossOptions::default()
    };
    Ok(GradCheckInstance {
        fixed,
        moving,
        field,
        options,
    })
}

fn odd_floor(n: usize) -> usize {
    if n.is_multiple_of(2) {
        n - 1
    } else {
        n
    }
}

/// Runs the full hybrid gradient check on one seeded 8^3 instance with
/// central-difference step `1e-3`.
pub fn run_gradcheck(seed: u64, weights: &LossWeights) -> Result<GradCheckReport> {
    let inst = gradcheck_instance(seed, Dims::cube(8))?;
    let (_, analytic) = hybrid_loss_grad(&inst.fixed, &inst.moving, &inst.field, weights, &inst.options)?;
    let numeric = finite_diff_grad(&inst.fixed, &inst.moving, &inst.field, weights, &inst.options, 1e-3)?;
    Ok(compare_gradients(&analytic, &numeric, 1e-3, 1e-6))
}
