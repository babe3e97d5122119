//! The hybrid registration loss and its analytic gradient.
//!
//! `total = lambda_ncc * ncc + lambda_ssim * ssim + lambda_smooth * smooth`.
//! A term whose weight is zero is skipped and reported as `0.0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, DisplacementField, GradField, Volume};
use crate::warp::warp_with_grad;

mod gradcheck;
mod ncc;
mod smooth;
mod ssim;
mod window;

pub use gradcheck::{compare_gradients, gradcheck_instance, run_gradcheck, GradCheckInstance, GradCheckReport};
pub use ncc::{ncc_loss_grad, NCC_EPS};
pub use smooth::smooth_loss_grad;
pub use ssim::{ssim_from_stats, ssim_loss_grad, SsimConstants};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_ncc: f64,
    pub lambda_ssim: f64,
    pub lambda_smooth: f64,
}

impl LossWeights {
    pub fn new(lambda_ncc: f64, lambda_ssim: f64, lambda_smooth: f64) -> Result<Self> {
        let w = LossWeights {
            lambda_ncc,
            lambda_ssim,
            lambda_smooth,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_ncc", self.lambda_ncc),
            ("lambda_ssim", self.lambda_ssim),
            ("lambda_smooth", self.lambda_smooth),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for LossWeights {
    /// NCC 1, SSIM 2, smoothness 1.
    fn default() -> Self {
        LossWeights {
            lambda_ncc: 1.0,
            lambda_ssim: 2.0,
            lambda_smooth: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossOptions {
    pub ncc_window: usize,
    pub ssim_window: usize,
    pub ssim_constants: SsimConstants,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            ncc_window: 9,
            ssim_window: 7,
            ssim_constants: SsimConstants::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ncc: f64,
    pub ssim: f64,
    pub smooth: f64,
}

impl LossBreakdown {
    fn combine(w: &LossWeights, ncc: f64, ssim: f64, smooth: f64) -> Self {
        LossBreakdown {
            total: w.lambda_ncc * ncc + w.lambda_ssim * ssim + w.lambda_smooth * smooth,
            ncc,
            ssim,
            smooth,
        }
    }
}

pub(crate) fn fixed_samples(fixed: &Volume) -> Vec<f64> {
    fixed.data().iter().map(|&v| v as f64).collect()
}

/// Chain rule through the sampler: `dL/du_c(x) = dL/dJ(x) * dJ/dp_c(x)`.
pub(crate) fn chain_to_field(dims: Dims, d_warped: &[f64], coord_grad: &[[f64; 3]]) -> GradField {
    let data = d_warped
        .par_iter()
        .zip(coord_grad.par_iter())
        .map(|(&d, g)| [d * g[0], d * g[1], d * g[2]])
        .collect();
    GradField::from_vec(dims, data)
}

fn check_inputs(
    fixed: &Volume,
    moving: &Volume,
    field: &DisplacementField,
    w: &LossWeights,
    opts: &LossOptions,
) -> Result<()> {
    let dims = fixed.dims();
    dims.require_same(&moving.dims())?;
    dims.require_same(&field.dims())?;
    w.validate()?;
    if w.lambda_ncc > 0.0 {
        window::validate_window(opts.ncc_window, dims)?;
    }
    if w.lambda_ssim > 0.0 {
        window::validate_window(opts.ssim_window, dims)?;
    }
    if w.lambda_smooth > 0.0 {
        dims.require_min_axis(2)?;
    }
    Ok(())
}

fn evaluate(
    fixed: &Volume,
    moving: &Volume,
    field: &DisplacementField,
    w: &LossWeights,
    opts: &LossOptions,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<GradField>)> {
    check_inputs(fixed, moving, field, w, opts)?;
    let dims = fixed.dims();
    let needs_image = w.lambda_ncc > 0.0 || w.lambda_ssim > 0.0;

    let mut ncc = 0.0;
    let mut ssim = 0.0;
    let mut d_warped: Option<Vec<f64>> = None;
    let mut coord_grad = Vec::new();
    if needs_image {
        let (warped, cg) = warp_with_grad(moving, field)?;
        coord_grad = cg;
        let f = fixed_samples(fixed);
        let mut accumulate = |weight: f64, g: Option<Vec<f64>>| {
            if let Some(g) = g {
                match d_warped.as_mut() {
                    None => d_warped = Some(g.into_iter().map(|v| weight * v).collect()),
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, v)| *a += weight * v),
                }
            }
        };
        if w.lambda_ncc > 0.0 {
            let (v, g) = ncc::ncc_image_terms(&f, &warped, dims, opts.ncc_window, want_grad);
            ncc = v;
            accumulate(w.lambda_ncc, g);
        }
        if w.lambda_ssim > 0.0 {
            let (v, g) = ssim::ssim_image_terms(
                &f,
                &warped,
                dims,
                opts.ssim_window,
                opts.ssim_constants,
                want_grad,
            );
            ssim = v;
            accumulate(w.lambda_ssim, g);
        }
    }

    let mut smooth = 0.0;
    let mut smooth_grad = None;
    if w.lambda_smooth > 0.0 {
        let (v, g) = smooth::smooth_terms(field, want_grad)?;
        smooth = v;
        smooth_grad = g;
    }

    let breakdown = LossBreakdown::combine(w, ncc, ssim, smooth);
    if !want_grad {
        return Ok((breakdown, None));
    }
    let mut grad = match d_warped {
        Some(d) => chain_to_field(dims, &d, &coord_grad),
        None => GradField::zeros(dims),
    };
    if let Some(g) = smooth_grad {
        grad.add_scaled(w.lambda_smooth, &g);
    }
    Ok((breakdown, Some(grad)))
}

/// Weighted hybrid loss and its gradient with respect to every displacement
/// component.
pub fn hybrid_loss_grad(
    fixed: &Volume,
    moving: &Volume,
    field: &DisplacementField,
    w: &LossWeights,
    opts: &LossOptions,
) -> Result<(LossBreakdown, GradField)> {
    let (b, g) = evaluate(fixed, moving, field, w, opts, true)?;
    Ok((b, g.unwrap()))
}

/// Value-only variant of [`hybrid_loss_grad`]; identical loss values.
pub fn hybrid_loss(
    fixed: &Volume,
    moving: &Volume,
    field: &DisplacementField,
    w: &LossWeights,
    opts: &LossOptions,
) -> Result<LossBreakdown> {
    Ok(evaluate(fixed, moving, field, w, opts, false)?.0)
}

/// Central-difference gradient of the hybrid total, one component at a
/// time. Cost is `6 * voxels` loss evaluations; meant for small grids.
pub fn finite_diff_grad(
    fixed: &Volume,
    moving: &Volume,
    field: &DisplacementField,
    w: &LossWeights,
    opts: &LossOptions,
    step: f64,
) -> Result<GradField> {
    check_inputs(fixed, moving, field, w, opts)?;
    let dims = field.dims();
    let data = (0..dims.len())
        .into_par_iter()
        .map(|idx| -> Result<[f64; 3]> {
            let mut probe = field.clone();
            let mut out = [0.0; 3];
            for (c, o) in out.iter_mut().enumerate() {
                let orig = probe.data()[idx][c];
                probe.data_mut()[idx][c] = orig + step;
                let hi = hybrid_loss(fixed, moving, &probe, w, opts)?.total;
                probe.data_mut()[idx][c] = orig - step;
                let lo = hybrid_loss(fixed, moving, &probe, w, opts)?.total;
                probe.data_mut()[idx][c] = orig;
                *o = (hi - lo) / (2.0 * step);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradField::from_vec(dims, data))
}
