//! Structural similarity with uniform (box) windows.
//!
//! Only windows fully inside the grid contribute. Window statistics are
//! plain averages (no unbiased variance correction):
//!
//! ```text
//! SSIM = (2 mu_x mu_y + C1)(2 s_xy + C2) / ((mu_x^2 + mu_y^2 + C1)(s_x^2 + s_y^2 + C2))
//! ```
//!
//! `x` is the fixed image, `y` the warped moving image; loss is `1 - mean`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::window::{box_sum, ordered_sum, validate_window};
use super::{chain_to_field, fixed_samples};
use crate::error::Result;
use crate::volume::{Dims, DisplacementField, GradField, Volume};
use crate::warp::warp_with_grad;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConstants {
    pub c1: f64,
    pub c2: f64,
}

impl SsimConstants {
    pub const K1: f64 = 0.01;
    pub const K2: f64 = 0.03;

    /// `C1 = (K1 L)^2`, `C2 = (K2 L)^2` for dynamic range `L`.
    pub fn for_range(dynamic_range: f64) -> Self {
        SsimConstants {
            c1: (Self::K1 * dynamic_range).powi(2),
            c2: (Self::K2 * dynamic_range).powi(2),
        }
    }
}

impl Default for SsimConstants {
    fn default() -> Self {
        Self::for_range(1.0)
    }
}

/// SSIM of one window from its statistics.
#[inline]
pub fn ssim_from_stats(mu_x: f64, mu_y: f64, var_x: f64, var_y: f64, cov: f64, c: SsimConstants) -> f64 {
    let a1 = 2.0 * mu_x * mu_y + c.c1;
    let a2 = 2.0 * cov + c.c2;
    let b1 = mu_x * mu_x + mu_y * mu_y + c.c1;
    let b2 = var_x + var_y + c.c2;
    (a1 * a2) / (b1 * b2)
}

pub(crate) fn ssim_image_terms(
    fixed: &[f64],
    warped: &[f64],
    dims: Dims,
    window: usize,
    c: SsimConstants,
    want_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    let r = window / 2;
    let n = dims.len();
    let [nx, ny, nz] = dims.0;
    let count = (window * window * window) as f64;
    let valid = |p: usize, len: usize| p >= r && p + r < len;
    let windows = ((nx - 2 * r) * (ny - 2 * r) * (nz - 2 * r)) as f64;

    let xx: Vec<f64> = fixed.iter().map(|a| a * a).collect();
    let yy: Vec<f64> = warped.iter().map(|b| b * b).collect();
    let xy: Vec<f64> = fixed.iter().zip(warped).map(|(a, b)| a * b).collect();
    let s_x = box_sum(fixed, dims, r);
    let s_y = box_sum(warped, dims, r);
    let s_xx = box_sum(&xx, dims, r);
    let s_yy = box_sum(&yy, dims, r);
    let s_xy = box_sum(&xy, dims, r);

    // (ssim, dS/dS_XY, dS/dS_YY, dS/dS_Y) per valid centre, zeros elsewhere.
    let per_voxel: Vec<[f64; 4]> = (0..n)
        .into_par_iter()
        .map(|idx| {
            let [i, j, k] = dims.coords(idx);
            if !(valid(i, nx) && valid(j, ny) && valid(k, nz)) {
                return [0.0; 4];
            }
            let mu_x = s_x[idx] / count;
            let mu_y = s_y[idx] / count;
            let var_x = s_xx[idx] / count - mu_x * mu_x;
            let var_y = s_yy[idx] / count - mu_y * mu_y;
            let cov = s_xy[idx] / count - mu_x * mu_y;
            let a1 = 2.0 * mu_x * mu_y + c.c1;
            let a2 = 2.0 * cov + c.c2;
            let b1 = mu_x * mu_x + mu_y * mu_y + c.c1;
            let b2 = var_x + var_y + c.c2;
            let s = (a1 * a2) / (b1 * b2);
            if !want_grad {
                return [s, 0.0, 0.0, 0.0];
            }
            let d_mu_y = 2.0 * mu_x * a2 / (b1 * b2) - 2.0 * mu_y * s / b1;
            let d_cov = 2.0 * a1 / (b1 * b2);
            let d_var_y = -s / b2;
            let d_sy = (d_mu_y - d_cov * mu_x - 2.0 * d_var_y * mu_y) / count;
            [s, d_cov / count, d_var_y / count, d_sy]
        })
        .collect();

    let values: Vec<f64> = per_voxel.iter().map(|p| p[0]).collect();
    let loss = 1.0 - ordered_sum(&values, dims) / windows;
    if !want_grad {
        return (loss, None);
    }

    let a: Vec<f64> = per_voxel.iter().map(|p| p[1]).collect();
    let b: Vec<f64> = per_voxel.iter().map(|p| p[2]).collect();
    let d: Vec<f64> = per_voxel.iter().map(|p| p[3]).collect();
    let ba = box_sum(&a, dims, r);
    let bb = box_sum(&b, dims, r);
    let bd = box_sum(&d, dims, r);
    let scale = -1.0 / windows;
    let grad = (0..n)
        .into_par_iter()
        .map(|p| scale * (fixed[p] * ba[p] + 2.0 * warped[p] * bb[p] + bd[p]))
        .collect();
    (loss, Some(grad))
}

/// SSIM loss between `fixed` and `moving` warped by `field`, with its
/// gradient with respect to the field. Inputs are expected in `[0, 1]`.
pub fn ssim_loss_grad(
    fixed: &Volume,
    moving: &Volume,
    field: &DisplacementField,
    window: usize,
    c: SsimConstants,
) -> Result<(f64, GradField)> {
    let dims = fixed.dims();
    dims.require_same(&moving.dims())?;
    dims.require_same(&field.dims())?;
    validate_window(window, dims)?;
    let (warped, coord_grad) = warp_with_grad(moving, field)?;
    let f = fixed_samples(fixed);
    let (loss, dw) = ssim_image_terms(&f, &warped, dims, window, c, true);
    Ok((loss, chain_to_field(dims, &dw.unwrap(), &coord_grad)))
}
