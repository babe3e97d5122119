//! Squared local normalized cross-correlation.
//!
//! For each voxel, over its (grid-clipped) window of `n` voxels:
//!
//! ```text
//! cross = S_IJ - S_I S_J / n
//! var_I = S_II - S_I^2 / n
//! var_J = S_JJ - S_J^2 / n
//! cc    = cross^2 / (var_I var_J + eps)
//! ```
//!
//! and the loss is `1 - mean(cc)`. `I` is the fixed image, `J` the warped
//! moving image.

use rayon::prelude::*;

use super::window::{box_sum, clip, ordered_sum, validate_window};
use super::{chain_to_field, fixed_samples};
use crate::error::Result;
use crate::volume::{Dims, DisplacementField, GradField, Volume};
use crate::warp::warp_with_grad;

pub const NCC_EPS: f64 = 1e-5;

/// Loss value and, if requested, `dL/dJ` per voxel.
pub(crate) fn ncc_image_terms(
    fixed: &[f64],
    warped: &[f64],
    dims: Dims,
    window: usize,
    want_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    let r = window / 2;
    let n = dims.len();
    let [nx, ny, nz] = dims.0;

    let ii: Vec<f64> = fixed.iter().map(|a| a * a).collect();
    let jj: Vec<f64> = warped.iter().map(|b| b * b).collect();
    let ij: Vec<f64> = fixed.iter().zip(warped).map(|(a, b)| a * b).collect();
    let s_i = box_sum(fixed, dims, r);
    let s_j = box_sum(warped, dims, r);
    let s_ii = box_sum(&ii, dims, r);
    let s_jj = box_sum(&jj, dims, r);
    let s_ij = box_sum(&ij, dims, r);

    let mut cc = vec![0.0; n];
    // dcc/dS_IJ, dcc/dS_JJ, dcc/dS_J per window centre.
    let mut coef = if want_grad {
        vec![[0.0; 3]; n]
    } else {
        Vec::new()
    };
    let slice = dims.slice_len();

    let per_voxel = |idx: usize| -> (f64, [f64; 3]) {
        let [i, j, k] = dims.coords(idx);
        let count = |p: usize, len: usize| {
            let (lo, hi) = clip(p, r, len);
            (hi - lo + 1) as f64
        };
        let cnt = count(i, nx) * count(j, ny) * count(k, nz);
        let cross = s_ij[idx] - s_i[idx] * s_j[idx] / cnt;
        let var_i = s_ii[idx] - s_i[idx] * s_i[idx] / cnt;
        let var_j = s_jj[idx] - s_j[idx] * s_j[idx] / cnt;
        let denom = var_i * var_j + NCC_EPS;
        let value = cross * cross / denom;
        let d_cross = 2.0 * cross / denom;
        let d_var_j = -cross * cross * var_i / (denom * denom);
        let d_sj = -d_cross * s_i[idx] / cnt - 2.0 * d_var_j * s_j[idx] / cnt;
        (value, [d_cross, d_var_j, d_sj])
    };

    if want_grad {
        cc.par_chunks_mut(slice)
            .zip(coef.par_chunks_mut(slice))
            .enumerate()
            .for_each(|(k, (cc_s, co_s))| {
                for (local, (c, co)) in cc_s.iter_mut().zip(co_s.iter_mut()).enumerate() {
                    let (v, g) = per_voxel(k * slice + local);
                    *c = v;
                    *co = g;
                }
            });
    } else {
        cc.par_chunks_mut(slice).enumerate().for_each(|(k, cc_s)| {
            for (local, c) in cc_s.iter_mut().enumerate() {
                *c = per_voxel(k * slice + local).0;
            }
        });
    }

    let loss = 1.0 - ordered_sum(&cc, dims) / n as f64;
    if !want_grad {
        return (loss, None);
    }

    let a: Vec<f64> = coef.iter().map(|c| c[0]).collect();
    let b: Vec<f64> = coef.iter().map(|c| c[1]).collect();
    let c: Vec<f64> = coef.iter().map(|c| c[2]).collect();
    let ba = box_sum(&a, dims, r);
    let bb = box_sum(&b, dims, r);
    let bc = box_sum(&c, dims, r);
    let scale = -1.0 / n as f64;
    let grad = (0..n)
        .into_par_iter()
        .map(|y| scale * (fixed[y] * ba[y] + 2.0 * warped[y] * bb[y] + bc[y]))
        .collect();
    (loss, Some(grad))
}

/// Local NCC loss between `fixed` and `moving` warped by `field`, with its
/// gradient with respect to the field.
pub fn ncc_loss_grad(
    fixed: &Volume,
    moving: &Volume,
    field: &DisplacementField,
    window: usize,
) -> Result<(f64, GradField)> {
    let dims = fixed.dims();
    dims.require_same(&moving.dims())?;
    dims.require_same(&field.dims())?;
    validate_window(window, dims)?;
    let (warped, coord_grad) = warp_with_grad(moving, field)?;
    let f = fixed_samples(fixed);
    let (loss, dw) = ncc_image_terms(&f, &warped, dims, window, true);
    Ok((loss, chain_to_field(dims, &dw.unwrap(), &coord_grad)))
}
