//! Diffusion regularizer: mean squared forward difference of every
//! displacement component along every axis.
//!
//! The normaliser is `voxels * 3 axes * 3 components`; differences that
//! would leave the grid are omitted rather than padded.

use crate::error::Result;
use crate::volume::{DisplacementField, GradField};

pub fn smooth_loss_grad(field: &DisplacementField) -> Result<(f64, GradField)> {
    let (loss, grad) = smooth_terms(field, true)?;
    Ok((loss, grad.unwrap()))
}

pub(crate) fn smooth_terms(
    field: &DisplacementField,
    want_grad: bool,
) -> Result<(f64, Option<GradField>)> {
    let dims = field.dims();
    dims.require_min_axis(2)?;
    let norm = (dims.len() * 9) as f64;
    let u = field.data();
    let mut grad = want_grad.then(|| GradField::zeros(dims));
    let strides = [1, dims.nx(), dims.slice_len()];

    let mut total = 0.0;
    for k in 0..dims.nz() {
        for j in 0..dims.ny() {
            for i in 0..dims.nx() {
                let idx = dims.index(i, j, k);
                let pos = [i, j, k];
                for axis in 0..3 {
                    if pos[axis] + 1 >= dims.0[axis] {
                        continue;
                    }
                    let next = idx + strides[axis];
                    for c in 0..3 {
                        let d = u[next][c] - u[idx][c];
                        total += d * d;
                        if let Some(g) = grad.as_mut() {
                            let w = 2.0 * d / norm;
                            let g = g.data_mut();
                            g[next][c] += w;
                            g[idx][c] -= w;
                        }
                    }
                }
            }
        }
    }
    Ok((total / norm, grad))
}
