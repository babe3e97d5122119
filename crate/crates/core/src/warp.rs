//! Pull-warping under `phi(x) = x + u(x)` and Jacobian determinants.
//!
//! Out-of-grid sample coordinates clamp to the nearest edge voxel per axis.

use rayon::prelude::*;

use crate::error::Result;
use crate::volume::{Dims, DisplacementField, LabelMap, Volume};

/// Trilinear sample and its derivative with respect to the sample position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleResult {
    pub value: f64,
    /// Partial derivatives of `value` along x, y, z (per voxel).
    pub coord_grad: [f64; 3],
}

/// Cell lookup along one axis: lower node, upper node, fractional offset,
/// and whether the coordinate lies inside the grid (derivative non-zero).
#[inline]
fn axis_cell(p: f64, n: usize) -> (usize, usize, f64, bool) {
    let last = n - 1;
    if n == 1 || p < 0.0 {
        return (0, 0, 0.0, false);
    }
    if p > last as f64 {
        return (last, last, 0.0, false);
    }
    let i0 = (p.floor() as usize).min(last);
    let i1 = (i0 + 1).min(last);
    (i0, i1, p - i0 as f64, true)
}

#[inline]
pub(crate) fn sample_slice(data: &[f32], dims: Dims, p: [f64; 3]) -> SampleResult {
    let (x0, x1, fx, ax) = axis_cell(p[0], dims.nx());
    let (y0, y1, fy, ay) = axis_cell(p[1], dims.ny());
    let (z0, z1, fz, az) = axis_cell(p[2], dims.nz());
    let at = |i: usize, j: usize, k: usize| data[dims.index(i, j, k)] as f64;

    let v000 = at(x0, y0, z0);
    let v100 = at(x1, y0, z0);
    let v010 = at(x0, y1, z0);
    let v110 = at(x1, y1, z0);
    let v001 = at(x0, y0, z1);
    let v101 = at(x1, y0, z1);
    let v011 = at(x0, y1, z1);
    let v111 = at(x1, y1, z1);

    let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);

    let value = gz * (gy * (gx * v000 + fx * v100) + fy * (gx * v010 + fx * v110))
        + fz * (gy * (gx * v001 + fx * v101) + fy * (gx * v011 + fx * v111));

    let dx = if ax {
        gz * (gy * (v100 - v000) + fy * (v110 - v010)) + fz * (gy * (v101 - v001) + fy * (v111 - v011))
    } else {
        0.0
    };
    let dy = if ay {
        gz * (gx * (v010 - v000) + fx * (v110 - v100)) + fz * (gx * (v011 - v001) + fx * (v111 - v101))
    } else {
        0.0
    };
    let dz = if az {
        gy * (gx * (v001 - v000) + fx * (v101 - v100)) + fy * (gx * (v011 - v010) + fx * (v111 - v110))
    } else {
        0.0
    };

    SampleResult {
        value,
        coord_grad: [dx, dy, dz],
    }
}

/// Samples `v` at continuous voxel coordinate `p` with clamp-to-edge.
pub fn sample_trilinear(v: &Volume, p: [f64; 3]) -> SampleResult {
    sample_slice(v.data(), v.dims(), p)
}

/// Warped intensities (in f64) and their coordinate gradients for every voxel.
pub(crate) fn warp_with_grad(
    moving: &Volume,
    field: &DisplacementField,
) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
    let dims = moving.dims();
    dims.require_same(&field.dims())?;
    let n = dims.len();
    let mut values = vec![0.0; n];
    let mut grads = vec![[0.0; 3]; n];
    let slice = dims.slice_len();
    values
        .par_chunks_mut(slice)
        .zip(grads.par_chunks_mut(slice))
        .enumerate()
        .for_each(|(k, (vals, grs))| {
            for j in 0..dims.ny() {
                for i in 0..dims.nx() {
                    let local = i + dims.nx() * j;
                    let u = field.data()[local + k * slice];
                    let s = sample_slice(
                        moving.data(),
                        dims,
                        [i as f64 + u[0], j as f64 + u[1], k as f64 + u[2]],
                    );
                    vals[local] = s.value;
                    grs[local] = s.coord_grad;
                }
            }
        });
    Ok((values, grads))
}

/// `output[x] = moving(x + u(x))`, trilinear, dims and spacing from `moving`.
pub fn warp(moving: &Volume, field: &DisplacementField) -> Result<Volume> {
    let dims = moving.dims();
    dims.require_same(&field.dims())?;
    let slice = dims.slice_len();
    let mut out = vec![0.0f32; dims.len()];
    out.par_chunks_mut(slice).enumerate().for_each(|(k, row)| {
        for j in 0..dims.ny() {
            for i in 0..dims.nx() {
                let local = i + dims.nx() * j;
                let u = field.data()[local + k * slice];
                let p = [i as f64 + u[0], j as f64 + u[1], k as f64 + u[2]];
                row[local] = sample_slice(moving.data(), dims, p).value as f32;
            }
        }
    });
    Volume::new(dims, moving.spacing(), out)
}

#[inline]
fn nearest(p: f64, n: usize) -> usize {
    // f64::round is round-half-away-from-zero.
    let r = p.round();
    if r <= 0.0 {
        0
    } else {
        (r as usize).min(n - 1)
    }
}

/// Nearest-neighbour pull-warp of a label map (ties round away from zero).
pub fn warp_labels(labels: &LabelMap, field: &DisplacementField) -> Result<LabelMap> {
    let dims = labels.dims();
    dims.require_same(&field.dims())?;
    let slice = dims.slice_len();
    let mut out = vec![0u16; dims.len()];
    out.par_chunks_mut(slice).enumerate().for_each(|(k, row)| {
        for j in 0..dims.ny() {
            for i in 0..dims.nx() {
                let local = i + dims.nx() * j;
                let u = field.data()[local + k * slice];
                let si = nearest(i as f64 + u[0], dims.nx());
                let sj = nearest(j as f64 + u[1], dims.ny());
                let sk = nearest(k as f64 + u[2], dims.nz());
                row[local] = labels.get(si, sj, sk);
            }
        }
    });
    LabelMap::new(dims, labels.spacing(), out)
}

/// Finite difference of component `c` along `axis` at voxel `(i, j, k)`:
/// central in the interior, one-sided on boundary faces.
#[inline]
fn axis_derivative(field: &DisplacementField, at: [usize; 3], axis: usize, c: usize) -> f64 {
    let dims = field.dims();
    let n = dims.0[axis];
    let mut lo = at;
    let mut hi = at;
    let pos = at[axis];
    let span = if pos == 0 {
        hi[axis] = 1;
        1.0
    } else if pos == n - 1 {
        lo[axis] = n - 2;
        1.0
    } else {
        lo[axis] = pos - 1;
        hi[axis] = pos + 1;
        2.0
    };
    (field.get(hi[0], hi[1], hi[2])[c] - field.get(lo[0], lo[1], lo[2])[c]) / span
}

/// Determinant of `I + grad u` at every voxel, in f64.
pub fn jacobian_determinants(field: &DisplacementField) -> Result<Vec<f64>> {
    let dims = field.dims();
    dims.require_min_axis(2)?;
    let slice = dims.slice_len();
    let mut out = vec![0.0; dims.len()];
    out.par_chunks_mut(slice).enumerate().for_each(|(k, row)| {
        for j in 0..dims.ny() {
            for i in 0..dims.nx() {
                let mut m = [[0.0; 3]; 3];
                for (c, mrow) in m.iter_mut().enumerate() {
                    for (axis, entry) in mrow.iter_mut().enumerate() {
                        *entry = axis_derivative(field, [i, j, k], axis, c)
                            + if c == axis { 1.0 } else { 0.0 };
                    }
                }
                row[i + dims.nx() * j] = det3(&m);
            }
        }
    });
    Ok(out)
}

#[inline]
pub(crate) fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Per-voxel Jacobian determinant of the transform as a volume.
pub fn jacobian_determinant(field: &DisplacementField) -> Result<Volume> {
    let dets = jacobian_determinants(field)?;
    Volume::new(
        field.dims(),
        field.spacing(),
        dets.into_iter().map(|d| d as f32).collect(),
    )
}
