//! Windowed sums over cubic neighbourhoods clipped to the grid.
//!
//! The clipped box sum is self-adjoint: voxel `y` lies in the window of `x`
//! exactly when `x` lies in the window of `y`. Gradients of windowed
//! statistics therefore reuse the same filter.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::Dims;

pub(crate) fn validate_window(window: usize, dims: Dims) -> Result<()> {
    let max = dims.min_axis();
    if window.is_multiple_of(2) || window < 3 || window > max {
        return Err(Error::InvalidWindow {
            window,
            min: 3,
            max,
        });
    }
    Ok(())
}

#[inline]
pub(crate) fn clip(pos: usize, radius: usize, n: usize) -> (usize, usize) {
    (pos.saturating_sub(radius), (pos + radius).min(n - 1))
}

/// Sum of `data` over the `(2r+1)^3` window around each voxel, clipped to
/// the grid. Summation order is fixed, so results do not depend on the
/// thread count.
pub(crate) fn box_sum(data: &[f64], dims: Dims, radius: usize) -> Vec<f64> {
    let [nx, ny, nz] = dims.0;
    let slice = dims.slice_len();

    let mut along_x = vec![0.0; data.len()];
    along_x
        .par_chunks_mut(slice)
        .zip(data.par_chunks(slice))
        .for_each(|(out, src)| {
            for j in 0..ny {
                let row = &src[j * nx..(j + 1) * nx];
                for i in 0..nx {
                    let (lo, hi) = clip(i, radius, nx);
                    out[j * nx + i] = row[lo..=hi].iter().sum();
                }
            }
        });

    let mut along_y = vec![0.0; data.len()];
    along_y
        .par_chunks_mut(slice)
        .zip(along_x.par_chunks(slice))
        .for_each(|(out, src)| {
            for j in 0..ny {
                let (lo, hi) = clip(j, radius, ny);
                for i in 0..nx {
                    let mut acc = 0.0;
                    for jj in lo..=hi {
                        acc += src[jj * nx + i];
                    }
                    out[j * nx + i] = acc;
                }
            }
        });

    let mut along_z = vec![0.0; data.len()];
    along_z.par_chunks_mut(slice).enumerate().for_each(|(k, out)| {
        let (lo, hi) = clip(k, radius, nz);
        for kk in lo..=hi {
            let src = &along_y[kk * slice..(kk + 1) * slice];
            for (o, s) in out.iter_mut().zip(src) {
                *o += s;
            }
        }
    });
    along_z
}

/// Sum with a fixed reduction tree: per-slice partials, then in slice order.
pub(crate) fn ordered_sum(values: &[f64], dims: Dims) -> f64 {
    let partials: Vec<f64> = values
        .par_chunks(dims.slice_len())
        .map(|c| c.iter().sum::<f64>())
        .collect();
    partials.iter().sum()
}
