//! Overlap, surface-distance and deformation-regularity metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, DisplacementField, LabelMap};
use crate::warp::{jacobian_determinants, warp_labels};

/// Determinants at or below this are treated as folded.
pub const FOLD_THRESHOLD: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dice_per_label: BTreeMap<u16, f64>,
    pub dice_mean: f64,
    /// `None` where the warped label vanished and HD95 is undefined.
    pub hd95_per_label: BTreeMap<u16, Option<f64>>,
    pub sdlogj: f64,
    pub folded_fraction: f64,
}

/// `2|A & B| / (|A| + |B|)` for voxels carrying `label`. Both empty gives 1.
pub fn dice(a: &LabelMap, b: &LabelMap, label: u16) -> Result<f64> {
    a.dims().require_same(&b.dims())?;
    let (mut both, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (in_a, in_b) = (x == label, y == label);
        na += in_a as usize;
        nb += in_b as usize;
        both += (in_a && in_b) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Voxels of the mask with at least one 6-neighbour outside it; the region
/// beyond the grid counts as outside.
pub fn boundary_voxels(mask: &[bool], dims: Dims) -> Vec<usize> {
    let [nx, ny, nz] = dims.0;
    let mut out = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = dims.index(i, j, k);
                if !mask[idx] {
                    continue;
                }
                let edge = i == 0 || j == 0 || k == 0 || i + 1 == nx || j + 1 == ny || k + 1 == nz;
                let exposed = edge
                    || !mask[idx - 1]
                    || !mask[idx + 1]
                    || !mask[idx - nx]
                    || !mask[idx + nx]
                    || !mask[idx - nx * ny]
                    || !mask[idx + nx * ny];
                if exposed {
                    out.push(idx);
                }
            }
        }
    }
    out
}

/// Lower envelope of parabolas along one line, spacing `s` between samples.
fn edt_line(f: &[f64], s: f64, out: &mut [f64]) {
    let n = f.len();
    let mut sites: Vec<usize> = Vec::with_capacity(n);
    let mut starts: Vec<f64> = Vec::with_capacity(n);
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + (q as f64 * s).powi(2);
        while let Some(&p) = sites.last() {
            let fp = f[p] + (p as f64 * s).powi(2);
            let x = (fq - fp) / (2.0 * s * s * (q - p) as f64);
            if x <= *starts.last().unwrap() {
                sites.pop();
                starts.pop();
            } else {
                sites.push(q);
                starts.push(x);
                break;
            }
        }
        if sites.is_empty() {
            sites.push(q);
            starts.push(f64::NEG_INFINITY);
        }
    }
    if sites.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < sites.len() && starts[k + 1] < q as f64 {
            k += 1;
        }
        let d = (q as f64 - sites[k] as f64) * s;
        *o = d * d + f[sites[k]];
    }
}

/// Exact squared Euclidean distance (mm^2) from every voxel to the nearest
/// seed voxel, by separable lower-envelope passes.
pub fn squared_distance_transform(seeds: &[usize], dims: Dims, spacing: [f64; 3]) -> Vec<f64> {
    let mut cur = vec![f64::INFINITY; dims.len()];
    for &s in seeds {
        cur[s] = 0.0;
    }
    let strides = [1, dims.nx(), dims.slice_len()];
    for axis in 0..3 {
        let n = dims.0[axis];
        let stride = strides[axis];
        let mut line = vec![0.0; n];
        let mut res = vec![0.0; n];
        for start in 0..dims.len() {
            if dims.coords(start)[axis] != 0 {
                continue;
            }
            for (t, l) in line.iter_mut().enumerate() {
                *l = cur[start + t * stride];
            }
            edt_line(&line, spacing[axis], &mut res);
            for (t, r) in res.iter().enumerate() {
                cur[start + t * stride] = *r;
            }
        }
    }
    cur
}

/// Linear-interpolated percentile (inclusive definition) of sorted values.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// 95th percentile of the pooled symmetric boundary-to-boundary distances
/// in mm.
pub fn hd95(a: &LabelMap, b: &LabelMap, label: u16, spacing: [f64; 3]) -> Result<f64> {
    let dims = a.dims();
    dims.require_same(&b.dims())?;
    let mask_a: Vec<bool> = a.data().iter().map(|&l| l == label).collect();
    let mask_b: Vec<bool> = b.data().iter().map(|&l| l == label).collect();
    let edge_a = boundary_voxels(&mask_a, dims);
    let edge_b = boundary_voxels(&mask_b, dims);
    if edge_a.is_empty() || edge_b.is_empty() {
        return Err(Error::UndefinedHd95(label));
    }
    let dt_a = squared_distance_transform(&edge_a, dims, spacing);
    let dt_b = squared_distance_transform(&edge_b, dims, spacing);
    let mut pooled: Vec<f64> = edge_a
        .iter()
        .map(|&p| dt_b[p].sqrt())
        .chain(edge_b.iter().map(|&p| dt_a[p].sqrt()))
        .collect();
    pooled.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&pooled, 95.0))
}

/// Which voxels enter the log-Jacobian statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JacobianRegion {
    All,
    /// Excludes boundary faces where one-sided differences are used.
    Interior,
}

/// Population standard deviation of `ln det J` and the folded fraction.
pub fn sdlogj(field: &DisplacementField) -> Result<(f64, f64)> {
    sdlogj_region(field, JacobianRegion::All)
}

pub fn sdlogj_region(field: &DisplacementField, region: JacobianRegion) -> Result<(f64, f64)> {
    let dims = field.dims();
    let dets = jacobian_determinants(field)?;
    let inside = |idx: usize| match region {
        JacobianRegion::All => true,
        JacobianRegion::Interior => {
            let c = dims.coords(idx);
            (0..3).all(|a| c[a] > 0 && c[a] + 1 < dims.0[a])
        }
    };
    let mut logs = Vec::with_capacity(dets.len());
    let mut total = 0usize;
    for (idx, &d) in dets.iter().enumerate() {
        if !inside(idx) {
            continue;
        }
        total += 1;
        if d > FOLD_THRESHOLD {
            logs.push(d.ln());
        }
    }
    if logs.is_empty() {
        return Err(Error::AllFolded);
    }
    let folded = (total - logs.len()) as f64 / total as f64;
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / logs.len() as f64;
    Ok((var.sqrt(), folded))
}

/// Warps `moving_labels` by `field` and scores it against `fixed_labels` on
/// every non-background label present in both inputs.
pub fn evaluate(
    fixed_labels: &LabelMap,
    moving_labels: &LabelMap,
    field: &DisplacementField,
    spacing: [f64; 3],
) -> Result<MetricsReport> {
    let dims = fixed_labels.dims();
    dims.require_same(&moving_labels.dims())?;
    dims.require_same(&field.dims())?;
    let in_moving = moving_labels.labels();
    let shared: Vec<u16> = fixed_labels
        .labels()
        .into_iter()
        .filter(|l| in_moving.binary_search(l).is_ok())
        .collect();
    if shared.is_empty() {
        return Err(Error::NoCommonLabels);
    }
    let warped = warp_labels(moving_labels, field)?;
    let mut dice_per_label = BTreeMap::new();
    let mut hd95_per_label = BTreeMap::new();
    for &l in &shared {
        dice_per_label.insert(l, dice(fixed_labels, &warped, l)?);
        let h = match hd95(fixed_labels, &warped, l, spacing) {
            Ok(h) => Some(h),
            Err(Error::UndefinedHd95(_)) => None,
            Err(e) => return Err(e),
        };
        hd95_per_label.insert(l, h);
    }
    let dice_mean = dice_per_label.values().sum::<f64>() / shared.len() as f64;
    let (sd, folded_fraction) = sdlogj(field)?;
    Ok(MetricsReport {
        dice_per_label,
        dice_mean,
        hd95_per_label,
        sdlogj: sd,
        folded_fraction,
    })
}
