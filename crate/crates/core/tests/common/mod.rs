//! Independent reference implementations used as test oracles. None of these
//! share code with the library paths they check.

#![allow(dead_code)]

use ttr_core::{Dims, DisplacementField, Volume};

/// Direct trilinear pull-warp with clamp-to-edge, in f64.
pub fn naive_warp(moving: &Volume, field: &DisplacementField) -> Vec<f64> {
    let d = moving.dims();
    let clampf = |p: f64, n: usize| p.max(0.0).min((n - 1) as f64);
    let mut out = Vec::with_capacity(d.len());
    for k in 0..d.nz() {
        for j in 0..d.ny() {
            for i in 0..d.nx() {
                let u = field.get(i, j, k);
                let p = [
                    clampf(i as f64 + u[0], d.nx()),
                    clampf(j as f64 + u[1], d.ny()),
                    clampf(k as f64 + u[2], d.nz()),
                ];
                let mut acc = 0.0;
                for dz in 0..2 {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let c = [p[0].floor() as usize + dx, p[1].floor() as usize + dy, p[2].floor() as usize + dz];
                            let w: f64 = (0..3)
                                .map(|a| {
                                    let f = p[a] - p[a].floor();
                                    if [dx, dy, dz][a] == 1 { f } else { 1.0 - f }
                                })
                                .product();
                            if w == 0.0 {
                                continue;
                            }
                            acc += w * moving.get(c[0].min(d.nx() - 1), c[1].min(d.ny() - 1), c[2].min(d.nz() - 1)) as f64;
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

fn window_values(data: &[f64], d: Dims, centre: [usize; 3], r: usize) -> Vec<f64> {
    let mut v = Vec::new();
    for k in centre[2].saturating_sub(r)..=(centre[2] + r).min(d.nz() - 1) {
        for j in centre[1].saturating_sub(r)..=(centre[1] + r).min(d.ny() - 1) {
            for i in centre[0].saturating_sub(r)..=(centre[0] + r).min(d.nx() - 1) {
                v.push(data[d.index(i, j, k)]);
            }
        }
    }
    v
}

/// `1 - mean(cc)` with centred sums over grid-clipped windows.
pub fn naive_ncc(fixed: &[f64], warped: &[f64], d: Dims, window: usize, eps: f64) -> f64 {
    let r = window / 2;
    let mut total = 0.0;
    for idx in 0..d.len() {
        let c = d.coords(idx);
        let a = window_values(fixed, d, c, r);
        let b = window_values(warped, d, c, r);
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cross: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        total += cross * cross / (va * vb + eps);
    }
    1.0 - total / d.len() as f64
}

/// `1 - mean(SSIM)` over windows fully inside the grid, population statistics.
pub fn naive_ssim(fixed: &[f64], warped: &[f64], d: Dims, window: usize, c1: f64, c2: f64) -> f64 {
    let r = window / 2;
    let mut total = 0.0;
    let mut count = 0usize;
    for idx in 0..d.len() {
        let c = d.coords(idx);
        if (0..3).any(|a| c[a] < r || c[a] + r >= d.0[a]) {
            continue;
        }
        let x = window_values(fixed, d, c, r);
        let y = window_values(warped, d, c, r);
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let vx = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
        let vy = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
        let cxy = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
        total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        count += 1;
    }
    1.0 - total / count as f64
}

/// Sum of squared forward differences over `9 * voxels`.
pub fn naive_smooth(field: &DisplacementField) -> f64 {
    let d = field.dims();
    let mut total = 0.0;
    for k in 0..d.nz() {
        for j in 0..d.ny() {
            for i in 0..d.nx() {
                let u = field.get(i, j, k);
                let next = [
                    (i + 1 < d.nx()).then(|| field.get(i + 1, j, k)),
                    (j + 1 < d.ny()).then(|| field.get(i, j + 1, k)),
                    (k + 1 < d.nz()).then(|| field.get(i, j, k + 1)),
                ];
                for n in next.into_iter().flatten() {
                    for c in 0..3 {
                        total += (n[c] - u[c]).powi(2);
                    }
                }
            }
        }
    }
    total / (9 * d.len()) as f64
}

/// All-pairs boundary distances, pooled, 95th percentile (linear, inclusive).
pub fn brute_hd95(a: &[bool], b: &[bool], d: Dims, spacing: [f64; 3]) -> f64 {
    let boundary = |m: &[bool]| -> Vec<[usize; 3]> {
        (0..d.len())
            .filter(|&idx| m[idx])
            .map(|idx| d.coords(idx))
            .filter(|c| {
                let offsets: [[i64; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];
                offsets.iter().any(|o| {
                    let q: Vec<i64> = (0..3).map(|a| c[a] as i64 + o[a]).collect();
                    if (0..3).any(|a| q[a] < 0 || q[a] >= d.0[a] as i64) {
                        return true;
                    }
                    !m[d.index(q[0] as usize, q[1] as usize, q[2] as usize)]
                })
            })
            .collect()
    };
    let ba = boundary(a);
    let bb = boundary(b);
    let dist = |p: &[usize; 3], q: &[usize; 3]| {
        (0..3)
            .map(|a| ((p[a] as f64 - q[a] as f64) * spacing[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut pooled = Vec::new();
    for p in &ba {
        pooled.push(bb.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min));
    }
    for q in &bb {
        pooled.push(ba.iter().map(|p| dist(p, q)).fold(f64::INFINITY, f64::min));
    }
    pooled.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let pos = 0.95 * (pooled.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(pooled.len() - 1);
    pooled[lo] + (pos - lo as f64) * (pooled[hi] - pooled[lo])
}

/// Count-based Dice.
pub fn brute_dice(a: &[u16], b: &[u16], label: u16) -> f64 {
    let sa = a.iter().filter(|&&x| x == label).count();
    let sb = b.iter().filter(|&&x| x == label).count();
    let both = a.iter().zip(b).filter(|(&x, &y)| x == label && y == label).count();
    if sa + sb == 0 {
        1.0
    } else {
        2.0 * both as f64 / (sa + sb) as f64
    }
}

/// Explicit 3x3 Jacobian per voxel, Welford standard deviation of the logs.
pub fn naive_sdlogj(field: &DisplacementField) -> (f64, f64) {
    let d = field.dims();
    let deriv = |i: usize, j: usize, k: usize, axis: usize, c: usize| -> f64 {
        let p = [i, j, k];
        let n = d.0[axis];
        let (lo, hi, h) = if p[axis] == 0 {
            (0, 1, 1.0)
        } else if p[axis] == n - 1 {
            (n - 2, n - 1, 1.0)
        } else {
            (p[axis] - 1, p[axis] + 1, 2.0)
        };
        let mut a = p;
        let mut b = p;
        a[axis] = lo;
        b[axis] = hi;
        (field.get(b[0], b[1], b[2])[c] - field.get(a[0], a[1], a[2])[c]) / h
    };
    let (mut n, mut mean, mut m2, mut folded) = (0.0f64, 0.0f64, 0.0f64, 0usize);
    for k in 0..d.nz() {
        for j in 0..d.ny() {
            for i in 0..d.nx() {
                let j_ = |c: usize, a: usize| deriv(i, j, k, a, c) + if a == c { 1.0 } else { 0.0 };
                let det = j_(0, 0) * j_(1, 1) * j_(2, 2) + j_(0, 1) * j_(1, 2) * j_(2, 0) + j_(0, 2) * j_(1, 0) * j_(2, 1)
                    - j_(0, 2) * j_(1, 1) * j_(2, 0)
                    - j_(0, 0) * j_(1, 2) * j_(2, 1)
                    - j_(0, 1) * j_(1, 0) * j_(2, 2);
                if det <= 1e-9 {
                    folded += 1;
                    continue;
                }
                let x = det.ln();
                n += 1.0;
                let delta = x - mean;
                mean += delta / n;
                m2 += delta * (x - mean);
            }
        }
    }
    ((m2 / n).sqrt(), folded as f64 / d.len() as f64)
}

/// Standard synthetic task with an initial field of ground truth plus
/// uniform noise of +-0.25 voxels.
pub fn warm_fixture(seed: u64) -> (ttr_core::synth::SyntheticTask, DisplacementField) {
    let task = ttr_core::synth::make_task(&ttr_core::synth::TaskSpec::standard(seed)).unwrap();
    let init = ttr_core::synth::perturb_field(&task.ground_truth, 0.25, seed + 100);
    (task, init)
}

/// Endpoint error after every evaluation of a refine run.
pub fn epe_curve(
    task: &ttr_core::synth::SyntheticTask,
    init: &DisplacementField,
    cfg: &ttr_core::TtrConfig,
) -> (ttr_core::RefineResult, Vec<f64>) {
    let mut curve = Vec::new();
    let r = ttr_core::refine::refine_with(&task.fixed, &task.moving, init, cfg, |p| {
        curve.push(task.foreground_endpoint_error(p.field))
    })
    .unwrap();
    (r, curve)
}
