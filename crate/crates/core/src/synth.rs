//! Seeded synthetic phantoms, label maps and deformation fields.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`), seeded with
//! `seed_from_u64`; that stream is value-stable across crate versions, so a
//! seed pins every generated fixture. Retries for fold-free fields switch the
//! ChaCha stream id rather than the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{normalize_intensity, Dims, DisplacementField, LabelMap, Volume};
use crate::warp::{jacobian_determinants, warp, warp_labels};

/// Fold-free threshold for generated ground-truth fields.
pub const MIN_GENERATED_DET: f64 = 0.1;
const FOLD_FREE_ATTEMPTS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    Spheres,
    CheckerSmooth,
    GradientBlobs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub kind: PhantomKind,
    pub num_objects: usize,
    pub seed: u64,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= s);
    k
}

/// Separable Gaussian blur with clamp-to-edge boundaries.
pub(crate) fn gaussian_smooth(data: &[f64], dims: Dims, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let strides = [1, dims.nx(), dims.slice_len()];
    let mut cur = data.to_vec();
    for axis in 0..3 {
        let n = dims.0[axis] as isize;
        let mut next = vec![0.0; cur.len()];
        for (idx, out) in next.iter_mut().enumerate() {
            let pos = dims.coords(idx)[axis] as isize;
            let base = idx as isize - pos * strides[axis] as isize;
            let mut acc = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                let q = (pos + t as isize - radius).clamp(0, n - 1);
                acc += w * cur[(base + q * strides[axis] as isize) as usize];
            }
            *out = acc;
        }
        cur = next;
    }
    cur
}

/// Smoothed uniform noise rescaled to `[0, 1]`.
pub fn make_noise_volume(dims: Dims, spacing: [f64; 3], sigma: f64, seed: u64) -> Result<Volume> {
    let mut rng = rng_for(seed, 0);
    let raw: Vec<f64> = (0..dims.len()).map(|_| rng.random::<f64>()).collect();
    let smooth = gaussian_smooth(&raw, dims, sigma);
    let v = Volume::new(dims, spacing, smooth.iter().map(|&x| x as f32).collect())?;
    Ok(normalize_intensity(&v))
}

/// Constant field `u(x) = t`.
pub fn make_translation_field(dims: Dims, spacing: [f64; 3], t: [f64; 3]) -> DisplacementField {
    let mut f = DisplacementField::zeros(dims, spacing);
    f.data_mut().iter_mut().for_each(|u| *u = t);
    f
}

/// Gaussian-smoothed random field scaled so the largest displacement
/// magnitude equals `amplitude` voxels. Fields whose minimum Jacobian
/// determinant is not above [`MIN_GENERATED_DET`] are rejected and redrawn.
pub fn make_smooth_field(
    dims: Dims,
    spacing: [f64; 3],
    amplitude: f64,
    sigma: f64,
    seed: u64,
) -> Result<DisplacementField> {
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "amplitude must be finite and non-negative, got {amplitude}"
        )));
    }
    if amplitude == 0.0 {
        return Ok(DisplacementField::zeros(dims, spacing));
    }
    for attempt in 0..FOLD_FREE_ATTEMPTS {
        let mut rng = rng_for(seed, attempt as u64);
        // Noise is drawn on a grid padded by the kernel radius and cropped
        // after smoothing, so edge voxels see as many samples as interior ones.
        let pad = (3.0 * sigma).ceil() as usize;
        let padded = Dims::new(dims.nx() + 2 * pad, dims.ny() + 2 * pad, dims.nz() + 2 * pad);
        let comps: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                let raw: Vec<f64> = (0..padded.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let smooth = gaussian_smooth(&raw, padded, sigma);
                (0..dims.len())
                    .map(|idx| {
                        let [i, j, k] = dims.coords(idx);
                        smooth[padded.index(i + pad, j + pad, k + pad)]
                    })
                    .collect()
            })
            .collect();
        let max_norm = (0..dims.len())
            .map(|i| (comps[0][i].powi(2) + comps[1][i].powi(2) + comps[2][i].powi(2)).sqrt())
            .fold(0.0, f64::max);
        if max_norm == 0.0 {
            continue;
        }
        let scale = amplitude / max_norm;
        let data = (0..dims.len())
            .map(|i| [comps[0][i] * scale, comps[1][i] * scale, comps[2][i] * scale])
            .collect();
        let field = DisplacementField::new(dims, spacing, data)?;
        if dims.min_axis() < 2 {
            return Ok(field);
        }
        let min_det = jacobian_determinants(&field)?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if min_det > MIN_GENERATED_DET {
            return Ok(field);
        }
    }
    Err(Error::FoldFreeBudget(FOLD_FREE_ATTEMPTS))
}

/// Adds independent uniform noise in `[-amplitude, amplitude]` to every
/// component; a stand-in for an imperfect initial estimate.
pub fn perturb_field(field: &DisplacementField, amplitude: f64, seed: u64) -> DisplacementField {
    let mut rng = rng_for(seed, 0);
    let mut out = field.clone();
    if amplitude > 0.0 {
        for c in out.data_mut().iter_mut().flatten() {
            *c += rng.random_range(-amplitude..=amplitude);
        }
    }
    out
}

#[inline]
fn smoothstep_inside(dist: f64, radius: f64, width: f64) -> f64 {
    1.0 / (1.0 + ((dist - radius) / width).exp())
}

/// Smooth image in `[0, 1]` and its label map.
pub fn make_phantom(spec: &PhantomSpec) -> Result<(Volume, LabelMap)> {
    let dims = spec.dims;
    if dims.min_axis() < 8 {
        return Err(Error::AxisTooShort {
            dims: dims.0,
            min: 8,
        });
    }
    if spec.num_objects == 0 {
        return Err(Error::InvalidConfig("num_objects must be positive".into()));
    }
    let spacing = [1.0; 3];
    let n = dims.len();
    let nmin = dims.min_axis() as f64;
    let mut rng = rng_for(spec.seed, 0);
    let texture: Vec<f64> = make_noise_volume(dims, spacing, 2.0, spec.seed ^ 0x5eed_7e47)?
        .data()
        .iter()
        .map(|&v| v as f64)
        .collect();
    let mut image = vec![0.0; n];
    let mut labels = vec![0u16; n];
    let coords = |idx: usize| {
        let [i, j, k] = dims.coords(idx);
        [i as f64, j as f64, k as f64]
    };

    match spec.kind {
        PhantomKind::Spheres => {
            for (idx, px) in image.iter_mut().enumerate() {
                *px = 0.25 * texture[idx];
            }
            for obj in 0..spec.num_objects {
                let centre: [f64; 3] =
                    std::array::from_fn(|a| rng.random_range(0.3..0.7) * (dims.0[a] - 1) as f64);
                let radius = rng.random_range(0.15..0.25) * nmin;
                let level = rng.random_range(0.55..1.0);
                let label = (obj + 1) as u16;
                for idx in 0..n {
                    let p = coords(idx);
                    let d = (0..3).map(|a| (p[a] - centre[a]).powi(2)).sum::<f64>().sqrt();
                    let inside = smoothstep_inside(d, radius, 0.6);
                    let value = level * (0.75 + 0.25 * texture[idx]);
                    image[idx] = image[idx] * (1.0 - inside) + value * inside;
                    if d < radius {
                        labels[idx] = label;
                    }
                }
            }
        }
        PhantomKind::CheckerSmooth => {
            let period = (nmin / spec.num_objects as f64).max(4.0);
            let w = 2.0 * std::f64::consts::PI / period;
            let phase: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..period));
            for idx in 0..n {
                let p = coords(idx);
                let s = (w * (p[0] + phase[0])).sin()
                    * (w * (p[1] + phase[1])).sin()
                    * (w * (p[2] + phase[2])).sin();
                image[idx] = 0.5 + 0.4 * s + 0.1 * texture[idx];
                labels[idx] = u16::from(s > 0.0);
            }
        }
        PhantomKind::GradientBlobs => {
            let mut strongest = vec![0.0f64; n];
            for idx in 0..n {
                image[idx] = 0.3 * coords(idx)[0] / (dims.nx() - 1) as f64 + 0.1 * texture[idx];
            }
            for obj in 0..spec.num_objects {
                let centre: [f64; 3] =
                    std::array::from_fn(|a| rng.random_range(0.25..0.75) * (dims.0[a] - 1) as f64);
                let sigma = rng.random_range(0.08..0.15) * nmin;
                let amp = rng.random_range(0.4..0.8);
                for idx in 0..n {
                    let p = coords(idx);
                    let d2 = (0..3).map(|a| (p[a] - centre[a]).powi(2)).sum::<f64>();
                    let g = (-d2 / (2.0 * sigma * sigma)).exp();
                    image[idx] += amp * g;
                    if g > 0.5 && g > strongest[idx] {
                        strongest[idx] = g;
                        labels[idx] = (obj + 1) as u16;
                    }
                }
            }
        }
    }

    if labels.iter().all(|&l| l == 0) {
        return Err(Error::InvalidConfig(
            "phantom has no foreground at this size".into(),
        ));
    }
    let volume = Volume::new(dims, spacing, image.iter().map(|&v| v as f32).collect())?;
    Ok((normalize_intensity(&volume), LabelMap::new(dims, spacing, labels)?))
}

/// A registration problem with known answer: `fixed = moving o (x + gt)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub phantom: PhantomSpec,
    /// Largest ground-truth displacement, voxels.
    pub amplitude: f64,
    /// Ground-truth smoothing, voxels.
    pub sigma: f64,
}

impl TaskSpec {
    /// 16^3 sphere phantom with a fold-free field of amplitude 2, sigma 4.
    pub fn standard(seed: u64) -> Self {
        TaskSpec {
            phantom: PhantomSpec {
                dims: Dims::cube(16),
                kind: PhantomKind::Spheres,
                num_objects: 3,
                seed,
            },
            amplitude: 2.0,
            sigma: 4.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub fixed: Volume,
    pub moving: Volume,
    pub fixed_labels: LabelMap,
    pub moving_labels: LabelMap,
    pub ground_truth: DisplacementField,
}

impl SyntheticTask {
    /// Mean `|u - gt|` over voxels where the fixed label map is foreground.
    pub fn foreground_endpoint_error(&self, field: &DisplacementField) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for ((l, u), g) in self
            .fixed_labels
            .data()
            .iter()
            .zip(field.data())
            .zip(self.ground_truth.data())
        {
            if *l != 0 {
                sum += ((u[0] - g[0]).powi(2) + (u[1] - g[1]).powi(2) + (u[2] - g[2]).powi(2)).sqrt();
                count += 1;
            }
        }
        sum / count.max(1) as f64
    }
}

pub fn make_task(spec: &TaskSpec) -> Result<SyntheticTask> {
    let (moving, moving_labels) = make_phantom(&spec.phantom)?;
    let dims = spec.phantom.dims;
    let ground_truth = make_smooth_field(
        dims,
        moving.spacing(),
        spec.amplitude,
        spec.sigma,
        spec.phantom.seed ^ 0x9e37_79b9_7f4a_7c15,
    )?;
    let fixed = warp(&moving, &ground_truth)?;
    let fixed_labels = warp_labels(&moving_labels, &ground_truth)?;
    Ok(SyntheticTask {
        fixed,
        moving,
        fixed_labels,
        moving_labels,
        ground_truth,
    })
}
