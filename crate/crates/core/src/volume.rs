//! Grid containers for images, displacement fields and label maps.
//!
//! All containers share one linear memory order: x varies fastest, then y,
//! then z. The voxel `(i, j, k)` lives at `i + nx * (j + ny * k)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel counts along x, y and z.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims(pub [usize; 3]);

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims([nx, ny, nz])
    }

    pub fn cube(n: usize) -> Self {
        Dims([n, n, n])
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.0[0]
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.0[1]
    }

    #[inline]
    pub fn nz(&self) -> usize {
        self.0[2]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0[0] * self.0[1] * self.0[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of voxels in one z-slice.
    #[inline]
    pub fn slice_len(&self) -> usize {
        self.0[0] * self.0[1]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.0[0] && j < self.0[1] && k < self.0[2]);
        i + self.0[0] * (j + self.0[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.0[0];
        let ny = self.0[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    pub fn min_axis(&self) -> usize {
        self.0.iter().copied().min().unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        if self.0.contains(&0) {
            return Err(Error::InvalidVolume(format!(
                "dims must be positive, got {:?}",
                self.0
            )));
        }
        Ok(())
    }

    pub(crate) fn require_same(&self, other: &Dims) -> Result<()> {
        if self != other {
            return Err(Error::ShapeMismatch(self.0, other.0));
        }
        Ok(())
    }

    pub(crate) fn require_min_axis(&self, min: usize) -> Result<()> {
        if self.min_axis() < min {
            return Err(Error::AxisTooShort { dims: self.0, min });
        }
        Ok(())
    }
}

fn validate_spacing(spacing: [f64; 3]) -> Result<()> {
    if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::InvalidVolume(format!(
            "spacing must be finite and positive, got {spacing:?}"
        )));
    }
    Ok(())
}

fn validate_len(dims: Dims, len: usize) -> Result<()> {
    if len != dims.len() {
        return Err(Error::InvalidVolume(format!(
            "data length {len} does not match dims {:?}",
            dims.0
        )));
    }
    Ok(())
}

/// Scalar 3D image with physical spacing in mm.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: [f64; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: Dims, spacing: [f64; 3], data: Vec<f32>) -> Result<Self> {
        dims.validate()?;
        validate_spacing(spacing)?;
        validate_len(dims, data.len())?;
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(idx));
        }
        Ok(Volume {
            dims,
            spacing,
            data,
        })
    }

    /// Builds a volume by evaluating `f(i, j, k)` at every voxel.
    pub fn from_fn(
        dims: Dims,
        spacing: [f64; 3],
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.len());
        for k in 0..dims.nz() {
            for j in 0..dims.ny() {
                for i in 0..dims.nx() {
                    data.push(f(i, j, k));
                }
            }
        }
        Volume::new(dims, spacing, data)
    }

    pub fn filled(dims: Dims, spacing: [f64; 3], value: f32) -> Result<Self> {
        Volume::new(dims, spacing, vec![value; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.dims.index(i, j, k)]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Min-max rescales samples to `[0, 1]`. A constant volume maps to zeros.
pub fn normalize_intensity(v: &Volume) -> Volume {
    let (lo, hi) = v.min_max();
    let (lo, hi) = (lo as f64, hi as f64);
    let range = hi - lo;
    let data = if range > 0.0 {
        v.data
            .iter()
            .map(|&x| (((x as f64) - lo) / range).clamp(0.0, 1.0) as f32)
            .collect()
    } else {
        vec![0.0; v.data.len()]
    };
    Volume {
        dims: v.dims,
        spacing: v.spacing,
        data,
    }
}

/// Dense field of 3-vectors; displacements are in voxel units, component
/// order `(ux, uy, uz)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    dims: Dims,
    spacing: [f64; 3],
    data: Vec<[f64; 3]>,
}

impl DisplacementField {
    pub fn new(dims: Dims, spacing: [f64; 3], data: Vec<[f64; 3]>) -> Result<Self> {
        dims.validate()?;
        validate_spacing(spacing)?;
        validate_len(dims, data.len())?;
        if let Some(idx) = data.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFinite(idx));
        }
        Ok(DisplacementField {
            dims,
            spacing,
            data,
        })
    }

    pub fn zeros(dims: Dims, spacing: [f64; 3]) -> Self {
        DisplacementField {
            dims,
            spacing,
            data: vec![[0.0; 3]; dims.len()],
        }
    }

    pub fn from_fn(
        dims: Dims,
        spacing: [f64; 3],
        mut f: impl FnMut(usize, usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.len());
        for k in 0..dims.nz() {
            for j in 0..dims.ny() {
                for i in 0..dims.nx() {
                    data.push(f(i, j, k));
                }
            }
        }
        DisplacementField::new(dims, spacing, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        self.data[self.dims.index(i, j, k)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|c| c.is_finite())
    }

    /// Largest per-voxel displacement magnitude.
    pub fn max_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|u| (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Per-voxel derivative of a scalar loss with respect to each displacement
/// component.
#[derive(Clone, Debug, PartialEq)]
pub struct GradField {
    dims: Dims,
    data: Vec<[f64; 3]>,
}

impl GradField {
    pub fn zeros(dims: Dims) -> Self {
        GradField {
            dims,
            data: vec![[0.0; 3]; dims.len()],
        }
    }

    pub(crate) fn from_vec(dims: Dims, data: Vec<[f64; 3]>) -> Self {
        debug_assert_eq!(dims.len(), data.len());
        GradField { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|c| c.is_finite())
    }

    /// Euclidean norm over every component.
    pub fn norm(&self) -> f64 {
        self.data.iter().flatten().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// `self += weight * other`, component-wise.
    pub fn add_scaled(&mut self, weight: f64, other: &GradField) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for c in 0..3 {
                a[c] += weight * b[c];
            }
        }
    }
}

/// Integer segmentation; 0 is background.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    dims: Dims,
    spacing: [f64; 3],
    data: Vec<u16>,
}

impl LabelMap {
    pub fn new(dims: Dims, spacing: [f64; 3], data: Vec<u16>) -> Result<Self> {
        dims.validate()?;
        validate_spacing(spacing)?;
        validate_len(dims, data.len())?;
        Ok(LabelMap {
            dims,
            spacing,
            data,
        })
    }

    pub fn from_fn(
        dims: Dims,
        spacing: [f64; 3],
        mut f: impl FnMut(usize, usize, usize) -> u16,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.len());
        for k in 0..dims.nz() {
            for j in 0..dims.ny() {
                for i in 0..dims.nx() {
                    data.push(f(i, j, k));
                }
            }
        }
        LabelMap::new(dims, spacing, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> u16 {
        self.data[self.dims.index(i, j, k)]
    }

    /// Sorted distinct non-background labels.
    pub fn labels(&self) -> Vec<u16> {
        let mut seen = std::collections::BTreeSet::new();
        for &l in &self.data {
            if l != 0 {
                seen.insert(l);
            }
        }
        seen.into_iter().collect()
    }
}
