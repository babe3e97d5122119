use crate::error::{Error, Result};
use crate::volume::{Dims, DisplacementField, GradField};

/// Adam moment buffers for a displacement field.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<[f64; 3]>,
    v: Vec<[f64; 3]>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zeroed state with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn new(dims: Dims) -> Self {
        Self::with_params(dims, 0.9, 0.999, 1e-8)
    }

    pub fn with_params(dims: Dims, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            m: vec![[0.0; 3]; dims.len()],
            v: vec![[0.0; 3]; dims.len()],
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[[f64; 3]] {
        &self.m
    }

    pub fn second_moment(&self) -> &[[f64; 3]] {
        &self.v
    }

    /// One bias-corrected Adam update of `field` in place.
    pub fn step(&mut self, field: &mut DisplacementField, grad: &GradField, lr: f64) -> Result<()> {
        if field.data().len() != self.m.len() {
            return Err(Error::ShapeMismatch(field.dims().0, [self.m.len(), 1, 1]));
        }
        field.dims().require_same(&grad.dims())?;
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be >= 0, got {lr}")));
        }
        if !grad.is_finite() {
            return Err(Error::NonFiniteGradient);
        }

        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);

        for (((u, m), v), g) in field
            .data_mut()
            .iter_mut()
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
            .zip(grad.data())
        {
            for c in 0..3 {
                m[c] = b1 * m[c] + (1.0 - b1) * g[c];
                v[c] = b2 * v[c] + (1.0 - b2) * g[c] * g[c];
                let m_hat = m[c] / bc1;
                let v_hat = v[c] / bc2;
                u[c] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad_of(dims: Dims, value: f64) -> GradField {
        let mut g = GradField::zeros(dims);
        g.data_mut().iter_mut().for_each(|x| *x = [value; 3]);
        g
    }

    #[test]
    fn zero_gradient_leaves_field() {
        let dims = Dims::cube(3);
        let mut field = DisplacementField::from_fn(dims, [1.0; 3], |i, j, k| {
            [i as f64, j as f64 * 0.5, -(k as f64)]
        })
        .unwrap();
        let before = field.clone();
        let mut state = AdamState::new(dims);
        state.step(&mut field, &GradField::zeros(dims), 0.1).unwrap();
        assert_eq!(field, before);
        assert!(state.first_moment().iter().flatten().all(|&x| x == 0.0));
        assert!(state.second_moment().iter().flatten().all(|&x| x == 0.0));
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let dims = Dims::new(1, 1, 1);
        let mut field = DisplacementField::zeros(dims, [1.0; 3]);
        let mut state = AdamState::new(dims);
        state.step(&mut field, &grad_of(dims, 1.0), 0.1).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        for c in field.data()[0] {
            assert!((c - expected).abs() < 1e-15);
        }
    }

    /// Scalar Adam written out directly.
    fn reference(grads: &[f64], lr: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        let (mut m, mut v, mut x) = (0.0, 0.0, 0.0);
        let mut xs = Vec::new();
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as f64;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powf(t));
            let vh = v / (1.0 - b2.powf(t));
            x -= lr * mh / (vh.sqrt() + eps);
            xs.push(x);
        }
        xs
    }

    #[test]
    fn matches_scalar_reference_over_two_steps() {
        let dims = Dims::new(1, 1, 1);
        let mut field = DisplacementField::zeros(dims, [1.0; 3]);
        let mut state = AdamState::new(dims);
        let expect = reference(&[1.0, 1.0], 0.05);
        for e in expect {
            state.step(&mut field, &grad_of(dims, 1.0), 0.05).unwrap();
            assert!((field.data()[0][0] - e).abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_non_finite_gradient_and_shape_mismatch() {
        let dims = Dims::cube(2);
        let mut field = DisplacementField::zeros(dims, [1.0; 3]);
        let mut state = AdamState::new(dims);
        let bad = grad_of(dims, f64::NAN);
        assert!(matches!(
            state.step(&mut field, &bad, 0.1),
            Err(Error::NonFiniteGradient)
        ));
        assert!(state.step(&mut field, &GradField::zeros(Dims::cube(3)), 0.1).is_err());
        assert_eq!(state.step_count(), 0);
    }
}
