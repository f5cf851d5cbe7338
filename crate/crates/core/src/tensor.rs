//! Dense row-major f64 arrays and the trainable-parameter wrapper.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense array of double-precision values with a row-major layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor from a shape and matching data vector.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Contract(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        if expected != data.len() {
            return Err(Error::Contract(format!(
                "shape {shape:?} expects {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Self {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    /// Uniform draw in `[-bound, bound]` from the supplied RNG.
    pub fn uniform<R: Rng>(shape: Vec<usize>, bound: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// Index into a `[rows, cols]` tensor.
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c]
    }

    /// Index into a `[a, b, c]` tensor.
    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    pub fn set3(&mut self, i: usize, j: usize, k: usize, v: f64) {
        debug_assert_eq!(self.shape.len(), 3);
        let idx = (i * self.shape[1] + j) * self.shape[2] + k;
        self.data[idx] = v;
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    /// Error if any element is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(format!(
                "{what}: element {i} of shape {:?} is {}",
                self.shape, self.data[i]
            ))),
            None => Ok(()),
        }
    }
}

/// A trainable value paired with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut Tensor {
        debug_assert!(self.value.same_shape(&self.grad));
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// `out[r] = sum_c x[c] * w[c, r]` for row-major `w: [in, out]`, accumulating.
pub(crate) fn matvec_acc(x: &[f64], w: &[f64], out: &mut [f64]) {
    let (n_in, n_out) = (x.len(), out.len());
    debug_assert_eq!(w.len(), n_in * n_out);
    for (c, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        let row = &w[c * n_out..(c + 1) * n_out];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xv * wv;
        }
    }
}

/// `dx[c] += sum_r dy[r] * w[c, r]` — adjoint of [`matvec_acc`] w.r.t. the input.
pub(crate) fn matvec_acc_t(dy: &[f64], w: &[f64], dx: &mut [f64]) {
    let (n_out, n_in) = (dy.len(), dx.len());
    debug_assert_eq!(w.len(), n_in * n_out);
    for (c, dxv) in dx.iter_mut().enumerate() {
        let row = &w[c * n_out..(c + 1) * n_out];
        let mut s = 0.0;
        for (dyv, wv) in dy.iter().zip(row) {
            s += dyv * wv;
        }
        *dxv += s;
    }
}

/// `dw[c, r] += x[c] * dy[r]` — outer-product gradient for a matrix parameter.
pub(crate) fn outer_acc(x: &[f64], dy: &[f64], dw: &mut [f64]) {
    let n_out = dy.len();
    debug_assert_eq!(dw.len(), x.len() * n_out);
    for (c, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        let row = &mut dw[c * n_out..(c + 1) * n_out];
        for (dwv, &dyv) in row.iter_mut().zip(dy) {
            *dwv += xv * dyv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        let err = Tensor::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn new_rejects_zero_dimension() {
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn shape_data_agree() {
        let t = Tensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(t.len(), 6);
        assert_eq!(t.at2(1, 2), 5.0);
    }

    #[test]
    fn check_finite_flags_nan() {
        let mut t = Tensor::zeros(vec![4]);
        t.data_mut()[2] = f64::NAN;
        assert!(matches!(t.check_finite("x"), Err(Error::NonFinite(_))));
    }

    #[test]
    fn parameter_grad_matches_value_shape() {
        let p = Parameter::new("w", Tensor::zeros(vec![3, 4]));
        assert_eq!(p.value.shape(), p.grad().shape());
    }

    #[test]
    fn matvec_and_adjoints_agree_with_direct_sums() {
        // y = x W with W: [2,3]
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let x = [10.0, 20.0];
        let mut y = vec![0.0; 3];
        matvec_acc(&x, &w, &mut y);
        assert_eq!(y, vec![90.0, 120.0, 150.0]);

        let dy = [1.0, 0.5, -1.0];
        let mut dx = vec![0.0; 2];
        matvec_acc_t(&dy, &w, &mut dx);
        assert_eq!(dx, vec![1.0 + 1.0 - 3.0, 4.0 + 2.5 - 6.0]);

        let mut dw = vec![0.0; 6];
        outer_acc(&x, &dy, &mut dw);
        assert_eq!(dw, vec![10.0, 5.0, -10.0, 20.0, 10.0, -20.0]);
    }
}
