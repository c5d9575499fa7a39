use rand::Rng;

use super::{NumericsError, Result};

/// Dense n-dimensional array of f64 values in row-major order.
///
/// Doubles as plain numeric storage (scenes, masks of weights) and as the
/// parameter type of the model: after a backward pass the training loop
/// writes the accumulated gradient into `grad`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NumericsError::Invalid {
                op: "tensor",
                msg: format!("shape {:?} needs {} values, got {}", shape, numel, data.len()),
            });
        }
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel], requires_grad: false, grad: None }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![value; numel], requires_grad: false, grad: None }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: vec![value], requires_grad: false, grad: None }
    }

    /// Identity matrix of size n×n.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Uniform init in ±sqrt(6 / (fan_in + fan_out)).
    pub fn glorot_uniform<R: Rng>(
        shape: Vec<usize>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
        Tensor { shape, data, requires_grad: false, grad: None }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[offset(&self.shape, idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let o = offset(&self.shape, idx);
        self.data[o] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Adds `g` into the stored gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        assert_eq!(g.len(), self.data.len(), "gradient length mismatch");
        match &mut self.grad {
            Some(buf) => {
                for (b, v) in buf.iter_mut().zip(g) {
                    *b += v;
                }
            }
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

/// Boolean mask with the same row-major layout as [`Tensor`].
#[derive(Clone, Debug, PartialEq)]
pub struct BoolTensor {
    shape: Vec<usize>,
    data: Vec<bool>,
}

impl BoolTensor {
    pub fn new(shape: Vec<usize>, data: Vec<bool>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NumericsError::Invalid {
                op: "mask",
                msg: format!("shape {:?} needs {} values, got {}", shape, numel, data.len()),
            });
        }
        Ok(BoolTensor { shape, data })
    }

    pub fn filled(shape: Vec<usize>, value: bool) -> Self {
        let numel = shape.iter().product();
        BoolTensor { shape, data: vec![value; numel] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn at(&self, idx: &[usize]) -> bool {
        self.data[offset(&self.shape, idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: bool) {
        let o = offset(&self.shape, idx);
        self.data[o] = value;
    }

    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }
}

pub(crate) fn offset(shape: &[usize], idx: &[usize]) -> usize {
    debug_assert_eq!(shape.len(), idx.len());
    let mut o = 0;
    for (d, (&s, &i)) in shape.iter().zip(idx).enumerate() {
        debug_assert!(i < s, "index {} out of bounds for dim {} of size {}", i, d, s);
        o = o * s + i;
    }
    o
}
