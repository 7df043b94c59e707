//! Shape-tagged f64 arrays and trainable parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major array of 64-bit reals with an explicit shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} expects {} values, got {}",
                shape,
                expected,
                values.len()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, values: vec![0.0; n] }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self { shape, values: vec![value; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// A tensor with a gradient slot and a freeze flag. Frozen parameters are
/// skipped by the optimizer but still pass gradients during backprop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub frozen: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape.clone());
        Self { name: name.into(), value, grad, frozen: false }
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grad.values {
            *g = 0.0;
        }
    }
}

/// Anything that exposes its parameters in a stable order.
pub trait Parameterized {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Parameter));

    fn zero_grads(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    fn set_frozen(&mut self, frozen: bool) {
        self.visit_params(&mut |p| p.frozen = frozen);
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.len());
        n
    }
}
