use super::{Layer, Mode, Scalar, Tensor};
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<bool>,
    shape: Vec<usize>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Layer<T> for Relu {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        self.mask = input.data().iter().map(|&v| v > T::zero()).collect();
        self.shape = input.shape().to_vec();
        Ok(input.map(|v| if v < T::zero() { T::zero() } else { v }))
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if grad_out.shape() != self.shape.as_slice() {
            return Err(shape_err(format!("relu backward got {:?}, cached {:?}", grad_out.shape(), self.shape)));
        }
        let data = grad_out
            .data()
            .iter()
            .zip(&self.mask)
            .map(|(&g, &on)| if on { g } else { T::zero() })
            .collect();
        Tensor::from_vec(&self.shape, data)
    }

    fn active_set(&self, out: &mut Vec<u32>) {
        out.extend(self.mask.iter().map(|&b| b as u32));
    }
}
