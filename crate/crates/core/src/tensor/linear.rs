use rand::Rng;

use super::{Layer, Mode, Param, Scalar, StateEntry, StateKind, Tensor};
use crate::error::{shape_err, Result};

/// Fully connected layer: `y = x·Wᵀ + b`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Self {
            weight: Param::new(Tensor::zeros(&[out_features, in_features])),
            bias: Param::new(Tensor::zeros(&[out_features])),
            input: None,
        }
    }

    pub fn init<R: Rng + ?Sized>(mut self, rng: &mut R) -> Self {
        let bound = (6.0 / self.in_features() as f64).sqrt();
        for w in self.weight.value.data_mut() {
            *w = T::of(rng.random_range(-bound..bound));
        }
        self
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let [b, f] = input.dims2()?;
        let (o, fi) = (self.out_features(), self.in_features());
        if f != fi {
            return Err(shape_err(format!("linear expects {fi} features, got {f}")));
        }
        let mut out = Vec::with_capacity(b * o);
        for _ in 0..b {
            out.extend_from_slice(self.bias.value.data());
        }
        T::gemm(b, f, o, T::one(), input.data(), (f, 1), self.weight.value.data(), (1, f), T::one(), &mut out, (o, 1));
        self.input = Some(input.clone());
        Tensor::from_vec(&[b, o], out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.as_ref().ok_or_else(|| shape_err("linear backward before forward"))?;
        let [b, f] = x.dims2()?;
        let o = self.out_features();
        if grad_out.shape() != [b, o] {
            return Err(shape_err(format!("linear backward got {:?}", grad_out.shape())));
        }
        let dy = grad_out.data();
        T::gemm(o, b, f, T::one(), dy, (1, o), x.data(), (f, 1), T::one(), self.weight.grad.data_mut(), (f, 1));
        for row in dy.chunks_exact(o) {
            for (g, &d) in self.bias.grad.data_mut().iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = vec![T::zero(); b * f];
        T::gemm(b, o, f, T::one(), dy, (o, 1), self.weight.value.data(), (f, 1), T::zero(), &mut dx, (f, 1));
        Tensor::from_vec(&[b, f], dx)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn state_mut(&mut self, prefix: &str) -> Vec<StateEntry<'_, T>> {
        vec![
            StateEntry { name: format!("{prefix}.weight"), kind: StateKind::Param, tensor: &mut self.weight.value },
            StateEntry { name: format!("{prefix}.bias"), kind: StateKind::Param, tensor: &mut self.bias.value },
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::tensor::gradcheck::{gradcheck, GradcheckOptions};
    use crate::tensor::testutil::{max_rel_diff, random};

    #[test]
    fn identity_weights() {
        let mut fc = Linear::<f64>::new(3, 3);
        for i in 0..3 {
            fc.weight.value.data_mut()[i * 3 + i] = 1.0;
        }
        let x = random::<f64>(&[4, 3], 1);
        assert_eq!(fc.forward(&x, Mode::Train).unwrap(), x);
    }

    #[test]
    fn zero_input_gives_bias() {
        let mut fc = Linear::<f64>::new(5, 2).init(&mut stream_rng(0, 0));
        fc.bias.value = Tensor::from_vec(&[2], vec![0.1, -0.3]).unwrap();
        let y = fc.forward(&Tensor::zeros(&[3, 5]), Mode::Train).unwrap();
        assert_eq!(y.data(), &[0.1, -0.3, 0.1, -0.3, 0.1, -0.3]);
    }

    #[test]
    fn matches_double_loop() {
        let mut fc = Linear::<f64>::new(7, 3).init(&mut stream_rng(2, 0));
        fc.bias.value = random(&[3], 3);
        let x = random::<f64>(&[5, 7], 4);
        let y = fc.forward(&x, Mode::Train).unwrap();
        let mut expect = vec![];
        for b in 0..5 {
            for o in 0..3 {
                let mut acc = fc.bias.value.data()[o];
                for f in 0..7 {
                    acc += x.data()[b * 7 + f] * fc.weight.value.data()[o * 7 + f];
                }
                expect.push(acc);
            }
        }
        assert!(max_rel_diff(y.data(), &expect) < 1e-12);
    }

    #[test]
    fn feature_mismatch_rejected() {
        let mut fc = Linear::<f64>::new(4, 2);
        assert!(fc.forward(&Tensor::zeros(&[1, 3]), Mode::Train).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let mut fc = Linear::<f64>::new(16, 3).init(&mut stream_rng(seed, 1));
            let r = gradcheck(&mut fc, &random(&[4, 16], seed), &GradcheckOptions::default()).unwrap();
            assert!(r.max_rel_error < 1e-6, "{r:?}");
        }
    }
}
