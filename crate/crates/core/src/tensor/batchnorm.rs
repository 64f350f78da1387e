//! Per-channel batch normalization over `[B, C, H, W]` activations.

use super::{Layer, Mode, Param, Scalar, StateEntry, StateKind, Tensor};
use crate::error::{shape_err, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
    channels: usize,
    cache: Option<BnCache>,
    calibration: Option<Calibration>,
}

#[derive(Debug, Clone)]
struct BnCache {
    dims: [usize; 4],
    mode: Mode,
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
}

/// Population statistics accumulated over a full pass of batches.
#[derive(Debug, Clone)]
struct Calibration {
    mean_sum: Vec<f64>,
    var_sum: Vec<f64>,
    batches: usize,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            eps: BN_EPSILON,
            momentum: BN_MOMENTUM,
            channels,
            cache: None,
            calibration: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Train-mode forward passes until [`finish_calibration`] accumulate
    /// batch statistics instead of updating the moving averages.
    ///
    /// [`finish_calibration`]: Self::finish_calibration
    pub fn begin_calibration(&mut self) {
        self.calibration = Some(Calibration {
            mean_sum: vec![0.0; self.channels],
            var_sum: vec![0.0; self.channels],
            batches: 0,
        });
    }

    /// Replaces the running statistics by the averages accumulated since
    /// [`begin_calibration`](Self::begin_calibration).
    pub fn finish_calibration(&mut self) {
        if let Some(cal) = self.calibration.take() {
            if cal.batches == 0 {
                return;
            }
            let n = cal.batches as f64;
            for c in 0..self.channels {
                self.running_mean.data_mut()[c] = T::of(cal.mean_sum[c] / n);
                self.running_var.data_mut()[c] = T::of(cal.var_sum[c] / n);
            }
        }
    }
}

impl<T: Scalar> Layer<T> for BatchNorm2d<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let dims @ [b, c, h, w] = input.dims4()?;
        if c != self.channels {
            return Err(shape_err(format!("batchnorm expects {} channels, got {c}", self.channels)));
        }
        let per_channel = b * h * w;
        let spatial = h * w;
        let x = input.data();
        let mut x_hat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; c];
        let mut out = vec![T::zero(); x.len()];

        for ch in 0..c {
            let (mean, var) = match mode {
                Mode::Train => {
                    if per_channel < 2 {
                        return Err(shape_err(format!(
                            "batchnorm in train mode needs at least 2 values per channel, got {per_channel}"
                        )));
                    }
                    let mut sum = 0.0;
                    for bi in 0..b {
                        let start = (bi * c + ch) * spatial;
                        sum += x[start..start + spatial].iter().map(|v| v.as_f64()).sum::<f64>();
                    }
                    let mean = sum / per_channel as f64;
                    let mut sq = 0.0;
                    for bi in 0..b {
                        let start = (bi * c + ch) * spatial;
                        sq += x[start..start + spatial].iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>();
                    }
                    let var = sq / per_channel as f64;
                    let unbiased = sq / (per_channel - 1) as f64;
                    match &mut self.calibration {
                        Some(cal) => {
                            cal.mean_sum[ch] += mean;
                            cal.var_sum[ch] += unbiased;
                        }
                        None => {
                            let m = self.momentum;
                            let rm = &mut self.running_mean.data_mut()[ch];
                            *rm = T::of((1.0 - m) * rm.as_f64() + m * mean);
                            let rv = &mut self.running_var.data_mut()[ch];
                            *rv = T::of((1.0 - m) * rv.as_f64() + m * unbiased);
                        }
                    }
                    (mean, var)
                }
                Mode::Eval => (self.running_mean.data()[ch].as_f64(), self.running_var.data()[ch].as_f64()),
            };
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = istd;
            let g = self.gamma.value.data()[ch].as_f64();
            let be = self.beta.value.data()[ch].as_f64();
            for bi in 0..b {
                let start = (bi * c + ch) * spatial;
                for i in start..start + spatial {
                    let xh = (x[i].as_f64() - mean) * istd;
                    x_hat[i] = xh;
                    out[i] = T::of(g * xh + be);
                }
            }
        }
        if mode == Mode::Train {
            if let Some(cal) = &mut self.calibration {
                cal.batches += 1;
            }
        }
        self.cache = Some(BnCache { dims, mode, x_hat, inv_std });
        let out = Tensor::from_vec(&dims, out)?;
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| shape_err("batchnorm backward before forward"))?;
        let [b, c, h, w] = cache.dims;
        if grad_out.shape() != cache.dims {
            return Err(shape_err(format!("batchnorm backward got {:?}", grad_out.shape())));
        }
        let spatial = h * w;
        let n = (b * spatial) as f64;
        let dy = grad_out.data();
        let mut dx = vec![T::zero(); dy.len()];
        for ch in 0..c {
            let idx = || (0..b).flat_map(move |bi| (bi * c + ch) * spatial..(bi * c + ch + 1) * spatial);
            let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
            for i in idx() {
                let g = dy[i].as_f64();
                sum_dy += g;
                sum_dy_xhat += g * cache.x_hat[i];
            }
            self.gamma.grad.data_mut()[ch] += T::of(sum_dy_xhat);
            self.beta.grad.data_mut()[ch] += T::of(sum_dy);
            let gamma = self.gamma.value.data()[ch].as_f64();
            let istd = cache.inv_std[ch];
            match cache.mode {
                Mode::Train => {
                    let scale = gamma * istd / n;
                    for i in idx() {
                        dx[i] = T::of(scale * (n * dy[i].as_f64() - sum_dy - cache.x_hat[i] * sum_dy_xhat));
                    }
                }
                Mode::Eval => {
                    for i in idx() {
                        dx[i] = T::of(gamma * istd * dy[i].as_f64());
                    }
                }
            }
        }
        Tensor::from_vec(&cache.dims, dx)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn state_mut(&mut self, prefix: &str) -> Vec<StateEntry<'_, T>> {
        vec![
            StateEntry { name: format!("{prefix}.gamma"), kind: StateKind::Param, tensor: &mut self.gamma.value },
            StateEntry { name: format!("{prefix}.beta"), kind: StateKind::Param, tensor: &mut self.beta.value },
            StateEntry { name: format!("{prefix}.running_mean"), kind: StateKind::Buffer, tensor: &mut self.running_mean },
            StateEntry { name: format!("{prefix}.running_var"), kind: StateKind::Buffer, tensor: &mut self.running_var },
        ]
    }
}
