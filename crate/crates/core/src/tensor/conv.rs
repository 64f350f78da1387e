//! 2-D cross-correlation lowered to one GEMM over the whole batch via im2col.

use rand::Rng;

use super::{window_out, Layer, Mode, Param, Scalar, StateEntry, StateKind, Tensor};
use crate::error::{shape_err, Result};

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    cache: Option<ConvCache<T>>,
}

#[derive(Debug, Clone)]
struct ConvCache<T> {
    input_dims: [usize; 4],
    out_hw: (usize, usize),
    cols: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    /// Zero-initialized layer.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize, bias: bool) -> Self {
        Self {
            weight: Param::new(Tensor::zeros(&[out_channels, in_channels, kernel, kernel])),
            bias: bias.then(|| Param::new(Tensor::zeros(&[out_channels]))),
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            cache: None,
        }
    }

    /// Weights uniform with standard deviation `√(2/fan_in)`; bias zero.
    pub fn init<R: Rng + ?Sized>(mut self, rng: &mut R) -> Self {
        let fan_in = (self.in_channels * self.kernel * self.kernel) as f64;
        let bound = (6.0 / fan_in).sqrt();
        for w in self.weight.value.data_mut() {
            *w = T::of(rng.random_range(-bound..bound));
        }
        self
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match (window_out(h, self.kernel, self.stride, self.pad), window_out(w, self.kernel, self.stride, self.pad)) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(shape_err(format!(
                "conv {k}x{k} (stride {s}, pad {p}) does not fit a {h}x{w} input",
                k = self.kernel,
                s = self.stride,
                p = self.pad
            ))),
        }
    }

    fn im2col(&self, x: &[T], [b, c, h, w]: [usize; 4], (oh, ow): (usize, usize)) -> Vec<T> {
        let k = self.kernel;
        let n = b * oh * ow;
        let mut cols = vec![T::zero(); c * k * k * n];
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for bi in 0..b {
                        let plane = &x[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                            let base = (bi * oh + oy) * ow;
                            let (lo, hi) = valid_range(ow, w, kj, self.stride, self.pad);
                            for ox in lo..hi {
                                dst[base + ox] = src_row[ox * self.stride + kj - self.pad];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], [b, c, h, w]: [usize; 4], (oh, ow): (usize, usize)) -> Vec<T> {
        let k = self.kernel;
        let n = b * oh * ow;
        let mut x = vec![T::zero(); b * c * h * w];
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let src = &cols[row * n..(row + 1) * n];
                    for bi in 0..b {
                        let plane = &mut x[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let base = (bi * oh + oy) * ow;
                            let row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                            let (lo, hi) = valid_range(ow, w, kj, self.stride, self.pad);
                            for ox in lo..hi {
                                row[ox * self.stride + kj - self.pad] += src[base + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

/// Output columns `lo..hi` whose input column `ox·stride + kj − pad` lies
/// inside `0..w`.
fn valid_range(ow: usize, w: usize, kj: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kj).div_ceil(stride);
    // ox·stride + kj − pad ≤ w − 1  ⇔  ox ≤ (w − 1 + pad − kj) / stride
    let hi = match (w + pad).checked_sub(kj + 1) {
        Some(num) => (num / stride + 1).min(ow),
        None => 0,
    };
    (lo, hi.max(lo))
}

fn channel_major_to_batch<T: Copy>(src: &[T], dst: &mut [T], b: usize, c: usize, spatial: usize) {
    for ci in 0..c {
        for bi in 0..b {
            let from = ci * b * spatial + bi * spatial;
            let to = (bi * c + ci) * spatial;
            dst[to..to + spatial].copy_from_slice(&src[from..from + spatial]);
        }
    }
}

fn batch_to_channel_major<T: Copy>(src: &[T], dst: &mut [T], b: usize, c: usize, spatial: usize) {
    for bi in 0..b {
        for ci in 0..c {
            let from = (bi * c + ci) * spatial;
            let to = ci * b * spatial + bi * spatial;
            dst[to..to + spatial].copy_from_slice(&src[from..from + spatial]);
        }
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let dims @ [b, c, h, w] = input.dims4()?;
        if c != self.in_channels {
            return Err(shape_err(format!("conv expects {} input channels, got {c}", self.in_channels)));
        }
        let (oh, ow) = self.output_hw(h, w)?;
        let cols = self.im2col(input.data(), dims, (oh, ow));
        let kk = c * self.kernel * self.kernel;
        let spatial = oh * ow;
        let n = b * spatial;
        let co = self.out_channels;
        // W · cols gives [C_out, B·spatial]; permute into [B, C_out, spatial].
        let mut wide = vec![T::zero(); co * n];
        T::gemm(co, kk, n, T::one(), self.weight.value.data(), (kk, 1), &cols, (n, 1), T::zero(), &mut wide, (n, 1));
        let mut out = vec![T::zero(); b * co * spatial];
        channel_major_to_batch(&wide, &mut out, b, co, spatial);
        if let Some(bias) = &self.bias {
            for bi in 0..b {
                for (oc, &bv) in bias.value.data().iter().enumerate() {
                    let start = (bi * co + oc) * spatial;
                    out[start..start + spatial].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        self.cache = Some(ConvCache { input_dims: dims, out_hw: (oh, ow), cols });
        let out = Tensor::from_vec(&[b, co, oh, ow], out)?;
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| shape_err("conv backward before forward"))?;
        let [b, _, _, _] = cache.input_dims;
        let (oh, ow) = cache.out_hw;
        let co = self.out_channels;
        if grad_out.shape() != [b, co, oh, ow] {
            return Err(shape_err(format!("conv backward got {:?}", grad_out.shape())));
        }
        let spatial = oh * ow;
        let n = b * spatial;
        let kk = self.in_channels * self.kernel * self.kernel;
        let dy = grad_out.data();

        let mut dy_wide = vec![T::zero(); co * n];
        batch_to_channel_major(dy, &mut dy_wide, b, co, spatial);

        // dW += dY · colsᵀ
        T::gemm(co, n, kk, T::one(), &dy_wide, (n, 1), &cache.cols, (1, n), T::one(), self.weight.grad.data_mut(), (kk, 1));
        if let Some(bias) = &mut self.bias {
            for bi in 0..b {
                for (oc, g) in bias.grad.data_mut().iter_mut().enumerate() {
                    let start = (bi * co + oc) * spatial;
                    *g += dy[start..start + spatial].iter().copied().sum::<T>();
                }
            }
        }

        // dcols = Wᵀ · dY
        let mut dcols = vec![T::zero(); kk * n];
        T::gemm(kk, co, n, T::one(), self.weight.value.data(), (1, kk), &dy_wide, (n, 1), T::zero(), &mut dcols, (n, 1));
        let dx = self.col2im(&dcols, cache.input_dims, cache.out_hw);
        Tensor::from_vec(&cache.input_dims, dx)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }

    fn state_mut(&mut self, prefix: &str) -> Vec<StateEntry<'_, T>> {
        let mut v = vec![StateEntry {
            name: format!("{prefix}.weight"),
            kind: StateKind::Param,
            tensor: &mut self.weight.value,
        }];
        if let Some(b) = &mut self.bias {
            v.push(StateEntry { name: format!("{prefix}.bias"), kind: StateKind::Param, tensor: &mut b.value });
        }
        v
    }
}
