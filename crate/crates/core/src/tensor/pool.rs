use super::{window_out, Layer, Mode, Scalar, Tensor};
use crate::error::{shape_err, Result};

/// Windowed maximum with implicit `-∞` padding.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    kernel: usize,
    stride: usize,
    pad: usize,
    argmax: Vec<u32>,
    input_dims: Option<[usize; 4]>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self { kernel, stride, pad, argmax: Vec::new(), input_dims: None }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        // Padding never exceeds half the window, so every window sees at
        // least one real element.
        if 2 * self.pad > self.kernel {
            return Err(shape_err("maxpool padding exceeds half the window"));
        }
        match (window_out(h, self.kernel, self.stride, self.pad), window_out(w, self.kernel, self.stride, self.pad)) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(shape_err(format!("maxpool window {} larger than {h}x{w} input", self.kernel))),
        }
    }
}

impl<T: Scalar> Layer<T> for MaxPool2d {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let dims @ [b, c, h, w] = input.dims4()?;
        let (oh, ow) = self.output_hw(h, w)?;
        let x = input.data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        self.argmax.clear();
        self.argmax.reserve(b * c * oh * ow);
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best: Option<(usize, T)> = None;
                    for ki in 0..self.kernel {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kj in 0..self.kernel {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = iy as usize * w + ix as usize;
                            let v = x[base + idx];
                            // strict comparison keeps the first maximum
                            if best.is_none_or(|(_, bv)| v > bv || (v.is_nan() && !bv.is_nan())) {
                                best = Some((idx, v));
                            }
                        }
                    }
                    let (idx, v) = best.expect("window overlaps the input");
                    self.argmax.push(idx as u32);
                    out.push(v);
                }
            }
        }
        self.input_dims = Some(dims);
        Tensor::from_vec(&[b, c, oh, ow], out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let dims @ [b, c, h, w] = self.input_dims.ok_or_else(|| shape_err("maxpool backward before forward"))?;
        if grad_out.len() != self.argmax.len() || grad_out.shape()[..2] != [b, c] {
            return Err(shape_err(format!("maxpool backward got {:?}", grad_out.shape())));
        }
        let per_plane = grad_out.len() / (b * c);
        let mut dx = vec![T::zero(); b * c * h * w];
        for (i, (&g, &arg)) in grad_out.data().iter().zip(&self.argmax).enumerate() {
            let plane = i / per_plane;
            dx[plane * h * w + arg as usize] += g;
        }
        Tensor::from_vec(&dims, dx)
    }

    fn active_set(&self, out: &mut Vec<u32>) {
        out.extend_from_slice(&self.argmax);
    }
}

/// Spatial mean per channel: `[B, C, H, W] → [B, C]`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    input_dims: Option<[usize; 4]>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Layer<T> for GlobalAvgPool {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let dims @ [b, c, h, w] = input.dims4()?;
        if h == 0 || w == 0 {
            return Err(shape_err("global average pool over an empty plane"));
        }
        let inv = T::of(1.0 / (h * w) as f64);
        let out = input.data().chunks_exact(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        self.input_dims = Some(dims);
        Tensor::from_vec(&[b, c], out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let dims @ [b, c, h, w] = self.input_dims.ok_or_else(|| shape_err("avgpool backward before forward"))?;
        if grad_out.shape() != [b, c] {
            return Err(shape_err(format!("avgpool backward got {:?}", grad_out.shape())));
        }
        let inv = T::of(1.0 / (h * w) as f64);
        let mut dx = Vec::with_capacity(b * c * h * w);
        for &g in grad_out.data() {
            dx.extend(std::iter::repeat_n(g * inv, h * w));
        }
        Tensor::from_vec(&dims, dx)
    }
}
