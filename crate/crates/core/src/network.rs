//! Residual convolutional regression network and its plain-CNN baseline.
//!
//! Layout: stem block (7×7/2 conv → BN → ReLU → 3×3/2 max-pool), a chain of
//! residual or plain blocks with doubling widths, then global average
//! pooling and a fully connected layer producing the normalized position.

use serde::{Deserialize, Serialize};

use crate::dataset::LabelMap;
use crate::error::{shape_err, Error, Result};
use crate::geometry::Position3D;
use crate::rng::{stream_rng, streams, PipelineRng};
use crate::tensor::{
    BatchNorm2d, Conv2d, GlobalAvgPool, Layer, Linear, MaxPool2d, Mode, Param,
    Relu, Scalar, StateEntry, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Rcnr,
    Cnn,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rcnr" => Ok(Variant::Rcnr),
            "cnn" => Ok(Variant::Cnn),
            other => Err(Error::Config(format!("unknown network variant {other:?} (expected rcnr or cnn)"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Rcnr => "rcnr",
            Variant::Cnn => "cnn",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub variant: Variant,
    pub base_channels: usize,
    pub block_count: usize,
    pub channel_multipliers: Vec<usize>,
    pub input_shape: [usize; 3],
    pub output_dim: usize,
}

impl NetworkSpec {
    pub fn new(variant: Variant, block_count: usize, input_shape: [usize; 3]) -> Self {
        Self {
            variant,
            base_channels: 16,
            block_count,
            channel_multipliers: vec![1, 2, 4, 8],
            input_shape,
            output_dim: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_count < 1 {
            return Err(Error::Config("block_count must be >= 1".into()));
        }
        if self.channel_multipliers.len() < self.block_count || self.channel_multipliers.contains(&0) {
            return Err(Error::Config(format!(
                "need {} positive channel multipliers, got {:?}",
                self.block_count, self.channel_multipliers
            )));
        }
        if self.output_dim != 3 {
            return Err(Error::Config("output_dim must be 3".into()));
        }
        if self.base_channels == 0 || self.input_shape.contains(&0) {
            return Err(Error::Config("channel counts and input dimensions must be positive".into()));
        }
        Ok(())
    }

    fn block_channels(&self, i: usize) -> usize {
        self.base_channels * self.channel_multipliers[i]
    }
}

/// Stem: conv(7×7, stride 2, pad 3) → BN → ReLU → max-pool(3×3, stride 2, pad 1).
#[derive(Debug, Clone)]
pub struct NcBlock<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    relu: Relu,
    pool: MaxPool2d,
}

impl<T: Scalar> NcBlock<T> {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut PipelineRng) -> Self {
        Self {
            conv: Conv2d::new(in_channels, out_channels, 7, 2, 3, false).init(rng),
            bn: BatchNorm2d::new(out_channels),
            relu: Relu::new(),
            pool: MaxPool2d::new(3, 2, 1),
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (h, w) = self.conv.output_hw(h, w)?;
        self.pool.output_hw(h, w)
    }
}

impl<T: Scalar> Layer<T> for NcBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.conv.forward(x, mode)?;
        let y = self.bn.forward(&y, mode)?;
        let y = self.relu.forward(&y, mode)?;
        self.pool.forward(&y, mode)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let d = Layer::<T>::backward(&mut self.pool, dy)?;
        let d = Layer::<T>::backward(&mut self.relu, &d)?;
        let d = self.bn.backward(&d)?;
        self.conv.backward(&d)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.conv.params_mut();
        v.extend(self.bn.params_mut());
        v
    }

    fn state_mut(&mut self, prefix: &str) -> Vec<StateEntry<'_, T>> {
        let mut v = self.conv.state_mut(&format!("{prefix}.conv"));
        v.extend(self.bn.state_mut(&format!("{prefix}.bn")));
        v
    }

    fn active_set(&self, out: &mut Vec<u32>) {
        Layer::<T>::active_set(&self.relu, out);
        Layer::<T>::active_set(&self.pool, out);
    }
}

/// Residual unit: `ReLU(BN(conv(ReLU(BN(conv(x))))) + shortcut(x))`, the
/// shortcut being the identity or a strided 1×1 projection.
#[derive(Debug, Clone)]
pub struct RcBlock<T> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    relu1: Relu,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub shortcut: Option<Conv2d<T>>,
    relu_out: Relu,
}

impl<T: Scalar> RcBlock<T> {
    pub fn new(in_channels: usize, out_channels: usize, stride: usize, rng: &mut PipelineRng) -> Self {
        let conv1 = Conv2d::new(in_channels, out_channels, 3, stride, 1, false).init(rng);
        let conv2 = Conv2d::new(out_channels, out_channels, 3, 1, 1, false).init(rng);
        let shortcut = (stride != 1 || in_channels != out_channels)
            .then(|| Conv2d::new(in_channels, out_channels, 1, stride, 0, true).init(rng));
        Self {
            conv1,
            bn1: BatchNorm2d::new(out_channels),
            relu1: Relu::new(),
            conv2,
            bn2: BatchNorm2d::new(out_channels),
            shortcut,
            relu_out: Relu::new(),
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.conv1.output_hw(h, w)
    }

    pub fn has_projection(&self) -> bool {
        self.shortcut.is_some()
    }

    /// Silences the residual branch: both convolutions and BN shifts zero.
    pub fn zero_residual_branch(&mut self) {
        self.conv1.weight.value.fill(T::zero());
        self.conv2.weight.value.fill(T::zero());
        self.bn1.beta.value.fill(T::zero());
        self.bn2.beta.value.fill(T::zero());
    }

    fn shortcut_forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match &mut self.shortcut {
            Some(conv) => conv.forward(x, mode),
            None => Ok(x.clone()),
        }
    }
}

impl<T: Scalar> Layer<T> for RcBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.conv1.forward(x, mode)?;
        let y = self.bn1.forward(&y, mode)?;
        let y = self.relu1.forward(&y, mode)?;
        let y = self.conv2.forward(&y, mode)?;
        let main = self.bn2.forward(&y, mode)?;
        let skip = self.shortcut_forward(x, mode)?;
        assert_eq!(main.shape(), skip.shape(), "residual branch and shortcut shapes differ");
        self.relu_out.forward(&main.add(&skip)?, mode)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let d = Layer::<T>::backward(&mut self.relu_out, dy)?;
        let dm = self.bn2.backward(&d)?;
        let dm = self.conv2.backward(&dm)?;
        let dm = Layer::<T>::backward(&mut self.relu1, &dm)?;
        let dm = self.bn1.backward(&dm)?;
        let dx_main = self.conv1.backward(&dm)?;
        let dx_skip = match &mut self.shortcut {
            Some(conv) => conv.backward(&d)?,
            None => d,
        };
        dx_main.add(&dx_skip)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.conv1.params_mut();
        v.extend(self.bn1.params_mut());
        v.extend(self.conv2.params_mut());
        v.extend(self.bn2.params_mut());
        if let Some(s) = &mut self.shortcut {
            v.extend(s.params_mut());
        }
        v
    }

    fn state_mut(&mut self, prefix: &str) -> Vec<StateEntry<'_, T>> {
        let mut v = self.conv1.state_mut(&format!("{prefix}.conv1"));
        v.extend(self.bn1.state_mut(&format!("{prefix}.bn1")));
        v.extend(self.conv2.state_mut(&format!("{prefix}.conv2")));
        v.extend(self.bn2.state_mut(&format!("{prefix}.bn2")));
        if let Some(s) = &mut self.shortcut {
            v.extend(s.state_mut(&format!("{prefix}.shortcut")));
        }
        v
    }

    fn active_set(&self, out: &mut Vec<u32>) {
        Layer::<T>::active_set(&self.relu1, out);
        Layer::<T>::active_set(&self.relu_out, out);
    }
}

/// Baseline block: conv(3×3, pad 1) → BN → ReLU → max-pool(2×2) when the
/// input is at least 2×2.
#[derive(Debug, Clone)]
pub struct PlainBlock<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    relu: Relu,
    pool: Option<MaxPool2d>,
}

impl<T: Scalar> PlainBlock<T> {
    pub fn new(in_channels: usize, out_channels: usize, pool: bool, rng: &mut PipelineRng) -> Self {
        Self {
            conv: Conv2d::new(in_channels, out_channels, 3, 1, 1, false).init(rng),
            bn: BatchNorm2d::new(out_channels),
            relu: Relu::new(),
            pool: pool.then(|| MaxPool2d::new(2, 2, 0)),
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (h, w) = self.conv.output_hw(h, w)?;
        match &self.pool {
            Some(p) => p.output_hw(h, w),
            None => Ok((h, w)),
        }
    }
}

impl<T: Scalar> Layer<T> for PlainBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.conv.forward(x, mode)?;
        let y = self.bn.forward(&y, mode)?;
        let y = self.relu.forward(&y, mode)?;
        match &mut self.pool {
            Some(p) => p.forward(&y, mode),
            None => Ok(y),
        }
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let d = match &mut self.pool {
            Some(p) => Layer::<T>::backward(p, dy)?,
            None => dy.clone(),
        };
        let d = Layer::<T>::backward(&mut self.relu, &d)?;
        let d = self.bn.backward(&d)?;
        self.conv.backward(&d)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.conv.params_mut();
        v.extend(self.bn.params_mut());
        v
    }

    fn state_mut(&mut self, prefix: &str) -> Vec<StateEntry<'_, T>> {
        let mut v = self.conv.state_mut(&format!("{prefix}.conv"));
        v.extend(self.bn.state_mut(&format!("{prefix}.bn")));
        v
    }

    fn active_set(&self, out: &mut Vec<u32>) {
        Layer::<T>::active_set(&self.relu, out);
        if let Some(p) = &self.pool {
            Layer::<T>::active_set(p, out);
        }
    }
}

/// Global average pooling followed by the fully connected position head.
#[derive(Debug, Clone)]
pub struct RegressionBlock<T> {
    pool: GlobalAvgPool,
    pub fc: Linear<T>,
}

impl<T: Scalar> RegressionBlock<T> {
    pub fn new(in_channels: usize, out_dim: usize, rng: &mut PipelineRng) -> Self {
        Self { pool: GlobalAvgPool::new(), fc: Linear::new(in_channels, out_dim).init(rng) }
    }
}

impl<T: Scalar> Layer<T> for RegressionBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let pooled = self.pool.forward(x, mode)?;
        self.fc.forward(&pooled, mode)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.fc.backward(dy)?;
        Layer::<T>::backward(&mut self.pool, &d)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.fc.params_mut()
    }

    fn state_mut(&mut self, prefix: &str) -> Vec<StateEntry<'_, T>> {
        self.fc.state_mut(&format!("{prefix}.fc"))
    }
}

#[derive(Debug, Clone)]
pub enum Block<T> {
    Residual(RcBlock<T>),
    Plain(PlainBlock<T>),
}

impl<T: Scalar> Block<T> {
    fn inner(&mut self) -> &mut dyn Layer<T> {
        match self {
            Block::Residual(b) => b,
            Block::Plain(b) => b,
        }
    }

    fn bns(&mut self) -> Vec<&mut BatchNorm2d<T>> {
        match self {
            Block::Residual(b) => vec![&mut b.bn1, &mut b.bn2],
            Block::Plain(b) => vec![&mut b.bn],
        }
    }
}

/// A complete position regressor.
#[derive(Debug, Clone)]
pub struct Model<T> {
    spec: NetworkSpec,
    pub stem: NcBlock<T>,
    pub blocks: Vec<Block<T>>,
    pub head: RegressionBlock<T>,
}

/// Builds a network with seeded initialization. Models of different
/// precision built from the same `(spec, seed)` start from the same values
/// up to rounding.
pub fn build_network<T: Scalar>(spec: &NetworkSpec, seed: u64) -> Result<Model<T>> {
    spec.validate()?;
    let mut rng = stream_rng(seed, streams::INIT);
    let [c_in, h0, w0] = spec.input_shape;
    let stem = NcBlock::new(c_in, spec.base_channels, &mut rng);
    let (mut h, mut w) = stem.output_hw(h0, w0)?;
    let mut channels = spec.base_channels;
    let mut blocks = Vec::with_capacity(spec.block_count);
    for i in 0..spec.block_count {
        let out = spec.block_channels(i);
        let block = match spec.variant {
            Variant::Rcnr => {
                let stride = if i > 0 && (h > 1 || w > 1) { 2 } else { 1 };
                let b = RcBlock::new(channels, out, stride, &mut rng);
                (h, w) = b.output_hw(h, w)?;
                Block::Residual(b)
            }
            Variant::Cnn => {
                let b = PlainBlock::new(channels, out, h >= 2 && w >= 2, &mut rng);
                (h, w) = b.output_hw(h, w)?;
                Block::Plain(b)
            }
        };
        blocks.push(block);
        channels = out;
    }
    if h == 0 || w == 0 {
        return Err(shape_err(format!("input {h0}x{w0} too small for {} blocks", spec.block_count)));
    }
    let head = RegressionBlock::new(channels, spec.output_dim, &mut rng);
    Ok(Model { spec: spec.clone(), stem, blocks, head })
}

impl<T: Scalar> Model<T> {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn skip_connection_count(&self) -> usize {
        self.blocks.iter().filter(|b| matches!(b, Block::Residual(_))).count()
    }

    pub fn parameter_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.value.len()).sum()
    }

    fn bns(&mut self) -> Vec<&mut BatchNorm2d<T>> {
        let mut v = vec![&mut self.stem.bn];
        for b in &mut self.blocks {
            v.extend(b.bns());
        }
        v
    }

    pub fn begin_calibration(&mut self) {
        self.bns().into_iter().for_each(BatchNorm2d::begin_calibration);
    }

    pub fn finish_calibration(&mut self) {
        self.bns().into_iter().for_each(BatchNorm2d::finish_calibration);
    }

    /// Converts every tensor to another precision.
    pub fn cast<U: Scalar>(&mut self) -> Result<Model<U>> {
        let mut out = build_network::<U>(&self.spec, 0)?;
        let src = self.state_mut("");
        let dst = out.state_mut("");
        for (s, d) in src.into_iter().zip(dst) {
            *d.tensor = s.tensor.cast();
        }
        Ok(out)
    }
}

impl<T: Scalar> Layer<T> for Model<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let [_, c, h, w] = x.dims4()?;
        if [c, h, w] != self.spec.input_shape {
            return Err(shape_err(format!("model expects inputs {:?}, got {:?}", self.spec.input_shape, x.shape())));
        }
        let mut y = self.stem.forward(x, mode)?;
        for b in &mut self.blocks {
            y = b.inner().forward(&y, mode)?;
        }
        self.head.forward(&y, mode)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut d = self.head.backward(dy)?;
        for b in self.blocks.iter_mut().rev() {
            d = b.inner().backward(&d)?;
        }
        self.stem.backward(&d)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.stem.params_mut();
        for b in &mut self.blocks {
            v.extend(match b {
                Block::Residual(r) => r.params_mut(),
                Block::Plain(p) => p.params_mut(),
            });
        }
        v.extend(self.head.params_mut());
        v
    }

    fn state_mut(&mut self, _prefix: &str) -> Vec<StateEntry<'_, T>> {
        let mut v = self.stem.state_mut("stem");
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let prefix = format!("block{i}");
            v.extend(match b {
                Block::Residual(r) => r.state_mut(&prefix),
                Block::Plain(p) => p.state_mut(&prefix),
            });
        }
        v.extend(self.head.state_mut("head"));
        v
    }

    fn active_set(&self, out: &mut Vec<u32>) {
        self.stem.active_set(out);
        for b in &self.blocks {
            match b {
                Block::Residual(r) => r.active_set(out),
                Block::Plain(p) => p.active_set(out),
            }
        }
    }
}

/// Eval-mode forward pass, de-normalized to meters with the dataset's label map.
pub fn predict<T: Scalar>(model: &mut Model<T>, inputs: &Tensor<T>, labels: &LabelMap) -> Result<Vec<Position3D>> {
    let out = model.forward(inputs, Mode::Eval)?;
    Ok(out
        .data()
        .chunks_exact(3)
        .map(|r| labels.denormalize([r[0].as_f64(), r[1].as_f64(), r[2].as_f64()]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{gradcheck, GradcheckOptions};
    use crate::tensor::testutil::random;

    fn spec(variant: Variant, blocks: usize) -> NetworkSpec {
        NetworkSpec::new(variant, blocks, [2, 16, 16])
    }

    #[test]
    fn nc_block_shapes() {
        let mut nc = NcBlock::<f64>::new(2, 16, &mut stream_rng(0, 0));
        let y = nc.forward(&random(&[1, 2, 16, 16], 0), Mode::Train).unwrap();
        assert_eq!(y.shape(), &[1, 16, 4, 4]);
        let y = nc.forward(&Tensor::zeros(&[2, 2, 16, 16]), Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rc_block_shapes() {
        let mut rc = RcBlock::<f64>::new(16, 16, 1, &mut stream_rng(0, 0));
        assert!(!rc.has_projection());
        let x = random(&[2, 16, 4, 4], 1);
        assert_eq!(rc.forward(&x, Mode::Train).unwrap().shape(), x.shape());
        let mut rc = RcBlock::<f64>::new(16, 32, 2, &mut stream_rng(0, 0));
        assert!(rc.has_projection());
        assert_eq!(rc.forward(&random(&[1, 16, 8, 8], 2), Mode::Train).unwrap().shape(), &[1, 32, 4, 4]);
    }

    #[test]
    fn zeroed_residual_branch_leaves_relu_of_input() {
        let mut rc = RcBlock::<f64>::new(8, 8, 1, &mut stream_rng(0, 0));
        rc.zero_residual_branch();
        let x = random(&[2, 8, 4, 4], 3);
        let y = rc.forward(&x, Mode::Train).unwrap();
        assert_eq!(y, x.map(|v| v.max(0.0)));
    }

    #[test]
    fn regression_head_constant_output() {
        let mut head = RegressionBlock::<f64>::new(4, 3, &mut stream_rng(0, 0));
        head.fc.weight.value.fill(0.0);
        head.fc.bias.value = Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap();
        let y = head.forward(&random(&[5, 4, 2, 2], 0), Mode::Eval).unwrap();
        for row in y.data().chunks(3) {
            assert_eq!(row, &[0.1, 0.2, 0.3]);
        }
    }

    #[test]
    fn regression_head_on_constant_planes() {
        let mut head = RegressionBlock::<f64>::new(2, 3, &mut stream_rng(4, 0));
        let planes = Tensor::from_vec(&[1, 2, 2, 2], vec![1.5, 1.5, 1.5, 1.5, -2.0, -2.0, -2.0, -2.0]).unwrap();
        let y = head.forward(&planes, Mode::Eval).unwrap();
        let direct = head.fc.forward(&Tensor::from_vec(&[1, 2], vec![1.5, -2.0]).unwrap(), Mode::Eval).unwrap();
        assert_eq!(y, direct);
    }

    #[test]
    fn full_network_output_shape() {
        let mut m = build_network::<f32>(&spec(Variant::Rcnr, 4), 0).unwrap();
        let y = m.forward(&random(&[2, 2, 16, 16], 0), Mode::Train).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert_eq!(m.skip_connection_count(), 4);
        let mut cnn = build_network::<f32>(&spec(Variant::Cnn, 3), 0).unwrap();
        assert_eq!(cnn.skip_connection_count(), 0);
        assert_eq!(cnn.forward(&random(&[2, 2, 16, 16], 0), Mode::Train).unwrap().shape(), &[2, 3]);
    }

    #[test]
    fn same_seed_same_parameters() {
        let mut a = build_network::<f32>(&spec(Variant::Rcnr, 4), 9).unwrap();
        let mut b = build_network::<f32>(&spec(Variant::Rcnr, 4), 9).unwrap();
        let va: Vec<_> = a.params_mut().iter().map(|p| p.value.clone()).collect();
        let vb: Vec<_> = b.params_mut().iter().map(|p| p.value.clone()).collect();
        assert_eq!(va, vb);
        let mut c = build_network::<f32>(&spec(Variant::Rcnr, 4), 10).unwrap();
        let vc: Vec<_> = c.params_mut().iter().map(|p| p.value.clone()).collect();
        assert_ne!(va, vc);
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let mut m = build_network::<f32>(&spec(Variant::Rcnr, 3), 0).unwrap();
        assert!(m.forward(&random(&[1, 2, 8, 16], 0), Mode::Eval).is_err());
        assert!(build_network::<f32>(&NetworkSpec { block_count: 0, ..spec(Variant::Rcnr, 1) }, 0).is_err());
        assert!(build_network::<f32>(&NetworkSpec { block_count: 5, ..spec(Variant::Rcnr, 1) }, 0).is_err());
    }

    #[test]
    fn nc_block_gradcheck() {
        let mut nc = NcBlock::<f64>::new(2, 4, &mut stream_rng(1, 0));
        let r = gradcheck(&mut nc, &random(&[2, 2, 8, 8], 5), &GradcheckOptions::default()).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn rc_block_gradcheck() {
        let mut rc = RcBlock::<f64>::new(3, 5, 2, &mut stream_rng(2, 0));
        let r = gradcheck(&mut rc, &random(&[2, 3, 4, 4], 6), &GradcheckOptions::default()).unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    #[test]
    fn regression_block_gradcheck() {
        let mut head = RegressionBlock::<f64>::new(6, 3, &mut stream_rng(3, 0));
        let r = gradcheck(&mut head, &random(&[3, 6, 2, 2], 7), &GradcheckOptions::default()).unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    #[test]
    fn cast_preserves_function() {
        let mut m = build_network::<f64>(&spec(Variant::Cnn, 3), 1).unwrap();
        let mut m32: Model<f32> = m.cast().unwrap();
        let x = random::<f64>(&[2, 2, 16, 16], 1);
        let a = m.forward(&x, Mode::Eval).unwrap();
        let b = m32.forward(&x.cast(), Mode::Eval).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - *q as f64).abs() < 1e-4);
        }
    }
    #[test]
    fn full_network_gradcheck() {
        let mut m = build_network::<f64>(&spec(Variant::Rcnr, 4), 3).unwrap();
        let opts = GradcheckOptions { coordinates: 300, ..Default::default() };
        let r = gradcheck(&mut m, &random(&[4, 2, 16, 16], 8), &opts).unwrap();
        assert!(r.checked > 100, "{r:?}");
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn parameter_count_closed_form() {
        let conv = |ci: usize, co: usize, k: usize, bias: bool| ci * co * k * k + if bias { co } else { 0 };
        let bn = |c: usize| 2 * c;
        let mut expected = conv(2, 16, 7, false) + bn(16);
        expected += 2 * (conv(16, 16, 3, false) + bn(16));
        for (ci, co) in [(16, 32), (32, 64), (64, 128)] {
            expected += conv(ci, co, 3, false) + conv(co, co, 3, false) + 2 * bn(co) + conv(ci, co, 1, true);
        }
        expected += 128 * 3 + 3;
        assert_eq!(expected, 308_835);
        let mut m = build_network::<f32>(&spec(Variant::Rcnr, 4), 0).unwrap();
        assert_eq!(m.parameter_count(), expected);
    }

    #[test]
    fn eval_forward_is_batch_independent() {
        let mut m = build_network::<f64>(&spec(Variant::Rcnr, 4), 4).unwrap();
        // Give BN non-trivial running statistics first.
        for seed in 0..3 {
            m.forward(&random(&[8, 2, 16, 16], seed), Mode::Train).unwrap();
        }
        let batch = random::<f64>(&[32, 2, 16, 16], 11);
        let all = m.forward(&batch, Mode::Eval).unwrap();
        let per = 2 * 16 * 16;
        for i in [0, 7, 31] {
            let one = Tensor::from_vec(&[1, 2, 16, 16], batch.data()[i * per..(i + 1) * per].to_vec()).unwrap();
            let y = m.forward(&one, Mode::Eval).unwrap();
            for k in 0..3 {
                assert!((y.data()[k] - all.data()[i * 3 + k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn predict_inverts_label_normalization() {
        let labels = LabelMap { center: [-10.0, 2.9, 1.5], half_range: [4.8, 2.9, 0.1] };
        let truth = Position3D::new(-12.2, 4.6, 1.6);
        let target = labels.normalize(truth);
        let mut m = build_network::<f64>(&spec(Variant::Rcnr, 3), 0).unwrap();
        m.head.fc.weight.value.fill(0.0);
        m.head.fc.bias.value = Tensor::from_vec(&[3], target.to_vec()).unwrap();
        let got = predict(&mut m, &random(&[1, 2, 16, 16], 0), &labels).unwrap();
        assert!(got[0].distance(truth) < 1e-6);
        let raw = predict(&mut m, &random(&[1, 2, 16, 16], 0), &LabelMap::identity()).unwrap();
        assert_eq!(raw[0].to_array(), target);
    }

    #[test]
    fn zeroed_branches_reduce_to_skip_chain() {
        let mut m = build_network::<f64>(&spec(Variant::Rcnr, 4), 5).unwrap();
        for b in &mut m.blocks {
            if let Block::Residual(r) = b {
                r.zero_residual_branch();
            }
        }
        let x = random::<f64>(&[3, 2, 16, 16], 12);
        let got = m.forward(&x, Mode::Train).unwrap();
        let mut y = m.stem.forward(&x, Mode::Train).unwrap();
        for b in &mut m.blocks {
            let Block::Residual(r) = b else { unreachable!() };
            let skip = match &mut r.shortcut {
                Some(c) => c.forward(&y, Mode::Train).unwrap(),
                None => y.clone(),
            };
            y = skip.map(|v| v.max(0.0));
        }
        let expected = m.head.forward(&y, Mode::Train).unwrap();
        assert_eq!(got, expected);
    }
}
