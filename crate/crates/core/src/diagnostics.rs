//! Finite-difference gradient suite over every layer type and a full
//! network, shared by the command-line `gradcheck` and the test suites.

use crate::error::Result;
use crate::network::{build_network, NcBlock, NetworkSpec, PlainBlock, RcBlock, RegressionBlock, Variant};
use crate::rng::{stream_rng, streams};
use crate::tensor::gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
use crate::tensor::{mse_loss, BatchNorm2d, Conv2d, GlobalAvgPool, Layer, Linear, MaxPool2d, Mode, Relu, Tensor};
use rand::Rng;

pub const LAYER_TOLERANCE: f64 = 1e-5;
pub const BLOCK_TOLERANCE: f64 = 1e-4;
pub const NETWORK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub tolerance: f64,
    pub report: GradcheckReport,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < self.tolerance && self.report.checked > 0
    }
}

/// Treats the mean squared error against a fixed target as a layer with a
/// single output so the generic checker can probe it.
struct MseProbe {
    target: Tensor<f64>,
    grad: Option<Tensor<f64>>,
}

impl Layer<f64> for MseProbe {
    fn forward(&mut self, x: &Tensor<f64>, _mode: Mode) -> Result<Tensor<f64>> {
        let (loss, grad) = mse_loss(x, &self.target)?;
        self.grad = Some(grad);
        Tensor::from_vec(&[1], vec![loss])
    }

    fn backward(&mut self, dy: &Tensor<f64>) -> Result<Tensor<f64>> {
        let g = self.grad.as_ref().expect("forward before backward");
        Ok(g.map(|v| v * dy.data()[0]))
    }
}

fn uniform(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = stream_rng(seed, streams::GRADCHECK + 1);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape product")
}

/// Runs every check with 64-bit arithmetic and central differences (ε = 1e−4).
pub fn gradcheck_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let opts = GradcheckOptions { seed, ..Default::default() };
    let mut rng = stream_rng(seed, streams::INIT);
    let mut out = Vec::new();
    let mut run = |name: &'static str, tolerance: f64, layer: &mut dyn Layer<f64>, x: Tensor<f64>| -> Result<()> {
        let report = gradcheck(layer, &x, &opts)?;
        out.push(SuiteEntry { name, tolerance, report });
        Ok(())
    };

    run("conv2d 3x3", LAYER_TOLERANCE, &mut Conv2d::new(3, 4, 3, 1, 1, true).init(&mut rng), uniform(&[2, 3, 5, 5], 1))?;
    run("conv2d 7x7 stride 2", LAYER_TOLERANCE, &mut Conv2d::new(2, 3, 7, 2, 3, false).init(&mut rng), uniform(&[2, 2, 8, 8], 2))?;
    run("conv2d 1x1 stride 2", LAYER_TOLERANCE, &mut Conv2d::new(3, 5, 1, 2, 0, true).init(&mut rng), uniform(&[2, 3, 4, 4], 3))?;
    run("batchnorm2d", LAYER_TOLERANCE, &mut BatchNorm2d::new(3), uniform(&[4, 3, 3, 3], 4))?;
    run("relu", LAYER_TOLERANCE, &mut Relu::new(), uniform(&[2, 3, 4, 4], 5))?;
    run("maxpool2d 3x3 stride 2", LAYER_TOLERANCE, &mut MaxPool2d::new(3, 2, 1), uniform(&[2, 2, 6, 6], 6))?;
    run("global average pool", LAYER_TOLERANCE, &mut GlobalAvgPool::new(), uniform(&[2, 3, 4, 4], 7))?;
    run("linear", LAYER_TOLERANCE, &mut Linear::new(6, 3).init(&mut rng), uniform(&[4, 6], 8))?;
    run("mse loss", LAYER_TOLERANCE, &mut MseProbe { target: uniform(&[4, 3], 9), grad: None }, uniform(&[4, 3], 10))?;
    run("nc block", BLOCK_TOLERANCE, &mut NcBlock::new(2, 4, &mut rng), uniform(&[2, 2, 8, 8], 11))?;
    run("rc block identity", LAYER_TOLERANCE, &mut RcBlock::new(4, 4, 1, &mut rng), uniform(&[2, 4, 4, 4], 12))?;
    run("rc block projection", LAYER_TOLERANCE, &mut RcBlock::new(3, 6, 2, &mut rng), uniform(&[2, 3, 4, 4], 13))?;
    run("plain block", LAYER_TOLERANCE, &mut PlainBlock::new(3, 4, true, &mut rng), uniform(&[2, 3, 4, 4], 14))?;
    run("regression block", LAYER_TOLERANCE, &mut RegressionBlock::new(5, 3, &mut rng), uniform(&[3, 5, 2, 2], 15))?;
    let spec = NetworkSpec::new(Variant::Rcnr, 4, [2, 16, 16]);
    run("rcnr 4 blocks", NETWORK_TOLERANCE, &mut build_network::<f64>(&spec, seed)?, uniform(&[4, 2, 16, 16], 16))?;
    Ok(out)
}
