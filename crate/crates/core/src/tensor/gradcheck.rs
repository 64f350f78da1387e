//! Central finite-difference verification of analytic backward passes.
//!
//! The probed objective is `f = Σ out ⊙ R` for a fixed random `R`, so the
//! analytic gradient is obtained by back-propagating `R`. Coordinates whose
//! ±ε perturbation flips a ReLU mask or a pooling argmax straddle a kink
//! where the derivative is undefined; those are skipped and replaced.

use rand::seq::index::sample;
use rand::Rng;

use super::{Layer, Mode, Tensor};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub epsilon: f64,
    /// Number of (input ∪ parameter) coordinates probed.
    pub coordinates: usize,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { epsilon: 1e-4, coordinates: 200, seed: 0, mode: Mode::Train }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
    /// Coordinate with the largest error.
    pub worst: Option<String>,
}

#[derive(Debug, Clone, Copy)]
enum Coord {
    Input(usize),
    Param(usize, usize),
}

fn objective(out: &Tensor<f64>, weights: &Tensor<f64>) -> f64 {
    out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

fn probe<L: Layer<f64> + ?Sized>(layer: &mut L, x: &Tensor<f64>, r: &Tensor<f64>, mode: Mode) -> Result<(f64, Vec<u32>)> {
    let out = layer.forward(x, mode)?;
    let mut active = Vec::new();
    layer.active_set(&mut active);
    Ok((objective(&out, r), active))
}

fn param_value<L: Layer<f64> + ?Sized>(layer: &mut L, p: usize, i: usize) -> f64 {
    layer.params_mut()[p].value.data()[i]
}

fn set_param<L: Layer<f64> + ?Sized>(layer: &mut L, p: usize, i: usize, v: f64) {
    layer.params_mut()[p].value.data_mut()[i] = v;
}

/// Maximum relative error `|a − n| / max(|a|, |n|, 1e−8)` between analytic
/// and central-difference gradients over a random coordinate subset.
pub fn gradcheck<L: Layer<f64> + ?Sized>(
    layer: &mut L,
    input: &Tensor<f64>,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport> {
    let mut rng = stream_rng(opts.seed, streams::GRADCHECK);
    let out = layer.forward(input, opts.mode)?;
    let r = Tensor::from_vec(out.shape(), (0..out.len()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let mut baseline = Vec::new();
    layer.active_set(&mut baseline);

    layer.zero_grad();
    let dx = layer.backward(&r)?;
    let param_grads: Vec<Vec<f64>> = layer.params_mut().iter().map(|p| p.grad.data().to_vec()).collect();

    let mut coords: Vec<Coord> = (0..input.len()).map(Coord::Input).collect();
    for (p, g) in param_grads.iter().enumerate() {
        coords.extend((0..g.len()).map(|i| Coord::Param(p, i)));
    }
    if coords.is_empty() {
        return Err(Error::Empty("gradcheck coordinates"));
    }
    let order: Vec<usize> = sample(&mut rng, coords.len(), coords.len()).into_vec();

    let eps = opts.epsilon;
    let mut x = input.clone();
    let mut report = GradcheckReport { max_rel_error: 0.0, checked: 0, skipped_kinks: 0, worst: None };
    for &ci in &order {
        if report.checked >= opts.coordinates {
            break;
        }
        let coord = coords[ci];
        let (analytic, orig) = match coord {
            Coord::Input(i) => (dx.data()[i], x.data()[i]),
            Coord::Param(p, i) => (param_grads[p][i], param_value(layer, p, i)),
        };
        let eval_at = |layer: &mut L, x: &mut Tensor<f64>, v: f64| -> Result<(f64, Vec<u32>)> {
            match coord {
                Coord::Input(i) => x.data_mut()[i] = v,
                Coord::Param(p, i) => set_param(layer, p, i, v),
            }
            probe(layer, x, &r, opts.mode)
        };
        let (f_plus, a_plus) = eval_at(layer, &mut x, orig + eps)?;
        let (f_minus, a_minus) = eval_at(layer, &mut x, orig - eps)?;
        match coord {
            Coord::Input(i) => x.data_mut()[i] = orig,
            Coord::Param(p, i) => set_param(layer, p, i, orig),
        }
        if a_plus != baseline || a_minus != baseline {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (f_plus - f_minus) / (2.0 * eps);
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        report.checked += 1;
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some(format!("{coord:?}: analytic {analytic:e}, numeric {numeric:e}"));
        }
    }
    // leave caches consistent with the unperturbed point
    layer.forward(input, opts.mode)?;
    Ok(report)
}
