//! Minibatch training, evaluation and metrics export.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FingerprintData, LabelMap};
use crate::error::{Error, Result};
use crate::geometry::Position3D;
use crate::network::Model;
use crate::rng::{stream_rng, streams};
use crate::tensor::{mse_loss, Layer, Mode, Param, Scalar, Tensor};

pub const METRICS_HEADER: &str = "epoch,train_loss,test_loss,test_rmse_m";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted so a run can measure a frozen model.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return bad("epochs, batch_size and eval_every must be >= 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("betas must lie in [0, 1) and epsilon must be positive");
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self { beta1, beta2, epsilon, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn from_config(c: &TrainConfig) -> Self {
        Self::new(c.beta1, c.beta2, c.epsilon)
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    /// Applies one update using the gradients stored in `params`.
    pub fn step(&mut self, params: &mut [&mut Param<T>], lr: f64) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::Shape(format!("optimizer tracks {} tensors, got {}", self.m.len(), params.len())));
        }
        for (i, p) in params.iter().enumerate() {
            if p.value.shape() != self.m[i].shape() || p.grad.shape() != p.value.shape() {
                return Err(Error::Shape(format!(
                    "parameter {i}: shape {:?} does not match moment {:?}",
                    p.value.shape(),
                    self.m[i].shape()
                )));
            }
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (p, (m, v)) in params.iter_mut().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let Param { value, grad } = &mut **p;
            let it = value.data_mut().iter_mut().zip(grad.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((w, &g), (mi, vi)) in it {
                let g = g.as_f64();
                let mn = self.beta1 * mi.as_f64() + (1.0 - self.beta1) * g;
                let vn = self.beta2 * vi.as_f64() + (1.0 - self.beta2) * g * g;
                *mi = T::of(mn);
                *vi = T::of(vn);
                let update = lr * (mn / c1) / ((vn / c2).sqrt() + self.epsilon);
                *w = T::of(w.as_f64() - update);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_rmse_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Mean squared norm of the normalized position error.
    pub loss: f64,
    pub rmse_m: f64,
}

/// Splits `order` into chunks of `size`, folding a trailing single sample
/// into the previous chunk so batch statistics stay defined.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = (start + size).min(order.len());
        if order.len() - end == 1 {
            end = order.len();
        }
        out.push(&order[start..end]);
        start = end;
    }
    out
}

/// Replaces the BN running statistics with averages over a sequential pass
/// of `set`, returning the mean per-sample training loss of that pass.
pub fn calibrate<T: Scalar>(model: &mut Model<T>, set: &Dataset, batch_size: usize) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let order: Vec<usize> = (0..set.len()).collect();
    model.begin_calibration();
    let mut total = 0.0;
    let result = (|| {
        for idx in batches(&order, batch_size) {
            let (x, y) = set.batch::<T>(idx);
            let pred = model.forward(&x, Mode::Train)?;
            let (loss, _) = mse_loss(&pred, &y)?;
            total += loss * idx.len() as f64;
        }
        Ok(total / set.len() as f64)
    })();
    model.finish_calibration();
    result
}

/// Eval-mode loss and RMSE in meters over `set`.
pub fn evaluate<T: Scalar>(model: &mut Model<T>, set: &Dataset, labels: &LabelMap, batch_size: usize) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let order: Vec<usize> = (0..set.len()).collect();
    let (mut loss, mut sq) = (0.0, 0.0);
    for idx in order.chunks(batch_size.max(1)) {
        let (x, y) = set.batch::<T>(idx);
        let pred = model.forward(&x, Mode::Eval)?;
        for (p, t) in pred.data().chunks_exact(3).zip(y.data().chunks_exact(3)) {
            let p = [p[0].as_f64(), p[1].as_f64(), p[2].as_f64()];
            let t = [t[0].as_f64(), t[1].as_f64(), t[2].as_f64()];
            loss += (0..3).map(|k| (p[k] - t[k]).powi(2)).sum::<f64>();
            sq += labels.denormalize(p).distance(labels.denormalize(t)).powi(2);
        }
    }
    let n = set.len() as f64;
    Ok(Evaluation { loss: loss / n, rmse_m: (sq / n).sqrt() })
}

/// Root mean square 3D position error of `model` on `test`, in meters.
pub fn evaluate_rmse<T: Scalar>(model: &mut Model<T>, test: &Dataset, labels: &LabelMap) -> Result<f64> {
    Ok(evaluate(model, test, labels, 256)?.rmse_m)
}

/// RMSE of always answering the centroid of `reference` on `targets`.
pub fn centroid_rmse(reference: &[Position3D], targets: &[Position3D]) -> Result<f64> {
    if reference.is_empty() || targets.is_empty() {
        return Err(Error::Empty("position set"));
    }
    let n = reference.len() as f64;
    let c = reference.iter().fold(Position3D::new(0.0, 0.0, 0.0), |acc, &p| acc + p) * (1.0 / n);
    let sq: f64 = targets.iter().map(|&p| p.distance(c).powi(2)).sum();
    Ok((sq / targets.len() as f64).sqrt())
}

/// De-normalized label positions of every sample in `set`.
pub fn positions(set: &Dataset, labels: &LabelMap) -> Vec<Position3D> {
    (0..set.len())
        .map(|i| labels.denormalize(set.label(i).map(|v| v as f64)))
        .collect()
}

/// Trains `model` in place and returns one metrics row per evaluated epoch.
///
/// Each epoch reshuffles the training set from a stream keyed by the
/// configured seed. Before evaluation the BN running statistics are
/// recalibrated on the whole training set; that pass also yields the
/// reported training loss.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    data: &FingerprintData,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&MetricsRow),
) -> Result<Vec<MetricsRow>> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if data.test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let expected = model.spec().input_shape;
    if data.train.input_shape() != expected || data.test.input_shape() != expected {
        return Err(Error::Shape(format!(
            "dataset input shape {:?} does not match the network's {expected:?}",
            data.train.input_shape()
        )));
    }
    let mut rng = stream_rng(config.seed, streams::EPOCH_SHUFFLE);
    let mut adam = Adam::from_config(config);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut history = Vec::new();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for idx in batches(&order, config.batch_size) {
            let (x, y) = data.train.batch::<T>(idx);
            model.zero_grad();
            let pred = model.forward(&x, Mode::Train)?;
            let (loss, grad) = mse_loss(&pred, &y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, detail: format!("minibatch loss {loss}") });
            }
            model.backward(&grad)?;
            adam.step(&mut model.params_mut(), config.learning_rate)?;
        }
        if epoch % config.eval_every != 0 && epoch != config.epochs {
            continue;
        }
        let train_loss = calibrate(model, &data.train, config.batch_size)?;
        let eval = evaluate(model, &data.test, &data.manifest.label_map, 256)?;
        if !train_loss.is_finite() || !eval.loss.is_finite() {
            return Err(Error::Diverged { epoch, detail: format!("train loss {train_loss}, test loss {}", eval.loss) });
        }
        let row = MetricsRow { epoch, train_loss, test_loss: eval.loss, test_rmse_m: eval.rmse_m };
        on_epoch(&row);
        history.push(row);
    }
    Ok(history)
}

/// Renders the history as CSV; floats use shortest round-trip formatting.
pub fn metrics_csv(history: &[MetricsRow]) -> Result<String> {
    if history.is_empty() {
        return Err(Error::Empty("metrics history"));
    }
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in history {
        writeln!(s, "{},{:?},{:?},{:?}", r.epoch, r.train_loss, r.test_loss, r.test_rmse_m).expect("string write");
    }
    Ok(s)
}

pub fn export_metrics(history: &[MetricsRow], path: &Path) -> Result<()> {
    std::fs::write(path, metrics_csv(history)?)?;
    Ok(())
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Config(format!("metrics file must start with {METRICS_HEADER:?}")));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::Config(format!("malformed metrics row {l:?}"));
            if f.len() != 4 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(MetricsRow {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_loss: num(f[1])?,
                test_loss: num(f[2])?,
                test_rmse_m: num(f[3])?,
            })
        })
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    parse_metrics(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetManifest;
    use crate::geometry::{GridSpec, SceneConfig};
    use crate::network::{build_network, NetworkSpec, Variant};
    use crate::tensor::testutil::random;
    use crate::dataset::InputNorm;

    fn toy_data(n_train: usize, n_test: usize, seed: u64) -> FingerprintData {
        let shape = [2, 8, 8];
        let make = |n: usize, s: u64| {
            let x = random::<f32>(&[n, 2, 8, 8], s);
            // A learnable target: linear readouts of the input.
            let labels = x
                .data()
                .chunks(128)
                .flat_map(|c| [c[0] * 0.8, c[5] - c[70] * 0.5, c[100] * 0.6])
                .collect();
            Dataset::from_raw(shape, x.into_data(), labels).unwrap()
        };
        let train = make(n_train, seed);
        let test = make(n_test, seed + 100);
        let manifest = DatasetManifest {
            format_version: "1".into(),
            sample_count: n_train + n_test,
            train_count: n_train,
            test_count: n_test,
            input_shape: shape,
            label_dim: 3,
            split_seed: seed,
            split_fraction: 0.8,
            reflection_range: [0.1, 0.5],
            grid_center_snr_db: 20.0,
            grid_indices: (0..n_train + n_test).collect(),
            input_norm: InputNorm::identity(),
            label_map: LabelMap { center: [1.0, 2.0, 3.0], half_range: [2.0, 3.0, 0.5] },
            scene: SceneConfig::default(),
            grid: GridSpec::default(),
        };
        FingerprintData { train, test, manifest }
    }

    fn toy_model(seed: u64) -> Model<f32> {
        build_network(&NetworkSpec::new(Variant::Rcnr, 2, [2, 8, 8]), seed).unwrap()
    }

    fn param_values(m: &mut Model<f32>) -> Vec<Tensor<f32>> {
        m.params_mut().iter().map(|p| p.value.clone()).collect()
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = Param::new(Tensor::<f64>::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let before = p.value.clone();
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        for _ in 0..5 {
            adam.step(&mut [&mut p], 1e-3).unwrap();
        }
        assert_eq!(p.value, before);
        assert!(adam.moments().0[0].data().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn adam_moments_decay_under_zero_gradient() {
        let mut p = Param::new(Tensor::<f64>::from_vec(&[1], vec![0.0]).unwrap());
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        p.grad.data_mut()[0] = 1.0;
        adam.step(&mut [&mut p], 1e-3).unwrap();
        p.grad.data_mut()[0] = 0.0;
        let m1 = adam.moments().0[0].data()[0];
        adam.step(&mut [&mut p], 1e-3).unwrap();
        let m2 = adam.moments().0[0].data()[0];
        assert!((m2 - 0.9 * m1).abs() < 1e-15 && m2 < m1);
    }

    #[test]
    fn adam_constant_gradient_step_tends_to_lr_sign() {
        // With constant g the bias-corrected moments are exactly g and g²,
        // so each step is lr·|g|/(|g|+ε) against the gradient.
        for g in [0.3, -2.5] {
            let mut p = Param::new(Tensor::<f64>::from_vec(&[1], vec![0.0]).unwrap());
            let mut adam = Adam::new(0.9, 0.999, 1e-8);
            let lr = 1e-3;
            for _ in 0..500 {
                p.grad.data_mut()[0] = g;
                adam.step(&mut [&mut p], lr).unwrap();
            }
            let before = p.value.data()[0];
            adam.step(&mut [&mut p], lr).unwrap();
            let step = p.value.data()[0] - before;
            assert!((step.abs() - lr).abs() < 1e-6 * lr, "step {step}");
            assert_eq!(step.signum(), -g.signum());
        }
    }

    #[test]
    fn adam_rejects_shape_changes() {
        let mut a = Param::new(Tensor::<f64>::zeros(&[2]));
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        adam.step(&mut [&mut a], 1e-3).unwrap();
        let mut b = Param::new(Tensor::<f64>::zeros(&[3]));
        assert!(adam.step(&mut [&mut b], 1e-3).is_err());
        assert!(adam.step(&mut [&mut a, &mut b], 1e-3).is_err());
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let data = toy_data(16, 4, 1);
            let mut m = toy_model(2);
            let mut adam = Adam::new(0.9, 0.999, 1e-8);
            for step in 0..5 {
                let idx: Vec<usize> = (0..8).map(|i| (i + step * 3) % 16).collect();
                let (x, y) = data.train.batch::<f32>(&idx);
                m.zero_grad();
                let pred = m.forward(&x, Mode::Train).unwrap();
                let (_, g) = mse_loss(&pred, &y).unwrap();
                m.backward(&g).unwrap();
                adam.step(&mut m.params_mut(), 1e-3).unwrap();
            }
            param_values(&mut m)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn batching_never_leaves_a_singleton() {
        let order: Vec<usize> = (0..65).collect();
        let b = batches(&order, 32);
        assert_eq!(b.iter().map(|c| c.len()).collect::<Vec<_>>(), vec![32, 33]);
        assert_eq!(batches(&order[..64], 32).len(), 2);
        assert_eq!(batches(&order[..1], 32).len(), 1);
        assert_eq!(batches(&order[..10], 4).iter().map(|c| c.len()).collect::<Vec<_>>(), vec![4, 4, 2]);
    }

    #[test]
    fn zero_learning_rate_freezes_everything() {
        let data = toy_data(24, 8, 3);
        let mut m = toy_model(4);
        let before = param_values(&mut m);
        let mut fresh = m.clone();
        let initial = calibrate(&mut fresh, &data.train, 8).unwrap();
        let cfg = TrainConfig { epochs: 3, batch_size: 8, learning_rate: 0.0, ..Default::default() };
        let rows = train(&mut m, &data, &cfg, |_| {}).unwrap();
        assert_eq!(param_values(&mut m), before);
        assert_eq!(rows[0].train_loss, initial);
        assert!(rows.iter().all(|r| (r.train_loss, r.test_loss, r.test_rmse_m) == (rows[0].train_loss, rows[0].test_loss, rows[0].test_rmse_m)));
    }

    #[test]
    fn overfits_a_tiny_set() {
        let data = toy_data(20, 4, 5);
        let mut m = toy_model(6);
        let initial = calibrate(&mut m.clone(), &data.train, 10).unwrap();
        let cfg = TrainConfig { epochs: 200, batch_size: 10, learning_rate: 3e-3, eval_every: 50, ..Default::default() };
        let rows = train(&mut m, &data, &cfg, |_| {}).unwrap();
        let last = rows.last().unwrap();
        assert_eq!(last.epoch, 200);
        assert_eq!(rows.len(), 4);
        assert!(last.train_loss < 0.01 * initial, "{} vs {initial}", last.train_loss);
    }

    #[test]
    fn training_is_reproducible() {
        let data = toy_data(30, 6, 7);
        let cfg = TrainConfig { epochs: 3, batch_size: 8, seed: 11, ..Default::default() };
        let run = || {
            let mut m = toy_model(8);
            let rows = train(&mut m, &data, &cfg, |_| {}).unwrap();
            (rows, param_values(&mut m))
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_mismatched_shapes_and_empty_sets() {
        let data = toy_data(8, 2, 1);
        let mut wrong = build_network::<f32>(&NetworkSpec::new(Variant::Rcnr, 2, [2, 16, 16]), 0).unwrap();
        assert!(matches!(train(&mut wrong, &data, &TrainConfig::default(), |_| {}), Err(Error::Shape(_))));
        let mut empty = data.clone();
        empty.test = Dataset::new([2, 8, 8]);
        assert!(matches!(train(&mut toy_model(0), &empty, &TrainConfig::default(), |_| {}), Err(Error::Empty(_))));
        let bad = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(matches!(train(&mut toy_model(0), &data, &bad, |_| {}), Err(Error::Config(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let mut data = toy_data(8, 2, 1);
        let mut inputs = data.train.inputs().to_vec();
        let labels = data.train.labels().to_vec();
        inputs[0] = f32::NAN;
        data.train = Dataset::from_raw([2, 8, 8], inputs, labels).unwrap();
        let cfg = TrainConfig { epochs: 1, batch_size: 8, ..Default::default() };
        let r = train(&mut toy_model(0), &data, &cfg, |_| {});
        assert!(matches!(r, Err(Error::Diverged { epoch: 1, .. })), "{r:?}");
    }

    #[test]
    fn rmse_matches_brute_force_loop() {
        let data = toy_data(8, 37, 9);
        let mut m = toy_model(10);
        calibrate(&mut m, &data.train, 8).unwrap();
        let labels = &data.manifest.label_map;
        let fast = evaluate_rmse(&mut m, &data.test, labels).unwrap();
        let mut sq = 0.0;
        for i in 0..data.test.len() {
            let (x, _) = data.test.batch::<f32>(&[i]);
            let out = m.forward(&x, Mode::Eval).unwrap();
            let p = labels.denormalize([out.data()[0] as f64, out.data()[1] as f64, out.data()[2] as f64]);
            let t = labels.denormalize(data.test.label(i).map(|v| v as f64));
            sq += (p.x - t.x).powi(2) + (p.y - t.y).powi(2) + (p.z - t.z).powi(2);
        }
        let slow = (sq / data.test.len() as f64).sqrt();
        assert!((fast - slow).abs() <= 1e-9 * slow.max(1.0), "{fast} vs {slow}");
    }

    #[test]
    fn rmse_of_perfect_predictor_is_zero() {
        let data = toy_data(4, 5, 2);
        let mut m = toy_model(1);
        calibrate(&mut m, &data.train, 4).unwrap();
        // Rig the head to the single test label of a one-sample set.
        let one = Dataset::from_raw([2, 8, 8], data.test.inputs()[..128].to_vec(), data.test.labels()[..3].to_vec()).unwrap();
        m.head.fc.weight.value.fill(0.0);
        m.head.fc.bias.value = Tensor::from_vec(&[3], one.labels().to_vec()).unwrap();
        assert_eq!(evaluate_rmse(&mut m, &one, &data.manifest.label_map).unwrap(), 0.0);
        assert!(matches!(evaluate_rmse(&mut m, &Dataset::new([2, 8, 8]), &LabelMap::identity()), Err(Error::Empty(_))));
    }

    #[test]
    fn rmse_is_permutation_invariant() {
        let data = toy_data(8, 12, 4);
        let mut m = toy_model(3);
        calibrate(&mut m, &data.train, 8).unwrap();
        let labels = &data.manifest.label_map;
        let a = evaluate_rmse(&mut m, &data.test, labels).unwrap();
        let perm: Vec<usize> = (0..12).rev().collect();
        let (x, y) = data.test.batch::<f32>(&perm);
        let reversed = Dataset::from_raw([2, 8, 8], x.into_data(), y.into_data()).unwrap();
        let b = evaluate_rmse(&mut m, &reversed, labels).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn centroid_baseline_on_the_default_grid() {
        let grid = GridSpec::default().positions().unwrap();
        let direct = centroid_rmse(&grid, &grid).unwrap();
        // Per-axis variances of the uniform grids, summed independently.
        let var = |n: usize, step: f64| step * step * ((n * n - 1) as f64) / 12.0;
        let heights = [1.4f64, 1.5, 1.6];
        let h_mean = heights.iter().sum::<f64>() / 3.0;
        let h_var = heights.iter().map(|h| (h - h_mean).powi(2)).sum::<f64>() / 3.0;
        let closed = (var(49, 0.2) + var(30, 0.2) + h_var).sqrt();
        assert!((direct - closed).abs() < 1e-9, "{direct} vs {closed}");
        assert!((direct - 3.317).abs() < 1e-3);
    }

    #[test]
    fn metrics_round_trip() {
        let rows = vec![
            MetricsRow { epoch: 1, train_loss: 0.1 + 0.2, test_loss: 1.0 / 3.0, test_rmse_m: 2.5e-7 },
            MetricsRow { epoch: 2, train_loss: 1e300, test_loss: 0.0, test_rmse_m: std::f64::consts::PI },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        export_metrics(&rows, &path).unwrap();
        assert_eq!(read_metrics(&path).unwrap(), rows);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,train_loss,test_loss,test_rmse_m\n"));
        export_metrics(&rows[..1], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
        assert!(matches!(export_metrics(&[], &path), Err(Error::Empty(_))));
        assert!(export_metrics(&rows, &dir.path().join("missing/m.csv")).is_err());
        assert!(parse_metrics("epoch,loss\n1,2\n").is_err());
    }
}
