//! Fingerprint datasets: decomposition of the complex fingerprint into a
//! two-channel real image, normalization, grid-wide generation with a
//! seeded train/test split, and the on-disk layout.
//!
//! Directory layout (format version `"1"`):
//!
//! * `manifest`: TOML, every [`DatasetManifest`] field;
//! * `inputs.bin`: little-endian `f32`, logical shape `[N, 2, M_x, M_z]`;
//! * `labels.bin`: little-endian `f32`, shape `[N, 3]`, normalized labels.
//!
//! Train samples come first, then test samples.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::channel::{
    dbm_to_watts, estimate_stcrv, mu_ris_channel, pilot_sequence, received_signal, ris_ap_channel, stcrv,
    ComplexMatrix, ComplexVector,
};
use crate::error::{Error, Result};
use crate::geometry::{synth_mu_ris_paths, synth_ris_ap_paths, GridSpec, Position3D, SceneConfig, REFLECTION_RANGE};
use crate::rng::{stream_rng, streams};
use crate::tensor::{Scalar, Tensor};

pub const FORMAT_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest";
pub const INPUTS_FILE: &str = "inputs.bin";
pub const LABELS_FILE: &str = "labels.bin";

/// One network input `[2, M_x, M_z]` (real part, imaginary part) and its
/// normalized position label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor<f32>,
    pub label: [f32; 3],
}

/// Splits a complex vector into its real and imaginary parts.
pub fn decompose_complex(h: &ComplexVector) -> (Vec<f64>, Vec<f64>) {
    h.as_slice().iter().map(|z| (z.re, z.im)).unzip()
}

/// Row-major fill of an `rows × cols` matrix.
pub fn reshape_to_stcrm(v: &[f64], rows: usize, cols: usize) -> Result<Vec<Vec<f64>>> {
    if v.len() != rows * cols || rows == 0 {
        return Err(Error::Shape(format!("cannot reshape {} values into {rows}x{cols}", v.len())));
    }
    Ok(v.chunks_exact(cols).map(<[f64]>::to_vec).collect())
}

/// Per-channel standardization constants of the input image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputNorm {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl InputNorm {
    pub fn identity() -> Self {
        Self { mean: [0.0; 2], std: [1.0; 2] }
    }

    /// Mean and population standard deviation per channel over `fingerprints`.
    pub fn fit<'a>(fingerprints: impl IntoIterator<Item = &'a ComplexVector>) -> Self {
        let (mut n, mut sum, mut sq) = (0usize, [0.0; 2], [0.0; 2]);
        let items: Vec<&ComplexVector> = fingerprints.into_iter().collect();
        for h in &items {
            for z in h.as_slice() {
                sum[0] += z.re;
                sum[1] += z.im;
                n += 1;
            }
        }
        let n = n.max(1) as f64;
        let mean = [sum[0] / n, sum[1] / n];
        for h in &items {
            for z in h.as_slice() {
                sq[0] += (z.re - mean[0]).powi(2);
                sq[1] += (z.im - mean[1]).powi(2);
            }
        }
        let std = sq.map(|s| {
            let v = (s / n).sqrt();
            if v > 0.0 && v.is_finite() {
                v
            } else {
                1.0
            }
        });
        Self { mean, std }
    }
}

/// Per-coordinate affine map of positions onto roughly `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelMap {
    pub center: [f64; 3],
    pub half_range: [f64; 3],
}

impl LabelMap {
    pub fn identity() -> Self {
        Self { center: [0.0; 3], half_range: [1.0; 3] }
    }

    /// Maps the bounding box of `positions` onto `[-1, 1]³`; degenerate
    /// extents keep unit scale.
    pub fn fit(positions: &[Position3D]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in positions {
            for (k, v) in p.to_array().into_iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        let mut map = Self::identity();
        for k in 0..3 {
            if lo[k].is_finite() && hi[k].is_finite() {
                map.center[k] = 0.5 * (lo[k] + hi[k]);
                let half = 0.5 * (hi[k] - lo[k]);
                map.half_range[k] = if half > 0.0 { half } else { 1.0 };
            }
        }
        map
    }

    pub fn normalize(&self, p: Position3D) -> [f64; 3] {
        let a = p.to_array();
        std::array::from_fn(|k| (a[k] - self.center[k]) / self.half_range[k])
    }

    pub fn denormalize(&self, v: [f64; 3]) -> Position3D {
        let [x, y, z] = std::array::from_fn(|k| v[k] * self.half_range[k] + self.center[k]);
        Position3D::new(x, y, z)
    }
}

/// Builds the standardized `[2, rows, cols]` input and normalized label.
pub fn assemble_sample(
    h_est: &ComplexVector,
    position: Position3D,
    norm: &InputNorm,
    labels: &LabelMap,
    rows: usize,
    cols: usize,
) -> Result<Sample> {
    if h_est.len() != rows * cols {
        return Err(Error::Shape(format!(
            "fingerprint has {} entries, expected {rows}x{cols}",
            h_est.len()
        )));
    }
    let (re, im) = decompose_complex(h_est);
    let mut data = Vec::with_capacity(2 * rows * cols);
    for (ch, part) in [re, im].into_iter().enumerate() {
        for row in reshape_to_stcrm(&part, rows, cols)? {
            data.extend(row.iter().map(|v| ((v - norm.mean[ch]) / norm.std[ch]) as f32));
        }
    }
    let label = labels.normalize(position).map(|v| v as f32);
    Ok(Sample { input: Tensor::from_vec(&[2, rows, cols], data)?, label })
}

/// A set of samples stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    input_shape: [usize; 3],
    inputs: Vec<f32>,
    labels: Vec<f32>,
}

impl Dataset {
    pub fn new(input_shape: [usize; 3]) -> Self {
        Self { input_shape, inputs: Vec::new(), labels: Vec::new() }
    }

    pub fn from_raw(input_shape: [usize; 3], inputs: Vec<f32>, labels: Vec<f32>) -> Result<Self> {
        let per = input_shape.iter().product::<usize>();
        if per == 0 || !inputs.len().is_multiple_of(per) || !labels.len().is_multiple_of(3) || inputs.len() / per != labels.len() / 3 {
            return Err(Error::Shape(format!(
                "{} input values and {} label values do not form samples of {input_shape:?}",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Self { input_shape, inputs, labels })
    }

    pub fn push(&mut self, sample: &Sample) -> Result<()> {
        if sample.input.shape() != self.input_shape {
            return Err(Error::Shape(format!(
                "sample shape {:?} does not match dataset shape {:?}",
                sample.input.shape(),
                self.input_shape
            )));
        }
        if !sample.input.all_finite() || sample.label.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("sample contains non-finite values".into()));
        }
        self.inputs.extend_from_slice(sample.input.data());
        self.labels.extend_from_slice(&sample.label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len() / 3
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn inputs(&self) -> &[f32] {
        &self.inputs
    }

    pub fn labels(&self) -> &[f32] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> [f32; 3] {
        [self.labels[3 * i], self.labels[3 * i + 1], self.labels[3 * i + 2]]
    }

    pub fn sample(&self, i: usize) -> Sample {
        let n = self.input_len();
        Sample {
            input: Tensor::from_vec(&self.input_shape, self.inputs[i * n..(i + 1) * n].to_vec())
                .expect("stored sample has dataset shape"),
            label: self.label(i),
        }
    }

    /// Stacks the selected samples into `[B, 2, M_x, M_z]` inputs and
    /// `[B, 3]` labels.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> (Tensor<T>, Tensor<T>) {
        let n = self.input_len();
        let mut x = Vec::with_capacity(indices.len() * n);
        let mut y = Vec::with_capacity(indices.len() * 3);
        for &i in indices {
            x.extend(self.inputs[i * n..(i + 1) * n].iter().map(|&v| T::of(v as f64)));
            y.extend(self.labels[3 * i..3 * i + 3].iter().map(|&v| T::of(v as f64)));
        }
        let [c, h, w] = self.input_shape;
        (
            Tensor::from_vec(&[indices.len(), c, h, w], x).expect("batch shape"),
            Tensor::from_vec(&[indices.len(), 3], y).expect("label shape"),
        )
    }

    fn concat(&self, other: &Dataset) -> Dataset {
        let mut out = self.clone();
        out.inputs.extend_from_slice(&other.inputs);
        out.labels.extend_from_slice(&other.labels);
        out
    }

    fn slice(&self, range: std::ops::Range<usize>) -> Dataset {
        let n = self.input_len();
        Dataset {
            input_shape: self.input_shape,
            inputs: self.inputs[range.start * n..range.end * n].to_vec(),
            labels: self.labels[range.start * 3..range.end * 3].to_vec(),
        }
    }
}

/// Everything needed to interpret a stored dataset.
///
/// Scalar and array fields precede the nested tables so the TOML encoding
/// stays valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: String,
    pub sample_count: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub input_shape: [usize; 3],
    pub label_dim: usize,
    pub split_seed: u64,
    pub split_fraction: f64,
    pub reflection_range: [f64; 2],
    /// Post-averaging fingerprint SNR at the grid point nearest the centroid.
    pub grid_center_snr_db: f64,
    /// Grid index of every stored sample, train samples first.
    pub grid_indices: Vec<usize>,
    pub input_norm: InputNorm,
    pub label_map: LabelMap,
    pub scene: SceneConfig,
    pub grid: GridSpec,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::MalformedManifest(m.to_string()));
        if self.label_dim != 3 {
            return bad("label_dim must be 3");
        }
        if self.train_count + self.test_count != self.sample_count {
            return bad("train_count + test_count != sample_count");
        }
        if self.grid_indices.len() != self.sample_count {
            return bad("grid_indices length != sample_count");
        }
        if self.input_shape[0] != 2 || self.input_shape[1] == 0 || self.input_shape[2] == 0 {
            return bad("input_shape must be [2, M_x, M_z]");
        }
        let finite = self.input_norm.mean.iter().chain(&self.label_map.center).all(|v| v.is_finite());
        let positive = self.input_norm.std.iter().chain(&self.label_map.half_range).all(|v| *v > 0.0 && v.is_finite());
        if !finite || !positive {
            return bad("normalization constants must be finite with positive scale");
        }
        Ok(())
    }
}

/// Train/test split plus manifest, as produced by [`build_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintData {
    pub train: Dataset,
    pub test: Dataset,
    pub manifest: DatasetManifest,
}

/// Static part of the scene: the RIS → AP channel and the RIS phase
/// configuration, shared by every user position.
#[derive(Debug, Clone)]
pub struct Environment {
    pub ris_ap: ComplexMatrix,
    pub phases: ComplexMatrix,
}

impl Environment {
    pub fn new(scene: &SceneConfig) -> Result<Self> {
        scene.validate()?;
        let paths = synth_ris_ap_paths(scene, &mut stream_rng(scene.rng_seed, streams::RIS_AP_ENVIRONMENT))?;
        Ok(Self {
            ris_ap: ris_ap_channel(&paths, &scene.ris, &scene.ap, scene.wavelength)?,
            phases: ComplexMatrix::identity(scene.ris.element_count()),
        })
    }

    /// Noise-free fingerprint of a user at `mu`. Scatterers on the user
    /// link are fixed by the scene seed, so they are shared by every user.
    pub fn true_stcrv(&self, scene: &SceneConfig, mu: Position3D) -> Result<ComplexVector> {
        let mut env_rng = stream_rng(scene.rng_seed, streams::MU_RIS_ENVIRONMENT);
        let paths = synth_mu_ris_paths(scene, mu, &mut env_rng)?;
        let g = mu_ris_channel(&paths, &scene.ris, scene.wavelength)?;
        stcrv(&self.ris_ap, &self.phases, &g)
    }

    /// Fingerprint estimated from `pilot_length` noisy pilot slots; the
    /// noise stream is keyed by `(seed, sample_index)`.
    pub fn observed_stcrv(
        &self,
        scene: &SceneConfig,
        mu: Position3D,
        seed: u64,
        sample_index: usize,
    ) -> Result<ComplexVector> {
        let h = self.true_stcrv(scene, mu)?;
        let p = dbm_to_watts(scene.tx_power_dbm);
        let noise = dbm_to_watts(scene.noise_power_dbm);
        let pilots = pilot_sequence(scene.pilot_length);
        let mut rng = stream_rng(seed, streams::NOISE_BASE + sample_index as u64);
        let obs: Vec<ComplexVector> = pilots.iter().map(|s| received_signal(&h, p, *s, noise, &mut rng)).collect();
        estimate_stcrv(&obs, &pilots, p)
    }
}

/// Post-averaging SNR `(‖h‖²/M) / (δ²/(τ·p))` in dB.
pub fn fingerprint_snr_db(scene: &SceneConfig, h: &ComplexVector) -> f64 {
    let signal = h.norm_sqr() / h.len() as f64;
    let noise = dbm_to_watts(scene.noise_power_dbm)
        / (scene.pilot_length as f64 * dbm_to_watts(scene.tx_power_dbm));
    10.0 * (signal / noise).log10()
}

fn centroid(points: &[Position3D]) -> Position3D {
    let n = points.len().max(1) as f64;
    points.iter().fold(Position3D::default(), |a, &p| a + p) * (1.0 / n)
}

/// Synthesizes a fingerprint for every grid position, shuffles with
/// `seed`, splits, and normalizes with train-split statistics.
pub fn build_dataset(scene: &SceneConfig, grid: &GridSpec, split_fraction: f64, seed: u64) -> Result<FingerprintData> {
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(Error::Config(format!("split fraction must be in (0, 1), got {split_fraction}")));
    }
    let positions = grid.positions()?;
    if positions.is_empty() {
        return Err(Error::Empty("grid"));
    }
    let env = Environment::new(scene)?;
    let fingerprints: Vec<ComplexVector> = positions
        .iter()
        .enumerate()
        .map(|(i, &mu)| env.observed_stcrv(scene, mu, seed, i))
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..positions.len()).collect();
    order.shuffle(&mut stream_rng(seed, streams::SPLIT));
    let train_count = ((positions.len() as f64 * split_fraction).round() as usize).clamp(1, positions.len() - 1);
    let (train_idx, test_idx) = order.split_at(train_count);
    if test_idx.is_empty() {
        return Err(Error::Config("split leaves the test set empty".into()));
    }

    let input_norm = InputNorm::fit(train_idx.iter().map(|&i| &fingerprints[i]));
    let train_positions: Vec<Position3D> = train_idx.iter().map(|&i| positions[i]).collect();
    let label_map = LabelMap::fit(&train_positions);

    let (rows, cols) = (scene.ap.count_a, scene.ap.count_b);
    let assemble = |idx: &[usize]| -> Result<Dataset> {
        let mut ds = Dataset::new([2, rows, cols]);
        for &i in idx {
            ds.push(&assemble_sample(&fingerprints[i], positions[i], &input_norm, &label_map, rows, cols)?)?;
        }
        Ok(ds)
    };
    let train = assemble(train_idx)?;
    let test = assemble(test_idx)?;

    let center = centroid(&positions);
    let nearest = positions
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.distance(center).total_cmp(&b.1.distance(center)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let grid_center_snr_db = fingerprint_snr_db(scene, &env.true_stcrv(scene, positions[nearest])?);

    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION.to_string(),
        sample_count: positions.len(),
        train_count: train.len(),
        test_count: test.len(),
        input_shape: [2, rows, cols],
        label_dim: 3,
        split_seed: seed,
        split_fraction,
        reflection_range: [REFLECTION_RANGE.0, REFLECTION_RANGE.1],
        grid_center_snr_db,
        grid_indices: order,
        input_norm,
        label_map,
        scene: scene.clone(),
        grid: grid.clone(),
    };
    Ok(FingerprintData { train, test, manifest })
}

fn write_f32s(path: &Path, values: &[f32]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_f32s(path: &Path, file: &'static str, expected_values: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    let expected = 4 * expected_values as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SampleCountMismatch { file, expected, found: bytes.len() as u64 });
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn serialize(data: &FingerprintData, dir: &Path) -> Result<()> {
    data.manifest.validate()?;
    if data.train.len() != data.manifest.train_count || data.test.len() != data.manifest.test_count {
        return Err(Error::MalformedManifest("split sizes disagree with the stored samples".into()));
    }
    fs::create_dir_all(dir)?;
    let manifest = toml::to_string(&data.manifest).map_err(|e| Error::MalformedManifest(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    let all = data.train.concat(&data.test);
    write_f32s(&dir.join(INPUTS_FILE), all.inputs())?;
    write_f32s(&dir.join(LABELS_FILE), all.labels())?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::ManifestMissing(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&path)?;
    let value: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::MalformedManifest(e.to_string()))?;
    match value.get("format_version").and_then(|v| v.as_str()) {
        Some(FORMAT_VERSION) => {}
        Some(other) => {
            return Err(Error::VersionMismatch { expected: FORMAT_VERSION.into(), found: other.into() });
        }
        None => return Err(Error::MalformedManifest("missing format_version".into())),
    }
    let manifest: DatasetManifest = toml::from_str(&text).map_err(|e| Error::MalformedManifest(e.to_string()))?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn deserialize(dir: &Path) -> Result<FingerprintData> {
    let manifest = read_manifest(dir)?;
    let per_sample: usize = manifest.input_shape.iter().product();
    let inputs = read_f32s(&dir.join(INPUTS_FILE), INPUTS_FILE, manifest.sample_count * per_sample)?;
    let labels = read_f32s(&dir.join(LABELS_FILE), LABELS_FILE, manifest.sample_count * 3)?;
    let all = Dataset::from_raw(manifest.input_shape, inputs, labels)?;
    let train = all.slice(0..manifest.train_count);
    let test = all.slice(manifest.train_count..manifest.sample_count);
    Ok(FingerprintData { train, test, manifest })
}

/// Reconstructs the complex fingerprint from its two channels.
pub fn recompose(re: &[f64], im: &[f64]) -> ComplexVector {
    re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect::<Vec<_>>().into()
}
