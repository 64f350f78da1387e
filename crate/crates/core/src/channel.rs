//! Array responses, the two link channels, the cascaded space-time channel
//! response vector and the uplink pilot observation model.

use std::f64::consts::PI;
use std::ops::{Add, Index};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{AnglePair, MuRisPath, RisApPath, UpaConfig};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComplexVector(Vec<Complex64>);

impl ComplexVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![ZERO; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self(self.0.iter().map(|z| z * s).collect())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `self += s · other`
    pub fn axpy(&mut self, s: Complex64, other: &ComplexVector) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += s * b;
        }
    }

    /// Hermitian inner product `selfᴴ · other`.
    pub fn inner(&self, other: &ComplexVector) -> Complex64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a.conj() * b).sum()
    }
}

impl From<Vec<Complex64>> for ComplexVector {
    fn from(v: Vec<Complex64>) -> Self {
        Self(v)
    }
}

impl Index<usize> for ComplexVector {
    type Output = Complex64;
    fn index(&self, i: usize) -> &Complex64 {
        &self.0[i]
    }
}

impl Add for &ComplexVector {
    type Output = ComplexVector;
    fn add(self, rhs: Self) -> ComplexVector {
        ComplexVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    /// Diagonal matrix of unit-modulus RIS phase shifts.
    pub fn phase_shifts(phases: &[f64]) -> Self {
        let n = phases.len();
        let mut m = Self::zeros(n, n);
        for (i, &p) in phases.iter().enumerate() {
            m.data[i * n + i] = Complex64::from_polar(1.0, p);
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn matvec(&self, v: &ComplexVector) -> Result<ComplexVector> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                left: "matrix",
                left_dims: vec![self.rows, self.cols],
                right: "vector",
                right_dims: vec![v.len()],
            });
        }
        let out = self
            .data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(v.as_slice()).map(|(a, b)| a * b).sum())
            .collect();
        Ok(ComplexVector(out))
    }

    pub fn matmul(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                left: "left matrix",
                left_dims: vec![self.rows, self.cols],
                right: "right matrix",
                right_dims: vec![other.rows, other.cols],
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == ZERO {
                    continue;
                }
                for (d, b) in dst.iter_mut().zip(&other.data[k * other.cols..(k + 1) * other.cols]) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    fn is_diagonal(&self) -> bool {
        self.rows == self.cols
            && self
                .data
                .iter()
                .enumerate()
                .all(|(i, z)| i / self.cols == i % self.cols || *z == ZERO)
    }
}

/// Steering vector `e ⊗ a` of a uniform planar array; entry `(n, m)` lives
/// at index `n·count_b + m`.
pub fn upa_response(array: &UpaConfig, angles: AnglePair, wavelength: f64) -> ComplexVector {
    debug_assert!(wavelength > 0.0);
    let k = 2.0 * PI * array.spacing / wavelength;
    let (sin_el, cos_el) = angles.elevation.sin_cos();
    let phase_a = -k * cos_el;
    let phase_b = -k * sin_el * angles.azimuth.cos();
    let elev: Vec<Complex64> = (0..array.count_a).map(|n| Complex64::cis(phase_a * n as f64)).collect();
    let azim: Vec<Complex64> = (0..array.count_b).map(|m| Complex64::cis(phase_b * m as f64)).collect();
    let mut out = Vec::with_capacity(elev.len() * azim.len());
    for e in &elev {
        out.extend(azim.iter().map(|a| e * a));
    }
    ComplexVector(out)
}

/// MU → RIS channel `g = Σ α_p a(θ_p, φ_p)`.
pub fn mu_ris_channel(paths: &[MuRisPath], ris: &UpaConfig, wavelength: f64) -> Result<ComplexVector> {
    if paths.is_empty() {
        return Err(Error::Empty("MU-RIS path list"));
    }
    let mut g = ComplexVector::zeros(ris.element_count());
    for p in paths {
        g.axpy(p.gain, &upa_response(ris, p.arrival_at_ris, wavelength));
    }
    Ok(g)
}

/// RIS → AP channel, oriented `(M_x·M_z) × (N_y·N_z)` so that `H·Ψ·g` is
/// conformable: `H = Σ β_j a_AP(ψ_j, ω_j) a_RIS(θ_j, φ_j)ᴴ`.
pub fn ris_ap_channel(
    paths: &[RisApPath],
    ris: &UpaConfig,
    ap: &UpaConfig,
    wavelength: f64,
) -> Result<ComplexMatrix> {
    if paths.is_empty() {
        return Err(Error::Empty("RIS-AP path list"));
    }
    let (m, n) = (ap.element_count(), ris.element_count());
    let mut h = ComplexMatrix::zeros(m, n);
    for p in paths {
        let a_ap = upa_response(ap, p.arrival_at_ap, wavelength);
        let a_ris = upa_response(ris, p.departure_at_ris, wavelength);
        let ris_conj: Vec<Complex64> = a_ris.as_slice().iter().map(|z| z.conj()).collect();
        for (row, a) in h.data.chunks_exact_mut(n).zip(a_ap.as_slice()) {
            let s = p.gain * a;
            for (d, b) in row.iter_mut().zip(&ris_conj) {
                *d += s * b;
            }
        }
    }
    Ok(h)
}

/// Space-time channel response vector `h = H·Ψ·g`.
pub fn stcrv(h: &ComplexMatrix, psi: &ComplexMatrix, g: &ComplexVector) -> Result<ComplexVector> {
    if psi.rows != psi.cols || h.cols != psi.rows {
        return Err(Error::DimensionMismatch {
            left: "H",
            left_dims: vec![h.rows, h.cols],
            right: "psi",
            right_dims: vec![psi.rows, psi.cols],
        });
    }
    if g.len() != psi.cols {
        return Err(Error::DimensionMismatch {
            left: "psi",
            left_dims: vec![psi.rows, psi.cols],
            right: "g",
            right_dims: vec![g.len()],
        });
    }
    let reflected = if psi.is_diagonal() {
        ComplexVector((0..g.len()).map(|i| psi.get(i, i) * g[i]).collect())
    } else {
        psi.matvec(g)?
    };
    h.matvec(&reflected)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// One pilot slot at the AP: `y = √p·s·h + n`, `n ~ CN(0, δ²I)`.
pub fn received_signal<R: Rng + ?Sized>(
    h: &ComplexVector,
    tx_power: f64,
    pilot: Complex64,
    noise_power: f64,
    rng: &mut R,
) -> ComplexVector {
    debug_assert!(tx_power >= 0.0 && noise_power >= 0.0);
    let scale = pilot * tx_power.sqrt();
    let sigma = (noise_power / 2.0).sqrt();
    let out = h
        .as_slice()
        .iter()
        .map(|z| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            z * scale + Complex64::new(sigma * re, sigma * im)
        })
        .collect();
    ComplexVector(out)
}

/// Least-squares STCRV estimate from `τ` pilot observations:
/// `ĥ = (1/(τ√p)) Σ_t y(t)·conj(s(t))`.
pub fn estimate_stcrv(observations: &[ComplexVector], pilots: &[Complex64], tx_power: f64) -> Result<ComplexVector> {
    if observations.is_empty() || pilots.is_empty() {
        return Err(Error::Empty("pilot observations"));
    }
    if observations.len() != pilots.len() {
        return Err(Error::DimensionMismatch {
            left: "observations",
            left_dims: vec![observations.len()],
            right: "pilots",
            right_dims: vec![pilots.len()],
        });
    }
    let len = observations[0].len();
    if let Some(bad) = observations.iter().find(|o| o.len() != len) {
        return Err(Error::DimensionMismatch {
            left: "first observation",
            left_dims: vec![len],
            right: "observation",
            right_dims: vec![bad.len()],
        });
    }
    let mut acc = ComplexVector::zeros(len);
    for (y, s) in observations.iter().zip(pilots) {
        acc.axpy(s.conj(), y);
    }
    let norm = 1.0 / (observations.len() as f64 * tx_power.sqrt());
    Ok(acc.scale(Complex64::new(norm, 0.0)))
}

/// Unit-modulus pilot sequence of length `tau` (a DFT row).
pub fn pilot_sequence(tau: usize) -> Vec<Complex64> {
    (0..tau)
        .map(|t| Complex64::cis(2.0 * PI * (t * t) as f64 / (2.0 * tau as f64)))
        .collect()
}
