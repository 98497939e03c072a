//! Periodic spectral discretization of a large box `[-L/2, L/2)^d`.
//!
//! Transforms carry the `h^d` quadrature weight in the forward direction, so
//! `f̂(ξ) ≈ ∫ f(x) e^{-iξ·x} dx` and Parseval reads
//! `Σ |f|² h^d = V⁻¹ Σ |f̂|²` with `V = L^d`. The origin phase `e^{iξ L/2}`
//! is dropped; every operator here is a Fourier multiplier, so it cancels.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// Highest derivative order the spectral operators accept.
pub const MAX_DERIVATIVE_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    d: usize,
    n: usize,
    length: f64,
}

impl GridSpec {
    pub fn new(d: usize, n: usize, length: f64) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&d) {
            return Err(Error::InvalidGrid(format!("dimension {d} not in 1..=3")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be a power of two >= 8, got {n}"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!("box length must be > 0, got {length}")));
        }
        Ok(GridSpec { d, n, length })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Grid spacing `h = L / n`. Exact because `n` is a power of two.
    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Total number of samples `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn volume(&self) -> f64 {
        self.length.powi(self.d as i32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.d as i32)
    }

    /// Per-axis indices of a row-major flat index (axis 0 slowest).
    pub fn axis_indices(&self, flat: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        let mut rem = flat;
        for axis in (0..self.d).rev() {
            out[axis] = rem % self.n;
            rem /= self.n;
        }
        out
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().take(self.d).fold(0, |acc, &i| acc * self.n + i % self.n)
    }

    /// Physical coordinates of a sample; unused axes are zero.
    pub fn coords(&self, flat: usize) -> [f64; MAX_DIM] {
        let idx = self.axis_indices(flat);
        let h = self.spacing();
        let mut x = [0.0; MAX_DIM];
        for axis in 0..self.d {
            x[axis] = -0.5 * self.length + idx[axis] as f64 * h;
        }
        x
    }

    /// Integer wave number of a per-axis FFT index, in `(-n/2, n/2]`.
    pub fn wave_number(&self, i: usize) -> i64 {
        if i <= self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    pub fn is_nyquist(&self, i: usize) -> bool {
        i == self.n / 2
    }

    /// Physical frequency vector `ξ = 2πk/L` of a flat spectral index.
    pub fn xi(&self, flat: usize) -> [f64; MAX_DIM] {
        let idx = self.axis_indices(flat);
        let scale = 2.0 * PI / self.length;
        let mut xi = [0.0; MAX_DIM];
        for axis in 0..self.d {
            xi[axis] = scale * self.wave_number(idx[axis]) as f64;
        }
        xi
    }

    pub fn xi_norm_sq(&self, flat: usize) -> f64 {
        self.xi(flat).iter().map(|v| v * v).sum()
    }

    /// Largest `|ξ|` representable on the grid (Nyquist on every axis).
    pub fn xi_max(&self) -> f64 {
        (self.d as f64).sqrt() * PI / self.spacing()
    }
}

pub fn make_grid(d: usize, n: usize, length: f64) -> Result<GridSpec> {
    GridSpec::new(d, n, length)
}

/// Complex samples `φ = u1 + i u2`, row-major over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    spec: GridSpec,
    values: Vec<Complex64>,
}

impl Field {
    pub fn new(spec: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} samples, got {}",
                spec.len(),
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite { what: "field", index });
        }
        Ok(Field { spec, values })
    }

    pub(crate) fn from_raw(spec: GridSpec, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(values.len(), spec.len());
        Field { spec, values }
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Field::from_raw(spec, vec![Complex64::new(0.0, 0.0); spec.len()])
    }

    /// Samples `f(x)` at every grid point. Fails if `f` produces a non-finite value.
    pub fn from_fn<F>(spec: GridSpec, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Complex64 + Sync,
    {
        let values = (0..spec.len())
            .into_par_iter()
            .map(|i| {
                let x = spec.coords(i);
                f(&x[..spec.d()])
            })
            .collect();
        Field::new(spec, values)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn conj(&self) -> Field {
        Field::from_raw(self.spec, self.values.iter().map(|v| v.conj()).collect())
    }

    pub fn scale(&self, factor: f64) -> Field {
        Field::from_raw(self.spec, self.values.iter().map(|v| v * factor).collect())
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        check_same_grid(&self.spec, &other.spec)?;
        Ok(Field::from_raw(
            self.spec,
            self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Circular shift of the samples by `shift[axis]` grid points.
    pub fn roll(&self, shift: &[usize]) -> Field {
        let spec = self.spec;
        let mut out = vec![Complex64::new(0.0, 0.0); spec.len()];
        for (flat, v) in self.values.iter().enumerate() {
            let mut idx = spec.axis_indices(flat);
            for axis in 0..spec.d() {
                idx[axis] = (idx[axis] + shift.get(axis).copied().unwrap_or(0)) % spec.n();
            }
            out[spec.flat_index(&idx)] = *v;
        }
        Field::from_raw(spec, out)
    }

    pub fn to_spectral(&self) -> SpectralField {
        let mut coeffs = self.values.clone();
        fft_nd(&self.spec, &mut coeffs, false);
        let w = self.spec.cell_volume();
        coeffs.par_iter_mut().for_each(|c| *c *= w);
        SpectralField {
            spec: self.spec,
            coeffs,
        }
    }
}

pub(crate) fn check_same_grid(a: &GridSpec, b: &GridSpec) -> Result<()> {
    if a != b {
        return Err(Error::GridMismatch(format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

/// Fourier coefficients in FFT storage order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    spec: GridSpec,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn new(spec: GridSpec, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != spec.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} coefficients, got {}",
                spec.len(),
                coeffs.len()
            )));
        }
        Ok(SpectralField { spec, coeffs })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn to_field(&self) -> Field {
        let mut values = self.coeffs.clone();
        fft_nd(&self.spec, &mut values, true);
        let w = 1.0 / self.spec.volume();
        values.par_iter_mut().for_each(|v| *v *= w);
        Field::from_raw(self.spec, values)
    }

    /// Continuum-normalized `∫|f|² dx` via Parseval.
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>() / self.spec.volume()
    }

    /// Applies a pointwise multiplier `m(flat index)` in place.
    pub fn apply<M>(&mut self, m: M)
    where
        M: Fn(usize) -> Complex64 + Sync,
    {
        self.coeffs.par_iter_mut().enumerate().for_each(|(i, c)| *c *= m(i));
    }

    /// Spectral derivative `∂^α` back in physical space (no validation of `α`).
    pub(crate) fn derivative_field(&self, alpha: &[usize]) -> Field {
        let mut s = self.clone();
        let spec = self.spec;
        s.apply(|i| derivative_multiplier(&spec, alpha, i));
        s.to_field()
    }

    /// Multiplies by `e^{-z|ξ|²}`; `z = i t` is the free Schrödinger flow
    /// `e^{itΔ}`, `z = (λ + i) t` its parabolically damped variant.
    pub fn apply_laplacian_flow(&mut self, z: Complex64) {
        let spec = self.spec;
        self.apply(|i| (-z * spec.xi_norm_sq(i)).exp());
    }
}

/// `∏_j (iξ_j)^{α_j}`, with odd-order factors zeroed at the Nyquist index.
pub(crate) fn derivative_multiplier(spec: &GridSpec, alpha: &[usize], flat: usize) -> Complex64 {
    let idx = spec.axis_indices(flat);
    let xi = spec.xi(flat);
    let mut m = Complex64::new(1.0, 0.0);
    for axis in 0..spec.d() {
        let a = alpha.get(axis).copied().unwrap_or(0);
        if a == 0 {
            continue;
        }
        if a % 2 == 1 && spec.is_nyquist(idx[axis]) {
            return Complex64::new(0.0, 0.0);
        }
        m *= Complex64::new(0.0, xi[axis]).powu(a as u32);
    }
    m
}

fn validate_multi_index(spec: &GridSpec, alpha: &[usize]) -> Result<()> {
    if alpha.len() != spec.d() {
        return Err(Error::InvalidArgument(format!(
            "multi-index {alpha:?} has length {}, grid dimension is {}",
            alpha.len(),
            spec.d()
        )));
    }
    let order: usize = alpha.iter().sum();
    if order > MAX_DERIVATIVE_ORDER {
        return Err(Error::InvalidArgument(format!(
            "derivative order {order} exceeds {MAX_DERIVATIVE_ORDER}"
        )));
    }
    Ok(())
}

pub fn derivative(field: &Field, multi_index: &[usize]) -> Result<Field> {
    validate_multi_index(field.spec(), multi_index)?;
    Ok(field.to_spectral().derivative_field(multi_index))
}

/// All multi-indices of length `d` with total order exactly `order`.
pub fn multi_indices(d: usize, order: usize) -> Vec<[usize; MAX_DIM]> {
    let mut out = Vec::new();
    let mut cur = [0usize; MAX_DIM];
    fn rec(axis: usize, d: usize, left: usize, cur: &mut [usize; MAX_DIM], out: &mut Vec<[usize; MAX_DIM]>) {
        if axis + 1 == d {
            cur[axis] = left;
            out.push(*cur);
            cur[axis] = 0;
            return;
        }
        for a in (0..=left).rev() {
            cur[axis] = a;
            rec(axis + 1, d, left - a, cur, out);
        }
        cur[axis] = 0;
    }
    rec(0, d, order, &mut cur, &mut out);
    out
}

/// Two-thirds rule: zero every coefficient with some `|k_j| > n/3`.
pub fn dealias(spectral: &SpectralField) -> SpectralField {
    let mut out = spectral.clone();
    dealias_in_place(&mut out);
    out
}

pub(crate) fn dealias_in_place(spectral: &mut SpectralField) {
    let spec = spectral.spec;
    let cutoff = spec.n() as f64 / 3.0;
    spectral.coeffs.par_iter_mut().enumerate().for_each(|(i, c)| {
        let idx = spec.axis_indices(i);
        if (0..spec.d()).any(|a| spec.wave_number(idx[a]).unsigned_abs() as f64 > cutoff) {
            *c = Complex64::new(0.0, 0.0);
        }
    });
}

/// Quadrature `(Σ |f|^p h^d)^{1/p}`; `p = ∞` is the grid maximum.
pub fn lp_norm(field: &Field, p: f64) -> Result<f64> {
    let spec = field.spec();
    lp_norm_of(field.values().iter().map(|v| v.norm()), spec.cell_volume(), p)
}

/// Same quadrature over arbitrary nonnegative samples.
pub fn lp_norm_of<I>(samples: I, cell_volume: f64, p: f64) -> Result<f64>
where
    I: Iterator<Item = f64> + Clone,
{
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidArgument(format!("L^p exponent must be >= 1, got {p}")));
    }
    let max = samples.clone().fold(0.0, f64::max);
    if p.is_infinite() || max == 0.0 {
        return Ok(max);
    }
    // Scaled by the max so that large p neither underflows nor overflows.
    let sum: f64 = samples.map(|a| (a / max).powf(p)).sum();
    Ok(max * (sum * cell_volume).powf(1.0 / p))
}

/// `‖⟨ξ⟩^s f̂‖`, normalized so that `s = 0` is the L² norm.
pub fn sobolev_norm(field: &Field, s: f64) -> f64 {
    sobolev_norm_spectral(&field.to_spectral(), s)
}

pub fn sobolev_norm_spectral(spectral: &SpectralField, s: f64) -> f64 {
    let spec = spectral.spec;
    let sum: f64 = spectral
        .coeffs
        .par_iter()
        .enumerate()
        .map(|(i, c)| (1.0 + spec.xi_norm_sq(i)).powf(s) * c.norm_sqr())
        .sum();
    (sum / spec.volume()).sqrt()
}

/// `Σ_{|α| ≤ k} ‖∂^α f‖_{L^p}`.
pub fn wkp_norm(field: &Field, k: usize, p: f64) -> Result<f64> {
    if k > MAX_DERIVATIVE_ORDER {
        return Err(Error::InvalidArgument(format!(
            "W^{{k,p}} order {k} exceeds {MAX_DERIVATIVE_ORDER}"
        )));
    }
    let spec = field.spec();
    let spectral = field.to_spectral();
    let mut total = lp_norm(field, p)?;
    for order in 1..=k {
        for alpha in multi_indices(spec.d(), order) {
            total += lp_norm(&spectral.derivative_field(&alpha[..spec.d()]), p)?;
        }
    }
    Ok(total)
}

/// Exact free Schrödinger propagator `e^{itΔ}` (multiplier `e^{-i|ξ|²t}`).
pub fn free_propagator(field: &Field, t: f64) -> Field {
    if t == 0.0 {
        return field.clone();
    }
    let mut s = field.to_spectral();
    s.apply_laplacian_flow(Complex64::new(0.0, t));
    s.to_field()
}

/// Box-wraparound time `L / (4 ξ*)`, where `ξ*` is the smallest radius in
/// frequency space holding 99.99% of the spectral mass. Infinite for data
/// without spectral mass away from `ξ = 0`.
pub fn wraparound_time(field: &Field) -> f64 {
    let spec = field.spec();
    let spectral = field.to_spectral();
    let mut shells: Vec<(f64, f64)> = spectral
        .coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| (spec.xi_norm_sq(i).sqrt(), c.norm_sqr()))
        .collect();
    let total: f64 = shells.iter().map(|s| s.1).sum();
    if total == 0.0 {
        return f64::INFINITY;
    }
    shells.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut acc = 0.0;
    let mut radius = 0.0;
    for (r, m) in shells {
        acc += m;
        radius = r;
        if acc >= 0.9999 * total {
            break;
        }
    }
    if radius == 0.0 {
        f64::INFINITY
    } else {
        spec.length() / (4.0 * radius)
    }
}

type PlanCache = Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>;

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static CACHE: OnceLock<PlanCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("FFT plan cache poisoned");
    guard
        .entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

/// Unnormalized d-dimensional FFT, one axis at a time.
fn fft_nd(spec: &GridSpec, data: &mut [Complex64], inverse: bool) {
    let n = spec.n();
    let total = spec.len();
    let fft = plan(n, inverse);
    let lines_per_task = (4096 / n).max(1);
    for axis in 0..spec.d() {
        let stride = n.pow((spec.d() - 1 - axis) as u32);
        if stride == 1 {
            data.par_chunks_mut(n * lines_per_task)
                .for_each(|chunk| fft.process(chunk));
            continue;
        }
        let block = n * stride;
        let mut lines = vec![Complex64::new(0.0, 0.0); total];
        lines.par_chunks_mut(n).enumerate().for_each(|(line, buf)| {
            let outer = line / stride;
            let inner = line % stride;
            let base = outer * block + inner;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = data[base + i * stride];
            }
        });
        lines
            .par_chunks_mut(n * lines_per_task)
            .for_each(|chunk| fft.process(chunk));
        data.par_chunks_mut(block).enumerate().for_each(|(outer, chunk)| {
            for i in 0..n {
                for inner in 0..stride {
                    chunk[i * stride + inner] = lines[(outer * stride + inner) * n + i];
                }
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(spec: GridSpec, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..spec.len())
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        Field::new(spec, values).unwrap()
    }

    fn gaussian(spec: GridSpec) -> Field {
        Field::from_fn(spec, |x| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            Complex64::new((-0.5 * r2).exp(), 0.0)
        })
        .unwrap()
    }

    #[test]
    fn make_grid_examples() {
        let g = make_grid(2, 128, 2.0 * PI * 10.0).unwrap();
        assert_eq!(g.spacing(), 20.0 * PI / 128.0);
        assert_eq!(g.spacing() * g.n() as f64, g.length());
        assert_eq!(make_grid(1, 8, 8.0).unwrap().spacing(), 1.0);
        assert!(matches!(make_grid(2, 100, 1.0), Err(Error::InvalidGrid(_))));
        assert!(make_grid(4, 16, 1.0).is_err());
        assert!(make_grid(0, 16, 1.0).is_err());
        assert!(make_grid(2, 16, 0.0).is_err());
        assert!(make_grid(2, 16, -1.0).is_err());
        assert!(make_grid(2, 4, 1.0).is_err());
    }

    #[test]
    fn derivative_of_plane_wave() {
        let spec = make_grid(2, 32, 10.0).unwrap();
        let k = 2.0 * PI / spec.length();
        let phi = Field::from_fn(spec, |x| Complex64::new(0.0, k * x[0]).exp()).unwrap();
        let d = derivative(&phi, &[1, 0]).unwrap();
        for (a, b) in d.values().iter().zip(phi.values()) {
            let expect = Complex64::new(0.0, k) * b;
            assert!((a - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn derivative_of_constant_vanishes() {
        let spec = make_grid(3, 8, 3.0).unwrap();
        let phi = Field::from_fn(spec, |_| Complex64::new(2.5, -1.0)).unwrap();
        for alpha in [[1, 0, 0], [0, 2, 0], [1, 1, 1], [0, 0, 4]] {
            assert!(derivative(&phi, &alpha).unwrap().max_abs() < 1e-13);
        }
    }

    #[test]
    fn second_derivative_of_sine() {
        let spec = make_grid(2, 16, 7.0).unwrap();
        let k = 2.0 * PI / spec.length();
        let phi = Field::from_fn(spec, |x| Complex64::new((k * x[0]).sin(), 0.0)).unwrap();
        let d = derivative(&phi, &[2, 0]).unwrap();
        for (i, v) in d.values().iter().enumerate() {
            let x = spec.coords(i);
            // analytic second derivative
            let expect = -k * k * (k * x[0]).sin();
            assert!((v.re - expect).abs() < 1e-12 && v.im.abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_rejects_high_order_and_bad_index() {
        let spec = make_grid(2, 8, 1.0).unwrap();
        let phi = Field::zeros(spec);
        assert!(derivative(&phi, &[3, 2]).is_err());
        assert!(derivative(&phi, &[1]).is_err());
        assert!(derivative(&phi, &[2, 2]).is_ok());
    }

    #[test]
    fn mixed_derivatives_commute() {
        let spec = make_grid(2, 32, 6.0).unwrap();
        let f = random_field(spec, 3);
        let a = derivative(&derivative(&f, &[1, 0]).unwrap(), &[0, 1]).unwrap();
        let b = derivative(&derivative(&f, &[0, 1]).unwrap(), &[1, 0]).unwrap();
        let scale = a.max_abs().max(1.0);
        assert!(a.sub(&b).unwrap().max_abs() <= 1e-12 * scale);
    }

    #[test]
    fn dealias_examples() {
        let spec = make_grid(1, 16, 16.0).unwrap();
        let k = 2.0 * PI / spec.length();
        let nyq = Field::from_fn(spec, |x| Complex64::new(0.0, 8.0 * k * x[0]).exp()).unwrap();
        assert!(dealias(&nyq.to_spectral()).to_field().max_abs() < 1e-14);
        let low = Field::from_fn(spec, |x| Complex64::new(0.0, k * x[0]).exp()).unwrap();
        let back = dealias(&low.to_spectral()).to_field();
        assert!(back.sub(&low).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn lp_norm_examples() {
        let spec = make_grid(2, 16, 3.0).unwrap();
        let one = Field::from_fn(spec, |_| Complex64::new(1.0, 0.0)).unwrap();
        assert_relative_eq!(lp_norm(&one, 2.0).unwrap(), spec.volume().sqrt(), max_relative = 1e-14);
        assert_eq!(lp_norm(&Field::zeros(spec), 2.0).unwrap(), 0.0);
        assert_eq!(lp_norm(&Field::zeros(spec), f64::INFINITY).unwrap(), 0.0);
        assert!(lp_norm(&one, 0.5).is_err());

        let g = make_grid(2, 128, 40.0).unwrap();
        // ∫ e^{-|x|²} dx = π in two dimensions
        assert_relative_eq!(lp_norm(&gaussian(g), 2.0).unwrap(), PI.sqrt(), max_relative = 1e-8);
    }

    #[test]
    fn sobolev_norm_examples() {
        let spec = make_grid(2, 32, 5.0).unwrap();
        let f = random_field(spec, 11);
        assert_relative_eq!(sobolev_norm(&f, 0.0), lp_norm(&f, 2.0).unwrap(), max_relative = 1e-12);

        let xi0 = [3.0 * 2.0 * PI / spec.length(), -2.0 * 2.0 * PI / spec.length()];
        let wave = Field::from_fn(spec, |x| Complex64::new(0.0, xi0[0] * x[0] + xi0[1] * x[1]).exp()).unwrap();
        let bracket_sq = 1.0 + xi0[0] * xi0[0] + xi0[1] * xi0[1];
        assert_relative_eq!(
            sobolev_norm(&wave, 2.0),
            bracket_sq * spec.volume().sqrt(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn sobolev_h1_of_gaussian_matches_direct_quadrature() {
        let spec = make_grid(2, 128, 40.0).unwrap();
        let h1 = sobolev_norm(&gaussian(spec), 1.0);
        // direct quadrature of |f|² + |∇f|² with the analytic gradient on a finer grid
        let m = 2000;
        let hq = 40.0 / m as f64;
        let mut sum = 0.0;
        for i in 0..m {
            for j in 0..m {
                let x = -20.0 + i as f64 * hq;
                let y = -20.0 + j as f64 * hq;
                let r2 = x * x + y * y;
                sum += (1.0 + r2) * (-r2).exp();
            }
        }
        let oracle = (sum * hq * hq).sqrt();
        assert_relative_eq!(h1, oracle, max_relative = 1e-10);
        assert_relative_eq!(h1, (2.0 * PI).sqrt(), max_relative = 1e-10);
    }

    #[test]
    fn wkp_norm_examples() {
        let spec = make_grid(2, 16, 4.0).unwrap();
        let c = Field::from_fn(spec, |_| Complex64::new(0.3, 0.4)).unwrap();
        for p in [1.0, 2.0, 4.0] {
            assert_relative_eq!(
                wkp_norm(&c, 2, p).unwrap(),
                0.5 * spec.volume().powf(1.0 / p),
                max_relative = 1e-12
            );
        }
        let f = random_field(spec, 5);
        assert_relative_eq!(wkp_norm(&f, 0, 3.0).unwrap(), lp_norm(&f, 3.0).unwrap());
        assert!(wkp_norm(&f, 5, 2.0).is_err());
    }

    #[test]
    fn wkp_norm_of_sine_mode_matches_quadrature() {
        let l = 2.0 * PI;
        let spec = make_grid(2, 32, l).unwrap();
        let f = Field::from_fn(spec, |x| Complex64::new(x[0].sin(), 0.0)).unwrap();
        // analytic: |f| = |sin|, |∂₁f| = |cos|, |∂₁₁f| = |sin|, all others zero;
        // ∫|sin x|⁴ over the box, midpoint quadrature on a fine grid
        let m = 20000;
        let hq = l / m as f64;
        let s4: f64 = (0..m).map(|i| ((i as f64 + 0.5) * hq).sin().powi(4)).sum::<f64>() * hq * l;
        let c4: f64 = (0..m).map(|i| ((i as f64 + 0.5) * hq).cos().powi(4)).sum::<f64>() * hq * l;
        let oracle = 2.0 * s4.powf(0.25) + c4.powf(0.25);
        assert_relative_eq!(wkp_norm(&f, 2, 4.0).unwrap(), oracle, max_relative = 1e-10);
    }

    #[test]
    fn free_propagator_examples() {
        let spec = make_grid(2, 32, 8.0).unwrap();
        let f = random_field(spec, 2);
        assert_eq!(free_propagator(&f, 0.0), f);

        let xi0 = [2.0 * PI / spec.length(), 3.0 * 2.0 * PI / spec.length()];
        let t = 0.7;
        let wave = Field::from_fn(spec, |x| Complex64::new(0.0, xi0[0] * x[0] + xi0[1] * x[1]).exp()).unwrap();
        let out = free_propagator(&wave, t);
        let phase = Complex64::new(0.0, -(xi0[0] * xi0[0] + xi0[1] * xi0[1]) * t).exp();
        for (a, b) in out.values().iter().zip(wave.values()) {
            assert!((a - phase * b).norm() < 1e-13);
        }
    }

    #[test]
    fn free_propagator_preserves_sobolev_norms_and_group_law() {
        let spec = make_grid(2, 32, 8.0).unwrap();
        let f = random_field(spec, 9);
        let a = free_propagator(&f, 0.3);
        for s in [0.0, 1.0, 2.0, 5.0] {
            let before = sobolev_norm(&f, s);
            assert!((sobolev_norm(&a, s) - before).abs() <= 1e-12 * before);
        }
        let ab = free_propagator(&a, 0.45);
        let direct = free_propagator(&f, 0.75);
        assert!(ab.sub(&direct).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn holder_consistency() {
        for seed in 0..5 {
            let spec = make_grid(2, 16, 3.0).unwrap();
            let f = random_field(spec, seed);
            let l2 = lp_norm(&f, 2.0).unwrap();
            let l1 = lp_norm(&f, 1.0).unwrap();
            let linf = lp_norm(&f, f64::INFINITY).unwrap();
            assert!(l2 * l2 <= l1 * linf * (1.0 + 1e-12));
        }
    }

    #[test]
    fn multi_index_counts() {
        assert_eq!(multi_indices(2, 2).len(), 3);
        assert_eq!(multi_indices(3, 2).len(), 6);
        assert_eq!(multi_indices(1, 4), vec![[4, 0, 0]]);
        assert_eq!(multi_indices(3, 0), vec![[0, 0, 0]]);
    }

    #[test]
    fn wraparound_time_scales_with_box() {
        let a = make_grid(2, 64, 20.0).unwrap();
        let b = make_grid(2, 128, 40.0).unwrap();
        let ta = wraparound_time(&gaussian(a));
        let tb = wraparound_time(&gaussian(b));
        // 99.99% of e^{-|ξ|²} mass sits inside |ξ| ≈ 3.03
        assert!(ta > 20.0 / (4.0 * 3.2) && ta < 20.0 / (4.0 * 2.8), "{ta}");
        assert!(tb > ta * 1.8);
        assert!(wraparound_time(&Field::zeros(a)).is_infinite());
    }

    proptest! {
        #[test]
        fn transform_round_trip(seed in 0u64..1000, d in 1usize..=3) {
            let n = if d == 3 { 8 } else { 16 };
            let spec = make_grid(d, n, 2.5).unwrap();
            let f = random_field(spec, seed);
            let back = f.to_spectral().to_field();
            let err = back.sub(&f).unwrap().max_abs();
            prop_assert!(err <= 1e-12 * f.max_abs());
        }

        #[test]
        fn dealias_never_adds_energy(seed in 0u64..1000) {
            let spec = make_grid(2, 16, 1.0).unwrap();
            let s = random_field(spec, seed).to_spectral();
            prop_assert!(dealias(&s).energy() <= s.energy());
        }

        #[test]
        fn parseval_matches_quadrature(seed in 0u64..1000) {
            let spec = make_grid(2, 16, 3.7).unwrap();
            let f = random_field(spec, seed);
            let l2 = lp_norm(&f, 2.0).unwrap();
            prop_assert!((f.to_spectral().energy().sqrt() - l2).abs() <= 1e-12 * l2);
        }
    }
}
