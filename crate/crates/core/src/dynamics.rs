//! Velocity of the graph `φ = u1 + i u2` under skew mean curvature flow and
//! its linear and regularized variants.
//!
//! Every mode is split into the linear part `(i + λ)Δφ`, applied exactly in
//! Fourier space, and a remainder `N(φ)` evaluated pointwise from spectral
//! jets and then dealiased with the 2/3 rule.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diagnostics::parameter_plan;
use crate::error::{Error, Result};
use crate::geometry::{self, point_curvature, point_frame, point_metric, PointJet};
use crate::grid::{dealias_in_place, sobolev_norm, wkp_norm, Field, GridSpec, SpectralField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhsKind {
    /// Normal-consistent graph reduction of `∂_t F = J(F)H(F)`.
    ExactSystem,
    /// `i ∂_t φ = −(1/√det g) g^{ij} ∂²_{ij} φ`.
    CompactCoefficient,
    /// `∂_t φ = iΔφ`.
    Linear,
    /// Graph reduction of `∂_t F = JH + λH`.
    Regularized,
}

impl RhsKind {
    pub fn name(self) -> &'static str {
        match self {
            RhsKind::ExactSystem => "exact_system",
            RhsKind::CompactCoefficient => "compact_coefficient",
            RhsKind::Linear => "linear",
            RhsKind::Regularized => "regularized",
        }
    }
}

impl fmt::Display for RhsKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RhsKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact_system" => Ok(RhsKind::ExactSystem),
            "compact_coefficient" => Ok(RhsKind::CompactCoefficient),
            "linear" => Ok(RhsKind::Linear),
            "regularized" => Ok(RhsKind::Regularized),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode `{other}` (expected exact_system, compact_coefficient, linear or regularized)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhsMode {
    kind: RhsKind,
    lambda: f64,
}

impl RhsMode {
    pub fn new(kind: RhsKind, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidArgument(format!(
                "lambda must lie in [0, 1], got {lambda}"
            )));
        }
        if kind != RhsKind::Regularized && lambda != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "lambda = {lambda} is only meaningful for the regularized mode, not {kind}"
            )));
        }
        Ok(RhsMode { kind, lambda })
    }

    pub fn exact() -> Self {
        RhsMode {
            kind: RhsKind::ExactSystem,
            lambda: 0.0,
        }
    }

    pub fn compact() -> Self {
        RhsMode {
            kind: RhsKind::CompactCoefficient,
            lambda: 0.0,
        }
    }

    pub fn linear() -> Self {
        RhsMode {
            kind: RhsKind::Linear,
            lambda: 0.0,
        }
    }

    pub fn regularized(lambda: f64) -> Result<Self> {
        RhsMode::new(RhsKind::Regularized, lambda)
    }

    pub fn kind(&self) -> RhsKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `z` such that the linear part has Fourier multiplier `−z|ξ|²`.
    pub fn linear_symbol(&self) -> Complex64 {
        Complex64::new(self.lambda, 1.0)
    }
}

/// Pointwise nonlinear remainder `N = ∂_t φ − (i + λ)Δφ` for the given jet.
pub(crate) fn point_remainder(jet: &PointJet, mode: &RhsMode) -> Complex64 {
    let d = jet.d;
    let (p1, p2) = (&jet.du[0], &jet.du[1]);
    let p11: f64 = (0..d).map(|i| p1[i] * p1[i]).sum();
    let p22: f64 = (0..d).map(|i| p2[i] * p2[i]).sum();
    let m: f64 = (0..d).map(|i| p1[i] * p2[i]).sum();

    // ginv − I = −Du (I₂ + DuᵀDu)⁻¹ Duᵀ, formed without subtracting 1.
    let det = (1.0 + p11) * (1.0 + p22) - m * m;
    let minv = [[(1.0 + p22) / det, -m / det], [-m / det, (1.0 + p11) / det]];
    let mut lap = [0.0; 2];
    let mut dl = [0.0; 2];
    for i in 0..d {
        for j in 0..d {
            let mut corr = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    corr += jet.du[a][i] * minv[a][b] * jet.du[b][j];
                }
            }
            for a in 0..2 {
                dl[a] -= corr * jet.d2u[a][i][j];
            }
        }
        for a in 0..2 {
            lap[a] += jet.d2u[a][i][i];
        }
    }
    let l1 = lap[0] + dl[0];
    let l2 = lap[1] + dl[1];

    match mode.kind {
        RhsKind::Linear => Complex64::new(0.0, 0.0),
        RhsKind::CompactCoefficient => {
            let s = (1.0 + p11).sqrt();
            let lambda = point_frame(jet).lambda;
            let rc = 1.0 / (lambda * s) - 1.0;
            Complex64::new(-rc * l2 - dl[1], rc * l1 + dl[0])
        }
        RhsKind::ExactSystem | RhsKind::Regularized => {
            let excess = geometry::det_excess(jet);
            let sq = (1.0 + excess).sqrt();
            let r = -excess / (sq * (1.0 + sq));
            let n1 = (1.0 + r) * (m * l1 - p11 * l2) - r * l2 - dl[1];
            let n2 = (1.0 + r) * (p22 * l1 - m * l2) + r * l1 + dl[0];
            let mut n = Complex64::new(n1, n2);
            if mode.kind == RhsKind::Regularized {
                n += mode.lambda * Complex64::new(dl[0], dl[1]);
            }
            n
        }
    }
}

fn check_finite(field: &Field) -> Result<()> {
    match field
        .values()
        .iter()
        .position(|v| !(v.re.is_finite() && v.im.is_finite()))
    {
        Some(index) => Err(Error::NonFinite { what: "field", index }),
        None => Ok(()),
    }
}

/// Dealiased Fourier coefficients of the nonlinear remainder.
pub(crate) fn remainder_spectral(spectral: &SpectralField, mode: &RhsMode) -> Result<SpectralField> {
    let spec = *spectral.spec();
    if mode.kind == RhsKind::Linear {
        return SpectralField::new(spec, vec![Complex64::new(0.0, 0.0); spec.len()]);
    }
    let jets = geometry::jets_spectral(spectral);
    let values: Vec<Complex64> = jets.par_iter().map(|j| point_remainder(j, mode)).collect();
    if let Some(index) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::NonFinite {
            what: "nonlinear remainder",
            index,
        });
    }
    let mut out = Field::from_raw(spec, values).to_spectral();
    dealias_in_place(&mut out);
    Ok(out)
}

/// Fourier coefficients of `∂_t φ`.
pub(crate) fn rhs_spectral(spectral: &SpectralField, mode: &RhsMode) -> Result<SpectralField> {
    let spec = *spectral.spec();
    let z = mode.linear_symbol();
    let mut out = remainder_spectral(spectral, mode)?;
    let lin = spectral.coeffs();
    out.coeffs_mut()
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, c)| *c += -z * spec.xi_norm_sq(i) * lin[i]);
    Ok(out)
}

/// Time derivative of `φ` under the selected mode.
pub fn rhs(field: &Field, mode: &RhsMode) -> Result<Field> {
    check_finite(field)?;
    Ok(rhs_spectral(&field.to_spectral(), mode)?.to_field())
}

/// Graph components of `J(F)H(F) + λH(F)`, pointwise and without
/// dealiasing. It agrees with the normal-consistent `rhs` at linear order
/// only and is kept for cross-checks.
pub fn ambient_binormal_rhs(field: &Field, lambda: f64) -> Result<Field> {
    check_finite(field)?;
    let spec = *field.spec();
    let d = spec.d();
    let values: Vec<Complex64> = geometry::jets(field)
        .par_iter()
        .map(|jet| {
            let c = point_curvature(jet, &point_frame(jet), &point_metric(jet));
            Complex64::new(c.skew[d] + lambda * c.mean[d], c.skew[d + 1] + lambda * c.mean[d + 1])
        })
        .collect();
    Field::new(spec, values)
}

/// `max_{p, α} |v·ν_α − JH·ν_α|` with `v = (0, ∂_t u1, ∂_t u2)` from the
/// exact system: the graph velocity must agree with `J(F)H(F)` up to a
/// tangential field.
pub fn normal_velocity_check(field: &Field) -> Result<f64> {
    let v = rhs(field, &RhsMode::exact())?;
    let d = field.spec().d();
    let jets = geometry::jets(field);
    Ok(jets
        .par_iter()
        .zip(v.values().par_iter())
        .map(|(jet, vel)| {
            let frame = point_frame(jet);
            let c = point_curvature(jet, &frame, &point_metric(jet));
            let mut worst: f64 = 0.0;
            for nu in [&frame.nu1, &frame.nu2] {
                let vn = vel.re * nu[d] + vel.im * nu[d + 1];
                worst = worst.max((vn - geometry::dot(&c.skew, nu)).abs());
            }
            worst
        })
        .reduce(|| 0.0, f64::max))
}

/// `max |JH|` over the grid.
pub fn max_skew_curvature(field: &Field) -> Result<f64> {
    check_finite(field)?;
    Ok(geometry::jets(field)
        .par_iter()
        .map(|jet| {
            let c = point_curvature(jet, &point_frame(jet), &point_metric(jet));
            geometry::dot(&c.skew, &c.skew).sqrt()
        })
        .reduce(|| 0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    GaussianPacket,
    SineBump,
    RandomSmooth,
}

impl InitKind {
    pub fn name(self) -> &'static str {
        match self {
            InitKind::GaussianPacket => "gaussian_packet",
            InitKind::SineBump => "sine_bump",
            InitKind::RandomSmooth => "random_smooth",
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_packet" => Ok(InitKind::GaussianPacket),
            "sine_bump" => Ok(InitKind::SineBump),
            "random_smooth" => Ok(InitKind::RandomSmooth),
            other => Err(Error::InvalidArgument(format!(
                "unknown initial data kind `{other}` (expected gaussian_packet, sine_bump or random_smooth)"
            ))),
        }
    }
}

/// Largest integer wave number (Euclidean length) used by `random_smooth`.
const RANDOM_BAND: i64 = 4;

/// Small, smooth initial data.
///
/// * `gaussian_packet`: `A e^{−|x|²/(2w²)} e^{i m x₁}`.
/// * `sine_bump`: `u1 = A e^{−|x|²/(2w²)} ∏ cos(m x_j)`,
///   `u2 = A e^{−|x|²/(2w²)} ∏ sin(m x_j + π/4)`.
/// * `random_smooth`: random Fourier modes with integer wave numbers
///   `|k| ≤ 4`, rescaled so that `‖φ‖_{H^k} + ‖φ‖_{W^{2,q}} = A` with `k`, `q`
///   from the default parameter plan. `width` and `modulation` are unused.
pub fn initial_data(
    spec: GridSpec,
    kind: InitKind,
    amplitude: f64,
    width: f64,
    modulation: f64,
    seed: u64,
) -> Result<Field> {
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "amplitude must be >= 0, got {amplitude}"
        )));
    }
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::InvalidArgument(format!("width must be > 0, got {width}")));
    }
    if !modulation.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "modulation must be finite, got {modulation}"
        )));
    }
    let envelope = move |x: &[f64]| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        (-r2 / (2.0 * width * width)).exp()
    };
    match kind {
        InitKind::GaussianPacket => Field::from_fn(spec, |x| {
            amplitude * envelope(x) * Complex64::from_polar(1.0, modulation * x[0])
        }),
        InitKind::SineBump => Field::from_fn(spec, |x| {
            let e = amplitude * envelope(x);
            let u1: f64 = x.iter().map(|v| (modulation * v).cos()).product();
            let u2: f64 = x
                .iter()
                .map(|v| (modulation * v + std::f64::consts::FRAC_PI_4).sin())
                .product();
            Complex64::new(e * u1, e * u2)
        }),
        InitKind::RandomSmooth => random_smooth(spec, amplitude, seed),
    }
}

fn random_smooth(spec: GridSpec, amplitude: f64, seed: u64) -> Result<Field> {
    let d = spec.d();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut modes = Vec::new();
    let range = -RANDOM_BAND..=RANDOM_BAND;
    for k0 in range.clone() {
        for k1 in if d > 1 { range.clone() } else { 0..=0 } {
            for k2 in if d > 2 { range.clone() } else { 0..=0 } {
                let k = [k0, k1, k2];
                if k.iter().map(|v| v * v).sum::<i64>() > RANDOM_BAND * RANDOM_BAND {
                    continue;
                }
                let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                modes.push((k, c));
            }
        }
    }
    let base = 2.0 * std::f64::consts::PI / spec.length();
    let raw = Field::from_fn(spec, |x| {
        modes
            .iter()
            .map(|(k, c)| {
                let phase: f64 = (0..d).map(|i| k[i] as f64 * base * x[i]).sum();
                c * Complex64::from_polar(1.0, phase)
            })
            .sum()
    })?;
    if amplitude == 0.0 {
        return Ok(Field::zeros(spec));
    }
    let plan = parameter_plan(d.max(2), crate::diagnostics::DEFAULT_DELTA)?;
    let size = sobolev_norm(&raw, plan.k as f64) + wkp_norm(&raw, 2, plan.q)?;
    Ok(raw.scale(amplitude / size))
}
