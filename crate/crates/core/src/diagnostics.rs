//! Norms, decay fits, conservation monitors and scattering profiles.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{self, point_curvature, point_frame, point_metric, GeometryBundle};
use crate::grid::{check_same_grid, free_propagator, lp_norm, sobolev_norm, wkp_norm, Field};

pub const DEFAULT_DELTA: f64 = 0.05;

/// Exponents of the small-data global existence statement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterPlan {
    pub d: usize,
    pub delta: f64,
    pub q: f64,
    pub q_prime: f64,
    /// Smallest integer above `max((d+7)/2, d+1)`.
    pub k: usize,
    pub k0: usize,
    /// `(d/2)(2/q − 1)`.
    pub decay_exponent: f64,
}

pub fn parameter_plan(d: usize, delta: f64) -> Result<ParameterPlan> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!("parameter plan needs d >= 2, got {d}")));
    }
    let df = d as f64;
    if !(delta > 0.0 && delta < 1.0 / df) {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in (0, 1/d) = (0, {}), got {delta}",
            1.0 / df
        )));
    }
    let inv_q = 1.0 / df + 0.5 - delta;
    let q = 1.0 / inv_q;
    let bound = ((df + 7.0) / 2.0).max(df + 1.0);
    let k = bound.floor() as usize + 1;
    Ok(ParameterPlan {
        d,
        delta,
        q,
        q_prime: q / (q - 1.0),
        k,
        k0: d / 2 + 3,
        decay_exponent: 0.5 * df * (2.0 * inv_q - 1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Column {
    T,
    L2,
    H2,
    Hk,
    W2qprime,
    SupDu,
    SupD2u,
    Volume,
    AL2Sq,
    ASup,
    GradAL2Sq,
    Linf,
}

impl Column {
    pub const ALL: [Column; 12] = [
        Column::T,
        Column::L2,
        Column::H2,
        Column::Hk,
        Column::W2qprime,
        Column::SupDu,
        Column::SupD2u,
        Column::Volume,
        Column::AL2Sq,
        Column::ASup,
        Column::GradAL2Sq,
        Column::Linf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Column::T => "t",
            Column::L2 => "l2",
            Column::H2 => "h2",
            Column::Hk => "hk",
            Column::W2qprime => "w2qprime",
            Column::SupDu => "sup_du",
            Column::SupD2u => "sup_d2u",
            Column::Volume => "volume",
            Column::AL2Sq => "a_l2_sq",
            Column::ASup => "a_sup",
            Column::GradAL2Sq => "grad_a_l2_sq",
            Column::Linf => "linf",
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Column {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Column::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown series column `{s}`")))
    }
}

/// One row of the time series.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub l2: f64,
    pub h2: f64,
    pub hk: f64,
    pub w2qprime: f64,
    pub sup_du: f64,
    pub sup_d2u: f64,
    pub volume: f64,
    pub a_l2_sq: f64,
    pub a_sup: f64,
    pub grad_a_l2_sq: f64,
    pub linf: f64,
}

impl DiagnosticsRecord {
    pub fn get(&self, column: Column) -> f64 {
        match column {
            Column::T => self.t,
            Column::L2 => self.l2,
            Column::H2 => self.h2,
            Column::Hk => self.hk,
            Column::W2qprime => self.w2qprime,
            Column::SupDu => self.sup_du,
            Column::SupD2u => self.sup_d2u,
            Column::Volume => self.volume,
            Column::AL2Sq => self.a_l2_sq,
            Column::ASup => self.a_sup,
            Column::GradAL2Sq => self.grad_a_l2_sq,
            Column::Linf => self.linf,
        }
    }

    pub fn set(&mut self, column: Column, value: f64) {
        let slot = match column {
            Column::T => &mut self.t,
            Column::L2 => &mut self.l2,
            Column::H2 => &mut self.h2,
            Column::Hk => &mut self.hk,
            Column::W2qprime => &mut self.w2qprime,
            Column::SupDu => &mut self.sup_du,
            Column::SupD2u => &mut self.sup_d2u,
            Column::Volume => &mut self.volume,
            Column::AL2Sq => &mut self.a_l2_sq,
            Column::ASup => &mut self.a_sup,
            Column::GradAL2Sq => &mut self.grad_a_l2_sq,
            Column::Linf => &mut self.linf,
        };
        *slot = value;
    }

    pub fn values(&self) -> [f64; 12] {
        Column::ALL.map(|c| self.get(c))
    }
}

pub fn record(field: &Field, t: f64, plan: &ParameterPlan) -> Result<DiagnosticsRecord> {
    let bundle = GeometryBundle::compute(field)?;
    let sup_d2u = bundle
        .jets
        .par_iter()
        .map(|j| j.hessian_norm_sq().sqrt())
        .reduce(|| 0.0, f64::max);
    let a = &bundle.curvature.a_normsq;
    Ok(DiagnosticsRecord {
        t,
        l2: lp_norm(field, 2.0)?,
        h2: sobolev_norm(field, 2.0),
        hk: sobolev_norm(field, plan.k as f64),
        w2qprime: wkp_norm(field, 2, plan.q_prime)?,
        sup_du: bundle.metric.sup_du,
        sup_d2u,
        volume: bundle.volume(),
        a_l2_sq: bundle.integrate(|p| a[p]),
        a_sup: a.iter().fold(0.0f64, |m, v| m.max(v.sqrt())),
        grad_a_l2_sq: bundle.integrate(|p| bundle.grad_a_normsq[p]),
        linf: field.max_abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub slope: f64,
    pub stderr: f64,
    pub samples: usize,
}

pub const MIN_FIT_SAMPLES: usize = 8;

/// Ordinary least squares `y = a + b x`; returns `(b, stderr(b))`.
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let ssr: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    let stderr = if x.len() > 2 {
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    (slope, stderr)
}

/// Slope of `log(column)` against `log t` over records with
/// `t_lo ≤ t ≤ t_hi`. Callers keep `t_hi` below the wraparound time.
pub fn fit_decay_exponent(series: &[DiagnosticsRecord], t_lo: f64, t_hi: f64, column: Column) -> Result<DecayFit> {
    if !(t_lo >= 1.0 && t_hi > t_lo) {
        return Err(Error::InvalidArgument(format!(
            "fit window must satisfy 1 <= t_lo < t_hi, got [{t_lo}, {t_hi}]"
        )));
    }
    let window: Vec<&DiagnosticsRecord> = series.iter().filter(|r| r.t >= t_lo && r.t <= t_hi).collect();
    if window.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_FIT_SAMPLES,
            found: window.len(),
        });
    }
    if let Some(r) = window.iter().find(|r| !(r.get(column) > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "column {column} is not positive at t = {} ({})",
            r.t,
            r.get(column)
        )));
    }
    let x: Vec<f64> = window.iter().map(|r| r.t.ln()).collect();
    let y: Vec<f64> = window.iter().map(|r| r.get(column).ln()).collect();
    let (slope, stderr) = least_squares_slope(&x, &y);
    Ok(DecayFit {
        slope,
        stderr,
        samples: window.len(),
    })
}

/// Largest violation of `|A|²_g ≤ |D²u|² ≤ (1+|Du|²)³ |A|²_g` over the grid,
/// relative to `1 + |D²u|²`.
pub fn check_pointwise_e1(field: &Field) -> Result<f64> {
    let jets = geometry::jets(field);
    if let Some(index) = field
        .values()
        .iter()
        .position(|v| !(v.re.is_finite() && v.im.is_finite()))
    {
        return Err(Error::NonFinite { what: "field", index });
    }
    Ok(jets
        .par_iter()
        .map(|j| {
            let a = point_curvature(j, &point_frame(j), &point_metric(j)).a_normsq;
            let d2 = j.hessian_norm_sq();
            let upper = (1.0 + j.grad_norm_sq()).powi(3) * a;
            (a - d2).max(d2 - upper).max(0.0) / (1.0 + d2)
        })
        .reduce(|| 0.0, f64::max))
}

/// `∫|∇^j A|^{2i/j} dμ / (max|A|^{2(i/j−1)} ∫|∇^i A|² dμ)` with unit
/// constant. Only `(i, j) = (1, 1)` is available; `0/0` gives `0` and a
/// vanishing denominator under a positive numerator gives `+∞`.
pub fn hamilton_ratio(field: &Field, i: usize, j: usize) -> Result<f64> {
    if (i, j) != (1, 1) {
        return Err(Error::InvalidArgument(format!(
            "hamilton_ratio supports (i, j) = (1, 1) only, got ({i}, {j})"
        )));
    }
    let b = GeometryBundle::compute(field)?;
    let exponent = i as f64 / j as f64;
    let lhs = b.integrate(|p| b.grad_a_normsq[p].powf(exponent));
    let a_max = b.curvature.a_normsq.iter().fold(0.0f64, |m, v| m.max(v.sqrt()));
    let rhs = a_max.powf(2.0 * (exponent - 1.0)) * b.integrate(|p| b.grad_a_normsq[p]);
    Ok(match (lhs > 0.0, rhs > 0.0) {
        (false, _) => 0.0,
        (true, false) => f64::INFINITY,
        (true, true) => lhs / rhs,
    })
}

/// Pulled-back states `ψ(t) = e^{−itΔ}φ(t)` and their mutual `H²` distances.
#[derive(Debug, Clone)]
pub struct ScatteringProfile {
    pub times: Vec<f64>,
    pub psi: Vec<Field>,
    /// `cauchy[i][j] = ‖ψ(t_i) − ψ(t_j)‖_{H²}`.
    pub cauchy: Vec<Vec<f64>>,
}

impl ScatteringProfile {
    /// The latest pulled-back state, the numerical estimate of `φ₊`.
    pub fn phi_plus(&self) -> &Field {
        self.psi.last().expect("profile holds at least three states")
    }

    pub fn distance(&self, t_a: f64, t_b: f64) -> Option<f64> {
        let find = |t: f64| {
            self.times
                .iter()
                .position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
        };
        Some(self.cauchy[find(t_a)?][find(t_b)?])
    }
}

pub fn scattering_profile(snapshots: &[(f64, Field)]) -> Result<ScatteringProfile> {
    if snapshots.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            found: snapshots.len(),
        });
    }
    for w in snapshots.windows(2) {
        check_same_grid(w[0].1.spec(), w[1].1.spec())?;
        if !(w[1].0 > w[0].0) {
            return Err(Error::InvalidArgument(format!(
                "snapshot times must increase, got {} then {}",
                w[0].0, w[1].0
            )));
        }
    }
    if snapshots[0].0 < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "snapshot times must be >= 1, got {}",
            snapshots[0].0
        )));
    }
    let psi: Vec<Field> = snapshots.par_iter().map(|(t, f)| free_propagator(f, -t)).collect();
    let n = psi.len();
    let mut cauchy = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = sobolev_norm(&psi[i].sub(&psi[j])?, 2.0);
            cauchy[i][j] = v;
            cauchy[j][i] = v;
        }
    }
    Ok(ScatteringProfile {
        times: snapshots.iter().map(|s| s.0).collect(),
        psi,
        cauchy,
    })
}

/// Finite-difference growth rates of the curvature energies.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    /// Interior sample times of the centred differences.
    pub times: Vec<f64>,
    /// `(d/dt ∫|A|²) / (max|A|² ∫|A|²)`.
    pub ratio_a: Vec<f64>,
    /// `(d/dt ∫|∇A|²) / (max|A|² ∫|∇A|²)`.
    pub ratio_grad_a: Vec<f64>,
    /// Forward difference of `∫|A|²_g dμ` over the first interval.
    pub initial_rate_a: f64,
    pub max_ratio: f64,
    /// Ratios are finite and never exceed ten times their early-run size.
    pub bounded: bool,
}

pub fn energy_monitor(series: &[DiagnosticsRecord]) -> Result<EnergyReport> {
    if series.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            found: series.len(),
        });
    }
    let ratio = |num: f64, a_sup: f64, x: f64| {
        let den = a_sup * a_sup * x;
        if num == 0.0 {
            0.0
        } else if den == 0.0 {
            f64::INFINITY
        } else {
            num / den
        }
    };
    let mut times = Vec::new();
    let mut ratio_a = Vec::new();
    let mut ratio_grad_a = Vec::new();
    for w in series.windows(3) {
        let dt = w[2].t - w[0].t;
        let r = &w[1];
        times.push(r.t);
        ratio_a.push(ratio((w[2].a_l2_sq - w[0].a_l2_sq) / dt, r.a_sup, r.a_l2_sq));
        ratio_grad_a.push(ratio(
            (w[2].grad_a_l2_sq - w[0].grad_a_l2_sq) / dt,
            r.a_sup,
            r.grad_a_l2_sq,
        ));
    }
    let abs_max = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let max_ratio = abs_max(&ratio_a).max(abs_max(&ratio_grad_a));
    let early = ratio_a.len().div_ceil(4).max(2).min(ratio_a.len());
    let early_max = abs_max(&ratio_a[..early]).max(abs_max(&ratio_grad_a[..early]));
    let finite = ratio_a.iter().chain(&ratio_grad_a).all(|v| v.is_finite());
    Ok(EnergyReport {
        times,
        initial_rate_a: (series[1].a_l2_sq - series[0].a_l2_sq) / (series[1].t - series[0].t),
        bounded: finite && max_ratio <= 10.0 * early_max,
        ratio_a,
        ratio_grad_a,
        max_ratio,
    })
}

/// `max_t |V(t) − V(0)| / V(0)`.
pub fn volume_drift(series: &[DiagnosticsRecord]) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            found: series.len(),
        });
    }
    let v0 = series[0].volume;
    Ok(series.iter().map(|r| (r.volume - v0).abs() / v0).fold(0.0, f64::max))
}
