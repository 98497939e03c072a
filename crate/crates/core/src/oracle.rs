//! Independent reference implementations: fourth-order periodic finite
//! differences, naive ambient-space geometry and closed-form solutions.
//!
//! Nothing here calls the spectral derivative or the geometry kernels, so
//! agreement with them is evidence rather than tautology.

use std::fmt;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{GeometryBundle, MAX_AMBIENT};
use crate::grid::{Field, GridSpec, MAX_DIM};

type Vector = [f64; MAX_AMBIENT];

/// Derivatives of `(u1, u2)` at a point, supplied by stencils or formulas.
#[derive(Debug, Clone, Copy, Default)]
pub struct Jet {
    pub du: [[f64; MAX_DIM]; 2],
    pub d2u: [[[f64; MAX_DIM]; MAX_DIM]; 2],
}

/// Geometry recomputed from scratch at every grid point.
#[derive(Debug, Clone)]
pub struct FdGeometry {
    pub spec: GridSpec,
    pub g: Vec<[[f64; MAX_DIM]; MAX_DIM]>,
    pub ginv: Vec<[[f64; MAX_DIM]; MAX_DIM]>,
    pub sqrt_det: Vec<f64>,
    pub nu1: Vec<Vector>,
    pub nu2: Vec<Vector>,
    pub lambda: Vec<f64>,
    /// `gamma[p][l][i][j] = Γ^l_{ij}`.
    pub christoffel: Vec<[[[f64; MAX_DIM]; MAX_DIM]; MAX_DIM]>,
    pub h: Vec<[[[f64; MAX_DIM]; MAX_DIM]; 2]>,
    pub mean: Vec<Vector>,
    pub skew: Vec<Vector>,
    pub a_normsq: Vec<f64>,
    pub grad_a_normsq: Vec<f64>,
}

impl FdGeometry {
    /// Rectangle-rule `∫ √det g dx`.
    pub fn volume(&self) -> f64 {
        self.sqrt_det.iter().sum::<f64>() * self.spec.cell_volume()
    }

    /// Rectangle-rule `∫ |A|^p_g dμ`.
    pub fn a_lp_pow(&self, p: f64) -> f64 {
        self.a_normsq
            .iter()
            .zip(&self.sqrt_det)
            .map(|(a, w)| a.sqrt().powf(p) * w)
            .sum::<f64>()
            * self.spec.cell_volume()
    }
}

fn neighbour(spec: &GridSpec, p: usize, axis: usize, offset: isize) -> usize {
    let mut idx = spec.axis_indices(p);
    let n = spec.n() as isize;
    idx[axis] = (idx[axis] as isize + offset).rem_euclid(n) as usize;
    spec.flat_index(&idx[..spec.d()])
}

/// Fourth-order centred first derivative along `axis`.
pub fn fd_first<T>(spec: &GridSpec, values: &[T], axis: usize) -> Vec<T>
where
    T: Copy + Send + Sync + std::ops::Add<Output = T> + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let h = spec.spacing();
    (0..spec.len())
        .into_par_iter()
        .map(|p| {
            let f = |o| values[neighbour(spec, p, axis, o)];
            ((f(1) - f(-1)) * 8.0 - (f(2) - f(-2))) * (1.0 / (12.0 * h))
        })
        .collect()
}

/// Fourth-order centred second derivative along `axis`.
pub fn fd_second<T>(spec: &GridSpec, values: &[T], axis: usize) -> Vec<T>
where
    T: Copy + Send + Sync + std::ops::Add<Output = T> + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let h = spec.spacing();
    (0..spec.len())
        .into_par_iter()
        .map(|p| {
            let f = |o| values[neighbour(spec, p, axis, o)];
            ((f(1) + f(-1)) * 16.0 - (f(2) + f(-2)) - f(0) * 30.0) * (1.0 / (12.0 * h * h))
        })
        .collect()
}

/// Stencil jets of `φ` at every grid point.
pub fn fd_jets(field: &Field) -> Vec<Jet> {
    let spec = *field.spec();
    let d = spec.d();
    let v = field.values();
    let first: Vec<Vec<Complex64>> = (0..d).map(|i| fd_first(&spec, v, i)).collect();
    let mut second = vec![vec![Vec::new(); d]; d];
    for i in 0..d {
        for j in 0..d {
            second[i][j] = if i == j {
                fd_second(&spec, v, i)
            } else if j < i {
                second[j][i].clone()
            } else {
                fd_first(&spec, &first[i], j)
            };
        }
    }
    (0..spec.len())
        .map(|p| {
            let mut jet = Jet::default();
            for i in 0..d {
                jet.du[0][i] = first[i][p].re;
                jet.du[1][i] = first[i][p].im;
                for j in 0..d {
                    jet.d2u[0][i][j] = second[i][j][p].re;
                    jet.d2u[1][i][j] = second[i][j][p].im;
                }
            }
            jet
        })
        .collect()
}

fn ambient_dot(a: &Vector, b: &Vector) -> f64 {
    (0..MAX_AMBIENT).map(|c| a[c] * b[c]).sum()
}

fn tangents(jet: &Jet, d: usize) -> Vec<Vector> {
    (0..d)
        .map(|i| {
            let mut t = [0.0; MAX_AMBIENT];
            t[i] = 1.0;
            t[d] = jet.du[0][i];
            t[d + 1] = jet.du[1][i];
            t
        })
        .collect()
}

fn hessian_vectors(jet: &Jet, d: usize) -> Vec<Vec<Vector>> {
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let mut v = [0.0; MAX_AMBIENT];
                    v[d] = jet.d2u[0][i][j];
                    v[d + 1] = jet.d2u[1][i][j];
                    v
                })
                .collect()
        })
        .collect()
}

/// Gauss–Jordan inverse and determinant of a small dense matrix.
fn gauss_jordan(m: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        if pivot != col {
            a.swap(pivot, col);
            inv.swap(pivot, col);
            det = -det;
        }
        let pv = a[col][col];
        det *= pv;
        for j in 0..n {
            a[col][j] /= pv;
            inv[col][j] /= pv;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                for j in 0..n {
                    a[r][j] -= f * a[col][j];
                    inv[r][j] -= f * inv[col][j];
                }
            }
        }
    }
    (inv, det)
}

fn normalize(v: Vector) -> (Vector, f64) {
    let len = ambient_dot(&v, &v).sqrt();
    (v.map(|c| c / len), len)
}

struct PointGeometry {
    g: [[f64; MAX_DIM]; MAX_DIM],
    ginv: [[f64; MAX_DIM]; MAX_DIM],
    sqrt_det: f64,
    nu: [Vector; 2],
    lambda: f64,
    christoffel: [[[f64; MAX_DIM]; MAX_DIM]; MAX_DIM],
    /// Normal-valued second fundamental form `A_ij` as ambient vectors.
    a: [[Vector; MAX_DIM]; MAX_DIM],
    h: [[[f64; MAX_DIM]; MAX_DIM]; 2],
    mean: Vector,
    skew: Vector,
    a_normsq: f64,
}

fn point_geometry(jet: &Jet, d: usize) -> PointGeometry {
    let t = tangents(jet, d);
    let hess = hessian_vectors(jet, d);
    let gm: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| ambient_dot(&t[i], &t[j])).collect())
        .collect();
    let (gi, det) = gauss_jordan(&gm);
    let mut g = [[0.0; MAX_DIM]; MAX_DIM];
    let mut ginv = [[0.0; MAX_DIM]; MAX_DIM];
    for i in 0..d {
        for j in 0..d {
            g[i][j] = gm[i][j];
            ginv[i][j] = gi[i][j];
        }
    }

    // ν1 ∝ (∂u1, −1, 0); ν2 by Gram–Schmidt from (∂u2, 0, −1).
    let mut c1 = [0.0; MAX_AMBIENT];
    let mut c2 = [0.0; MAX_AMBIENT];
    c1[..d].copy_from_slice(&jet.du[0][..d]);
    c2[..d].copy_from_slice(&jet.du[1][..d]);
    c1[d] = -1.0;
    c2[d + 1] = -1.0;
    let (nu1, _) = normalize(c1);
    let proj = ambient_dot(&c2, &nu1);
    let (nu2, lambda) = normalize(std::array::from_fn(|c| c2[c] - proj * nu1[c]));

    // Γ^l_ij = g^{lm} ∂²_ij F · ∂_m F
    let mut christoffel = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
    for l in 0..d {
        for i in 0..d {
            for j in 0..d {
                christoffel[l][i][j] = (0..d).map(|m| ginv[l][m] * ambient_dot(&hess[i][j], &t[m])).sum();
            }
        }
    }

    // A_ij = ∂²_ij F − Γ^l_ij ∂_l F, which is the normal part of ∂²_ij F.
    let mut a = [[[0.0; MAX_AMBIENT]; MAX_DIM]; MAX_DIM];
    let mut h = [[[0.0; MAX_DIM]; MAX_DIM]; 2];
    for i in 0..d {
        for j in 0..d {
            for c in 0..MAX_AMBIENT {
                a[i][j][c] = hess[i][j][c] - (0..d).map(|l| christoffel[l][i][j] * t[l][c]).sum::<f64>();
            }
            h[0][i][j] = ambient_dot(&hess[i][j], &nu1);
            h[1][i][j] = ambient_dot(&hess[i][j], &nu2);
        }
    }
    let mut mean = [0.0; MAX_AMBIENT];
    for i in 0..d {
        for j in 0..d {
            for c in 0..MAX_AMBIENT {
                mean[c] += ginv[i][j] * a[i][j][c];
            }
        }
    }
    let (m1, m2) = (ambient_dot(&mean, &nu1), ambient_dot(&mean, &nu2));
    let skew = std::array::from_fn(|c| m1 * nu2[c] - m2 * nu1[c]);
    let mut a_normsq = 0.0;
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                for l in 0..d {
                    a_normsq += ginv[i][k] * ginv[j][l] * ambient_dot(&a[i][j], &a[k][l]);
                }
            }
        }
    }
    PointGeometry {
        g,
        ginv,
        sqrt_det: det.sqrt(),
        nu: [nu1, nu2],
        lambda,
        christoffel,
        a,
        h,
        mean,
        skew,
        a_normsq,
    }
}

/// Geometry from supplied jets; `|∇A|²` uses stencil derivatives of `A`.
pub fn geometry_from_jets(spec: GridSpec, jets: &[Jet]) -> Result<FdGeometry> {
    if spec.n() < 16 {
        return Err(Error::InvalidGrid(format!(
            "finite-difference oracle needs n >= 16, got {}",
            spec.n()
        )));
    }
    if jets.len() != spec.len() {
        return Err(Error::GridMismatch(format!(
            "expected {} jets, got {}",
            spec.len(),
            jets.len()
        )));
    }
    let d = spec.d();
    let pts: Vec<PointGeometry> = jets.par_iter().map(|j| point_geometry(j, d)).collect();

    // ∇_k A_ij = (∂_k A_ij)^⊥ − Γ^m_ki A_mj − Γ^m_kj A_im
    let mut da = vec![[[[[0.0; MAX_AMBIENT]; MAX_DIM]; MAX_DIM]; MAX_DIM]; spec.len()];
    for i in 0..d {
        for j in 0..d {
            for c in 0..d + 2 {
                let samples: Vec<f64> = pts.iter().map(|p| p.a[i][j][c]).collect();
                for k in 0..d {
                    for (p, v) in fd_first(&spec, &samples, k).into_iter().enumerate() {
                        da[p][k][i][j][c] = v;
                    }
                }
            }
        }
    }
    let grad_a_normsq: Vec<f64> = (0..spec.len())
        .into_par_iter()
        .map(|p| {
            let pt = &pts[p];
            let mut nabla = [[[[0.0; MAX_AMBIENT]; MAX_DIM]; MAX_DIM]; MAX_DIM];
            for k in 0..d {
                for i in 0..d {
                    for j in 0..d {
                        let raw = da[p][k][i][j];
                        let normal: Vector =
                            std::array::from_fn(|c| (0..2).map(|b| ambient_dot(&raw, &pt.nu[b]) * pt.nu[b][c]).sum());
                        for c in 0..MAX_AMBIENT {
                            let mut v = normal[c];
                            for m in 0..d {
                                v -= pt.christoffel[m][k][i] * pt.a[m][j][c] + pt.christoffel[m][k][j] * pt.a[i][m][c];
                            }
                            nabla[k][i][j][c] = v;
                        }
                    }
                }
            }
            let mut s = 0.0;
            for k in 0..d {
                for i in 0..d {
                    for j in 0..d {
                        for k2 in 0..d {
                            for i2 in 0..d {
                                for j2 in 0..d {
                                    s += pt.ginv[k][k2]
                                        * pt.ginv[i][i2]
                                        * pt.ginv[j][j2]
                                        * ambient_dot(&nabla[k][i][j], &nabla[k2][i2][j2]);
                                }
                            }
                        }
                    }
                }
            }
            s
        })
        .collect();

    Ok(FdGeometry {
        spec,
        g: pts.iter().map(|p| p.g).collect(),
        ginv: pts.iter().map(|p| p.ginv).collect(),
        sqrt_det: pts.iter().map(|p| p.sqrt_det).collect(),
        nu1: pts.iter().map(|p| p.nu[0]).collect(),
        nu2: pts.iter().map(|p| p.nu[1]).collect(),
        lambda: pts.iter().map(|p| p.lambda).collect(),
        christoffel: pts.iter().map(|p| p.christoffel).collect(),
        h: pts.iter().map(|p| p.h).collect(),
        mean: pts.iter().map(|p| p.mean).collect(),
        skew: pts.iter().map(|p| p.skew).collect(),
        a_normsq: pts.iter().map(|p| p.a_normsq).collect(),
        grad_a_normsq,
    })
}

/// Geometry of `φ` with stencil derivatives throughout.
pub fn fd_geometry(field: &Field) -> Result<FdGeometry> {
    geometry_from_jets(*field.spec(), &fd_jets(field))
}

/// Phase offsets of the bump family, one per axis.
const BUMP_SHIFT: f64 = 0.3;

/// Trigonometric bump on `[−π, π)^d`:
/// `u1 = a ∏_j sin(x_j + 0.3 j)`, `u2 = 0.8 a cos(Σ_j (j+1) x_j)`.
pub fn bump_state(spec: GridSpec, amplitude: f64) -> Result<Field> {
    check_bump_box(&spec)?;
    Field::from_fn(spec, |x| {
        let u1: f64 = x
            .iter()
            .enumerate()
            .map(|(j, v)| (v + BUMP_SHIFT * j as f64).sin())
            .product();
        let arg: f64 = x.iter().enumerate().map(|(j, v)| (j + 1) as f64 * v).sum();
        Complex64::new(amplitude * u1, 0.8 * amplitude * arg.cos())
    })
}

fn check_bump_box(spec: &GridSpec) -> Result<()> {
    if (spec.length() - 2.0 * std::f64::consts::PI).abs() > 1e-12 {
        return Err(Error::InvalidGrid(format!(
            "the bump family lives on a box of length 2π, got {}",
            spec.length()
        )));
    }
    Ok(())
}

/// Exact jets of [`bump_state`].
pub fn bump_jets(spec: GridSpec, amplitude: f64) -> Result<Vec<Jet>> {
    check_bump_box(&spec)?;
    let d = spec.d();
    Ok((0..spec.len())
        .into_par_iter()
        .map(|p| {
            let x = spec.coords(p);
            let y: Vec<f64> = (0..d).map(|j| x[j] + BUMP_SHIFT * j as f64).collect();
            let prod_except = |skip: &[usize], deriv: &dyn Fn(f64) -> f64| -> f64 {
                (0..d)
                    .map(|j| if skip.contains(&j) { deriv(y[j]) } else { y[j].sin() })
                    .product()
            };
            let arg: f64 = (0..d).map(|j| (j + 1) as f64 * x[j]).sum();
            let mut jet = Jet::default();
            for i in 0..d {
                jet.du[0][i] = amplitude * prod_except(&[i], &f64::cos);
                jet.du[1][i] = -0.8 * amplitude * (i + 1) as f64 * arg.sin();
                for j in 0..d {
                    jet.d2u[0][i][j] = if i == j {
                        -amplitude * prod_except(&[], &f64::sin)
                    } else {
                        amplitude * prod_except(&[i, j], &f64::cos)
                    };
                    jet.d2u[1][i][j] = -0.8 * amplitude * ((i + 1) * (j + 1)) as f64 * arg.cos();
                }
            }
            jet
        })
        .collect())
}

/// Free evolution of `A e^{−|x|²/(2w²)} e^{i m x₁}` under `∂_t φ = iΔφ` on
/// the whole space, sampled on the grid.
pub fn free_gaussian_exact(spec: GridSpec, amplitude: f64, width: f64, modulation: f64, t: f64) -> Result<Field> {
    if !(width > 0.0) {
        return Err(Error::InvalidArgument(format!("width must be > 0, got {width}")));
    }
    let d = spec.d() as i32;
    let sigma2 = Complex64::new(width * width, 2.0 * t);
    let factor = (Complex64::new(width * width, 0.0) / sigma2).sqrt().powi(d);
    Field::from_fn(spec, |x| {
        let mut r2 = Complex64::new(0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let s = if i == 0 { v - 2.0 * modulation * t } else { *v };
            r2 += s * s;
        }
        let phase = Complex64::from_polar(1.0, modulation * x[0] - modulation * modulation * t);
        amplitude * factor * (-r2 / (2.0 * sigma2)).exp() * phase
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Metric,
    InverseMetric,
    SqrtDet,
    Frame,
    Christoffel,
    SecondFundamentalForm,
    MeanCurvature,
    SkewMeanCurvature,
    ANormSq,
    GradANormSq,
    Volume,
}

impl Quantity {
    pub const ALL: [Quantity; 11] = [
        Quantity::Metric,
        Quantity::InverseMetric,
        Quantity::SqrtDet,
        Quantity::Frame,
        Quantity::Christoffel,
        Quantity::SecondFundamentalForm,
        Quantity::MeanCurvature,
        Quantity::SkewMeanCurvature,
        Quantity::ANormSq,
        Quantity::GradANormSq,
        Quantity::Volume,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::Metric => "metric",
            Quantity::InverseMetric => "inverse_metric",
            Quantity::SqrtDet => "sqrt_det",
            Quantity::Frame => "frame",
            Quantity::Christoffel => "christoffel",
            Quantity::SecondFundamentalForm => "second_fundamental_form",
            Quantity::MeanCurvature => "mean_curvature",
            Quantity::SkewMeanCurvature => "skew_mean_curvature",
            Quantity::ANormSq => "a_normsq",
            Quantity::GradANormSq => "grad_a_normsq",
            Quantity::Volume => "volume",
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn max_diff<T, U>(a: &[T], b: &[U], flat_a: impl Fn(&T) -> Vec<f64>, flat_b: impl Fn(&U) -> Vec<f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            flat_a(x)
                .iter()
                .zip(flat_b(y))
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

fn flat_mat(m: &[[f64; MAX_DIM]; MAX_DIM]) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

/// Largest pointwise difference between the spectral and oracle versions
/// of `quantity`.
pub fn discrepancy(quantity: Quantity, spectral: &GeometryBundle, oracle: &FdGeometry) -> f64 {
    match quantity {
        Quantity::Metric => max_diff(&spectral.metric.g, &oracle.g, flat_mat, flat_mat),
        Quantity::InverseMetric => max_diff(&spectral.metric.ginv, &oracle.ginv, flat_mat, flat_mat),
        Quantity::SqrtDet => max_diff(&spectral.metric.sqrt_det, &oracle.sqrt_det, |v| vec![*v], |v| vec![*v]),
        Quantity::Frame => {
            let a = max_diff(&spectral.frame.nu1, &oracle.nu1, |v| v.to_vec(), |v| v.to_vec());
            let b = max_diff(&spectral.frame.nu2, &oracle.nu2, |v| v.to_vec(), |v| v.to_vec());
            let c = max_diff(&spectral.frame.lambda, &oracle.lambda, |v| vec![*v], |v| vec![*v]);
            a.max(b).max(c)
        }
        Quantity::Christoffel => max_diff(
            &spectral.christoffel.gamma,
            &oracle.christoffel,
            |g| g.iter().flatten().flatten().copied().collect(),
            |g| g.iter().flatten().flatten().copied().collect(),
        ),
        Quantity::SecondFundamentalForm => max_diff(
            &spectral.curvature.h,
            &oracle.h,
            |h| h.iter().flatten().flatten().copied().collect(),
            |h| h.iter().flatten().flatten().copied().collect(),
        ),
        Quantity::MeanCurvature => max_diff(&spectral.curvature.mean, &oracle.mean, |v| v.to_vec(), |v| v.to_vec()),
        Quantity::SkewMeanCurvature => max_diff(&spectral.curvature.skew, &oracle.skew, |v| v.to_vec(), |v| v.to_vec()),
        Quantity::ANormSq => max_diff(
            &spectral.curvature.a_normsq,
            &oracle.a_normsq,
            |v| vec![*v],
            |v| vec![*v],
        ),
        Quantity::GradANormSq => max_diff(
            &spectral.grad_a_normsq,
            &oracle.grad_a_normsq,
            |v| vec![*v],
            |v| vec![*v],
        ),
        Quantity::Volume => (spectral.volume() - oracle.volume()).abs(),
    }
}

/// Errors of the spectral implementation against the oracle over a
/// sequence of grids.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub quantity: Quantity,
    pub sizes: Vec<usize>,
    pub errors: Vec<f64>,
    /// Least-squares slope of `−log₂ error` against `log₂ n`; `None` when
    /// every error vanishes.
    pub order: Option<f64>,
    pub pass: bool,
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} sizes=",
            if self.pass { "PASS" } else { "FAIL" },
            self.quantity
        )?;
        let sizes: Vec<String> = self.sizes.iter().map(|n| n.to_string()).collect();
        let errors: Vec<String> = self.errors.iter().map(|e| format!("{e:.3e}")).collect();
        write!(f, "{} errors={}", sizes.join(","), errors.join(","))?;
        match self.order {
            Some(o) => write!(f, " order={o:.2}"),
            None => write!(f, " order=exact"),
        }
    }
}

/// Least-squares order of convergence; `None` if all errors are zero.
pub fn convergence_order(sizes: &[usize], errors: &[f64]) -> Option<f64> {
    if errors.iter().all(|&e| e == 0.0) {
        return None;
    }
    let x: Vec<f64> = sizes.iter().map(|&n| (n as f64).log2()).collect();
    let y: Vec<f64> = errors.iter().map(|&e| e.max(f64::MIN_POSITIVE).log2()).collect();
    Some(-crate::diagnostics::least_squares_slope(&x, &y).0)
}

/// Runs both implementations on `make(n)` for each `n` and fits the
/// convergence order. The comparison is a FAIL when the order is below 1.
pub fn compare<F>(quantity: Quantity, resolutions: &[usize], make: F) -> Result<OracleReport>
where
    F: Fn(usize) -> Result<(Field, FdGeometry)>,
{
    if resolutions.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            found: resolutions.len(),
        });
    }
    let mut errors = Vec::new();
    for &n in resolutions {
        let (field, oracle) = make(n)?;
        let bundle = GeometryBundle::compute(&field)?;
        errors.push(discrepancy(quantity, &bundle, &oracle));
    }
    let order = convergence_order(resolutions, &errors);
    Ok(OracleReport {
        quantity,
        sizes: resolutions.to_vec(),
        pass: order.is_none_or(|o| o >= 1.0),
        errors,
        order,
    })
}

/// Bump family at resolution `n`, compared against stencil geometry.
pub fn bump_case(d: usize, amplitude: f64) -> impl Fn(usize) -> Result<(Field, FdGeometry)> {
    move |n| {
        let spec = GridSpec::new(d, n, 2.0 * std::f64::consts::PI)?;
        let field = bump_state(spec, amplitude)?;
        let oracle = fd_geometry(&field)?;
        Ok((field, oracle))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{free_propagator, lp_norm, make_grid};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn stencils_are_fourth_order() {
        let err = |n: usize| {
            let spec = make_grid(1, n, 2.0 * PI).unwrap();
            let f: Vec<f64> = (0..n).map(|p| spec.coords(p)[0].sin()).collect();
            let d1 = fd_first(&spec, &f, 0);
            let d2 = fd_second(&spec, &f, 0);
            (0..n)
                .map(|p| {
                    let x = spec.coords(p)[0];
                    (d1[p] - x.cos()).abs().max((d2[p] + x.sin()).abs())
                })
                .fold(0.0, f64::max)
        };
        let order = (err(32) / err(64)).log2();
        assert!((order - 4.0).abs() < 0.1, "{order}");
    }

    #[test]
    fn gauss_jordan_inverts() {
        let m = vec![vec![2.0, 1.0, 0.5], vec![1.0, 3.0, 0.2], vec![0.5, 0.2, 1.5]];
        let (inv, det) = gauss_jordan(&m);
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| m[i][k] * inv[k][j]).sum();
                assert!((s - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
        let expect = 2.0 * (4.5 - 0.04) - 1.0 * (1.5 - 0.1) + 0.5 * (0.2 - 1.5);
        assert_relative_eq!(det, expect, max_relative = 1e-14);
    }

    #[test]
    fn flat_plane_oracle() {
        let spec = make_grid(2, 16, 4.0).unwrap();
        let o = fd_geometry(&Field::zeros(spec)).unwrap();
        for p in 0..spec.len() {
            assert_eq!(o.sqrt_det[p], 1.0);
            assert_eq!(flat_mat(&o.g[p]), vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
            assert_eq!(o.nu1[p], [0.0, 0.0, -1.0, 0.0, 0.0]);
            assert_eq!(o.nu2[p], [0.0, 0.0, 0.0, -1.0, 0.0]);
            assert_eq!(o.a_normsq[p], 0.0);
            assert_eq!(o.grad_a_normsq[p], 0.0);
        }
        assert!(fd_geometry(&Field::zeros(make_grid(2, 8, 4.0).unwrap())).is_err());
    }

    #[test]
    fn compare_flat_is_exact() {
        let r = compare(Quantity::ANormSq, &[16, 32, 64], |n| {
            let f = Field::zeros(make_grid(2, n, 5.0)?);
            let o = fd_geometry(&f)?;
            Ok((f, o))
        })
        .unwrap();
        assert_eq!(r.order, None);
        assert!(r.pass);
        assert!(r.to_string().contains("order=exact"));
        assert!(compare(Quantity::Metric, &[16, 32], bump_case(2, 0.1)).is_err());
    }

    #[test]
    fn divergent_comparison_fails() {
        // errors growing with n
        assert!(convergence_order(&[16, 32, 64], &[1e-6, 1e-5, 1e-4]).unwrap() < 0.0);
        let r = compare(Quantity::Volume, &[16, 32, 64], |n| {
            let spec = make_grid(2, n, 2.0 * PI)?;
            let f = bump_state(spec, 0.1)?;
            let mut o = fd_geometry(&f)?;
            o.sqrt_det.iter_mut().for_each(|v| *v += n as f64 * 1e-6);
            Ok((f, o))
        })
        .unwrap();
        assert!(!r.pass);
    }

    #[test]
    fn analytic_jets_match_stencils() {
        let spec = make_grid(3, 64, 2.0 * PI).unwrap();
        let exact = bump_jets(spec, 0.2).unwrap();
        let fd = fd_jets(&bump_state(spec, 0.2).unwrap());
        for (a, b) in exact.iter().zip(&fd) {
            for c in 0..2 {
                for i in 0..3 {
                    assert!((a.du[c][i] - b.du[c][i]).abs() < 1e-3);
                    for j in 0..3 {
                        assert!((a.d2u[c][i][j] - b.d2u[c][i][j]).abs() < 1e-2);
                    }
                }
            }
        }
    }

    #[test]
    fn bump_geometry_converges_at_fourth_order() {
        let spec64 = make_grid(2, 64, 2.0 * PI).unwrap();
        let spec128 = make_grid(2, 128, 2.0 * PI).unwrap();
        let err = |spec: GridSpec| {
            let f = bump_state(spec, 0.2).unwrap();
            let exact = geometry_from_jets(spec, &bump_jets(spec, 0.2).unwrap()).unwrap();
            let fd = fd_geometry(&f).unwrap();
            exact
                .a_normsq
                .iter()
                .zip(&fd.a_normsq)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(spec64) / err(spec128);
        assert!((ratio.log2() - 4.0).abs() < 0.3, "{ratio}");
    }

    #[test]
    fn spectral_volume_and_a_norm_match_exact_quadrature() {
        let spec = make_grid(2, 64, 2.0 * PI).unwrap();
        let f = bump_state(spec, 0.1).unwrap();
        let exact = geometry_from_jets(spec, &bump_jets(spec, 0.1).unwrap()).unwrap();
        let b = GeometryBundle::compute(&f).unwrap();
        assert!((b.volume() - exact.volume()).abs() < 1e-10);
        let spectral_a = crate::geometry::tensor_norm_a(&f, 0, 2.0).unwrap();
        assert!((spectral_a - exact.a_lp_pow(2.0).sqrt()).abs() < 1e-10);
        assert!(discrepancy(Quantity::GradANormSq, &b, &exact) < 1e-3);
    }

    #[test]
    fn free_gaussian_closed_form() {
        let spec = make_grid(2, 128, 64.0).unwrap();
        let (a, w, m) = (0.5, 1.2, 0.4);
        let f0 = free_gaussian_exact(spec, a, w, m, 0.0).unwrap();
        let init = crate::dynamics::initial_data(spec, crate::dynamics::InitKind::GaussianPacket, a, w, m, 0).unwrap();
        assert!(f0.sub(&init).unwrap().max_abs() < 1e-15);
        let l2_0 = lp_norm(&f0, 2.0).unwrap();
        for t in [0.5, 1.0, 2.0] {
            let ft = free_gaussian_exact(spec, a, w, m, t).unwrap();
            assert_relative_eq!(lp_norm(&ft, 2.0).unwrap(), l2_0, max_relative = 1e-12);
            // peak modulus on the grid is close to the analytic maximum A(1+4t²/w⁴)^{−d/4}
            let peak = a * (1.0 + 4.0 * t * t / w.powi(4)).powf(-0.5);
            assert!(ft.max_abs() <= peak * (1.0 + 1e-12));
            assert!(ft.max_abs() >= 0.95 * peak);
            // and agrees with the spectral propagator before wraparound
            let prop = free_propagator(&init, t);
            assert!(prop.sub(&ft).unwrap().max_abs() < 1e-10);
        }
    }
}
