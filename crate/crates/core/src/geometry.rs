//! Differential geometry of the graph immersion `F(x) = (x, u1(x), u2(x))`
//! in `R^{d+2}`.
//!
//! Ambient vectors are stored as `[f64; 5]` with the `d` base coordinates
//! first and the two graph coordinates at slots `d` and `d + 1`. All
//! derivatives are spectral derivatives of grid samples.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{multi_indices, Field, GridSpec, SpectralField, MAX_DIM};

/// Ambient dimension bound `d + 2` for `d ≤ 3`.
pub const MAX_AMBIENT: usize = MAX_DIM + 2;

pub type Mat = [[f64; MAX_DIM]; MAX_DIM];
pub type Ambient = [f64; MAX_AMBIENT];

/// First and second derivatives of `(u1, u2)` at one grid point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PointJet {
    pub d: usize,
    /// `du[α][i] = ∂_i u_α`
    pub du: [[f64; MAX_DIM]; 2],
    /// `d2u[α][i][j] = ∂_i ∂_j u_α`
    pub d2u: [Mat; 2],
}

impl PointJet {
    pub fn grad_norm_sq(&self) -> f64 {
        (0..2)
            .map(|a| (0..self.d).map(|i| self.du[a][i].powi(2)).sum::<f64>())
            .sum()
    }

    pub fn hessian_norm_sq(&self) -> f64 {
        let mut s = 0.0;
        for a in 0..2 {
            for i in 0..self.d {
                for j in 0..self.d {
                    s += self.d2u[a][i][j].powi(2);
                }
            }
        }
        s
    }
}

/// Spectral jets of `φ` at every grid point.
pub fn jets(field: &Field) -> Vec<PointJet> {
    jets_spectral(&field.to_spectral())
}

/// Jets with first derivatives only; `d2u` is left zero.
pub(crate) fn gradient_jets(field: &Field) -> Vec<PointJet> {
    let spec = *field.spec();
    let d = spec.d();
    let spectral = field.to_spectral();
    let firsts: Vec<Field> = (0..d)
        .map(|i| {
            let mut alpha = [0; MAX_DIM];
            alpha[i] = 1;
            spectral.derivative_field(&alpha[..d])
        })
        .collect();
    (0..spec.len())
        .into_par_iter()
        .map(|p| {
            let mut jet = PointJet {
                d,
                ..Default::default()
            };
            for (i, f) in firsts.iter().enumerate() {
                jet.du[0][i] = f.values()[p].re;
                jet.du[1][i] = f.values()[p].im;
            }
            jet
        })
        .collect()
}

pub(crate) fn jets_spectral(spectral: &SpectralField) -> Vec<PointJet> {
    let spec = *spectral.spec();
    let d = spec.d();
    let firsts: Vec<Field> = (0..d)
        .map(|i| {
            let mut alpha = [0; MAX_DIM];
            alpha[i] = 1;
            spectral.derivative_field(&alpha[..d])
        })
        .collect();
    let mut seconds = Vec::new();
    for i in 0..d {
        for j in i..d {
            let mut alpha = [0; MAX_DIM];
            alpha[i] += 1;
            alpha[j] += 1;
            seconds.push(((i, j), spectral.derivative_field(&alpha[..d])));
        }
    }
    (0..spec.len())
        .into_par_iter()
        .map(|p| {
            let mut jet = PointJet {
                d,
                ..Default::default()
            };
            for (i, f) in firsts.iter().enumerate() {
                let v = f.values()[p];
                jet.du[0][i] = v.re;
                jet.du[1][i] = v.im;
            }
            for ((i, j), f) in &seconds {
                let v = f.values()[p];
                jet.d2u[0][*i][*j] = v.re;
                jet.d2u[0][*j][*i] = v.re;
                jet.d2u[1][*i][*j] = v.im;
                jet.d2u[1][*j][*i] = v.im;
            }
            jet
        })
        .collect()
}

/// Induced metric at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMetric {
    pub g: Mat,
    pub ginv: Mat,
    pub sqrt_det: f64,
    /// `√det g − 1`, evaluated without cancellation.
    pub sqrt_det_excess: f64,
}

/// The 2×2 matrix `M = I₂ + DuᵀDu`; `det g = det M`.
fn gram2(jet: &PointJet) -> [[f64; 2]; 2] {
    let mut m = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            m[a][b] = (0..jet.d).map(|i| jet.du[a][i] * jet.du[b][i]).sum();
        }
    }
    m[0][0] += 1.0;
    m[1][1] += 1.0;
    m
}

/// `det g − 1 = |p1|² + |p2|² + |p1|²|p2|² − (p1·p2)²`.
pub(crate) fn det_excess(jet: &PointJet) -> f64 {
    let p11: f64 = (0..jet.d).map(|i| jet.du[0][i].powi(2)).sum();
    let p22: f64 = (0..jet.d).map(|i| jet.du[1][i].powi(2)).sum();
    let p12: f64 = (0..jet.d).map(|i| jet.du[0][i] * jet.du[1][i]).sum();
    p11 + p22 + (p11 * p22 - p12 * p12).max(0.0)
}

/// `g_ij = δ_ij + ∂_i u·∂_j u`, inverted through the Woodbury identity
/// `g⁻¹ = I − Du (I₂ + DuᵀDu)⁻¹ Duᵀ`.
pub fn point_metric(jet: &PointJet) -> PointMetric {
    let d = jet.d;
    let m = gram2(jet);
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let minv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
    let mut g = [[0.0; MAX_DIM]; MAX_DIM];
    let mut ginv = [[0.0; MAX_DIM]; MAX_DIM];
    for i in 0..d {
        for j in 0..d {
            let delta = if i == j { 1.0 } else { 0.0 };
            g[i][j] = delta + jet.du[0][i] * jet.du[0][j] + jet.du[1][i] * jet.du[1][j];
            let mut corr = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    corr += jet.du[a][i] * minv[a][b] * jet.du[b][j];
                }
            }
            ginv[i][j] = delta - corr;
        }
    }
    let excess = det_excess(jet);
    let sqrt_det = (1.0 + excess).sqrt();
    PointMetric {
        g,
        ginv,
        sqrt_det,
        sqrt_det_excess: excess / (sqrt_det + 1.0),
    }
}

/// Orthonormal normal frame `(ν1, ν2)` and the normalizer `Λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointFrame {
    pub nu1: Ambient,
    pub nu2: Ambient,
    pub lambda: f64,
}

/// `ν1 = (∂u1, −1, 0)/√(1+|∂u1|²)`,
/// `ν2 = (∂u2 − c ∂u1, c, −1)/Λ` with `c = ∂u1·∂u2/(1+|∂u1|²)`.
pub fn point_frame(jet: &PointJet) -> PointFrame {
    let d = jet.d;
    let p1 = &jet.du[0];
    let p2 = &jet.du[1];
    let p11: f64 = (0..d).map(|i| p1[i] * p1[i]).sum();
    let p12: f64 = (0..d).map(|i| p1[i] * p2[i]).sum();
    let s = (1.0 + p11).sqrt();
    let c = p12 / (1.0 + p11);

    let mut nu1 = [0.0; MAX_AMBIENT];
    for i in 0..d {
        nu1[i] = p1[i] / s;
    }
    nu1[d] = -1.0 / s;

    let mut w = [0.0; MAX_DIM];
    for i in 0..d {
        w[i] = p2[i] - c * p1[i];
    }
    let w2: f64 = w.iter().take(d).map(|v| v * v).sum();
    let lambda = (w2 + c * c + 1.0).sqrt();
    let mut nu2 = [0.0; MAX_AMBIENT];
    for i in 0..d {
        nu2[i] = w[i] / lambda;
    }
    nu2[d] = c / lambda;
    nu2[d + 1] = -1.0 / lambda;

    PointFrame { nu1, nu2, lambda }
}

/// Tangent vector `∂_{x_i} F`.
pub fn tangent(jet: &PointJet, i: usize) -> Ambient {
    let mut t = [0.0; MAX_AMBIENT];
    t[i] = 1.0;
    t[jet.d] = jet.du[0][i];
    t[jet.d + 1] = jet.du[1][i];
    t
}

pub fn dot(a: &Ambient, b: &Ambient) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointCurvature {
    /// `h[α][i][j] = ∂²_{ij}F · ν_α`
    pub h: [Mat; 2],
    pub mean: Ambient,
    pub skew: Ambient,
    pub a_normsq: f64,
}

/// `Σ g^{ik} g^{jl} a_ij b_kl`.
pub(crate) fn contract2(ginv: &Mat, a: &Mat, b: &Mat, d: usize) -> f64 {
    let mut raised = [[0.0; MAX_DIM]; MAX_DIM];
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                for l in 0..d {
                    s += ginv[i][k] * ginv[j][l] * a[k][l];
                }
            }
            raised[i][j] = s;
        }
    }
    let mut out = 0.0;
    for i in 0..d {
        for j in 0..d {
            out += raised[i][j] * b[i][j];
        }
    }
    out
}

pub fn point_curvature(jet: &PointJet, frame: &PointFrame, metric: &PointMetric) -> PointCurvature {
    let d = jet.d;
    let mut h = [[[0.0; MAX_DIM]; MAX_DIM]; 2];
    for (a, nu) in [&frame.nu1, &frame.nu2].into_iter().enumerate() {
        for i in 0..d {
            for j in 0..d {
                h[a][i][j] = jet.d2u[0][i][j] * nu[d] + jet.d2u[1][i][j] * nu[d + 1];
            }
        }
    }
    let trace = |m: &Mat| -> f64 {
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += metric.ginv[i][j] * m[i][j];
            }
        }
        s
    };
    let a1 = trace(&h[0]);
    let a2 = trace(&h[1]);
    let mut mean = [0.0; MAX_AMBIENT];
    let mut skew = [0.0; MAX_AMBIENT];
    for c in 0..d + 2 {
        mean[c] = a1 * frame.nu1[c] + a2 * frame.nu2[c];
        skew[c] = a1 * frame.nu2[c] - a2 * frame.nu1[c];
    }
    let a_normsq = (0..2)
        .map(|a| contract2(&metric.ginv, &h[a], &h[a], d))
        .sum::<f64>()
        .max(0.0);
    PointCurvature {
        h,
        mean,
        skew,
        a_normsq,
    }
}

#[derive(Debug, Clone)]
pub struct MetricData {
    pub spec: GridSpec,
    pub g: Vec<Mat>,
    pub ginv: Vec<Mat>,
    pub sqrt_det: Vec<f64>,
    /// `du[p][α][i] = ∂_i u_α` at grid point `p`.
    pub du: Vec<[[f64; MAX_DIM]; 2]>,
    /// `‖Du‖_∞`; values above one leave the small-data regime.
    pub sup_du: f64,
}

impl MetricData {
    pub fn large_gradient(&self) -> bool {
        self.sup_du > 1.0
    }
}

#[derive(Debug, Clone)]
pub struct FrameData {
    pub nu1: Vec<Ambient>,
    pub nu2: Vec<Ambient>,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CurvatureData {
    pub h: Vec<[Mat; 2]>,
    pub mean: Vec<Ambient>,
    pub skew: Vec<Ambient>,
    pub a_normsq: Vec<f64>,
}

/// `gamma[p][l][i][j] = Γ^l_{ij}` at grid point `p`.
#[derive(Debug, Clone)]
pub struct Christoffel {
    pub gamma: Vec<[Mat; MAX_DIM]>,
}

fn metric_from_jets(spec: GridSpec, jets: &[PointJet]) -> Result<MetricData> {
    let points: Vec<PointMetric> = jets.par_iter().map(point_metric).collect();
    if let Some(index) = points
        .iter()
        .position(|m| !(m.sqrt_det.is_finite() && m.sqrt_det > 0.0))
    {
        return Err(Error::SingularMetric {
            index,
            det: points[index].sqrt_det.powi(2),
        });
    }
    let sup_du = jets.iter().map(|j| j.grad_norm_sq().sqrt()).fold(0.0, f64::max);
    Ok(MetricData {
        spec,
        g: points.iter().map(|m| m.g).collect(),
        ginv: points.iter().map(|m| m.ginv).collect(),
        sqrt_det: points.iter().map(|m| m.sqrt_det).collect(),
        du: jets.iter().map(|j| j.du).collect(),
        sup_du,
    })
}

fn check_finite(field: &Field) -> Result<()> {
    if let Some(index) = field
        .values()
        .iter()
        .position(|v| !(v.re.is_finite() && v.im.is_finite()))
    {
        return Err(Error::NonFinite { what: "field", index });
    }
    Ok(())
}

pub fn assemble_metric(field: &Field) -> Result<MetricData> {
    check_finite(field)?;
    metric_from_jets(*field.spec(), &jets(field))
}

/// Spectral gradients of several real sample arrays, two at a time packed
/// into one complex transform. `out[f][p][k] = ∂_k field_f(p)`.
pub(crate) fn real_gradients(spec: &GridSpec, fields: &[Vec<f64>]) -> Vec<Vec<[f64; MAX_DIM]>> {
    let d = spec.d();
    let mut out = vec![vec![[0.0; MAX_DIM]; spec.len()]; fields.len()];
    for pair in (0..fields.len()).step_by(2) {
        let a = &fields[pair];
        let b = fields.get(pair + 1);
        let packed: Vec<Complex64> = (0..spec.len())
            .map(|p| Complex64::new(a[p], b.map_or(0.0, |b| b[p])))
            .collect();
        let spectral = Field::from_raw(*spec, packed).to_spectral();
        for k in 0..d {
            let mut alpha = [0; MAX_DIM];
            alpha[k] = 1;
            let dk = spectral.derivative_field(&alpha[..d]);
            for (p, v) in dk.values().iter().enumerate() {
                out[pair][p][k] = v.re;
                if pair + 1 < fields.len() {
                    out[pair + 1][p][k] = v.im;
                }
            }
        }
    }
    out
}

/// `Γ^l_{ij} = ½ g^{lm}(∂_i g_{jm} + ∂_j g_{im} − ∂_m g_{ij})` from spectral
/// derivatives of the metric samples. Only `i ≤ j` is computed; the other
/// half is copied, so the symmetry is exact.
pub fn christoffel(metric: &MetricData) -> Christoffel {
    let spec = metric.spec;
    let d = spec.d();
    let mut pairs = Vec::new();
    for i in 0..d {
        for j in i..d {
            pairs.push((i, j));
        }
    }
    let samples: Vec<Vec<f64>> = pairs
        .iter()
        .map(|&(i, j)| metric.g.iter().map(|g| g[i][j]).collect())
        .collect();
    let grads = real_gradients(&spec, &samples);
    let slot = |i: usize, j: usize| -> usize {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        pairs.iter().position(|&p| p == (a, b)).unwrap()
    };
    let slots: Vec<Vec<usize>> = (0..d).map(|i| (0..d).map(|j| slot(i, j)).collect()).collect();
    let gamma = (0..spec.len())
        .into_par_iter()
        .map(|p| {
            // dg[k][i][j] = ∂_k g_ij
            let dg = |k: usize, i: usize, j: usize| grads[slots[i][j]][p][k];
            let mut first_kind = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
            for m in 0..d {
                for i in 0..d {
                    for j in i..d {
                        let v = 0.5 * (dg(i, j, m) + dg(j, i, m) - dg(m, i, j));
                        first_kind[m][i][j] = v;
                        first_kind[m][j][i] = v;
                    }
                }
            }
            let ginv = &metric.ginv[p];
            let mut out = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
            for l in 0..d {
                for i in 0..d {
                    for j in i..d {
                        let v: f64 = (0..d).map(|m| ginv[l][m] * first_kind[m][i][j]).sum();
                        out[l][i][j] = v;
                        out[l][j][i] = v;
                    }
                }
            }
            out
        })
        .collect();
    Christoffel { gamma }
}

pub fn normal_frame(field: &Field) -> Result<FrameData> {
    check_finite(field)?;
    let frames: Vec<PointFrame> = jets(field).par_iter().map(point_frame).collect();
    Ok(frame_data(&frames))
}

fn frame_data(frames: &[PointFrame]) -> FrameData {
    FrameData {
        nu1: frames.iter().map(|f| f.nu1).collect(),
        nu2: frames.iter().map(|f| f.nu2).collect(),
        lambda: frames.iter().map(|f| f.lambda).collect(),
    }
}

pub fn second_fundamental_form(field: &Field, frame: &FrameData, metric: &MetricData) -> Result<CurvatureData> {
    check_finite(field)?;
    let spec = *field.spec();
    if frame.nu1.len() != spec.len() || metric.g.len() != spec.len() {
        return Err(Error::GridMismatch("frame/metric data do not match the field".into()));
    }
    let js = jets(field);
    let points: Vec<PointCurvature> = (0..spec.len())
        .into_par_iter()
        .map(|p| {
            let pf = PointFrame {
                nu1: frame.nu1[p],
                nu2: frame.nu2[p],
                lambda: frame.lambda[p],
            };
            let pm = PointMetric {
                g: metric.g[p],
                ginv: metric.ginv[p],
                sqrt_det: metric.sqrt_det[p],
                sqrt_det_excess: metric.sqrt_det[p] - 1.0,
            };
            point_curvature(&js[p], &pf, &pm)
        })
        .collect();
    Ok(curvature_data(&points))
}

fn curvature_data(points: &[PointCurvature]) -> CurvatureData {
    CurvatureData {
        h: points.iter().map(|c| c.h).collect(),
        mean: points.iter().map(|c| c.mean).collect(),
        skew: points.iter().map(|c| c.skew).collect(),
        a_normsq: points.iter().map(|c| c.a_normsq).collect(),
    }
}

/// Everything the diagnostics need from one field, computed from a single
/// set of spectral jets.
#[derive(Debug, Clone)]
pub struct GeometryBundle {
    pub spec: GridSpec,
    pub jets: Vec<PointJet>,
    pub metric: MetricData,
    pub christoffel: Christoffel,
    pub frame: FrameData,
    pub curvature: CurvatureData,
    /// `|∇A|²_g` per point.
    pub grad_a_normsq: Vec<f64>,
    /// `√det g − 1` per point.
    pub sqrt_det_excess: Vec<f64>,
}

impl GeometryBundle {
    pub fn compute(field: &Field) -> Result<Self> {
        check_finite(field)?;
        let spec = *field.spec();
        let js = jets(field);
        let metric = metric_from_jets(spec, &js)?;
        let christoffel = christoffel(&metric);
        let frames: Vec<PointFrame> = js.par_iter().map(point_frame).collect();
        let points: Vec<PointCurvature> = (0..spec.len())
            .into_par_iter()
            .map(|p| point_curvature(&js[p], &frames[p], &point_metric(&js[p])))
            .collect();
        let frame = frame_data(&frames);
        let curvature = curvature_data(&points);
        let grad_a_normsq = covariant_derivative_normsq(&spec, &metric, &christoffel, &frame, &curvature);
        let sqrt_det_excess = js.par_iter().map(|j| point_metric(j).sqrt_det_excess).collect();
        Ok(GeometryBundle {
            spec,
            jets: js,
            metric,
            christoffel,
            frame,
            curvature,
            grad_a_normsq,
            sqrt_det_excess,
        })
    }

    /// `∫ f dμ` with `dμ = √det g dx`.
    pub fn integrate(&self, f: impl Fn(usize) -> f64 + Sync) -> f64 {
        (0..self.spec.len())
            .into_par_iter()
            .map(|p| f(p) * self.metric.sqrt_det[p])
            .sum::<f64>()
            * self.spec.cell_volume()
    }

    pub fn volume(&self) -> f64 {
        self.spec.volume() + self.sqrt_det_excess.iter().sum::<f64>() * self.spec.cell_volume()
    }
}

/// `|∇A|²_g` with
/// `∇_k h^β_ij = ∂_k h^β_ij − Γ^m_ki h^β_mj − Γ^m_kj h^β_im + Σ_α h^α_ij ⟨∂_k ν_α, ν_β⟩`,
/// the last term being the normal-bundle connection.
pub fn covariant_derivative_normsq(
    spec: &GridSpec,
    metric: &MetricData,
    christoffel: &Christoffel,
    frame: &FrameData,
    curvature: &CurvatureData,
) -> Vec<f64> {
    let d = spec.d();
    let mut samples = Vec::new();
    let mut h_slots = [[[0usize; MAX_DIM]; MAX_DIM]; 2];
    for a in 0..2 {
        for i in 0..d {
            for j in i..d {
                h_slots[a][i][j] = samples.len();
                h_slots[a][j][i] = samples.len();
                samples.push(curvature.h.iter().map(|h| h[a][i][j]).collect::<Vec<f64>>());
            }
        }
    }
    let mut nu_slots = [[0usize; MAX_AMBIENT]; 2];
    for (a, nu) in [&frame.nu1, &frame.nu2].into_iter().enumerate() {
        for c in 0..d + 2 {
            nu_slots[a][c] = samples.len();
            samples.push(nu.iter().map(|v| v[c]).collect());
        }
    }
    let grads = real_gradients(spec, &samples);
    (0..spec.len())
        .into_par_iter()
        .map(|p| {
            let h = &curvature.h[p];
            let gamma = &christoffel.gamma[p];
            let nus = [&frame.nu1[p], &frame.nu2[p]];
            // conn[k][α][β] = ⟨∂_k ν_α, ν_β⟩
            let mut conn = [[[0.0; 2]; 2]; MAX_DIM];
            for k in 0..d {
                for a in 0..2 {
                    for b in 0..2 {
                        conn[k][a][b] = (0..d + 2).map(|c| grads[nu_slots[a][c]][p][k] * nus[b][c]).sum();
                    }
                }
            }
            let mut total = 0.0;
            for b in 0..2 {
                let mut nabla = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
                for k in 0..d {
                    for i in 0..d {
                        for j in 0..d {
                            let mut v = grads[h_slots[b][i][j]][p][k];
                            for m in 0..d {
                                v -= gamma[m][k][i] * h[b][m][j] + gamma[m][k][j] * h[b][i][m];
                            }
                            for a in 0..2 {
                                v += h[a][i][j] * conn[k][a][b];
                            }
                            nabla[k][i][j] = v;
                        }
                    }
                }
                total += contract3(&metric.ginv[p], &nabla, d);
            }
            total.max(0.0)
        })
        .collect()
}

/// `g^{kk'} g^{ii'} g^{jj'} T_kij T_k'i'j'`.
fn contract3(ginv: &Mat, t: &[Mat; MAX_DIM], d: usize) -> f64 {
    let mut a = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
    for k in 0..d {
        for i in 0..d {
            for j in 0..d {
                a[k][i][j] = (0..d).map(|m| ginv[k][m] * t[m][i][j]).sum();
            }
        }
    }
    let mut b = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
    for k in 0..d {
        for i in 0..d {
            for j in 0..d {
                b[k][i][j] = (0..d).map(|m| ginv[i][m] * a[k][m][j]).sum();
            }
        }
    }
    let mut out = 0.0;
    for k in 0..d {
        for i in 0..d {
            for j in 0..d {
                let c: f64 = (0..d).map(|m| ginv[j][m] * b[k][i][m]).sum();
                out += c * t[k][i][j];
            }
        }
    }
    out
}

fn sum_norm(values: impl Iterator<Item = f64> + Clone, weights: Option<&[f64]>, cell: f64, p: f64) -> f64 {
    if p.is_infinite() {
        return values.fold(0.0, f64::max);
    }
    match weights {
        Some(w) => values.zip(w).map(|(v, w)| v.powf(p) * w).sum::<f64>() * cell,
        None => values.map(|v| v.powf(p)).sum::<f64>() * cell,
    }
}

/// `‖A‖_{H^{l,p}} = (Σ_{k ≤ l} ∫ |∇^k A|^p_g dμ)^{1/p}`; for `p = ∞` the
/// sum of the sup norms.
pub fn tensor_norm_a(field: &Field, l: usize, p: f64) -> Result<f64> {
    if l > 1 {
        return Err(Error::InvalidArgument(format!(
            "covariant derivatives of A beyond first order are not supported (l = {l})"
        )));
    }
    if p.is_nan() || p < 2.0 {
        return Err(Error::InvalidArgument(format!("exponent must be in [2, ∞], got {p}")));
    }
    let bundle = GeometryBundle::compute(field)?;
    Ok(tensor_norm_from_bundle(&bundle, l, p))
}

pub(crate) fn tensor_norm_from_bundle(bundle: &GeometryBundle, l: usize, p: f64) -> f64 {
    let cell = bundle.spec.cell_volume();
    let w = Some(bundle.metric.sqrt_det.as_slice());
    let a = bundle.curvature.a_normsq.iter().map(|v| v.sqrt());
    let mut total = sum_norm(a, w, cell, p);
    if l == 1 {
        let na = bundle.grad_a_normsq.iter().map(|v| v.sqrt());
        total += sum_norm(na, w, cell, p);
    }
    if p.is_infinite() {
        total
    } else {
        total.powf(1.0 / p)
    }
}

/// Number of ordered index tuples that collapse onto the multi-index `α`.
fn multiplicity(alpha: &[usize]) -> f64 {
    let fact = |n: usize| (1..=n).product::<usize>() as f64;
    fact(alpha.iter().sum()) / alpha.iter().map(|&a| fact(a)).product::<f64>()
}

/// Pointwise `|D^m u|²` summed over ordered index tuples and both components.
pub(crate) fn flat_derivative_normsq(field: &Field, m: usize) -> Vec<f64> {
    let spec = *field.spec();
    let spectral = field.to_spectral();
    let mut out = vec![0.0; spec.len()];
    for alpha in multi_indices(spec.d(), m) {
        let w = multiplicity(&alpha[..spec.d()]);
        let f = spectral.derivative_field(&alpha[..spec.d()]);
        for (o, v) in out.iter_mut().zip(f.values()) {
            *o += w * v.norm_sqr();
        }
    }
    out
}

/// `‖D²u‖_{W^{l,p}} = (Σ_{k ≤ l} ∫ |D^k D²u|^p dx)^{1/p}` in flat measure.
pub fn d2u_norm(field: &Field, l: usize, p: f64) -> Result<f64> {
    if l > 2 {
        return Err(Error::InvalidArgument(format!("d2u_norm supports l <= 2, got {l}")));
    }
    if p.is_nan() || p < 2.0 {
        return Err(Error::InvalidArgument(format!("exponent must be in [2, ∞], got {p}")));
    }
    check_finite(field)?;
    let cell = field.spec().cell_volume();
    let mut total = 0.0;
    for k in 0..=l {
        let sq = flat_derivative_normsq(field, k + 2);
        total += sum_norm(sq.iter().map(|v| v.sqrt()), None, cell, p);
    }
    Ok(if p.is_infinite() { total } else { total.powf(1.0 / p) })
}

/// `∫ √det g dx` over the box.
pub fn induced_volume(field: &Field) -> Result<f64> {
    check_finite(field)?;
    let spec = field.spec();
    let excess: f64 = jets(field).par_iter().map(|j| point_metric(j).sqrt_det_excess).sum();
    Ok(spec.volume() + excess * spec.cell_volume())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn jet2(du1: [f64; 2], du2: [f64; 2]) -> PointJet {
        PointJet {
            d: 2,
            du: [[du1[0], du1[1], 0.0], [du2[0], du2[1], 0.0]],
            d2u: Default::default(),
        }
    }

    fn random_jet(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> PointJet {
        let mut jet = PointJet {
            d,
            ..Default::default()
        };
        for a in 0..2 {
            for i in 0..d {
                jet.du[a][i] = scale * rng.gen_range(-1.0..1.0);
                for j in i..d {
                    let v = rng.gen_range(-1.0..1.0);
                    jet.d2u[a][i][j] = v;
                    jet.d2u[a][j][i] = v;
                }
            }
        }
        jet
    }

    /// Band-limited random state with modes |k| ≤ 4 and ‖Du‖_∞ scaled to `sup_du`.
    fn random_state(spec: GridSpec, seed: u64, sup_du: f64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes: Vec<([f64; 3], Complex64)> = (0..12)
            .map(|_| {
                let mut k = [0.0; 3];
                for v in k.iter_mut().take(spec.d()) {
                    *v = rng.gen_range(-2i32..=2) as f64 * 2.0 * PI / spec.length();
                }
                (k, Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            })
            .collect();
        let f = Field::from_fn(spec, |x| {
            modes
                .iter()
                .map(|(k, c)| {
                    let ph: f64 = (0..x.len()).map(|i| k[i] * x[i]).sum();
                    Complex64::new(c.re * ph.cos(), c.im * (ph + 0.4).sin())
                })
                .sum()
        })
        .unwrap();
        let m = assemble_metric(&f).unwrap().sup_du;
        f.scale(sup_du / m)
    }

    #[test]
    fn flat_plane_metric() {
        let spec = make_grid(2, 16, 4.0).unwrap();
        let m = assemble_metric(&Field::zeros(spec)).unwrap();
        for p in 0..spec.len() {
            assert_eq!(m.sqrt_det[p], 1.0);
            for i in 0..2 {
                for j in 0..2 {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    assert_eq!(m.g[p][i][j], delta);
                    assert_eq!(m.ginv[p][i][j], delta);
                }
            }
        }
    }

    #[test]
    fn point_metric_examples() {
        let m = point_metric(&jet2([0.05, 0.0], [0.0, 0.0]));
        assert_relative_eq!(m.g[0][0], 1.0025, max_relative = 1e-15);
        assert_eq!(m.g[0][1], 0.0);
        assert_eq!(m.g[1][1], 1.0);
    }

    #[test]
    fn metric_of_sine_product_at_grid_point() {
        // u1 = 0.1 sin x1 sin x2; at x = (π/4, π/2): ∂1u1 = 0.1 cos(π/4), ∂2u1 = 0
        let spec = make_grid(2, 32, 2.0 * PI).unwrap();
        let f = Field::from_fn(spec, |x| Complex64::new(0.1 * x[0].sin() * x[1].sin(), 0.0)).unwrap();
        let m = assemble_metric(&f).unwrap();
        let p = spec.flat_index(&[20, 24]);
        let x = spec.coords(p);
        assert_relative_eq!(x[0], PI / 4.0, epsilon = 1e-14);
        assert_relative_eq!(x[1], PI / 2.0, epsilon = 1e-14);
        assert_relative_eq!(m.g[p][0][0], 1.0 + 0.005, epsilon = 1e-14);
        assert!(m.g[p][0][1].abs() < 1e-14);
        assert_relative_eq!(m.g[p][1][1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn woodbury_inverse_and_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in 1..=3 {
            for _ in 0..200 {
                let jet = random_jet(&mut rng, d, 0.8);
                let m = point_metric(&jet);
                for i in 0..d {
                    for j in 0..d {
                        let prod: f64 = (0..d).map(|k| m.g[i][k] * m.ginv[k][j]).sum();
                        let delta = if i == j { 1.0 } else { 0.0 };
                        assert!((prod - delta).abs() < 1e-12);
                        assert_eq!(m.g[i][j], m.g[j][i]);
                    }
                }
                assert!(m.sqrt_det >= 1.0);
            }
        }
        // the rank-one closed form δ_ij − ∂_iu·∂_ju/(1+|∂u|²) agrees to O(|∂u|⁴)
        for eps in [1e-2, 1e-3] {
            let jet = random_jet(&mut rng, 3, eps);
            let m = point_metric(&jet);
            let du2 = jet.grad_norm_sq();
            for i in 0..3 {
                for j in 0..3 {
                    let dot_ij = jet.du[0][i] * jet.du[0][j] + jet.du[1][i] * jet.du[1][j];
                    let delta = if i == j { 1.0 } else { 0.0 };
                    let closed = delta - dot_ij / (1.0 + du2);
                    assert!((closed - m.ginv[i][j]).abs() <= 10.0 * eps.powi(4));
                }
            }
        }
    }

    #[test]
    fn frame_examples() {
        let f = point_frame(&jet2([0.0, 0.0], [0.0, 0.0]));
        assert_eq!(f.nu1, [0.0, 0.0, -1.0, 0.0, 0.0]);
        assert_eq!(f.nu2, [0.0, 0.0, 0.0, -1.0, 0.0]);
        assert_eq!(f.lambda, 1.0);

        let f = point_frame(&jet2([0.05, 0.0], [0.0, 0.0]));
        let s = 1.0025f64.sqrt();
        let expect = [0.05 / s, 0.0, -1.0 / s, 0.0];
        for c in 0..4 {
            assert_relative_eq!(f.nu1[c], expect[c], epsilon = 1e-15);
        }
        assert_eq!(f.lambda, 1.0);
        assert_eq!(f.nu2, [0.0, 0.0, 0.0, -1.0, 0.0]);
    }

    #[test]
    fn frame_orthonormal_and_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for d in 1..=3 {
            for _ in 0..500 {
                let jet = random_jet(&mut rng, d, 0.5 / (2.0 * d as f64).sqrt());
                let f = point_frame(&jet);
                assert!((dot(&f.nu1, &f.nu1) - 1.0).abs() < 1e-12);
                assert!((dot(&f.nu2, &f.nu2) - 1.0).abs() < 1e-12);
                assert!(dot(&f.nu1, &f.nu2).abs() < 1e-12);
                for i in 0..d {
                    let t = tangent(&jet, i);
                    assert!(dot(&t, &f.nu1).abs() < 1e-12);
                    assert!(dot(&t, &f.nu2).abs() < 1e-12);
                }
                assert!(f.lambda >= 1.0);
            }
        }
    }

    #[test]
    fn curvature_invariants_on_random_states() {
        for seed in 0..5 {
            let spec = make_grid(2, 32, 2.0 * PI).unwrap();
            let f = random_state(spec, seed, 0.5);
            let b = GeometryBundle::compute(&f).unwrap();
            for p in 0..spec.len() {
                let c = &b.curvature;
                let h2 = dot(&c.mean[p], &c.mean[p]);
                assert!((dot(&c.skew[p], &c.skew[p]) - h2).abs() <= 1e-10 * (1.0 + h2));
                assert!(dot(&c.skew[p], &c.mean[p]).abs() <= 1e-10 * (1.0 + h2));
                for i in 0..2 {
                    let t = tangent(&b.jets[p], i);
                    assert!(dot(&c.mean[p], &t).abs() <= 1e-9 * (1.0 + h2.sqrt()));
                }
                assert!(c.a_normsq[p] >= 0.0);
            }
        }
    }

    #[test]
    fn a_normsq_matches_quadruple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in 1..=3 {
            for _ in 0..100 {
                let jet = random_jet(&mut rng, d, 0.3);
                let m = point_metric(&jet);
                let fr = point_frame(&jet);
                let c = point_curvature(&jet, &fr, &m);
                let mut brute = 0.0;
                for a in 0..2 {
                    for i in 0..d {
                        for j in 0..d {
                            for k in 0..d {
                                for l in 0..d {
                                    brute += m.ginv[i][k] * m.ginv[j][l] * c.h[a][i][j] * c.h[a][k][l];
                                }
                            }
                        }
                    }
                }
                assert!((brute - c.a_normsq).abs() <= 1e-12 * (1.0 + brute));
            }
        }
    }

    #[test]
    fn flat_plane_curvature_vanishes() {
        let spec = make_grid(2, 16, 5.0).unwrap();
        let b = GeometryBundle::compute(&Field::zeros(spec)).unwrap();
        assert!(b.curvature.a_normsq.iter().all(|&v| v == 0.0));
        assert!(b.curvature.mean.iter().flatten().all(|&v| v == 0.0));
        assert!(b.curvature.skew.iter().flatten().all(|&v| v == 0.0));
        assert!(b.grad_a_normsq.iter().all(|&v| v == 0.0));
        for g in &b.christoffel.gamma {
            assert!(g.iter().flatten().flatten().all(|&v| v == 0.0));
        }
        assert_eq!(tensor_norm_a(&Field::zeros(spec), 1, 2.0).unwrap(), 0.0);
        assert_eq!(tensor_norm_a(&Field::zeros(spec), 0, f64::INFINITY).unwrap(), 0.0);
        assert_eq!(d2u_norm(&Field::zeros(spec), 2, 2.0).unwrap(), 0.0);
        assert_eq!(induced_volume(&Field::zeros(spec)).unwrap(), spec.volume());
    }

    #[test]
    fn christoffel_symmetric_on_random_state() {
        let spec = make_grid(3, 16, 2.0 * PI).unwrap();
        let f = random_state(spec, 4, 0.4);
        let g = christoffel(&assemble_metric(&f).unwrap());
        for pt in &g.gamma {
            for l in 0..3 {
                for i in 0..3 {
                    for j in 0..3 {
                        assert_eq!(pt[l][i][j], pt[l][j][i]);
                    }
                }
            }
        }
    }

    #[test]
    fn mean_curvature_of_small_sine() {
        // u1 = ε sin x1: H − ε sin x1·ν1 is cubic in ε, H − ε sin x1·ν1_flat only quadratic
        let spec = make_grid(2, 32, 2.0 * PI).unwrap();
        let measure = |eps: f64| -> (f64, f64) {
            let f = Field::from_fn(spec, |x| Complex64::new(eps * x[0].sin(), 0.0)).unwrap();
            let b = GeometryBundle::compute(&f).unwrap();
            let mut tilted: f64 = 0.0;
            let mut flat: f64 = 0.0;
            for p in 0..spec.len() {
                let s = eps * spec.coords(p)[0].sin();
                let mut nu_flat = [0.0; MAX_AMBIENT];
                nu_flat[2] = -1.0;
                let h = &b.curvature.mean[p];
                let nu1 = &b.frame.nu1[p];
                let e1: f64 = (0..4).map(|c| (h[c] - s * nu1[c]).powi(2)).sum::<f64>().sqrt();
                let e2: f64 = (0..4).map(|c| (h[c] - s * nu_flat[c]).powi(2)).sum::<f64>().sqrt();
                tilted = tilted.max(e1);
                flat = flat.max(e2);
            }
            (tilted, flat)
        };
        let (t1, f1) = measure(1e-3);
        let (t2, f2) = measure(2e-3);
        let order_tilted = (t2 / t1).log2();
        let order_flat = (f2 / f1).log2();
        assert!((order_tilted - 3.0).abs() < 0.1, "{order_tilted}");
        assert!((order_flat - 2.0).abs() < 0.1, "{order_flat}");
    }

    #[test]
    fn pointwise_curvature_equivalence() {
        // |A|²_g ≤ |D²u|² ≤ (1+|Du|²)³ |A|²_g at every point
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in 1..=3 {
            for _ in 0..2000 {
                let jet = random_jet(&mut rng, d, 1.0);
                let m = point_metric(&jet);
                let c = point_curvature(&jet, &point_frame(&jet), &m);
                let d2 = jet.hessian_norm_sq();
                let du2 = jet.grad_norm_sq();
                assert!(c.a_normsq <= d2 * (1.0 + 1e-12));
                assert!(d2 <= (1.0 + du2).powi(3) * c.a_normsq * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn d2u_norm_of_sine() {
        let spec = make_grid(2, 32, 2.0 * PI).unwrap();
        let f = Field::from_fn(spec, |x| Complex64::new(x[0].sin(), 0.0)).unwrap();
        // ∫ sin² x1 dx over [0, 2π)² = 2π²
        assert_relative_eq!(
            d2u_norm(&f, 0, 2.0).unwrap(),
            (2.0 * PI * PI).sqrt(),
            max_relative = 1e-12
        );
        assert!(d2u_norm(&f, 3, 2.0).is_err());
        assert!(d2u_norm(&f, 0, 1.5).is_err());
    }

    #[test]
    fn d2u_norm_counts_mixed_partials_twice() {
        let spec = make_grid(2, 32, 2.0 * PI).unwrap();
        let f = Field::from_fn(spec, |x| Complex64::new(0.0, x[0].sin() * x[1].sin())).unwrap();
        // |D²u|² = 2 sin²x sin²y + 2 cos²x cos²y; integral = 2π² + 2π²
        assert_relative_eq!(
            d2u_norm(&f, 0, 2.0).unwrap(),
            (4.0 * PI * PI).sqrt(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn volume_excess_is_quadratic() {
        let spec = make_grid(2, 64, 20.0).unwrap();
        let v = |eps: f64| {
            let f = Field::from_fn(spec, |x| {
                let r2 = x[0] * x[0] + x[1] * x[1];
                Complex64::new(eps * (-r2 / 2.0).exp(), 0.5 * eps * (-r2 / 3.0).exp() * x[0])
            })
            .unwrap();
            induced_volume(&f).unwrap() - spec.volume()
        };
        let order = (v(2e-3) / v(1e-3)).log2();
        assert!(order >= 1.9, "{order}");
    }

    #[test]
    fn tensor_norm_sup_matches_max_pointwise() {
        let spec = make_grid(2, 32, 2.0 * PI).unwrap();
        let f = random_state(spec, 8, 0.3);
        let b = GeometryBundle::compute(&f).unwrap();
        let max = b.curvature.a_normsq.iter().map(|v| v.sqrt()).fold(0.0, f64::max);
        assert_eq!(tensor_norm_a(&f, 0, f64::INFINITY).unwrap(), max);
        assert!(tensor_norm_a(&f, 2, 2.0).is_err());
        assert!(tensor_norm_a(&f, 0, 1.0).is_err());
        assert!(tensor_norm_a(&f, 1, 2.0).unwrap() > tensor_norm_a(&f, 0, 2.0).unwrap());
    }

    #[test]
    fn translation_permutes_geometry() {
        let spec = make_grid(2, 32, 2.0 * PI).unwrap();
        let f = random_state(spec, 21, 0.4);
        let shift = [5, 11];
        let a = GeometryBundle::compute(&f).unwrap();
        let b = GeometryBundle::compute(&f.roll(&shift)).unwrap();
        for p in 0..spec.len() {
            let mut idx = spec.axis_indices(p);
            idx[0] = (idx[0] + shift[0]) % spec.n();
            idx[1] = (idx[1] + shift[1]) % spec.n();
            let q = spec.flat_index(&idx);
            assert!((a.curvature.a_normsq[p] - b.curvature.a_normsq[q]).abs() < 1e-13);
            assert!((a.grad_a_normsq[p] - b.grad_a_normsq[q]).abs() < 1e-12);
            assert!((a.metric.sqrt_det[p] - b.metric.sqrt_det[q]).abs() < 1e-13);
            for c in 0..4 {
                assert!((a.frame.nu2[p][c] - b.frame.nu2[q][c]).abs() < 1e-13);
                assert!((a.curvature.skew[p][c] - b.curvature.skew[q][c]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn rejects_non_finite_field() {
        let spec = make_grid(1, 8, 1.0).unwrap();
        let mut v = vec![Complex64::new(0.0, 0.0); 8];
        v[3].re = f64::NAN;
        let f = Field::from_raw(spec, v);
        assert!(matches!(assemble_metric(&f), Err(Error::NonFinite { index: 3, .. })));
        assert!(normal_frame(&f).is_err());
    }
}
