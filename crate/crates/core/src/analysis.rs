//! Qualitative analysis of vector fields: fixed points and their stability,
//! periodic orbits via Poincaré shooting, the largest Lyapunov exponent
//! (Rosenstein's method), energy alignment and dissipation audits.

use nalgebra::{Cholesky, DMatrix, DVector};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrate::{advance, step, IntegrateError, Scheme, VectorField};
use crate::nets::OnsagerNet;
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("trajectory left the bounded region at t = {time}")]
    Unbounded { time: f64 },
    #[error("{which} Hessian is not positive definite")]
    NotPositiveDefinite { which: &'static str },
    #[error("no return to the section within t = {max_time}")]
    NoReturn { max_time: f64 },
    #[error("shooting Newton did not converge; residuals {residuals:?}")]
    NewtonDiverged { residuals: Vec<f64> },
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
}

/// Eigenvalues with `|Re λ| ≤ STABILITY_MARGIN` count as marginal.
pub const STABILITY_MARGIN: f64 = 1e-6;

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical inverse of `index` in `base` (one Halton coordinate).
pub fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Central-difference Jacobian `∂f_i/∂h_j`.
pub fn jacobian<F: VectorField + ?Sized>(field: &F, h: &[f64], step: f64) -> DMatrix<f64> {
    let m = h.len();
    let mut j = DMatrix::zeros(field.dim(), m);
    let mut x = h.to_vec();
    for c in 0..m {
        x[c] = h[c] + step;
        let plus = field.eval(&x);
        x[c] = h[c] - step;
        let minus = field.eval(&x);
        x[c] = h[c];
        for r in 0..plus.len() {
            j[(r, c)] = (plus[r] - minus[r]) / (2.0 * step);
        }
    }
    j
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl Eigenvalue {
    pub fn modulus(&self) -> f64 {
        self.re.hypot(self.im)
    }
}

/// Eigenvalues of a square matrix, sorted by decreasing real part.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Eigenvalue> {
    let mut out: Vec<Eigenvalue> = a
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| Eigenvalue { re: z.re, im: z.im })
        .collect();
    out.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
    Saddle,
    Marginal,
}

pub fn classify(eigs: &[Eigenvalue], margin: f64) -> Stability {
    let max = eigs.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
    let min = eigs.iter().map(|e| e.re).fold(f64::INFINITY, f64::min);
    if max < -margin {
        Stability::Stable
    } else if min > margin {
        Stability::Unstable
    } else if max > margin && min < -margin {
        Stability::Saddle
    } else {
        Stability::Marginal
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub location: Vec<f64>,
    /// `‖f(location)‖`.
    pub residual: f64,
    pub eigenvalues: Vec<Eigenvalue>,
    pub stability: Stability,
}

impl FixedPoint {
    pub fn max_real_part(&self) -> f64 {
        self.eigenvalues.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max)
    }

    /// At least one direction grows (saddles included).
    pub fn is_unstable(&self) -> bool {
        self.max_real_part() > STABILITY_MARGIN
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedPointOptions {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub n_starts: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub fd_step: f64,
    pub merge_tol: f64,
}

impl FixedPointOptions {
    pub fn in_box(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self {
            lower,
            upper,
            n_starts: 64,
            tol: 1e-10,
            max_iter: 50,
            fd_step: 1e-6,
            merge_tol: 1e-6,
        }
    }

    /// The cube `[−a, a]^m`.
    pub fn cube(m: usize, a: f64) -> Self {
        Self::in_box(vec![-a; m], vec![a; m])
    }
}

fn newton_root<F: VectorField + ?Sized>(field: &F, x0: Vec<f64>, opts: &FixedPointOptions) -> Option<(Vec<f64>, f64)> {
    let mut x = x0;
    let mut fx = field.eval(&x);
    let mut nf = norm(&fx);
    if !nf.is_finite() {
        return None;
    }
    for _ in 0..opts.max_iter {
        if nf < opts.tol {
            break;
        }
        let j = jacobian(field, &x, opts.fd_step);
        let rhs = -DVector::from_column_slice(&fx);
        let delta = j.lu().solve(&rhs)?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, d)| a + lambda * d).collect();
            let ft = field.eval(&trial);
            let nt = norm(&ft);
            if nt.is_finite() && nt < nf {
                x = trial;
                fx = ft;
                nf = nt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (nf < opts.tol).then_some((x, nf))
}

/// Damped Newton from Halton-sequence starts in the search box. Roots are
/// merged when closer than `merge_tol`; an empty list means no start
/// converged.
pub fn find_fixed_points<F: VectorField + ?Sized>(field: &F, opts: &FixedPointOptions) -> Vec<FixedPoint> {
    let m = field.dim();
    let mut found: Vec<FixedPoint> = Vec::new();
    for s in 0..opts.n_starts {
        let x0: Vec<f64> = (0..m)
            .map(|d| {
                let u = halton(s as u64 + 1, PRIMES[d % PRIMES.len()]);
                opts.lower[d] + (opts.upper[d] - opts.lower[d]) * u
            })
            .collect();
        let Some((x, residual)) = newton_root(field, x0, opts) else {
            continue;
        };
        if found.iter().any(|p| dist(&p.location, &x) < opts.merge_tol) {
            continue;
        }
        let eig = eigenvalues(&jacobian(field, &x, opts.fd_step));
        found.push(FixedPoint {
            location: x,
            residual,
            stability: classify(&eig, STABILITY_MARGIN),
            eigenvalues: eig,
        });
    }
    found.sort_by(|a, b| {
        a.location
            .iter()
            .zip(&b.location)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    found
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitOptions {
    /// Normal of the Poincaré section through the seed point.
    pub normal: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Integration step.
    pub dt: f64,
    /// Give up if no return happens within this time.
    pub max_time: f64,
    pub fd_step: f64,
}

impl OrbitOptions {
    pub fn with_normal(normal: Vec<f64>) -> Self {
        Self {
            normal,
            tol: 1e-8,
            max_iter: 50,
            dt: 1e-3,
            max_time: 100.0,
            fd_step: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    /// Point of the orbit on the section.
    pub anchor: Vec<f64>,
    pub period: f64,
    /// `‖P(anchor) − anchor‖` for the first-return map `P`.
    pub residual: f64,
    /// Floquet multiplier moduli, descending; one of them is ≈ 1.
    pub multipliers: Vec<f64>,
    /// All multipliers except the one nearest 1 lie inside the unit circle.
    pub stable: bool,
}

struct Section {
    point: Vec<f64>,
    normal: Vec<f64>,
    /// Orthonormal basis of the section, one vector per column.
    basis: DMatrix<f64>,
    /// `+1` or `−1`: the sign of `n·f` for the crossings that count.
    direction: f64,
}

impl Section {
    fn offset(&self, x: &[f64]) -> f64 {
        self.direction
            * x.iter()
                .zip(&self.point)
                .zip(&self.normal)
                .map(|((a, p), n)| (a - p) * n)
                .sum::<f64>()
    }

    fn coords(&self, x: &[f64]) -> DVector<f64> {
        let d = DVector::from_iterator(x.len(), x.iter().zip(&self.point).map(|(a, p)| a - p));
        self.basis.transpose() * d
    }

    fn point_at(&self, c: &DVector<f64>) -> Vec<f64> {
        let d = &self.basis * c;
        self.point.iter().zip(d.iter()).map(|(p, x)| p + x).collect()
    }
}

fn orthonormal_complement(n: &[f64]) -> DMatrix<f64> {
    let m = n.len();
    let mut vecs: Vec<Vec<f64>> = vec![n.to_vec()];
    for i in 0..m {
        if vecs.len() == m {
            break;
        }
        let mut v = vec![0.0; m];
        v[i] = 1.0;
        for u in &vecs {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(u) {
                *a -= dot * b;
            }
        }
        let nv = norm(&v);
        if nv > 1e-8 {
            vecs.push(v.iter().map(|x| x / nv).collect());
        }
    }
    DMatrix::from_fn(m, m - 1, |r, c| vecs[c + 1][r])
}

/// Integrates from `x` (on the section) to the next crossing in the
/// section's direction; the crossing inside the last step is located by
/// re-integrating that step with a shorter size, which keeps the map smooth
/// in `x`.
fn first_return<F: VectorField + ?Sized>(
    field: &F,
    sec: &Section,
    x: &[f64],
    opts: &OrbitOptions,
) -> Result<(Vec<f64>, f64), AnalysisError> {
    let mut y = x.to_vec();
    let mut t = 0.0;
    let mut g = sec.offset(&y);
    let mut left = false;
    while t < opts.max_time {
        let next = step(Scheme::SspRk3, field, &y, opts.dt)?;
        let g_next = sec.offset(&next);
        if g_next < 0.0 {
            left = true;
        }
        if left && g < 0.0 && g_next >= 0.0 {
            // Illinois iteration on θ ∈ [0, dt] for offset(step(y, θ)) = 0
            let (mut a, mut fa) = (0.0, g);
            let (mut b, mut fb) = (opts.dt, g_next);
            let mut side = 0i8;
            let mut best = (b, next.clone());
            for _ in 0..100 {
                let c = (a * fb - b * fa) / (fb - fa);
                if !(c > a && c < b) {
                    break;
                }
                let yc = step(Scheme::SspRk3, field, &y, c)?;
                let fc = sec.offset(&yc);
                best = (c, yc);
                if fc.abs() < 1e-15 * (1.0 + norm(&best.1)) || (b - a) < 1e-16 {
                    break;
                }
                if fc < 0.0 {
                    a = c;
                    fa = fc;
                    if side == -1 {
                        fb *= 0.5;
                    }
                    side = -1;
                } else {
                    b = c;
                    fb = fc;
                    if side == 1 {
                        fa *= 0.5;
                    }
                    side = 1;
                }
            }
            return Ok((best.1, t + best.0));
        }
        y = next;
        g = g_next;
        t += opts.dt;
    }
    Err(AnalysisError::NoReturn {
        max_time: opts.max_time,
    })
}

/// Newton shooting on the first-return map of the section through `seed`
/// with normal `opts.normal`, followed by a finite-difference monodromy
/// matrix over one period.
pub fn find_periodic_orbit<F: VectorField + ?Sized>(
    field: &F,
    seed: &[f64],
    opts: &OrbitOptions,
) -> Result<PeriodicOrbit, AnalysisError> {
    let m = field.dim();
    if m < 2 || seed.len() != m || opts.normal.len() != m {
        return Err(AnalysisError::InvalidInput(
            "seed and normal must match a field of dimension ≥ 2".into(),
        ));
    }
    let nn = norm(&opts.normal);
    if !(nn > 0.0) {
        return Err(AnalysisError::InvalidInput("section normal is zero".into()));
    }
    let normal: Vec<f64> = opts.normal.iter().map(|x| x / nn).collect();
    let flux: f64 = field.eval(seed).iter().zip(&normal).map(|(a, b)| a * b).sum();
    if flux == 0.0 {
        return Err(AnalysisError::InvalidInput(
            "field is tangent to the section at the seed".into(),
        ));
    }
    let sec = Section {
        point: seed.to_vec(),
        basis: orthonormal_complement(&normal),
        normal,
        direction: flux.signum(),
    };

    let residual_at = |c: &DVector<f64>| -> Result<(DVector<f64>, Vec<f64>, f64, f64), AnalysisError> {
        let x = sec.point_at(c);
        let (ret, period) = first_return(field, &sec, &x, opts)?;
        let full = dist(&ret, &x);
        Ok((sec.coords(&ret) - c, x, period, full))
    };

    let k = m - 1;
    let mut c = DVector::zeros(k);
    let (mut r, mut x, mut period, mut full) = residual_at(&c)?;
    let mut history = vec![full];
    let mut iter = 0;
    while full >= opts.tol {
        if iter == opts.max_iter {
            return Err(AnalysisError::NewtonDiverged { residuals: history });
        }
        iter += 1;
        let mut jac = DMatrix::zeros(k, k);
        for col in 0..k {
            let mut cp = c.clone();
            cp[col] += opts.fd_step;
            let mut cm = c.clone();
            cm[col] -= opts.fd_step;
            let rp = residual_at(&cp)?.0;
            let rm = residual_at(&cm)?.0;
            jac.set_column(col, &((rp - rm) / (2.0 * opts.fd_step)));
        }
        let Some(delta) = jac.lu().solve(&(-&r)) else {
            return Err(AnalysisError::NewtonDiverged { residuals: history });
        };
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = &c + &delta * lambda;
            if let Ok((rt, xt, pt, ft)) = residual_at(&trial) {
                if ft < full {
                    c = trial;
                    r = rt;
                    x = xt;
                    period = pt;
                    full = ft;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        history.push(full);
        if !accepted {
            return Err(AnalysisError::NewtonDiverged { residuals: history });
        }
    }

    // a fixed point on the section satisfies P(x) = x trivially
    if norm(&field.eval(&x)) < 1e-6 * (1.0 + norm(&x)) {
        return Err(AnalysisError::NewtonDiverged { residuals: history });
    }

    let mut mono = DMatrix::zeros(m, m);
    let mut xp = x.clone();
    for col in 0..m {
        xp[col] = x[col] + opts.fd_step;
        let a = advance(Scheme::SspRk3, field, &xp, period, opts.dt)?;
        xp[col] = x[col] - opts.fd_step;
        let b = advance(Scheme::SspRk3, field, &xp, period, opts.dt)?;
        xp[col] = x[col];
        for row in 0..m {
            mono[(row, col)] = (a[row] - b[row]) / (2.0 * opts.fd_step);
        }
    }
    let mut multipliers: Vec<f64> = eigenvalues(&mono).iter().map(Eigenvalue::modulus).collect();
    multipliers.sort_by(|a, b| b.total_cmp(a));
    let trivial = multipliers
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 1.0).abs().total_cmp(&(b.1 - 1.0).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let stable = multipliers.iter().enumerate().all(|(i, &mu)| i == trivial || mu < 1.0);
    Ok(PeriodicOrbit {
        anchor: x,
        period,
        residual: full,
        multipliers,
        stable,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovOptions {
    /// Length of the analysed trajectory (after the transient).
    pub t_total: f64,
    /// Sampling interval of the analysed series.
    pub dt: f64,
    /// Integration step (at most `dt`).
    pub max_step: f64,
    /// Time integrated and discarded before sampling.
    pub transient: f64,
    /// Upper bound on the temporal exclusion window, as a fraction of the
    /// series length.
    pub max_exclusion_fraction: f64,
    /// Length of the divergence curve, as a fraction of the series length.
    pub horizon_fraction: f64,
    /// States with a larger norm count as a blow-up.
    pub bound: f64,
}

impl LyapunovOptions {
    pub fn new(t_total: f64, dt: f64) -> Self {
        Self {
            t_total,
            dt,
            max_step: dt.min(1e-3),
            transient: 0.0,
            max_exclusion_fraction: 0.1,
            horizon_fraction: 0.1,
            bound: 1e8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    /// Slope of the mean log-divergence, per unit time.
    pub exponent: f64,
    /// Fitted index range `[start, end)` of `divergence`.
    pub fit_range: (usize, usize),
    pub r_squared: f64,
    /// Temporal exclusion window in samples.
    pub exclusion: usize,
    /// Mean `ln d_j(i)` at times `i·dt`.
    pub divergence: Vec<f64>,
    pub sample_dt: f64,
}

/// Samples a trajectory, failing on blow-up.
pub fn bounded_trajectory<F: VectorField + ?Sized>(
    field: &F,
    h0: &[f64],
    t_total: f64,
    dt: f64,
    max_step: f64,
    bound: f64,
) -> Result<Vec<Vec<f64>>, AnalysisError> {
    let n = (t_total / dt).round() as usize;
    let mut out = Vec::with_capacity(n + 1);
    let mut x = h0.to_vec();
    out.push(x.clone());
    for k in 0..n {
        x = advance(Scheme::SspRk3, field, &x, dt, max_step).map_err(|_| AnalysisError::Unbounded {
            time: (k + 1) as f64 * dt,
        })?;
        if norm(&x) > bound {
            return Err(AnalysisError::Unbounded {
                time: (k + 1) as f64 * dt,
            });
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// Mean period, in samples, from the strongest non-zero frequency of the
/// summed power spectra of the mean-removed coordinates.
fn dominant_period(series: &[Vec<f64>]) -> Option<f64> {
    let n = series.len();
    if n < 4 {
        return None;
    }
    let m = series[0].len();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut power = vec![0.0; n / 2 + 1];
    for d in 0..m {
        let mean = series.iter().map(|x| x[d]).sum::<f64>() / n as f64;
        let mut buf: Vec<Complex<f64>> = series.iter().map(|x| Complex::new(x[d] - mean, 0.0)).collect();
        fft.process(&mut buf);
        for (p, z) in power.iter_mut().zip(&buf) {
            *p += z.norm_sqr();
        }
    }
    let (k, &p) = power.iter().enumerate().skip(1).max_by(|a, b| a.1.total_cmp(b.1))?;
    (p > 0.0).then(|| n as f64 / k as f64)
}

fn linear_fit(y: &[f64], dt: f64) -> (f64, f64) {
    let n = y.len() as f64;
    let xs: Vec<f64> = (0..y.len()).map(|i| i as f64 * dt).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(y).map(|(x, v)| (x - mx) * (v - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, r2)
}

/// Rosenstein's estimate of the largest Lyapunov exponent from one
/// trajectory of the full state (no delay embedding).
pub fn largest_lyapunov<F: VectorField + ?Sized>(
    field: &F,
    h0: &[f64],
    opts: &LyapunovOptions,
) -> Result<LyapunovEstimate, AnalysisError> {
    if !(opts.dt > 0.0 && opts.t_total > 0.0 && opts.max_step > 0.0) {
        return Err(AnalysisError::InvalidInput("times must be positive".into()));
    }
    let start = if opts.transient > 0.0 {
        let pre = bounded_trajectory(field, h0, opts.transient, opts.transient, opts.max_step, opts.bound)?;
        pre.last().cloned().unwrap_or_else(|| h0.to_vec())
    } else {
        h0.to_vec()
    };
    let series = bounded_trajectory(field, &start, opts.t_total, opts.dt, opts.max_step, opts.bound)?;
    lyapunov_from_series(&series, opts.dt, opts.max_exclusion_fraction, opts.horizon_fraction)
}

/// Rosenstein's procedure on an evenly sampled series.
pub fn lyapunov_from_series(
    series: &[Vec<f64>],
    dt: f64,
    max_exclusion_fraction: f64,
    horizon_fraction: f64,
) -> Result<LyapunovEstimate, AnalysisError> {
    let n = series.len();
    if n < 20 {
        return Err(AnalysisError::InvalidInput(format!("series too short ({n} samples)")));
    }
    let cap = ((n as f64 * max_exclusion_fraction) as usize).max(1);
    let exclusion = dominant_period(series).map_or(1, |p| (p.round() as usize).clamp(1, cap));
    let horizon = ((n as f64 * horizon_fraction) as usize).max(10).min(n - exclusion - 2);

    let mut sums = vec![0.0; horizon];
    let mut counts = vec![0usize; horizon];
    for j in 0..n - horizon {
        let mut best: Option<(usize, f64)> = None;
        for k in 0..n - horizon {
            if j.abs_diff(k) <= exclusion {
                continue;
            }
            let d = dist(&series[j], &series[k]);
            if d > 0.0 && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((k, d));
            }
        }
        let Some((k, _)) = best else { continue };
        for i in 0..horizon {
            let d = dist(&series[j + i], &series[k + i]);
            if d > 0.0 {
                sums[i] += d.ln();
                counts[i] += 1;
            }
        }
    }
    let divergence: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect();
    let valid = divergence.iter().take_while(|v| v.is_finite()).count();
    if valid < 5 {
        return Err(AnalysisError::InvalidInput("no usable neighbour pairs".into()));
    }
    let curve = &divergence[..valid];
    let min_len = 5.max(valid / 20);
    let mut chosen = None;
    for end in (min_len..=valid).rev() {
        let (slope, r2) = linear_fit(&curve[..end], dt);
        if r2 > 0.98 {
            chosen = Some((end, slope, r2));
            break;
        }
    }
    let (end, exponent, r_squared) = chosen.unwrap_or_else(|| {
        let end = (valid / 10).max(2);
        let (slope, r2) = linear_fit(&curve[..end], dt);
        (end, slope, r2)
    });
    Ok(LyapunovEstimate {
        exponent,
        fit_range: (0, end),
        r_squared,
        exclusion,
        divergence,
        sample_dt: dt,
    })
}

/// Central-difference Hessian from a gradient function, symmetrised.
pub fn hessian_from_grad<G: Fn(&[f64]) -> Vec<f64>>(grad: G, h: &[f64], step: f64) -> DMatrix<f64> {
    let m = h.len();
    let mut hess = DMatrix::zeros(m, m);
    let mut x = h.to_vec();
    for c in 0..m {
        x[c] = h[c] + step;
        let gp = grad(&x);
        x[c] = h[c] - step;
        let gm = grad(&x);
        x[c] = h[c];
        for r in 0..m {
            hess[(r, c)] = (gp[r] - gm[r]) / (2.0 * step);
        }
    }
    (&hess + hess.transpose()) * 0.5
}

fn to_tensor(a: &DMatrix<f64>) -> Tensor {
    Tensor::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Linear change of variables matching the learned energy's curvature at
/// its anchor to the exact energy's curvature at its minimum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyAlignment {
    pub learned_anchor: Vec<f64>,
    pub exact_anchor: Vec<f64>,
    /// `T` with `Tᵀ H_l T = H_e`.
    pub transform: Tensor,
    pub learned_hessian: Tensor,
    pub exact_hessian: Tensor,
}

impl EnergyAlignment {
    /// `learned_anchor + T (h − exact_anchor)`.
    pub fn map(&self, h: &[f64]) -> Vec<f64> {
        let m = h.len();
        (0..m)
            .map(|i| {
                self.learned_anchor[i]
                    + (0..m)
                        .map(|j| self.transform.get(i, j) * (h[j] - self.exact_anchor[j]))
                        .sum::<f64>()
            })
            .collect()
    }

    /// `Ṽ(h) = V_l(map(h)) − V_l(learned_anchor)`.
    pub fn aligned<V: Fn(&[f64]) -> f64>(&self, learned: V, h: &[f64]) -> f64 {
        learned(&self.map(h)) - learned(&self.learned_anchor)
    }
}

/// Aligns a learned energy to an exact one using Hessians at the two
/// anchors (central differences of the gradients, step `1e-4`).
pub fn align_energy<GL, GE>(
    learned_grad: GL,
    exact_grad: GE,
    learned_anchor: &[f64],
    exact_anchor: &[f64],
) -> Result<EnergyAlignment, AnalysisError>
where
    GL: Fn(&[f64]) -> Vec<f64>,
    GE: Fn(&[f64]) -> Vec<f64>,
{
    if learned_anchor.len() != exact_anchor.len() {
        return Err(AnalysisError::InvalidInput("anchor dimensions differ".into()));
    }
    let hl = hessian_from_grad(learned_grad, learned_anchor, 1e-4);
    let he = hessian_from_grad(exact_grad, exact_anchor, 1e-4);
    let transform = alignment_transform(&hl, &he)?;
    Ok(EnergyAlignment {
        learned_anchor: learned_anchor.to_vec(),
        exact_anchor: exact_anchor.to_vec(),
        transform: to_tensor(&transform),
        learned_hessian: to_tensor(&hl),
        exact_hessian: to_tensor(&he),
    })
}

/// `T = A⁻¹B` from the Cholesky factors `H_l = AᵀA`, `H_e = BᵀB`.
pub fn alignment_transform(h_learned: &DMatrix<f64>, h_exact: &DMatrix<f64>) -> Result<DMatrix<f64>, AnalysisError> {
    let ll = Cholesky::new(h_learned.clone())
        .ok_or(AnalysisError::NotPositiveDefinite { which: "learned" })?
        .l();
    let le = Cholesky::new(h_exact.clone())
        .ok_or(AnalysisError::NotPositiveDefinite { which: "exact" })?
        .l();
    ll.transpose()
        .solve_upper_triangular(&le.transpose())
        .ok_or(AnalysisError::NotPositiveDefinite { which: "learned" })
}

/// RMS difference of two functions on a uniform grid of `n` points per
/// axis over the box, after subtracting each function's grid minimum.
pub fn energy_l2_error<A, B>(a: A, b: B, lower: &[f64], upper: &[f64], n: usize) -> f64
where
    A: Fn(&[f64]) -> f64,
    B: Fn(&[f64]) -> f64,
{
    let m = lower.len();
    if m == 0 || n == 0 {
        return 0.0;
    }
    let total = n.pow(m as u32);
    let mut va = Vec::with_capacity(total);
    let mut vb = Vec::with_capacity(total);
    let mut x = vec![0.0; m];
    for idx in 0..total {
        let mut r = idx;
        for d in 0..m {
            let i = r % n;
            r /= n;
            x[d] = if n == 1 {
                0.5 * (lower[d] + upper[d])
            } else {
                lower[d] + (upper[d] - lower[d]) * i as f64 / (n - 1) as f64
            };
        }
        va.push(a(&x));
        vb.push(b(&x));
    }
    let ma = va.iter().copied().fold(f64::INFINITY, f64::min);
    let mb = vb.iter().copied().fold(f64::INFINITY, f64::min);
    let ss: f64 = va.iter().zip(&vb).map(|(p, q)| ((p - ma) - (q - mb)).powi(2)).sum();
    (ss / total as f64).sqrt()
}

/// Energy bookkeeping of an OnsagerNet along a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissipationAudit {
    /// `V(h_{k+1}) − V(h_k)`.
    pub increments: Vec<f64>,
    /// `|∇V·ḣ + ∇Vᵀ M̃ ∇V − ⟨f, ∇V⟩|` at each state.
    pub identity_residuals: Vec<f64>,
    pub max_increment: f64,
    pub max_identity_residual: f64,
}

pub fn dissipation_audit(net: &OnsagerNet, trajectory: &[Vec<f64>]) -> DissipationAudit {
    let values: Vec<f64> = trajectory.iter().map(|h| net.potential(h)).collect();
    let increments: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let identity_residuals: Vec<f64> = trajectory
        .iter()
        .map(|h| {
            let g = net.potential_grad(h);
            let rhs = net.rhs(h);
            let f = net.force(h);
            let (mt, _) = net.assemble_mw(h);
            let m = g.len();
            let vdot: f64 = g.iter().zip(&rhs).map(|(a, b)| a * b).sum();
            let mg: f64 = (0..m)
                .map(|i| (0..m).map(|j| g[i] * mt.get(i, j) * g[j]).sum::<f64>())
                .sum();
            let fg: f64 = f.iter().zip(&g).map(|(a, b)| a * b).sum();
            (vdot + mg - fg).abs()
        })
        .collect();
    DissipationAudit {
        max_increment: increments.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        max_identity_residual: identity_residuals.iter().copied().fold(0.0, f64::max),
        increments,
        identity_residuals,
    }
}

/// Upper bound on `V(h(t))` for a model with `ξᵀM̃ξ ≥ α‖ξ‖²`,
/// `V ≥ β‖h‖²` and `‖f(h)‖ ≤ c₀ + c₁‖h‖`.
pub fn gronwall_bound(v0: f64, t: f64, alpha: f64, beta: f64, c0: f64, c1: f64) -> f64 {
    if c1 > 0.0 {
        let e = (c1 * c1 / (2.0 * alpha * beta) * t).exp();
        e * v0 + (e - 1.0) * c0 * c0 * beta / (c1 * c1)
    } else {
        v0 + c0 * c0 / (2.0 * alpha) * t
    }
}

/// Growth constants `(c₀, c₁)` of an affine forcing `f(h) = hW + b`:
/// `c₀ = ‖b‖`, `c₁ = ‖W‖₂`.
pub fn forcing_growth(net: &OnsagerNet) -> (f64, f64) {
    match &net.forcing {
        None => (0.0, 0.0),
        Some(f) => {
            let w = DMatrix::from_row_slice(f.weight.rows(), f.weight.cols(), f.weight.data());
            let c1 = w.singular_values().iter().copied().fold(0.0, f64::max);
            (norm(f.bias.data()), c1)
        }
    }
}

/// `‖a − b‖ / ‖b‖` over all samples of two equally sampled trajectories.
pub fn trajectory_relative_error(predicted: &[Vec<f64>], reference: &[Vec<f64>]) -> f64 {
    let num: f64 = predicted
        .iter()
        .zip(reference)
        .map(|(p, r)| p.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum();
    let den: f64 = reference.iter().map(|r| r.iter().map(|x| x * x).sum::<f64>()).sum();
    (num / den).sqrt()
}

/// Everything `analyze` reports about one model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub fixed_points: Vec<FixedPoint>,
    pub periodic_orbits: Vec<PeriodicOrbit>,
    pub lyapunov_exponents: Vec<f64>,
    /// Any estimated exponent is positive.
    pub positive_exponent: bool,
    pub alignment_error: Option<f64>,
}
