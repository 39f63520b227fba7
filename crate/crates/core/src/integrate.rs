//! Fixed-step explicit Runge–Kutta integrators.
//!
//! Heun (RK2) drives the embedded training loss and model rollouts; the
//! Shu–Osher SSP-RK3 scheme generates reference data. Both come in a plain
//! version over `&[f64]` and, for Heun, a graph version on a [`Tape`] so the
//! rollout can be differentiated with respect to network parameters.

use thiserror::Error;

use crate::tensor::{Tape, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrateError {
    #[error("step size must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("number of substeps must be at least 1")]
    ZeroSubsteps,
    #[error("non-finite state after step {step}")]
    NonFinite { step: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// An autonomous vector field `h ↦ ḣ` on `ℝᵐ`.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, h: &[f64]) -> Vec<f64>;
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, h: &[f64]) -> Vec<f64> {
        (**self).eval(h)
    }
}

/// Wraps a closure as a [`VectorField`].
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64>> FnField<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> VectorField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, h: &[f64]) -> Vec<f64> {
        (self.f)(h)
    }
}

/// The field `−f`, i.e. time reversal.
pub struct Reversed<F>(pub F);

impl<F: VectorField> VectorField for Reversed<F> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn eval(&self, h: &[f64]) -> Vec<f64> {
        self.0.eval(h).into_iter().map(|x| -x).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Heun,
    SspRk3,
}

fn axpy(a: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(yi, xi)| yi + a * xi).collect()
}

fn check_dt(dt: f64) -> Result<(), IntegrateError> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(IntegrateError::InvalidStep(dt))
    }
}

fn finite(h: Vec<f64>, step: usize) -> Result<Vec<f64>, IntegrateError> {
    if h.iter().all(|x| x.is_finite()) {
        Ok(h)
    } else {
        Err(IntegrateError::NonFinite { step })
    }
}

/// One Heun step: `k₁ = f(h)`, `k₂ = f(h + dt k₁)`, `h' = h + dt/2 (k₁ + k₂)`.
pub fn heun_step<F: VectorField + ?Sized>(f: &F, h: &[f64], dt: f64) -> Result<Vec<f64>, IntegrateError> {
    check_dt(dt)?;
    finite(heun_unchecked(f, h, dt), 0)
}

fn heun_unchecked<F: VectorField + ?Sized>(f: &F, h: &[f64], dt: f64) -> Vec<f64> {
    let k1 = f.eval(h);
    let k2 = f.eval(&axpy(dt, &k1, h));
    h.iter()
        .zip(k1.iter().zip(&k2))
        .map(|(hi, (a, b))| hi + 0.5 * dt * (a + b))
        .collect()
}

/// `n_s` Heun steps of size `dt`.
pub fn rk2_rollout<F: VectorField + ?Sized>(f: &F, h: &[f64], dt: f64, n_s: usize) -> Result<Vec<f64>, IntegrateError> {
    check_dt(dt)?;
    if n_s == 0 {
        return Err(IntegrateError::ZeroSubsteps);
    }
    let mut state = h.to_vec();
    for step in 0..n_s {
        state = finite(heun_unchecked(f, &state, dt), step)?;
    }
    Ok(state)
}

/// One third-order SSP Runge–Kutta step in Shu–Osher form.
pub fn ssprk3_step<F: VectorField + ?Sized>(f: &F, h: &[f64], dt: f64) -> Result<Vec<f64>, IntegrateError> {
    check_dt(dt)?;
    finite(ssprk3_unchecked(f, h, dt), 0)
}

fn ssprk3_unchecked<F: VectorField + ?Sized>(f: &F, h: &[f64], dt: f64) -> Vec<f64> {
    let u1 = axpy(dt, &f.eval(h), h);
    let u1f = axpy(dt, &f.eval(&u1), &u1);
    let u2: Vec<f64> = h.iter().zip(&u1f).map(|(a, b)| 0.75 * a + 0.25 * b).collect();
    let u2f = axpy(dt, &f.eval(&u2), &u2);
    h.iter().zip(&u2f).map(|(a, b)| a / 3.0 + 2.0 / 3.0 * b).collect()
}

pub fn step<F: VectorField + ?Sized>(scheme: Scheme, f: &F, h: &[f64], dt: f64) -> Result<Vec<f64>, IntegrateError> {
    match scheme {
        Scheme::Heun => heun_step(f, h, dt),
        Scheme::SspRk3 => ssprk3_step(f, h, dt),
    }
}

/// Integrates `n_steps` fixed steps and returns every state including `h0`.
pub fn trajectory<F: VectorField + ?Sized>(
    scheme: Scheme,
    f: &F,
    h0: &[f64],
    dt: f64,
    n_steps: usize,
) -> Result<Vec<Vec<f64>>, IntegrateError> {
    check_dt(dt)?;
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(h0.to_vec());
    let mut state = h0.to_vec();
    for k in 0..n_steps {
        state = match scheme {
            Scheme::Heun => heun_unchecked(f, &state, dt),
            Scheme::SspRk3 => ssprk3_unchecked(f, &state, dt),
        };
        state = finite(state, k)?;
        out.push(state.clone());
    }
    Ok(out)
}

/// Advances `h` by `duration` using the fewest equal steps no larger than
/// `max_dt`. A zero duration returns `h` unchanged.
pub fn advance<F: VectorField + ?Sized>(
    scheme: Scheme,
    f: &F,
    h: &[f64],
    duration: f64,
    max_dt: f64,
) -> Result<Vec<f64>, IntegrateError> {
    check_dt(max_dt)?;
    if duration <= 0.0 {
        return Ok(h.to_vec());
    }
    let n = ((duration / max_dt) - 1e-9).ceil().max(1.0) as usize;
    let dt = duration / n as f64;
    let mut state = h.to_vec();
    for k in 0..n {
        state = match scheme {
            Scheme::Heun => heun_unchecked(f, &state, dt),
            Scheme::SspRk3 => ssprk3_unchecked(f, &state, dt),
        };
        state = finite(state, k)?;
    }
    Ok(state)
}

/// Heun step on a tape. `rhs` maps a `B×m` state to its `B×m` derivative.
pub fn heun_step_graph<R>(tape: &mut Tape, rhs: &mut R, h: Var, dt: f64) -> Result<Var, IntegrateError>
where
    R: FnMut(&mut Tape, Var) -> Result<Var, TensorError>,
{
    check_dt(dt)?;
    let k1 = rhs(tape, h)?;
    let dk1 = tape.scale(k1, dt)?;
    let mid = tape.add(h, dk1)?;
    let k2 = rhs(tape, mid)?;
    let ks = tape.add(k1, k2)?;
    let inc = tape.scale(ks, 0.5 * dt)?;
    Ok(tape.add(h, inc)?)
}

/// `n_s` Heun steps on a tape; aborts on the first non-finite state.
pub fn rk2_rollout_graph<R>(tape: &mut Tape, rhs: &mut R, h: Var, dt: f64, n_s: usize) -> Result<Var, IntegrateError>
where
    R: FnMut(&mut Tape, Var) -> Result<Var, TensorError>,
{
    if n_s == 0 {
        return Err(IntegrateError::ZeroSubsteps);
    }
    let mut state = h;
    for step in 0..n_s {
        state = heun_step_graph(tape, rhs, state, dt)?;
        if !tape.value(state).is_finite() {
            return Err(IntegrateError::NonFinite { step });
        }
    }
    Ok(state)
}
