//! Explicit Runge-Kutta steppers and CFL step-size selection.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::operators::VmState;
use crate::scalar::Real;

/// Time integrator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    TvdRk3,
    /// Classical four-stage Runge-Kutta.
    Rk4,
    ForwardEuler,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::TvdRk3 => "tvd_rk3",
            Scheme::Rk4 => "rk4",
            Scheme::ForwardEuler => "forward_euler",
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tvd_rk3" => Ok(Scheme::TvdRk3),
            "rk4" => Ok(Scheme::Rk4),
            "forward_euler" => Ok(Scheme::ForwardEuler),
            _ => Err(Error::Config(format!("unknown time scheme '{s}'"))),
        }
    }
}

/// Step-size and end-time settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeConfig {
    pub cfl: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    pub dt_override: Option<f64>,
    /// `dt` is scaled by `h_N^(p-1)`, so `p = 4/3` gives `dt = O(h_N^(4/3))`.
    pub dt_scaling_exponent: Option<f64>,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig { cfl: 0.1, t_end: 0.0, scheme: Scheme::TvdRk3, dt_override: None, dt_scaling_exponent: None }
    }
}

impl TimeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0) {
            return Err(Error::Config("cfl must be positive".into()));
        }
        if !(self.t_end >= 0.0) {
            return Err(Error::Config("t_end must be non-negative".into()));
        }
        if let Some(dt) = self.dt_override {
            if !(dt > 0.0) {
                return Err(Error::Config("dt must be positive".into()));
            }
        }
        Ok(())
    }

    /// Step size for the given speeds, box lengths and finest level.
    pub fn dt(&self, speeds: &[f64], lengths: &[f64], level: usize) -> Result<f64> {
        if let Some(dt) = self.dt_override {
            return Ok(dt);
        }
        let h: Vec<f64> = lengths.iter().map(|l| l * 0.5f64.powi(level as i32)).collect();
        let mut dt = compute_dt(speeds, &h, self.cfl)?;
        if let Some(p) = self.dt_scaling_exponent {
            dt *= 0.5f64.powi(level as i32).powf(p - 1.0);
        }
        Ok(dt)
    }
}

/// `dt = cfl / sum_m c_m / h_m`.
pub fn compute_dt(speeds: &[f64], h: &[f64], cfl: f64) -> Result<f64> {
    if speeds.len() != h.len() {
        return Err(Error::Shape { expected: h.len(), got: speeds.len() });
    }
    if speeds.iter().any(|c| !(*c >= 0.0)) || h.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Precondition("speeds must be non-negative and widths positive".into()));
    }
    let s: f64 = speeds.iter().zip(h.iter()).map(|(c, h)| c / h).sum();
    if s == 0.0 {
        return Err(Error::Precondition("all speeds are zero".into()));
    }
    Ok(cfl / s)
}

/// Shortens `dt` when `t + dt` would reach or overshoot `target`; the flag
/// tells the caller to set the new time to `target` exactly.
pub fn clip_dt(t: f64, dt: f64, target: f64) -> (f64, bool) {
    let rest = target - t;
    if dt >= rest * (1.0 - 1e-12) {
        (rest, true)
    } else {
        (dt, false)
    }
}

/// Vector-space operations needed by the Runge-Kutta stages.
pub trait OdeState: Clone {
    /// `self = a * self + b * other`.
    fn axpby(&mut self, a: f64, b: f64, other: &Self);
    fn all_finite(&self) -> bool;
}

impl OdeState for f64 {
    fn axpby(&mut self, a: f64, b: f64, other: &Self) {
        *self = a * *self + b * other;
    }
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

impl<T: Real> OdeState for Vec<T> {
    fn axpby(&mut self, a: f64, b: f64, other: &Self) {
        let (a, b) = (T::lit(a), T::lit(b));
        for (x, y) in self.iter_mut().zip(other.iter()) {
            *x = a * *x + b * *y;
        }
    }
    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl<T: Real> OdeState for VmState<T> {
    fn axpby(&mut self, a: f64, b: f64, other: &Self) {
        self.f.coeffs.axpby(a, b, &other.f.coeffs);
        for (x, y) in self.em.comps.iter_mut().zip(other.em.comps.iter()) {
            x.axpby(a, b, y);
        }
    }
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

fn check<S: OdeState>(u: S, t: f64) -> Result<S> {
    if u.all_finite() {
        Ok(u)
    } else {
        Err(Error::Blowup { t, what: "non-finite state after step".into() })
    }
}

/// `u + dt R(u)`.
pub fn step_forward_euler<S: OdeState>(u: &S, dt: f64, t: f64, mut rhs: impl FnMut(&S) -> Result<S>) -> Result<S> {
    let mut out = u.clone();
    out.axpby(1.0, dt, &rhs(u)?);
    check(out, t + dt)
}

/// Third-order TVD Runge-Kutta.
pub fn step_tvd_rk3<S: OdeState>(u: &S, dt: f64, t: f64, mut rhs: impl FnMut(&S) -> Result<S>) -> Result<S> {
    let mut u1 = u.clone();
    u1.axpby(1.0, dt, &rhs(u)?);
    let r1 = rhs(&u1)?;
    let mut u2 = u1;
    u2.axpby(0.25, 0.25 * dt, &r1);
    u2.axpby(1.0, 0.75, u);
    let r2 = rhs(&u2)?;
    let mut out = u2;
    out.axpby(2.0 / 3.0, 2.0 / 3.0 * dt, &r2);
    out.axpby(1.0, 1.0 / 3.0, u);
    check(out, t + dt)
}

/// Classical four-stage Runge-Kutta.
pub fn step_rk4<S: OdeState>(u: &S, dt: f64, t: f64, mut rhs: impl FnMut(&S) -> Result<S>) -> Result<S> {
    let k1 = rhs(u)?;
    let mut s = u.clone();
    s.axpby(1.0, 0.5 * dt, &k1);
    let k2 = rhs(&s)?;
    let mut s = u.clone();
    s.axpby(1.0, 0.5 * dt, &k2);
    let k3 = rhs(&s)?;
    let mut s = u.clone();
    s.axpby(1.0, dt, &k3);
    let k4 = rhs(&s)?;
    let mut out = u.clone();
    out.axpby(1.0, dt / 6.0, &k1);
    out.axpby(1.0, dt / 3.0, &k2);
    out.axpby(1.0, dt / 3.0, &k3);
    out.axpby(1.0, dt / 6.0, &k4);
    check(out, t + dt)
}

/// One step of the selected scheme.
pub fn step<S: OdeState>(scheme: Scheme, u: &S, dt: f64, t: f64, rhs: impl FnMut(&S) -> Result<S>) -> Result<S> {
    match scheme {
        Scheme::TvdRk3 => step_tvd_rk3(u, dt, t, rhs),
        Scheme::Rk4 => step_rk4(u, dt, t, rhs),
        Scheme::ForwardEuler => step_forward_euler(u, dt, t, rhs),
    }
}
