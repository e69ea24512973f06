//! Explicit adaptive Dormand-Prince 5(4) stepper shared by the forward and
//! backward solvers.
//!
//! The stepper only knows about autonomous systems `y' = f(y)`. Callers pass a
//! step cap per step (no-overshoot rule, parabolic stability bound) and
//! handle events themselves using the dense output of the last step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step-size policy for the explicit integrators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorPolicy {
    pub dt_init: f64,
    /// Fraction in (0, 1) applied to every analytic step cap.
    pub dt_safety: f64,
    pub mass_tol: f64,
    pub max_steps: usize,
    /// Hard upper bound on a single step.
    pub dt_max: f64,
    /// Minimum spacing between recorded snapshots (0 records every step).
    pub record_interval: f64,
    /// When positive, a snapshot is also recorded once `t` exceeds the last
    /// recorded time by this factor, which resolves early transients.
    #[serde(default)]
    pub record_growth: f64,
}

impl Default for IntegratorPolicy {
    fn default() -> Self {
        Self {
            dt_init: 1e-6,
            dt_safety: 0.5,
            mass_tol: 1e-9,
            max_steps: 5_000_000,
            dt_max: f64::INFINITY,
            record_interval: 0.0,
            record_growth: 0.0,
        }
    }
}

impl IntegratorPolicy {
    /// Default policy with the vanishing threshold taken from the model.
    pub fn for_params(params: &crate::lattice::ModelParams) -> Self {
        Self::default().with_mass_tol(params.mass_tol)
    }

    pub fn with_dt_init(mut self, dt: f64) -> Self {
        self.dt_init = dt;
        self
    }

    pub fn with_mass_tol(mut self, tol: f64) -> Self {
        self.mass_tol = tol;
        self
    }

    pub fn with_dt_max(mut self, dt: f64) -> Self {
        self.dt_max = dt;
        self
    }

    pub fn with_record_interval(mut self, dt: f64) -> Self {
        self.record_interval = dt;
        self
    }

    pub fn with_record_growth(mut self, factor: f64) -> Self {
        self.record_growth = factor;
        self
    }

    pub fn with_dt_safety(mut self, s: f64) -> Self {
        self.dt_safety = s;
        self
    }

    pub fn with_max_steps(mut self, n: usize) -> Self {
        self.max_steps = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_init > 0.0) {
            return Err(Error::InvalidParameter("dt_init must be positive".into()));
        }
        if !(self.dt_safety > 0.0 && self.dt_safety < 1.0) {
            return Err(Error::InvalidParameter("dt_safety must lie in (0, 1)".into()));
        }
        if !(self.mass_tol > 0.0) {
            return Err(Error::InvalidParameter("mass_tol must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidParameter("max_steps must be positive".into()));
        }
        if !(self.dt_max > 0.0) {
            return Err(Error::InvalidParameter("dt_max must be positive".into()));
        }
        if !(self.record_interval >= 0.0) {
            return Err(Error::InvalidParameter("record_interval must be >= 0".into()));
        }
        if !(self.record_growth == 0.0 || self.record_growth > 1.0) {
            return Err(Error::InvalidParameter("record_growth must be 0 or > 1".into()));
        }
        Ok(())
    }

    /// Whether a step ending at `t` is recorded after a record at `last`.
    pub(crate) fn should_record(&self, t: f64, last: f64) -> bool {
        self.record_interval == 0.0
            || t - last >= self.record_interval
            || (self.record_growth > 1.0 && t >= self.record_growth * last)
    }
}

/// Counters reported in run manifests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegratorStats {
    pub steps: usize,
    pub rejections: usize,
    pub rhs_evaluations: usize,
    pub events: usize,
}

impl IntegratorStats {
    pub fn merge(&mut self, other: &IntegratorStats) {
        self.steps += other.steps;
        self.rejections += other.rejections;
        self.rhs_evaluations += other.rhs_evaluations;
        self.events += other.events;
    }
}

/// Mixed error tolerance: `atol + rtol * |y|` per component.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Clone)]
pub(crate) struct Dopri {
    pub t: f64,
    pub y: Vec<f64>,
    pub f: Vec<f64>,
    pub t_prev: f64,
    pub y_prev: Vec<f64>,
    pub f_prev: Vec<f64>,
    h: f64,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    k5: Vec<f64>,
    k6: Vec<f64>,
    k7: Vec<f64>,
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    pub stats: IntegratorStats,
}

impl Dopri {
    pub fn new<R>(t0: f64, y0: Vec<f64>, h0: f64, rhs: &mut R) -> Self
    where
        R: FnMut(&[f64], &mut [f64]),
    {
        let n = y0.len();
        let mut f = vec![0.0; n];
        rhs(&y0, &mut f);
        Self {
            t: t0,
            t_prev: t0,
            y_prev: y0.clone(),
            f_prev: f.clone(),
            y: y0,
            f,
            h: h0,
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            k5: vec![0.0; n],
            k6: vec![0.0; n],
            k7: vec![0.0; n],
            ytmp: vec![0.0; n],
            ynew: vec![0.0; n],
            stats: IntegratorStats {
                rhs_evaluations: 1,
                ..Default::default()
            },
        }
    }

    /// Restarts from a modified state (after an event).
    pub fn reset<R>(&mut self, t: f64, y: &[f64], rhs: &mut R)
    where
        R: FnMut(&[f64], &mut [f64]),
    {
        self.t = t;
        self.y.copy_from_slice(y);
        rhs(&self.y, &mut self.f);
        self.stats.rhs_evaluations += 1;
        self.t_prev = t;
        self.y_prev.copy_from_slice(y);
        self.f_prev.copy_from_slice(&self.f);
    }

    /// One Dormand-Prince trial of size `h` from `(t, y, f)`; writes the
    /// 5th-order solution into `ynew`, the derivative there into `k7`, and
    /// returns the scaled error norm.
    fn trial<R>(&mut self, h: f64, tol: Tolerance, rhs: &mut R) -> f64
    where
        R: FnMut(&[f64], &mut [f64]),
    {
        let n = self.y.len();
        let (y, k1) = (&self.y, &self.f);
        for i in 0..n {
            self.ytmp[i] = y[i] + h * A21 * k1[i];
        }
        rhs(&self.ytmp, &mut self.k2);
        for i in 0..n {
            self.ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * self.k2[i]);
        }
        rhs(&self.ytmp, &mut self.k3);
        for i in 0..n {
            self.ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * self.k2[i] + A43 * self.k3[i]);
        }
        rhs(&self.ytmp, &mut self.k4);
        for i in 0..n {
            self.ytmp[i] = y[i]
                + h * (A51 * k1[i] + A52 * self.k2[i] + A53 * self.k3[i] + A54 * self.k4[i]);
        }
        rhs(&self.ytmp, &mut self.k5);
        for i in 0..n {
            self.ytmp[i] = y[i]
                + h * (A61 * k1[i]
                    + A62 * self.k2[i]
                    + A63 * self.k3[i]
                    + A64 * self.k4[i]
                    + A65 * self.k5[i]);
        }
        rhs(&self.ytmp, &mut self.k6);
        for i in 0..n {
            self.ynew[i] = y[i]
                + h * (B1 * k1[i] + B3 * self.k3[i] + B4 * self.k4[i] + B5 * self.k5[i] + B6 * self.k6[i]);
        }
        rhs(&self.ynew, &mut self.k7);
        self.stats.rhs_evaluations += 6;
        let mut err: f64 = 0.0;
        for i in 0..n {
            let e = h
                * (E1 * k1[i] + E3 * self.k3[i] + E4 * self.k4[i] + E5 * self.k5[i] + E6 * self.k6[i]
                    + E7 * self.k7[i]);
            let sc = tol.atol + tol.rtol * y[i].abs().max(self.ynew[i].abs());
            let r = e.abs() / sc;
            if r.is_nan() {
                return f64::NAN;
            }
            err = err.max(r);
        }
        err
    }

    fn commit(&mut self, h: f64) {
        std::mem::swap(&mut self.y_prev, &mut self.y);
        std::mem::swap(&mut self.f_prev, &mut self.f);
        self.t_prev = self.t;
        std::mem::swap(&mut self.y, &mut self.ynew);
        std::mem::swap(&mut self.f, &mut self.k7);
        self.t += h;
        self.stats.steps += 1;
    }

    /// Advances by one accepted step no longer than `h_cap`.
    pub fn step<R>(&mut self, h_cap: f64, tol: Tolerance, rhs: &mut R) -> Result<()>
    where
        R: FnMut(&[f64], &mut [f64]),
    {
        let h_min = 1e-15 * self.t.abs().max(1e-300) + 1e-300;
        let mut h = self.h.min(h_cap);
        loop {
            if !(h > h_min) {
                if let Some(site) = self.y.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NotFinite { site, time: self.t });
                }
                return Err(Error::StepUnderflow { time: self.t, dt: h });
            }
            let err = self.trial(h, tol, rhs);
            if err.is_nan() {
                self.stats.rejections += 1;
                h *= 0.25;
                continue;
            }
            if err <= 1.0 {
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                self.commit(h);
                self.h = h * fac;
                return Ok(());
            }
            self.stats.rejections += 1;
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
        }
    }

    /// Replaces the last accepted step by one ending exactly at `t_target`
    /// (`t_prev < t_target <= t`). The trial is taken unconditionally: it is
    /// shorter than a step that already passed the error test.
    pub fn truncate_last_step<R>(&mut self, t_target: f64, tol: Tolerance, rhs: &mut R)
    where
        R: FnMut(&[f64], &mut [f64]),
    {
        let h = t_target - self.t_prev;
        self.t = self.t_prev;
        self.y.copy_from_slice(&self.y_prev);
        self.f.copy_from_slice(&self.f_prev);
        self.stats.steps -= 1;
        if h > 0.0 {
            let _ = self.trial(h, tol, rhs);
            self.commit(h);
        }
    }

    /// Cubic Hermite interpolant of the last step, component `k`.
    pub fn dense_component(&self, t: f64, k: usize) -> f64 {
        let h = self.t - self.t_prev;
        if h <= 0.0 {
            return self.y[k];
        }
        let s = (t - self.t_prev) / h;
        let (y0, y1, f0, f1) = (self.y_prev[k], self.y[k], self.f_prev[k], self.f[k]);
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1
    }

    pub fn dense(&self, t: f64, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.dense_component(t, k);
        }
    }
}
