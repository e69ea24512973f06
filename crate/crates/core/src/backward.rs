//! Time-reversed fast diffusion `u' = Delta G_beta(u)`, the discrete heat
//! kernel, and the positivity (Harnack-type) machinery for it.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{Dopri, IntegratorPolicy, Tolerance};
use crate::lattice::{laplacian_gflux, Configuration, Exponent, ModelParams};
use crate::trajectory::{fmt_f64, Trajectory};

/// Integrates `u' = Delta G_beta(u)` on the periodic window from `u0 v delta`.
///
/// `delta = 0` keeps the data as is; for `beta < 0` this requires `u0 > 0`.
pub fn integrate_backward(
    u0: &Configuration,
    params: &ModelParams,
    t_end: f64,
    delta: f64,
    policy: &IntegratorPolicy,
) -> Result<Trajectory> {
    integrate_backward_until(u0, params, t_end, delta, policy, &mut |_| false).map(|(traj, _)| traj)
}

/// Like [`integrate_backward`] but halts at the first time `stop` holds for
/// the state, which is returned alongside the trajectory. `stop` must be
/// monotone in time (once true, true afterwards): the hitting time inside a
/// step is located by bisection on the dense output.
pub fn integrate_backward_until(
    u0: &Configuration,
    params: &ModelParams,
    t_end: f64,
    delta: f64,
    policy: &IntegratorPolicy,
    stop: &mut dyn FnMut(&[f64]) -> bool,
) -> Result<(Trajectory, Option<f64>)> {
    params.validate()?;
    policy.validate()?;
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!("t_end = {t_end} must be positive")));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("delta = {delta} must be >= 0")));
    }
    let e = params.exponent();
    let beta = params.beta;
    let y0: Vec<f64> = u0.masses().iter().map(|&v| v.max(delta)).collect();
    if beta < 0.0 {
        if let Some(site) = y0.iter().position(|&v| v <= 0.0) {
            return Err(Error::Singularity { site, time: 0.0 });
        }
    }
    let m = y0.len();
    let mut traj = Trajectory::new();
    traj.push(0.0, Configuration::from_vec_unchecked(y0.clone()));
    if stop(&y0) {
        return Ok((traj, Some(0.0)));
    }
    let scale = y0.iter().fold(0.0f64, |a, &v| a.max(v));
    if scale == 0.0 {
        traj.push(t_end, Configuration::from_vec_unchecked(y0));
        return Ok((traj, None));
    }
    let tol = Tolerance {
        rtol: params.ode_tol,
        atol: 0.01 * params.ode_tol * scale,
    };

    let mut g = vec![0.0; m];
    let mut rhs = |y: &[f64], out: &mut [f64]| laplacian_gflux(e, y, &mut g, out);
    let mut dp = Dopri::new(0.0, y0, policy.dt_init, &mut rhs);
    let mut last_record = 0.0;
    let mut steps = 0usize;
    let end_slack = 1e-13 * t_end.max(1.0);
    while t_end - dp.t > end_slack {
        if steps >= policy.max_steps {
            return Err(Error::StepLimit {
                max_steps: policy.max_steps,
                time: dp.t,
            });
        }
        let a_max = coefficient_bound(e, &dp.y);
        let cap = policy
            .dt_max
            .min(t_end - dp.t)
            .min(policy.dt_safety / (2.0 * a_max));
        dp.step(cap, tol, &mut rhs)?;
        steps += 1;
        if (dp.t - t_end).abs() <= end_slack {
            dp.t = t_end;
        }
        if beta < 0.0 {
            if let Some(site) = dp.y.iter().position(|&v| !(v > 0.0)) {
                return Err(Error::Singularity { site, time: dp.t });
            }
        }
        if stop(&dp.y) {
            let (mut lo, mut hi) = (dp.t_prev, dp.t);
            let mut buf = vec![0.0; m];
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                dp.dense(mid, &mut buf);
                if stop(&buf) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            if hi < dp.t {
                // The truncated step can land a hair short of the dense
                // estimate; the full step is kept in that case.
                let mut short = dp.clone();
                short.truncate_last_step(hi, tol, &mut rhs);
                if stop(&short.y) {
                    dp = short;
                }
            }
            traj.push(dp.t, Configuration::from_vec_unchecked(dp.y.clone()));
            traj.stats = dp.stats;
            return Ok((traj, Some(dp.t)));
        }
        if policy.should_record(dp.t, last_record) || t_end - dp.t <= end_slack
        {
            traj.push(dp.t, Configuration::from_vec_unchecked(dp.y.clone()));
            last_record = dp.t;
        }
    }
    if traj.t_end() < dp.t {
        traj.push(dp.t, Configuration::from_vec_unchecked(dp.y.clone()));
    }
    traj.stats = dp.stats;
    Ok((traj, None))
}

/// Upper bound for the divergence-form coefficient over all bonds.
///
/// For `beta < 1` the secant of `G` between two positive values is at most
/// `G'` at the smaller one; a bond touching an empty site has secant
/// `u^(beta - 1)`.
fn coefficient_bound(e: Exponent, u: &[f64]) -> f64 {
    if e == Exponent::One {
        return 1.0;
    }
    let mut u_min = f64::INFINITY;
    let mut has_zero = false;
    for &v in u {
        if v > 0.0 {
            u_min = u_min.min(v);
        } else {
            has_zero = true;
        }
    }
    if !u_min.is_finite() {
        return 1.0;
    }
    let mut a = e.gflux_derivative(u_min);
    if has_zero && e.value() > 0.0 {
        a = a.max(u_min.powf(e.value() - 1.0));
    }
    a.max(f64::MIN_POSITIVE)
}

/// Divergence-form coefficient `a(k) = (G(u(k+1)) - G(u(k))) / (u(k+1) - u(k))`
/// on each bond `(k, k+1)` of the periodic window, with `G'` on flat bonds.
pub fn coefficient_field(u: &Configuration, beta: f64) -> Result<Vec<f64>> {
    let e = Exponent::new(beta)?;
    let x = u.masses();
    let m = x.len();
    if beta < 0.0 && x.iter().any(|&v| v <= 0.0) {
        return Err(Error::Domain("coefficient field needs u > 0 for beta < 0".into()));
    }
    Ok((0..m)
        .map(|k| {
            let (a, b) = (x[k], x[(k + 1) % m]);
            if a == b {
                if a > 0.0 {
                    e.gflux_derivative(a)
                } else {
                    0.0
                }
            } else {
                (e.gflux(b) - e.gflux(a)) / (b - a)
            }
        })
        .collect())
}

/// True when `c1 - tol <= u(t, k) <= c2 + tol` at every recorded point.
pub fn comparison_holds(traj: &Trajectory, c1: f64, c2: f64, tol: f64) -> bool {
    traj.snapshots
        .iter()
        .all(|s| s.masses().iter().all(|&v| v >= c1 - tol && v <= c2 + tol))
}

/// `e^{-x} I_n(x)`, finite for every `x >= 0`.
pub fn bessel_i_scaled(n: u32, x: f64) -> f64 {
    assert!(x >= 0.0, "bessel argument must be nonnegative");
    if x == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    if x <= 10.0 {
        bessel_series(n, x) * (-x).exp()
    } else {
        bessel_miller_scaled(n, x)
    }
}

/// Modified Bessel function of the first kind `I_n(x)`.
pub fn bessel_i(n: u32, x: f64) -> f64 {
    assert!(x >= 0.0, "bessel argument must be nonnegative");
    if x <= 10.0 {
        if x == 0.0 {
            return if n == 0 { 1.0 } else { 0.0 };
        }
        bessel_series(n, x)
    } else {
        bessel_miller_scaled(n, x) * x.exp()
    }
}

/// `sum_m (x/2)^(2m+n) / (m! (m+n)!)`, all terms positive.
fn bessel_series(n: u32, x: f64) -> f64 {
    let half = 0.5 * x;
    let ln_fact: f64 = (2..=n).map(|k| (k as f64).ln()).sum();
    let mut term = (n as f64 * half.ln() - ln_fact).exp();
    if term == 0.0 {
        return 0.0;
    }
    let q = half * half;
    let mut sum = term;
    for m in 1.. {
        term *= q / (m as f64 * (m + n) as f64);
        sum += term;
        if term <= 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Miller's downward recurrence `I_{k-1} = (2k/x) I_k + I_{k+1}`, normalised
/// by `I_0 + 2 sum_{k>=1} I_k = e^x`, which yields `e^{-x} I_n` directly.
fn bessel_miller_scaled(n: u32, x: f64) -> f64 {
    let big = (n as f64).max(x);
    let start = (big + 30.0 + 15.0 * big.sqrt()).ceil() as u32;
    let (mut above, mut cur) = (0.0f64, 1e-280f64);
    let mut sum = 0.0;
    let mut want = 0.0;
    for k in (1..=start).rev() {
        // cur = I_k (unnormalised), above = I_{k+1}
        if k == n {
            want = cur;
        }
        sum += 2.0 * cur;
        let below = (2.0 * k as f64 / x) * cur + above;
        above = cur;
        cur = below;
        if cur > 1e250 {
            above *= 1e-250;
            cur *= 1e-250;
            sum *= 1e-250;
            want *= 1e-250;
        }
    }
    if n == 0 {
        want = cur;
    }
    sum += cur;
    want / sum
}

/// Discrete heat kernel `phi(t, k) = e^{-2t} I_|k|(2t)`.
pub fn heat_kernel(t: f64, k: i64) -> f64 {
    assert!(t >= 0.0, "heat kernel time must be nonnegative");
    bessel_i_scaled(k.unsigned_abs() as u32, 2.0 * t)
}

/// Radius `20 + 10 sqrt(t)` outside of which the heat kernel mass is negligible.
pub fn heat_kernel_radius(t: f64) -> i64 {
    (20.0 + 10.0 * t.sqrt()).ceil() as i64
}

/// Positivity class `P_{L,d}`: every site is within `L` steps to the right of
/// a site of mass at least `d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositivityClass {
    pub l: usize,
    pub d: f64,
}

impl PositivityClass {
    pub fn new(l: usize, d: f64) -> Result<Self> {
        if l == 0 {
            return Err(Error::InvalidParameter("L must be >= 1".into()));
        }
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::InvalidParameter(format!("d = {d} must be positive")));
        }
        Ok(Self { l, d })
    }
}

/// Largest cyclic gap from a site to the next site (strictly after it) with
/// mass `>= d`, or `None` when there is no such site.
pub fn max_heavy_gap(u: &Configuration, d: f64) -> Option<usize> {
    let m = u.window_size();
    let heavy: Vec<usize> = (0..m).filter(|&k| u.get(k) >= d).collect();
    let first = *heavy.first()?;
    let mut gap = first + m - heavy[heavy.len() - 1];
    for w in heavy.windows(2) {
        gap = gap.max(w[1] - w[0]);
    }
    Some(gap)
}

/// Membership in `P_{L,d}` under the gap reading of the definition.
pub fn membership_pld(u: &Configuration, pc: &PositivityClass) -> bool {
    max_heavy_gap(u, pc.d).is_some_and(|g| g <= pc.l)
}

fn check_open_unit_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Domain(format!("beta = {beta} outside (0, 1)")));
    }
    Ok(())
}

/// Dominating function of the local problem, `2 v^beta + v / (1 - beta)`.
pub fn harnack_theta(beta: f64, v: f64) -> f64 {
    2.0 * v.powf(beta) + v / (1.0 - beta)
}

/// Inverse of [`harnack_theta`] by bisection on `[0, max(1, c)]`.
pub fn harnack_eta1(beta: f64, c: f64) -> Result<f64> {
    check_open_unit_beta(beta)?;
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::Domain(format!("c = {c} must be finite and >= 0")));
    }
    if c == 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, c.max(1.0));
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        if harnack_theta(beta, mid) < c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Pick whichever end reproduces c best.
    let err = |v: f64| (harnack_theta(beta, v) - c).abs();
    Ok(if err(lo) < err(hi) { lo } else { hi })
}

/// `eta(r)`: `r`-fold composition of `eta_1` applied to 1.
pub fn harnack_floor(beta: f64, r: usize) -> Result<f64> {
    check_open_unit_beta(beta)?;
    let mut v = 1.0;
    for _ in 0..r {
        v = harnack_eta1(beta, v)?;
    }
    Ok(v)
}

/// Validity horizon `t*(u)` of the Harnack bound: inverse of
/// `f(t) = 4t + t^(1/(1-beta))`.
pub fn harnack_horizon(beta: f64, u: f64) -> Result<f64> {
    check_open_unit_beta(beta)?;
    if !(u >= 0.0 && u.is_finite()) {
        return Err(Error::Domain(format!("u = {u} must be finite and >= 0")));
    }
    let p = 1.0 / (1.0 - beta);
    let f = |t: f64| 4.0 * t + t.powf(p);
    let (mut lo, mut hi) = (0.0, u / 4.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        if f(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Largest `c` with `u(t, k) >= c * floor(t)` over every recorded `t > 0`,
/// where `floor(t) = min(1, t^(1/(1-beta)))` for `beta != 1` and
/// `e^{-2t} I_L(2t)` for `beta = 1`.
///
/// Returns 0 when the bound fails for every `c > 0`, which includes the case
/// where an explicit Harnack bound with the paper's constants is violated:
/// `u >= M(u0, k, L) phi(t, L)` for `beta = 1`, and
/// `u >= eta(L) t^(1/(1-beta))` on `[0, t*(d)]` for `beta in (0, 1)` with
/// `u0 <= 1`.
pub fn positivity_fit(traj: &Trajectory, params: &ModelParams, pc: &PositivityClass) -> Result<f64> {
    if traj.len() < 2 {
        return Err(Error::InsufficientData("positivity fit needs t > 0 samples".into()));
    }
    let beta = params.beta;
    let u0 = traj.first();
    if !membership_pld(u0, pc) {
        return Err(Error::Precondition("initial data not in P_{L,d}".into()));
    }
    let m = u0.window_size();
    let slack = 1e-9;

    // Explicit-constant checks.
    let local_mass: Vec<f64> = (0..m)
        .map(|k| {
            let l = pc.l as i64;
            (-l..=l)
                .map(|j| u0.get((k as i64 - j).rem_euclid(m as i64) as usize))
                .sum()
        })
        .collect();
    let harnack = if beta > 0.0 && beta < 1.0 && u0.max_mass() <= 1.0 {
        Some((harnack_floor(beta, pc.l)?, harnack_horizon(beta, pc.d)?))
    } else {
        None
    };

    let mut c = f64::INFINITY;
    for (&t, s) in traj.times.iter().zip(&traj.snapshots).skip(1) {
        if t <= 0.0 {
            continue;
        }
        let floor = if beta == 1.0 {
            heat_kernel(t, pc.l as i64)
        } else {
            t.powf(1.0 / (1.0 - beta)).min(1.0)
        };
        for (k, &v) in s.masses().iter().enumerate() {
            if !(v > 0.0) {
                return Ok(0.0);
            }
            if beta == 1.0 && v < local_mass[k] * floor * (1.0 - slack) {
                return Ok(0.0);
            }
            if let Some((eta, horizon)) = harnack {
                if t <= horizon && v < eta * t.powf(1.0 / (1.0 - beta)) * (1.0 - slack) {
                    return Ok(0.0);
                }
            }
            if floor > 0.0 {
                c = c.min(v / floor);
            }
        }
    }
    Ok(if c.is_finite() { c } else { 0.0 })
}

/// Rescaled profile of a fundamental solution at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelProfile {
    pub t: f64,
    /// Lattice offset of `values[0]` relative to the source site.
    pub k_min: i64,
    /// `psi(t, k)` for `k = k_min, k_min + 1, ...`.
    pub values: Vec<f64>,
    /// Bounds `(lambda_1, lambda_2)` of the coefficient field when the profile
    /// comes from a nonlinear run.
    pub coefficient_bounds: Option<(f64, f64)>,
}

impl KernelProfile {
    /// Closed-form `beta = 1` kernel on `|k| <= radius`.
    pub fn heat(t: f64, radius: i64) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::InvalidParameter(format!("profile time {t} must be positive")));
        }
        let values = (-radius..=radius).map(|k| heat_kernel(t, k)).collect();
        Ok(Self {
            t,
            k_min: -radius,
            values,
            coefficient_bounds: Some((1.0, 1.0)),
        })
    }

    /// Profile read off a snapshot of a run started from a unit mass at
    /// `source`, centred so that `k = 0` is the source site.
    pub fn from_snapshot(u: &Configuration, source: usize, t: f64, beta: f64) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::InvalidParameter(format!("profile time {t} must be positive")));
        }
        let m = u.window_size();
        let half = (m / 2) as i64;
        let k_min = -half;
        let values = (0..m as i64)
            .map(|i| u.get((source as i64 + k_min + i).rem_euclid(m as i64) as usize))
            .collect();
        let coefficient_bounds = coefficient_field(u, beta).ok().map(|a| {
            a.iter()
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)))
        });
        Ok(Self {
            t,
            k_min,
            values,
            coefficient_bounds,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn offsets(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.values.len() as i64).map(move |i| self.k_min + i)
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Steps of `U(t, xi) = sqrt(t) psi(t, floor(sqrt(t) xi))`: the value on
    /// `[k / sqrt(t), (k + 1) / sqrt(t))` for every sampled `k`.
    pub fn rescaled(&self) -> Vec<(f64, f64)> {
        let s = self.t.sqrt();
        self.offsets()
            .zip(&self.values)
            .map(|(k, &v)| (k as f64 / s, s * v))
            .collect()
    }

    /// Width of one step of the rescaled profile.
    pub fn step_width(&self) -> f64 {
        1.0 / self.t.sqrt()
    }

    /// `integral U(t, xi) d xi`, equal to the lattice mass.
    pub fn rescaled_integral(&self) -> f64 {
        self.rescaled().iter().map(|&(_, u)| u).sum::<f64>() * self.step_width()
    }

    /// `t,k,psi,U_xi,xi` rows, without header.
    pub fn csv_rows(&self, out: &mut String) {
        let s = self.t.sqrt();
        for (k, &v) in self.offsets().zip(&self.values) {
            let _ = writeln!(
                out,
                "{},{k},{},{},{}",
                fmt_f64(self.t),
                fmt_f64(v),
                fmt_f64(s * v),
                fmt_f64(k as f64 / s)
            );
        }
    }
}

/// Kernel table CSV with header for several profiles.
pub fn kernel_csv(profiles: &[KernelProfile]) -> String {
    let mut out = String::from("t,k,psi,U_xi,xi\n");
    for p in profiles {
        p.csv_rows(&mut out);
    }
    out
}
