//! Forward solver for the coarsening equation `x' = Delta_sigma F_beta(x)`
//! with the vanishing rule.
//!
//! Between events the alive set is frozen and the system is smooth, so the
//! shared Dormand-Prince stepper runs on it directly. A site dies when its
//! mass crosses the vanishing threshold; the crossing time is located on the
//! dense output, the step is cut there and the (tiny) leftover mass is handed
//! to the new living neighbours so that the total mass is conserved exactly.

use crate::error::{Error, Result};
use crate::integrator::{Dopri, IntegratorPolicy, Tolerance};
use crate::lattice::{lap3, neighbor_table, sigma_rhs, Configuration, Exponent, ModelParams};
use crate::trajectory::{Event, EventKind, Trajectory};

/// Remaining time to extinction below which a shrinking site is removed even
/// if its mass is still above the threshold. For `beta < 0` the last stretch
/// before vanishing is shorter than the time resolution of `f64`.
const EXTINCTION_TIME_RESOLUTION: f64 = 1e-12;

fn shrink_factor(beta: f64) -> f64 {
    if beta < 1.0 {
        (1.0 / (1.0 - beta)).min(1.0)
    } else {
        1.0
    }
}

/// Estimated remaining time before a site with mass `x` and rate `f < 0` dies,
/// from the local vanishing profile `x ~ (t_v - t)^(1/(1-beta))`.
fn time_to_extinction(beta: f64, x: f64, f: f64) -> f64 {
    let linear = x / -f;
    if beta < 1.0 {
        (1.0 - beta) * linear
    } else {
        linear
    }
}

/// Integrates the coarsening equation from `cfg0` up to `t_end`.
pub fn integrate_forward(
    cfg0: &Configuration,
    params: &ModelParams,
    t_end: f64,
    policy: &IntegratorPolicy,
) -> Result<Trajectory> {
    params.validate()?;
    policy.validate()?;
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!("t_end = {t_end} must be positive")));
    }
    let e = params.exponent();
    let beta = params.beta;
    let m = cfg0.window_size();
    let mut traj = Trajectory::new();
    traj.push(0.0, cfg0.clone());

    let mut alive: Vec<bool> = cfg0.masses().iter().map(|&v| v > 0.0).collect();
    let Some((mut left, mut right)) = neighbor_table(&alive) else {
        traj.push(t_end, cfg0.clone());
        return Ok(traj);
    };
    // Sites that start below the threshold get a threshold of half their mass.
    let thr: Vec<f64> = cfg0
        .masses()
        .iter()
        .map(|&v| policy.mass_tol.min(0.5 * v))
        .collect();
    let tol = Tolerance {
        rtol: params.ode_tol,
        atol: 0.01 * policy.mass_tol,
    };
    let shrink = policy.dt_safety * shrink_factor(beta);

    let mut dp = {
        let mut rhs = |y: &[f64], out: &mut [f64]| sigma_rhs(e, y, &alive, &left, &right, out);
        Dopri::new(0.0, cfg0.masses().to_vec(), policy.dt_init, &mut rhs)
    };
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
        let remaining = t_end - dp.t;
        let mut cap = policy.dt_max.min(remaining);
        for k in 0..m {
            if alive[k] && dp.f[k] < 0.0 {
                cap = cap.min(shrink * dp.y[k] / -dp.f[k]);
            }
        }
        {
            let mut rhs = |y: &[f64], out: &mut [f64]| sigma_rhs(e, y, &alive, &left, &right, out);
            dp.step(cap, tol, &mut rhs)?;
        }
        steps += 1;
        if (dp.t - t_end).abs() <= end_slack {
            dp.t = t_end;
        }

        // Earliest threshold crossing within the step.
        let mut t_cross = f64::INFINITY;
        let mut trigger = None;
        for k in 0..m {
            if !alive[k] || dp.y[k] > thr[k] {
                continue;
            }
            let tc = if dp.y_prev[k] > thr[k] {
                bisect_crossing(&dp, k, thr[k])
            } else {
                dp.t
            };
            if tc < t_cross {
                t_cross = tc;
                trigger = Some(k);
            }
        }
        if trigger.is_some() && t_cross < dp.t {
            let mut rhs = |y: &[f64], out: &mut [f64]| sigma_rhs(e, y, &alive, &left, &right, out);
            dp.truncate_last_step(t_cross, tol, &mut rhs);
        }

        let tau_min = EXTINCTION_TIME_RESOLUTION * dp.t.max(1.0);
        let dying: Vec<usize> = (0..m)
            .filter(|&k| {
                alive[k]
                    && (Some(k) == trigger
                        || dp.y[k] <= 1.01 * thr[k]
                        || (dp.f[k] < 0.0 && time_to_extinction(beta, dp.y[k], dp.f[k]) <= tau_min))
            })
            .collect();

        if dying.is_empty() {
            let due = policy.should_record(dp.t, last_record)
                || dp.t >= t_end;
            if due {
                traj.push(dp.t, Configuration::from_vec_unchecked(dp.y.clone()));
                last_record = dp.t;
            }
            continue;
        }

        let t_event = dp.t;
        let mut y = dp.y.clone();
        let mut residual = Vec::with_capacity(dying.len());
        for &k in &dying {
            alive[k] = false;
            residual.push(y[k]);
            y[k] = 0.0;
            traj.events.push(Event {
                time: t_event,
                site: k,
                kind: EventKind::Vanish,
            });
        }
        match neighbor_table(&alive) {
            Some((l, r)) => {
                for (&k, &res) in dying.iter().zip(&residual) {
                    y[l[k]] += 0.5 * res;
                    y[r[k]] += 0.5 * res;
                }
                left = l;
                right = r;
            }
            None => {
                traj.events.push(Event {
                    time: t_event,
                    site: dying[0],
                    kind: EventKind::Terminal,
                });
                dp.stats.events += 1;
                traj.push(t_event, Configuration::from_vec_unchecked(y));
                traj.stats = dp.stats;
                return Ok(traj);
            }
        }
        {
            let mut rhs = |y: &[f64], out: &mut [f64]| sigma_rhs(e, y, &alive, &left, &right, out);
            dp.reset(t_event, &y, &mut rhs);
        }
        dp.stats.events += 1;
        traj.push(t_event, Configuration::from_vec_unchecked(y));
        last_record = t_event;
    }
    if *traj.times.last().unwrap() < dp.t {
        traj.push(dp.t, Configuration::from_vec_unchecked(dp.y.clone()));
    }
    traj.stats = dp.stats;
    Ok(traj)
}

/// Time in `(t_prev, t]` where the dense output of site `k` first drops to
/// `thr`, to a mass accuracy of `thr / 100`.
fn bisect_crossing(dp: &Dopri, k: usize, thr: f64) -> f64 {
    let (mut lo, mut hi) = (dp.t_prev, dp.t);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        let v = dp.dense_component(mid, k);
        if v <= thr {
            hi = mid;
            if thr - v <= 0.01 * thr {
                break;
            }
        } else {
            lo = mid;
        }
    }
    hi
}

/// Nearest alive site before `k` (cyclic); `k` itself when it is the only one.
fn left_alive(x: &[f64], k: usize) -> usize {
    let m = x.len();
    (1..=m).map(|s| (k + m - s) % m).find(|&l| x[l] > 0.0).unwrap_or(k)
}

fn right_alive(x: &[f64], k: usize) -> usize {
    let m = x.len();
    (1..=m).map(|s| (k + s) % m).find(|&l| x[l] > 0.0).unwrap_or(k)
}

/// `Delta_sigma F(x)` at `k` and its time derivative along the flow.
fn local_rate(e: Exponent, x: &[f64], k: usize) -> (f64, f64) {
    if x[k] <= 0.0 {
        return (0.0, 0.0);
    }
    let rate = |j: usize| -> f64 {
        lap3(e.flux(x[left_alive(x, j)]), e.flux(x[j]), e.flux(x[right_alive(x, j)]))
    };
    // F' = -G'.
    let g = |j: usize, f: f64| -> f64 { -e.gflux_derivative(x[j]) * f };
    let (l, r) = (left_alive(x, k), right_alive(x, k));
    let (fl, fk, fr) = (rate(l), rate(k), rate(r));
    (fk, lap3(g(l, fl), g(k, fk), g(r, fr)))
}

/// Antiderivatives of the cubic Hermite basis on `[0, 1]`.
fn hermite_integrals(s: f64) -> [f64; 4] {
    let (s2, s3, s4) = (s * s, s * s * s, s * s * s * s);
    [
        0.5 * s4 - s3 + s,
        0.25 * s4 - 2.0 * s3 / 3.0 + 0.5 * s2,
        -0.5 * s4 + s3,
        0.25 * s4 - s3 / 3.0,
    ]
}

fn hermite_value(s: f64, h: f64, y0: f64, d0: f64, y1: f64, d1: f64) -> f64 {
    let h10 = s * (1.0 - s) * (1.0 - s);
    let h01 = s * s * (3.0 - 2.0 * s);
    let h11 = s * s * (s - 1.0);
    y0 + h01 * (y1 - y0) + h * (h10 * d0 + h11 * d1)
}

/// `|x(t2,k) - x(t1,k) - int_{t1}^{t2} Delta_sigma F(x)(s,k) ds|` evaluated on
/// the recorded snapshots.
///
/// The quadrature is the trapezoidal rule with the endpoint derivative
/// correction (exact on cubic Hermite data); partial intervals at `t1`, `t2`
/// integrate the same Hermite interpolant of the rate.
pub fn mild_residual(
    traj: &Trajectory,
    params: &ModelParams,
    k: usize,
    t1: f64,
    t2: f64,
) -> Result<f64> {
    if traj.is_empty() {
        return Err(Error::InsufficientData("empty trajectory".into()));
    }
    if k >= traj.window_size() {
        return Err(Error::Domain(format!("site {k} outside window")));
    }
    if !(t1 < t2 && t1 >= traj.t_start() && t2 <= traj.t_end()) {
        return Err(Error::Domain(format!(
            "interval [{t1}, {t2}] not inside [{}, {}]",
            traj.t_start(),
            traj.t_end()
        )));
    }
    let e = params.exponent();
    let i1 = traj.index_at_or_before(t1).unwrap();
    let i2 = traj.index_at_or_before(t2).unwrap();
    let last = if traj.times[i2] < t2 { i2 + 1 } else { i2 };
    let rates: Vec<(f64, f64)> = (i1..=last)
        .map(|i| local_rate(e, traj.snapshots[i].masses(), k))
        .collect();
    let at = |i: usize| rates[i - i1];

    // Value and integral contribution of interval i restricted to [s0, s1].
    let piece = |i: usize, s0: f64, s1: f64| -> f64 {
        let h = traj.times[i + 1] - traj.times[i];
        let ((fa, da), (fb, db)) = (at(i), at(i + 1));
        let p0 = hermite_integrals(s0);
        let p1 = hermite_integrals(s1);
        h * (fa * (p1[0] - p0[0]) + h * da * (p1[1] - p0[1]) + fb * (p1[2] - p0[2]) + h * db * (p1[3] - p0[3]))
    };
    let value = |t: f64, i: usize| -> f64 {
        if traj.times[i] == t || i + 1 >= traj.len() {
            return traj.snapshots[i].get(k);
        }
        let h = traj.times[i + 1] - traj.times[i];
        let s = (t - traj.times[i]) / h;
        let ((fa, _), (fb, _)) = (at(i), at(i + 1));
        hermite_value(s, h, traj.snapshots[i].get(k), fa, traj.snapshots[i + 1].get(k), fb)
    };

    let mut integral = 0.0;
    let mut comp = 0.0;
    for i in i1..last {
        let (ta, tb) = (traj.times[i], traj.times[i + 1]);
        let h = tb - ta;
        let s0 = ((t1 - ta) / h).clamp(0.0, 1.0);
        let s1 = ((t2 - ta) / h).clamp(0.0, 1.0);
        if s1 <= s0 {
            continue;
        }
        // Kahan summation keeps long runs from accumulating rounding error.
        let y = piece(i, s0, s1) - comp;
        let t = integral + y;
        comp = (t - integral) - y;
        integral = t;
    }
    let x1 = value(t1, i1);
    let x2 = value(t2, i2);
    Ok((x2 - x1 - integral).abs())
}

/// Earliest recorded time after which every site varies by less than `tol`.
/// Returns `None` when only the final snapshot qualifies.
pub fn stationarity_time(traj: &Trajectory, tol: f64) -> Option<f64> {
    let n = traj.len();
    if n < 2 {
        return None;
    }
    let m = traj.window_size();
    let mut hi = traj.snapshots[n - 1].masses().to_vec();
    let mut lo = hi.clone();
    let mut first = n - 1;
    for i in (0..n - 1).rev() {
        let x = traj.snapshots[i].masses();
        let mut spread: f64 = 0.0;
        for k in 0..m {
            hi[k] = hi[k].max(x[k]);
            lo[k] = lo[k].min(x[k]);
            spread = spread.max(hi[k] - lo[k]);
        }
        if spread >= tol {
            break;
        }
        first = i;
    }
    (first < n - 1).then(|| traj.times[first])
}
