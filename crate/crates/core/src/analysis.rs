//! Observables and estimate fits: local averages, living-particle means,
//! coarsening-rate fits, Hölder moduli and kernel estimates.

use serde::{Deserialize, Serialize};

use crate::backward::KernelProfile;
use crate::error::{Error, Result};
use crate::lattice::Configuration;
use crate::trajectory::Trajectory;

/// `Lambda(x, k, N)`: cyclic average over `x(k - N), ..., x(k + N)`, dead
/// sites included.
pub fn local_average(x: &Configuration, k: usize, n: usize) -> Result<f64> {
    let m = x.window_size();
    if 2 * n + 1 > m {
        return Err(Error::Domain(format!("2N+1 = {} exceeds window {m}", 2 * n + 1)));
    }
    if k >= m {
        return Err(Error::Domain(format!("site {k} outside window")));
    }
    let v = x.masses();
    let s: f64 = (0..=2 * n).map(|j| v[(k + m + j - n) % m]).sum();
    Ok(s / (2 * n + 1) as f64)
}

/// `Lambda(x, k, N)` for every `k`, from one cyclic prefix sum.
pub fn local_averages(x: &Configuration, n: usize) -> Result<Vec<f64>> {
    let m = x.window_size();
    if 2 * n + 1 > m {
        return Err(Error::Domain(format!("2N+1 = {} exceeds window {m}", 2 * n + 1)));
    }
    let v = x.masses();
    let mut prefix = Vec::with_capacity(3 * m + 1);
    prefix.push(0.0);
    for i in 0..3 * m {
        prefix.push(prefix[i] + v[i % m]);
    }
    let w = (2 * n + 1) as f64;
    Ok((0..m)
        .map(|k| {
            let lo = k + m - n;
            (prefix[lo + 2 * n + 1] - prefix[lo]) / w
        })
        .collect())
}

/// Alive positions with a cyclic prefix sum over their masses.
struct AliveIndex {
    pos: Vec<usize>,
    prefix: Vec<f64>,
}

impl AliveIndex {
    fn new(x: &Configuration) -> Result<Self> {
        let pos: Vec<usize> = (0..x.window_size()).filter(|&k| x.is_alive(k)).collect();
        if pos.is_empty() {
            return Err(Error::NoAliveSite);
        }
        let n = pos.len();
        let mut prefix = Vec::with_capacity(3 * n + 1);
        prefix.push(0.0);
        for i in 0..3 * n {
            prefix.push(prefix[i] + x.get(pos[i % n]));
        }
        Ok(Self { pos, prefix })
    }

    /// Mean over the nearest `n_side` alive sites on each side of `anchor`
    /// plus the anchor itself when alive.
    fn mean(&self, anchor: usize, n_side: usize) -> f64 {
        let n = self.pos.len();
        let p = self.pos.partition_point(|&a| a < anchor);
        let own = p < n && self.pos[p] == anchor;
        let others = n - usize::from(own);
        if 2 * n_side >= others {
            return self.prefix[n] / n as f64;
        }
        // Alive list indices [lo, hi) in the tripled prefix array.
        let lo = p + n - n_side;
        let hi = p + n + n_side + usize::from(own);
        (self.prefix[hi] - self.prefix[lo]) / (hi - lo) as f64
    }
}

/// Living-particle mean `<x>_{sigma,N}` anchored at index 0.
pub fn living_mean(x: &Configuration, n: usize) -> Result<f64> {
    Ok(AliveIndex::new(x)?.mean(0, n))
}

/// Mean mass over all alive sites of the window.
pub fn living_mean_window(x: &Configuration) -> Result<f64> {
    let alive = x.alive_count();
    if alive == 0 {
        return Err(Error::NoAliveSite);
    }
    Ok(x.total_mass() / alive as f64)
}

/// Minimum and maximum of the living mean over all anchors, the finite
/// stand-ins for the lower and upper living means.
pub fn living_mean_range(x: &Configuration, n: usize) -> Result<(f64, f64)> {
    let idx = AliveIndex::new(x)?;
    Ok((0..x.window_size())
        .map(|k| idx.mean(k, n))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    /// `v = A t^p`.
    Power,
    /// `v = A e^{lambda t}`.
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub exponent: f64,
    pub prefactor: f64,
    /// RMS residual on the log scale.
    pub residual: f64,
    pub mode: FitMode,
    pub samples: usize,
}

/// Ordinary least squares `y = a + b x`; returns `(a, b, rms)`.
fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    (a, b, (rss / n).sqrt())
}

/// Least-squares rate fit on `(log t, log v)` or `(t, log v)`.
pub fn fit_rate(times: &[f64], values: &[f64], mode: FitMode) -> Result<RateFit> {
    if times.len() != values.len() {
        return Err(Error::Domain("times and values differ in length".into()));
    }
    if times.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "rate fit needs >= 5 samples, got {}",
            times.len()
        )));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("times must be strictly increasing".into()));
    }
    if let Some(v) = values.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!("value {v} is not positive")));
    }
    let xs: Vec<f64> = match mode {
        FitMode::Power => {
            if times[0] <= 0.0 {
                return Err(Error::Domain("power fit needs t > 0".into()));
            }
            times.iter().map(|t| t.ln()).collect()
        }
        FitMode::Exponential => times.to_vec(),
    };
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let (a, b, rms) = least_squares(&xs, &ys);
    Ok(RateFit {
        exponent: b,
        prefactor: a.exp(),
        residual: rms,
        mode,
        samples: times.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateKind {
    Aronson,
    Nash,
    HolderTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateFit {
    pub c: f64,
    pub alpha: Option<f64>,
    pub kind: EstimateKind,
    pub samples: usize,
}

/// Time-Hölder exponent: `1/(1-beta)` for `beta < 0`, Lipschitz otherwise.
pub fn holder_exponent(beta: f64) -> f64 {
    if beta < 0.0 {
        1.0 / (1.0 - beta)
    } else {
        1.0
    }
}

/// Smallest `C` with `|u(t2,k) - u(t1,k)| <= C |t2 - t1|^gamma` over snapshot
/// pairs at lags `1, 2, 4, ...` (in snapshot index).
pub fn holder_fit(traj: &Trajectory, beta: f64) -> Result<EstimateFit> {
    let gamma = holder_exponent(beta);
    let n = traj.len();
    let mut c: f64 = 0.0;
    let mut samples = 0;
    let mut lag = 1;
    while lag < n {
        for i in 0..n - lag {
            let dt = traj.times[i + lag] - traj.times[i];
            let (a, b) = (traj.snapshots[i].masses(), traj.snapshots[i + lag].masses());
            let du = a.iter().zip(b).fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
            c = c.max(du / dt.powf(gamma));
            samples += 1;
        }
        lag *= 2;
    }
    Ok(EstimateFit {
        c,
        alpha: Some(gamma),
        kind: EstimateKind::HolderTime,
        samples,
    })
}

/// Aronson constant (envelope) and Nash exponent/constant (pooled increment
/// regression over `h in [1, sqrt t]`) for a set of kernel profiles.
pub fn kernel_estimates(profiles: &[KernelProfile]) -> Result<(EstimateFit, EstimateFit)> {
    if profiles.is_empty() {
        return Err(Error::InsufficientData("no kernel profiles".into()));
    }
    let mut c_aronson: f64 = 0.0;
    let mut aronson_samples = 0;
    // (log(h / sqrt t), log(D sqrt t), h / sqrt t, D sqrt t)
    let mut incr = Vec::new();
    for p in profiles {
        let s = p.t.sqrt();
        let scale = s.max(1.0);
        for (k, &v) in p.offsets().zip(&p.values) {
            c_aronson = c_aronson.max(v * scale * (k.unsigned_abs() as f64 / scale).exp());
            aronson_samples += 1;
        }
        let h_max = s.floor() as usize;
        for h in 1..=h_max.min(p.values.len().saturating_sub(1)) {
            let d = p
                .values
                .windows(h + 1)
                .fold(0.0f64, |acc, w| acc.max((w[h] - w[0]).abs()));
            if d > 0.0 {
                let (x, y) = (h as f64 / s, d * s);
                incr.push((x.ln(), y.ln(), x, y));
            }
        }
    }
    if incr.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "Nash fit needs >= 2 increments, got {}",
            incr.len()
        )));
    }
    let xs: Vec<f64> = incr.iter().map(|r| r.0).collect();
    let ys: Vec<f64> = incr.iter().map(|r| r.1).collect();
    let distinct = xs.iter().any(|&x| (x - xs[0]).abs() > 1e-12);
    let alpha = if distinct {
        least_squares(&xs, &ys).1.clamp(f64::MIN_POSITIVE, 1.0)
    } else {
        1.0
    };
    let c_nash = incr.iter().fold(0.0f64, |acc, r| acc.max(r.3 / r.2.powf(alpha)));
    Ok((
        EstimateFit {
            c: c_aronson,
            alpha: None,
            kind: EstimateKind::Aronson,
            samples: aronson_samples,
        },
        EstimateFit {
            c: c_nash,
            alpha: Some(alpha),
            kind: EstimateKind::Nash,
            samples: incr.len(),
        },
    ))
}

/// Weighted median of `(value, weight)` pairs.
fn weighted_median(pieces: &mut [(f64, f64)]) -> f64 {
    pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pieces.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for &(v, w) in pieces.iter() {
        acc += w;
        if acc >= 0.5 * total {
            return v;
        }
    }
    pieces.last().map_or(0.0, |p| p.0)
}

/// `L^1` distance between the rescaled profile `U(t, .)` and the best step
/// function that is constant on every cell `[j delta, (j+1) delta)`.
///
/// On each cell the optimal constant is the length-weighted median of the
/// values of `U`, so the distance is exact for this grid.
pub fn step_approximation_distance(profile: &KernelProfile, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("delta = {delta} must be positive")));
    }
    let steps = profile.rescaled();
    if steps.is_empty() {
        return Err(Error::InsufficientData("empty profile".into()));
    }
    let w = profile.step_width();
    let lo = steps[0].0;
    let hi = steps[steps.len() - 1].0 + w;
    let j0 = (lo / delta).floor() as i64;
    let j1 = (hi / delta).ceil() as i64;
    let mut total = 0.0;
    let mut pieces = Vec::new();
    let mut i = 0;
    for j in j0..j1 {
        let (a, b) = (j as f64 * delta, (j + 1) as f64 * delta);
        pieces.clear();
        let mut covered = 0.0;
        while i < steps.len() && steps[i].0 + w <= a {
            i += 1;
        }
        let mut q = i;
        while q < steps.len() && steps[q].0 < b {
            let len = (steps[q].0 + w).min(b) - steps[q].0.max(a);
            if len > 0.0 {
                pieces.push((steps[q].1, len));
                covered += len;
            }
            q += 1;
        }
        // Outside the sampled support U vanishes.
        if covered < delta {
            pieces.push((0.0, delta - covered));
        }
        let med = weighted_median(&mut pieces);
        total += pieces.iter().map(|&(v, l)| (v - med).abs() * l).sum::<f64>();
    }
    Ok(total)
}

/// Window living means at the requested times (snapshot at or before each).
pub fn living_mean_series(traj: &Trajectory, times: &[f64]) -> Result<Vec<f64>> {
    times
        .iter()
        .map(|&t| {
            let s = traj
                .snapshot_at(t)
                .ok_or_else(|| Error::Domain(format!("t = {t} before trajectory start")))?;
            living_mean_window(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backward::{heat_kernel_radius, KernelProfile};
    use proptest::prelude::*;

    fn cfg(v: &[f64]) -> Configuration {
        Configuration::new(v.to_vec()).unwrap()
    }

    #[test]
    fn local_average_examples() {
        let c = Configuration::constant(0.3, 11).unwrap();
        assert!((local_average(&c, 4, 3).unwrap() - 0.3).abs() < 1e-15);
        let alt = Configuration::periodic_pattern(&[0.0, 1.0], 10).unwrap();
        assert!((local_average(&alt, 0, 1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((local_average(&alt, 1, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(local_average(&alt, 0, 5).is_err());
    }

    proptest! {
        #[test]
        fn local_average_shift_and_prefix(x in prop::collection::vec(0.0f64..2.0, 5..60), n in 0usize..3, k in 0usize..1000) {
            let x = cfg(&x);
            let m = x.window_size();
            let k = k % m;
            let n = n.min((m - 1) / 2);
            let shifted = x.shifted();
            let a = local_average(&shifted, k, n).unwrap();
            let b = local_average(&x, (k + m - 1) % m, n).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            let all = local_averages(&x, n).unwrap();
            prop_assert!((all[k] - local_average(&x, k, n).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn synthetic_power_law_is_recovered(p in -3.0f64..3.0, a in 0.1f64..10.0) {
            let t: Vec<f64> = (1..=8).map(|i| 1.5f64.powi(i)).collect();
            let v: Vec<f64> = t.iter().map(|t| a * t.powf(p)).collect();
            let fit = fit_rate(&t, &v, FitMode::Power).unwrap();
            prop_assert!((fit.exponent - p).abs() < 1e-10);
        }
    }

    #[test]
    fn living_mean_examples() {
        let x = Configuration::periodic_pattern(&[3.0, 0.0], 12).unwrap();
        assert_eq!(living_mean(&x, 2).unwrap(), 3.0);
        let c = Configuration::constant(1.7, 9).unwrap();
        assert!((living_mean(&c, 2).unwrap() - 1.7).abs() < 1e-15);
        let y = cfg(&[1.0, 2.0, 0.0, 3.0]);
        assert_eq!(living_mean(&y, 5).unwrap(), 2.0);
        // Anchor 0 with one alive neighbour per side: sites 3, 0, 1.
        assert_eq!(living_mean(&y, 1).unwrap(), 2.0);
        let z = cfg(&[1.0, 2.0, 0.0, 3.0, 10.0, 0.0]);
        assert_eq!(living_mean(&z, 1).unwrap(), 13.0 / 3.0);
        let (lo, hi) = living_mean_range(&z, 1).unwrap();
        assert!(lo <= 13.0 / 3.0 && hi >= 13.0 / 3.0);
        assert!(living_mean(&Configuration::constant(0.0, 3).unwrap(), 1).is_err());
    }

    #[test]
    fn fit_examples() {
        let t: Vec<f64> = (1..=6).map(|i| i as f64).collect();
        let sq: Vec<f64> = t.iter().map(|t| t * t).collect();
        let f = fit_rate(&t, &sq, FitMode::Power).unwrap();
        assert!((f.exponent - 2.0).abs() < 1e-12 && f.residual <= 1e-12);
        let ex: Vec<f64> = t.iter().map(|t| (0.7 * t).exp()).collect();
        let f = fit_rate(&t, &ex, FitMode::Exponential).unwrap();
        assert!((f.exponent - 0.7).abs() < 1e-12);
        assert!(fit_rate(&t[..4], &sq[..4], FitMode::Power).is_err());
        let mut bad = sq.clone();
        bad[2] = 0.0;
        assert!(fit_rate(&t, &bad, FitMode::Power).is_err());
    }

    #[test]
    fn holder_constant_trajectory() {
        let mut traj = Trajectory::new();
        for i in 0..5 {
            traj.push(i as f64, Configuration::constant(1.0, 4).unwrap());
        }
        assert_eq!(holder_fit(&traj, 0.5).unwrap().c, 0.0);
    }

    #[test]
    fn kernel_estimate_examples() {
        let profiles: Vec<KernelProfile> = [1.0, 4.0, 16.0]
            .iter()
            .map(|&t| KernelProfile::heat(t, heat_kernel_radius(t)).unwrap())
            .collect();
        let (aronson, nash) = kernel_estimates(&profiles).unwrap();
        assert!(aronson.c.is_finite() && aronson.c > 0.0);
        assert!(nash.alpha.unwrap() > 0.9);
        assert!(kernel_estimates(&profiles[..1]).is_err());
    }

    #[test]
    fn step_distance_examples() {
        // Width-1 steps at t = 1 are exactly representable at delta = 1.
        let p = KernelProfile::heat(1.0, 20).unwrap();
        assert!(step_approximation_distance(&p, 1.0).unwrap() < 1e-15);
        let p = KernelProfile::heat(25.0, heat_kernel_radius(25.0)).unwrap();
        assert!(step_approximation_distance(&p, 0.1).unwrap() <= 0.05);
    }

    #[test]
    fn step_distance_stays_small_but_not_monotone() {
        let d: Vec<f64> = [4.0, 9.0, 16.0, 25.0, 50.0, 100.0, 200.0]
            .iter()
            .map(|&t| step_approximation_distance(&KernelProfile::heat(t, heat_kernel_radius(t)).unwrap(), 0.1).unwrap())
            .collect();
        assert!(d.iter().all(|&v| v <= 0.02), "{d:?}");
        // Commensurate step widths (1/sqrt(t) a multiple of delta) give 0.
        assert!(d[3] < 1e-12 && d[4] > 0.01);
    }
}
