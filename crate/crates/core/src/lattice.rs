//! Lattice data model: configurations on a periodic window, model parameters,
//! the flux functions and the living-particles Laplacian.
//!
//! The infinite lattice is represented by a periodic window of `M` sites.
//! A site is alive iff its mass is strictly positive; vanished particles keep
//! their slot with mass exactly `0.0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default window size used when none is given.
pub const DEFAULT_WINDOW: usize = 4096;

/// Masses on a periodic lattice window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    window_size: usize,
    #[serde(default = "periodic")]
    boundary: String,
    masses: Vec<f64>,
}

fn periodic() -> String {
    "periodic".to_string()
}

impl Configuration {
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        if masses.is_empty() {
            return Err(Error::Domain("configuration window must be nonempty".into()));
        }
        if let Some(k) = masses.iter().position(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::Domain(format!(
                "mass at site {k} is {} (must be finite and >= 0)",
                masses[k]
            )));
        }
        Ok(Self {
            window_size: masses.len(),
            boundary: periodic(),
            masses,
        })
    }

    pub fn constant(value: f64, window_size: usize) -> Result<Self> {
        Self::new(vec![value; window_size])
    }

    /// Repeats `pattern` cyclically over a window of `window_size` sites.
    pub fn periodic_pattern(pattern: &[f64], window_size: usize) -> Result<Self> {
        if pattern.is_empty() {
            return Err(Error::Domain("empty periodic pattern".into()));
        }
        Self::new((0..window_size).map(|k| pattern[k % pattern.len()]).collect())
    }

    /// Independent uniform masses on `[lo, hi]` from a ChaCha8 stream.
    pub fn random_uniform(lo: f64, hi: f64, window_size: usize, seed: u64) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Domain(format!("random range [{lo}, {hi}] invalid")));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Self::new((0..window_size).map(|_| lo + (hi - lo) * rng.gen::<f64>()).collect())
    }

    pub(crate) fn from_vec_unchecked(masses: Vec<f64>) -> Self {
        Self {
            window_size: masses.len(),
            boundary: periodic(),
            masses,
        }
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn into_masses(self) -> Vec<f64> {
        self.masses
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn len(&self) -> usize {
        self.window_size
    }

    pub fn is_empty(&self) -> bool {
        self.window_size == 0
    }

    pub fn get(&self, k: usize) -> f64 {
        self.masses[k]
    }

    pub fn is_alive(&self, k: usize) -> bool {
        self.masses[k] > 0.0
    }

    pub fn alive_count(&self) -> usize {
        self.masses.iter().filter(|&&m| m > 0.0).count()
    }

    pub fn is_zero(&self) -> bool {
        self.masses.iter().all(|&m| m == 0.0)
    }

    pub fn total_mass(&self) -> f64 {
        kahan_sum(self.masses.iter().copied())
    }

    pub fn max_mass(&self) -> f64 {
        self.masses.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_mass(&self) -> f64 {
        self.masses.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Cyclic shift: `shifted[k] = self[k - 1]`.
    pub fn shifted(&self) -> Self {
        let m = self.window_size;
        Self::from_vec_unchecked((0..m).map(|k| self.masses[(k + m - 1) % m]).collect())
    }

    /// Multiplies every mass by `factor` (must be positive).
    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_vec_unchecked(self.masses.iter().map(|m| m * factor).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: Configuration =
            serde_json::from_str(s).map_err(|e| Error::Domain(format!("bad configuration json: {e}")))?;
        if raw.masses.len() != raw.window_size {
            return Err(Error::Domain(format!(
                "window_size {} does not match {} masses",
                raw.window_size,
                raw.masses.len()
            )));
        }
        if raw.boundary != "periodic" {
            return Err(Error::Domain(format!("unsupported boundary '{}'", raw.boundary)));
        }
        Self::new(raw.masses)
    }
}

pub(crate) fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Model parameters.
///
/// `theta` is derived: `1/theta = 1/2 + epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: f64,
    pub epsilon: f64,
    /// Equilibration time `T` used by the construction schedule.
    pub t_equilibrate: f64,
    /// Vanishing threshold.
    pub mass_tol: f64,
    /// Integrator tolerance.
    pub ode_tol: f64,
}

impl ModelParams {
    pub fn new(beta: f64, epsilon: f64) -> Result<Self> {
        let p = Self {
            beta,
            epsilon,
            t_equilibrate: 1.0,
            mass_tol: 1e-9,
            ode_tol: 1e-8,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_t_equilibrate(mut self, t: f64) -> Self {
        self.t_equilibrate = t;
        self
    }

    pub fn with_mass_tol(mut self, tol: f64) -> Self {
        self.mass_tol = tol;
        self
    }

    pub fn with_ode_tol(mut self, tol: f64) -> Self {
        self.ode_tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        validate_beta(self.beta)?;
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0 / 6.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon = {} outside (0, 1/6]",
                self.epsilon
            )));
        }
        for (name, v) in [
            ("t_equilibrate", self.t_equilibrate),
            ("mass_tol", self.mass_tol),
            ("ode_tol", self.ode_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }

    /// Per-stage amplification ratio, `1 / (1/2 + epsilon)`.
    pub fn theta(&self) -> f64 {
        1.0 / (0.5 + self.epsilon)
    }

    pub fn exponent(&self) -> Exponent {
        Exponent::new_unchecked(self.beta)
    }
}

pub fn validate_beta(beta: f64) -> Result<()> {
    if beta.is_nan() || beta == 0.0 || beta > 1.0 || beta.is_infinite() {
        return Err(Error::InvalidParameter(format!(
            "beta = {beta} outside (-inf, 0) U (0, 1]"
        )));
    }
    Ok(())
}

/// The exponent `beta` with fast paths for the values used most often.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exponent {
    One,
    Half,
    MinusOne,
    General(f64),
}

impl Exponent {
    pub fn new(beta: f64) -> Result<Self> {
        validate_beta(beta)?;
        Ok(Self::new_unchecked(beta))
    }

    pub(crate) fn new_unchecked(beta: f64) -> Self {
        if beta == 1.0 {
            Exponent::One
        } else if beta == 0.5 {
            Exponent::Half
        } else if beta == -1.0 {
            Exponent::MinusOne
        } else {
            Exponent::General(beta)
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Exponent::One => 1.0,
            Exponent::Half => 0.5,
            Exponent::MinusOne => -1.0,
            Exponent::General(b) => b,
        }
    }

    /// `x^beta` for `x > 0`.
    #[inline]
    pub fn pow(self, x: f64) -> f64 {
        match self {
            Exponent::One => x,
            Exponent::Half => x.sqrt(),
            Exponent::MinusOne => 1.0 / x,
            Exponent::General(b) => x.powf(b),
        }
    }

    /// `sign(beta)`.
    #[inline]
    pub fn sign(self) -> f64 {
        if self.value() > 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    /// `F_beta(x) = -sign(beta) x^beta`, with `F_beta(0) = 0`.
    #[inline]
    pub fn flux(self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            -self.sign() * self.pow(x)
        }
    }

    /// `G_beta(u) = sign(beta) u^beta`. For `beta < 0` and `u = 0` this is `-inf`.
    #[inline]
    pub fn gflux(self, u: f64) -> f64 {
        if u <= 0.0 {
            if self.value() < 0.0 {
                f64::NEG_INFINITY
            } else {
                0.0
            }
        } else {
            self.sign() * self.pow(u)
        }
    }

    /// `G_beta'(u) = |beta| u^(beta - 1)`.
    #[inline]
    pub fn gflux_derivative(self, u: f64) -> f64 {
        match self {
            Exponent::One => 1.0,
            Exponent::Half => 0.5 / u.sqrt(),
            Exponent::MinusOne => 1.0 / (u * u),
            Exponent::General(b) => b.abs() * u.powf(b - 1.0),
        }
    }
}

/// `F_beta(x) = -(beta/|beta|) x^beta`, `F_beta(0) = 0`.
pub fn flux(beta: f64, x: f64) -> Result<f64> {
    let e = Exponent::new(beta).map_err(|_| Error::Domain(format!("beta = {beta} is not admissible")))?;
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("flux argument {x} < 0")));
    }
    Ok(e.flux(x))
}

/// `G_beta(u) = -F_beta(u)`.
pub fn gflux(beta: f64, u: f64) -> Result<f64> {
    let e = Exponent::new(beta).map_err(|_| Error::Domain(format!("beta = {beta} is not admissible")))?;
    if !(u >= 0.0) {
        return Err(Error::Domain(format!("gflux argument {u} < 0")));
    }
    if u == 0.0 && beta < 0.0 {
        return Err(Error::Domain("G_beta is singular at u = 0 for beta < 0".into()));
    }
    Ok(e.gflux(u))
}

/// Nearest alive sites strictly before and after a site, in cyclic order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LivingNeighbors {
    pub left: usize,
    pub right: usize,
}

/// Nearest alive neighbours of `k` on the periodic window. When `k` is the
/// only alive site both neighbours wrap around to `k` itself.
pub fn living_neighbors(cfg: &Configuration, k: usize) -> Result<LivingNeighbors> {
    let m = cfg.window_size();
    if k >= m {
        return Err(Error::Domain(format!("site {k} outside window of size {m}")));
    }
    let x = cfg.masses();
    let right = (1..=m).map(|s| (k + s) % m).find(|&l| x[l] > 0.0);
    let left = (1..=m).map(|s| (k + m - s) % m).find(|&l| x[l] > 0.0);
    match (left, right) {
        (Some(left), Some(right)) => Ok(LivingNeighbors { left, right }),
        _ => Err(Error::NoAliveSite),
    }
}

/// Living neighbour table for every site of an alive mask, computed in two
/// cyclic sweeps. Returns `None` when no site is alive.
pub(crate) fn neighbor_table(alive: &[bool]) -> Option<(Vec<usize>, Vec<usize>)> {
    let m = alive.len();
    let first = alive.iter().position(|&a| a)?;
    let last = alive.iter().rposition(|&a| a)?;
    let mut left = vec![0usize; m];
    let mut right = vec![0usize; m];
    let mut prev = last;
    for k in 0..m {
        left[k] = prev;
        if alive[k] {
            prev = k;
        }
    }
    let mut next = first;
    for k in (0..m).rev() {
        right[k] = next;
        if alive[k] {
            next = k;
        }
    }
    Some((left, right))
}

/// Three-point second difference written as two fluxes, so constant data gives
/// exactly zero.
#[inline]
pub(crate) fn lap3(left: f64, centre: f64, right: f64) -> f64 {
    (left - centre) + (right - centre)
}

/// `[F(x(sigma_-)) - 2F(x(k)) + F(x(sigma_+))] * 1{x(k) > 0}`.
pub fn sigma_laplacian_flux(cfg: &Configuration, beta: f64, k: usize) -> Result<f64> {
    let e = Exponent::new(beta)?;
    if k >= cfg.window_size() {
        return Err(Error::Domain(format!("site {k} outside window")));
    }
    if !cfg.is_alive(k) {
        return Ok(0.0);
    }
    let nb = living_neighbors(cfg, k)?;
    let x = cfg.masses();
    Ok(lap3(e.flux(x[nb.left]), e.flux(x[k]), e.flux(x[nb.right])))
}

/// `Delta_sigma F_beta(x)` at every site.
pub fn sigma_laplacian_flux_all(cfg: &Configuration, beta: f64) -> Result<Vec<f64>> {
    let e = Exponent::new(beta)?;
    let alive: Vec<bool> = cfg.masses().iter().map(|&m| m > 0.0).collect();
    let mut out = vec![0.0; cfg.window_size()];
    if let Some((left, right)) = neighbor_table(&alive) {
        sigma_rhs(e, cfg.masses(), &alive, &left, &right, &mut out);
    }
    Ok(out)
}

/// Right-hand side of the coarsening equation for a fixed alive mask.
#[inline]
pub(crate) fn sigma_rhs(
    e: Exponent,
    x: &[f64],
    alive: &[bool],
    left: &[usize],
    right: &[usize],
    out: &mut [f64],
) {
    for k in 0..x.len() {
        out[k] = if alive[k] {
            lap3(e.flux(x[left[k]]), e.flux(x[k]), e.flux(x[right[k]]))
        } else {
            0.0
        };
    }
}

/// Ordinary three-point Laplacian of `G_beta(u)` on the periodic window.
#[inline]
pub(crate) fn laplacian_gflux(e: Exponent, u: &[f64], g: &mut [f64], out: &mut [f64]) {
    let m = u.len();
    for k in 0..m {
        g[k] = e.gflux(u[k].max(0.0));
    }
    if m == 1 {
        out[0] = 0.0;
        return;
    }
    out[0] = lap3(g[m - 1], g[0], g[1 % m]);
    for k in 1..m - 1 {
        out[k] = lap3(g[k - 1], g[k], g[k + 1]);
    }
    out[m - 1] = lap3(g[m - 2], g[m - 1], g[0]);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(v: &[f64]) -> Configuration {
        Configuration::new(v.to_vec()).unwrap()
    }

    #[test]
    fn flux_examples() {
        assert_eq!(flux(1.0, 2.0).unwrap(), -2.0);
        assert_eq!(flux(-1.0, 0.0).unwrap(), 0.0);
        assert_eq!(flux(0.5, 4.0).unwrap(), -2.0);
        assert_eq!(flux(0.5, 0.0).unwrap(), 0.0);
        assert!(flux(0.0, 1.0).is_err());
        assert!(flux(1.0, -1.0).is_err());
    }

    #[test]
    fn gflux_examples() {
        assert_eq!(gflux(1.0, 3.0).unwrap(), 3.0);
        assert_eq!(gflux(0.5, 9.0).unwrap(), 3.0);
        // G = -F and F_{-1}(x) = 1/x, so G_{-1}(2) = -1/2.
        assert_eq!(gflux(-1.0, 2.0).unwrap(), -0.5);
        assert!(gflux(-1.0, 0.0).is_err());
        assert_eq!(gflux(0.5, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn neighbours_examples() {
        let n = living_neighbors(&cfg(&[1.0, 0.0, 2.0]), 0).unwrap();
        assert_eq!((n.left, n.right), (2, 2));
        let n = living_neighbors(&cfg(&[1.0, 1.0, 1.0]), 1).unwrap();
        assert_eq!((n.left, n.right), (0, 2));
        let n = living_neighbors(&cfg(&[0.0, 5.0, 0.0, 7.0]), 1).unwrap();
        assert_eq!((n.left, n.right), (3, 3));
        assert_eq!(
            living_neighbors(&cfg(&[0.0, 0.0]), 0),
            Err(Error::NoAliveSite)
        );
    }

    #[test]
    fn neighbour_table_matches_scan() {
        let c = cfg(&[0.0, 3.0, 0.0, 0.0, 1.0, 2.0, 0.0]);
        let alive: Vec<bool> = c.masses().iter().map(|&m| m > 0.0).collect();
        let (l, r) = neighbor_table(&alive).unwrap();
        for k in 0..c.len() {
            let n = living_neighbors(&c, k).unwrap();
            assert_eq!((l[k], r[k]), (n.left, n.right), "site {k}");
        }
    }

    #[test]
    fn sigma_laplacian_examples() {
        let c = Configuration::constant(1.7, 9).unwrap();
        for beta in [-2.0, -1.0, 0.5, 1.0] {
            for k in 0..9 {
                assert_eq!(sigma_laplacian_flux(&c, beta, k).unwrap(), 0.0);
            }
        }
        let c = Configuration::periodic_pattern(&[2.0, 1.0], 8).unwrap();
        assert_eq!(sigma_laplacian_flux(&c, -1.0, 1).unwrap(), -1.0);
        assert_eq!(sigma_laplacian_flux(&c, -1.0, 0).unwrap(), 1.0);
        let c = cfg(&[0.0, 2.0, 1.0]);
        assert_eq!(sigma_laplacian_flux(&c, 0.5, 0).unwrap(), 0.0);
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(0.0, 0.1).is_err());
        assert!(ModelParams::new(1.5, 0.1).is_err());
        assert!(ModelParams::new(0.5, 0.2).is_err());
        assert!(ModelParams::new(0.5, 0.0).is_err());
        let p = ModelParams::new(-1.0, 1.0 / 6.0).unwrap();
        assert!((1.0 / p.theta() - (0.5 + 1.0 / 6.0)).abs() < 1e-15);
        assert!(p.theta() > 1.0);
    }

    #[test]
    fn configuration_json_roundtrip() {
        let c = cfg(&[0.5, 0.0, 1.25]);
        let s = c.to_json();
        assert!(s.contains("\"window_size\":3"));
        assert_eq!(Configuration::from_json(&s).unwrap(), c);
        assert!(Configuration::from_json(r#"{"window_size":2,"masses":[1.0]}"#).is_err());
        assert!(Configuration::new(vec![1.0, -0.1]).is_err());
    }
}
