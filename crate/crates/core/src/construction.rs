//! Back-in-time construction of coarsening solutions.
//!
//! Every stage takes the current backward state, rescales it into `[1/2, 1]`,
//! inserts empty sites, and runs the backward equation for a common
//! normalized time `T`, after which the state is within `epsilon` of 1/2.
//! Reversing time and gluing the stages through the creation operators gives
//! a forward solution whose particles vanish exactly at the stage boundaries.

use serde::{Deserialize, Serialize};

use crate::analysis::{fit_rate, living_mean_series, FitMode, RateFit};
use crate::backward::{integrate_backward, integrate_backward_until};
use crate::error::{Error, Result};
use crate::insertion::{average_modifying_insertion, push_forward, InsertionPlan, JumpSequence};
use crate::integrator::{IntegratorPolicy, IntegratorStats};
use crate::lattice::{Configuration, ModelParams};
use crate::trajectory::{Event, EventKind, Trajectory};

/// Floor applied to inserted empty sites before a backward run.
pub const CONSTRUCTION_DELTA: f64 = 1e-12;

/// Creation times (backward clock) and vanishing times (forward clock).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionSchedule {
    /// Number of stages.
    pub n: usize,
    /// Terminal data is the constant `theta^terminal_power`. Equals `n` for
    /// approximants and `n - 1` when an extra flattening stage is appended.
    pub terminal_power: usize,
    pub beta: f64,
    pub theta: f64,
    /// Normalized stage length `T`.
    pub t_equilibrate: f64,
    /// `tau[0] = 0`, `tau[j] = tau[j-1] + T * scale(j)^(1 - beta)`.
    pub tau: Vec<f64>,
    /// `t_events[j] = tau[n] - tau[n - j]`.
    pub t_events: Vec<f64>,
}

impl ConstructionSchedule {
    pub fn new(params: &ModelParams, n: usize, terminal_power: usize, t_equilibrate: f64) -> Self {
        let theta = params.theta();
        let beta = params.beta;
        let mut tau = vec![0.0; n + 1];
        for j in 1..=n {
            tau[j] = tau[j - 1] + t_equilibrate * time_factor(theta, beta, terminal_power, j);
        }
        let t_events = (0..=n).map(|j| tau[n] - tau[n - j]).collect();
        Self {
            n,
            terminal_power,
            beta,
            theta,
            t_equilibrate,
            tau,
            t_events,
        }
    }

    /// `T_n`, after which the solution is stationary.
    pub fn t_final(&self) -> f64 {
        self.tau[self.n]
    }

    /// Mass scale `theta^(p + 1 - j)` of the data entering stage `j`.
    pub fn stage_scale(&self, j: usize) -> f64 {
        stage_scale(self.theta, self.terminal_power, j)
    }

    /// Physical time per unit of normalized time in stage `j`.
    pub fn time_factor(&self, j: usize) -> f64 {
        time_factor(self.theta, self.beta, self.terminal_power, j)
    }

    pub fn terminal_value(&self) -> f64 {
        self.theta.powi(self.terminal_power as i32)
    }

    /// Offset `t*` with `t_j + t* = t* q^j`, `q = theta^(1 - beta)`: the
    /// vanishing times are geometric about the virtual origin `-t*`.
    /// `None` for `beta = 1`, where they are arithmetic.
    pub fn virtual_origin(&self) -> Option<f64> {
        if self.beta == 1.0 {
            return None;
        }
        let q = self.theta.powf(1.0 - self.beta);
        let lead = self.n as i32 - self.terminal_power as i32;
        Some(self.t_equilibrate * q.powi(1 - lead) / (q - 1.0))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serializes")
    }
}

fn stage_scale(theta: f64, p: usize, j: usize) -> f64 {
    theta.powi(p as i32 + 1 - j as i32)
}

fn time_factor(theta: f64, beta: f64, p: usize, j: usize) -> f64 {
    let e = (1.0 - beta) * (p as f64 + 1.0 - j as f64);
    if e == 0.0 {
        1.0
    } else {
        theta.powf(e)
    }
}

/// Schedule for `n` stages from the terminal constant `theta^n`, with the
/// stage length taken from `params.t_equilibrate`.
pub fn vanishing_schedule(params: &ModelParams, n: usize) -> ConstructionSchedule {
    ConstructionSchedule::new(params, n, n, params.t_equilibrate)
}

/// Knobs for equilibration and approximant runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionOptions {
    /// Window size of the terminal data.
    pub window: usize,
    pub delta: f64,
    /// Normalized time after which equilibration counts as failed.
    pub t_max: f64,
    /// Random probes (besides the constant 1) used to calibrate `T`.
    pub probes: usize,
    pub seed: u64,
    /// Factor applied to the largest observed equilibration time.
    pub safety: f64,
    pub max_restarts: usize,
    /// Snapshots recorded per stage.
    pub snapshots_per_stage: usize,
    /// Extra stationary snapshots after `T_n`, spaced by `t_1`.
    pub tail_snapshots: usize,
    pub policy: IntegratorPolicy,
}

impl Default for ConstructionOptions {
    fn default() -> Self {
        Self {
            window: 512,
            delta: CONSTRUCTION_DELTA,
            t_max: 1e5,
            probes: 4,
            seed: 0,
            safety: 1.25,
            max_restarts: 6,
            snapshots_per_stage: 64,
            tail_snapshots: 2,
            policy: IntegratorPolicy::default()
                .with_max_steps(20_000_000)
                .with_record_interval(1.0),
        }
    }
}

/// Outcome of one equilibration.
#[derive(Debug, Clone)]
pub struct Equilibration {
    /// First time with `sup |u - 1/2| <= epsilon`.
    pub t_used: f64,
    pub state: Configuration,
    pub jumps: JumpSequence,
    pub plan: InsertionPlan,
    /// `Psi_* u0` before any regularization.
    pub inserted: Configuration,
    /// Backward run from the inserted data up to `t_used`.
    pub trajectory: Trajectory,
}

pub fn sup_deviation(u: &[f64], c: f64) -> f64 {
    u.iter().fold(0.0f64, |a, &v| a.max((v - c).abs()))
}

/// Inserts particles into `u0` and runs the backward equation until the state
/// is within `epsilon` of 1/2 everywhere.
pub fn equilibrate(u0: &Configuration, params: &ModelParams) -> Result<(f64, Configuration, JumpSequence)> {
    let eq = equilibrate_with(u0, params, &ConstructionOptions::default())?;
    Ok((eq.t_used, eq.state, eq.jumps))
}

pub fn equilibrate_with(
    u0: &Configuration,
    params: &ModelParams,
    opts: &ConstructionOptions,
) -> Result<Equilibration> {
    params.validate()?;
    let eps = params.epsilon;
    let (jumps, plan, _) = average_modifying_insertion(u0, eps)?;
    let inserted = push_forward(&jumps, u0)?;
    let mut stop = |y: &[f64]| sup_deviation(y, 0.5) <= eps;
    let (trajectory, hit) =
        integrate_backward_until(&inserted, params, opts.t_max, opts.delta, &opts.policy, &mut stop)?;
    let Some(t_used) = hit else {
        return Err(Error::EquilibrationTimeout {
            t_max: opts.t_max,
            deviation: sup_deviation(trajectory.last().masses(), 0.5),
        });
    };
    Ok(Equilibration {
        t_used,
        state: trajectory.last().clone(),
        jumps,
        plan,
        inserted,
        trajectory,
    })
}

/// Equilibration times of the constant 1 and `opts.probes` seeded random
/// data on `[1/2, 1]`.
pub fn probe_equilibration_times(params: &ModelParams, opts: &ConstructionOptions) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(opts.probes + 1);
    let one = Configuration::constant(1.0, opts.window)?;
    out.push(equilibrate_with(&one, params, opts)?.t_used);
    for i in 0..opts.probes {
        let u0 = Configuration::random_uniform(0.5, 1.0, opts.window, opts.seed.wrapping_add(i as u64))?;
        out.push(equilibrate_with(&u0, params, opts)?.t_used);
    }
    Ok(out)
}

/// Per-stage diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub window: usize,
    pub inserted: usize,
    pub t_used: f64,
    /// `sup |v(T) - 1/2|` in normalized units at the end of the stage.
    pub deviation: f64,
}

/// A glued forward-clock approximant.
#[derive(Debug, Clone)]
pub struct ApproximantSolution {
    pub trajectory: Trajectory,
    pub schedule: ConstructionSchedule,
    /// `creation_ops[j - 1]` is applied when stage `j` starts.
    pub creation_ops: Vec<JumpSequence>,
    /// `stage_snapshots[j]` is the backward state at `tau[j]` (physical
    /// units, stage-`j` window); index 0 is the terminal data.
    pub stage_snapshots: Vec<Configuration>,
    /// `index_maps[j][i]` is the final-window site of stage-`j` site `i`.
    pub index_maps: Vec<Vec<usize>>,
    pub stages: Vec<StageReport>,
    /// Calibration restarts needed because a stage outran `T`.
    pub restarts: usize,
}

impl ApproximantSolution {
    /// Forward-clock time of the `j`-th vanishing.
    pub fn vanishing_time(&self, j: usize) -> f64 {
        self.schedule.t_events[j]
    }

    pub fn initial_data(&self) -> &Configuration {
        self.trajectory.first()
    }
}

pub fn build_approximant(params: &ModelParams, n: usize) -> Result<ApproximantSolution> {
    build_approximant_with(params, n, &ConstructionOptions::default())
}

/// `x^(n)` with `T` calibrated from probe equilibrations.
pub fn build_approximant_with(
    params: &ModelParams,
    n: usize,
    opts: &ConstructionOptions,
) -> Result<ApproximantSolution> {
    build_calibrated(params, n, n, opts)
}

/// Initial data of `x^(n)` after one extra flattening stage, within `epsilon`
/// of 1/2.
pub fn instability_datum(params: &ModelParams, n: usize) -> Result<Configuration> {
    Ok(instability_approximant(params, n, &ConstructionOptions::default())?
        .initial_data()
        .clone())
}

/// `x^(n)` preceded by an extra stage of length `T`: `n + 1` stages from the
/// terminal constant `theta^n`. Its vanishing times are `T + t_j`.
pub fn instability_approximant(
    params: &ModelParams,
    n: usize,
    opts: &ConstructionOptions,
) -> Result<ApproximantSolution> {
    build_calibrated(params, n + 1, n, opts)
}

fn build_calibrated(
    params: &ModelParams,
    stages: usize,
    terminal_power: usize,
    opts: &ConstructionOptions,
) -> Result<ApproximantSolution> {
    params.validate()?;
    if !(opts.safety >= 1.0) {
        return Err(Error::InvalidParameter(format!("safety = {} must be >= 1", opts.safety)));
    }
    if stages == 0 {
        let schedule = ConstructionSchedule::new(params, 0, terminal_power, params.t_equilibrate);
        return build_with_schedule(params, schedule, opts, 0);
    }
    let probes = probe_equilibration_times(params, opts)?;
    let mut t_eq = opts.safety * probes.iter().copied().fold(0.0, f64::max);
    if t_eq == 0.0 {
        t_eq = params.t_equilibrate;
    }
    let mut restarts = 0;
    loop {
        let schedule = ConstructionSchedule::new(params, stages, terminal_power, t_eq);
        match build_with_schedule(params, schedule, opts, restarts) {
            Err(Error::EquilibrationTimeout { t_max, deviation }) if t_max < opts.t_max => {
                if restarts >= opts.max_restarts {
                    return Err(Error::EquilibrationTimeout { t_max, deviation });
                }
                // A stage needed longer than T: `deviation` carries its time.
                t_eq = opts.safety * deviation.max(t_eq);
                restarts += 1;
            }
            other => return other,
        }
    }
}

/// Runs the stages for a fixed schedule. A stage that does not equilibrate
/// within `T` is reported as a timeout whose `t_max` is `T` and whose
/// `deviation` field holds the time it actually needed.
fn build_with_schedule(
    params: &ModelParams,
    schedule: ConstructionSchedule,
    opts: &ConstructionOptions,
    restarts: usize,
) -> Result<ApproximantSolution> {
    let n = schedule.n;
    let t_eq = schedule.t_equilibrate;
    let eps = params.epsilon;
    let terminal = Configuration::constant(schedule.terminal_value(), opts.window)?;

    let mut stage_snapshots = vec![terminal];
    let mut creation_ops = Vec::with_capacity(n);
    // Normalized stage trajectories, starting with the exact inserted data.
    let mut stage_trajs: Vec<Trajectory> = Vec::with_capacity(n);
    let mut stages = Vec::with_capacity(n);
    let mut stats = IntegratorStats::default();
    let mut policy = opts.policy;
    policy.record_interval = t_eq / opts.snapshots_per_stage.max(1) as f64;
    policy.record_growth = 1.2;

    for j in 1..=n {
        let scale = schedule.stage_scale(j);
        let prev = stage_snapshots.last().expect("terminal data present");
        let v0 = prev.scaled(1.0 / scale);
        let mut run_opts = opts.clone();
        run_opts.t_max = opts.t_max;
        run_opts.policy = policy;
        let eq = equilibrate_with(&v0, params, &run_opts)?;
        if eq.t_used > t_eq {
            return Err(Error::EquilibrationTimeout {
                t_max: t_eq,
                deviation: eq.t_used,
            });
        }
        let mut traj = eq.trajectory;
        stats.merge(&traj.stats);
        if t_eq - eq.t_used > 1e-12 * t_eq {
            let rest = integrate_backward(&eq.state, params, t_eq - eq.t_used, 0.0, &policy)?;
            stats.merge(&rest.stats);
            for (t, s) in rest.times.into_iter().zip(rest.snapshots).skip(1) {
                traj.push(eq.t_used + t, s);
            }
        }
        // Exact pushed-forward data, not the floored copy the solver started from.
        traj.snapshots[0] = eq.inserted.clone();
        let end = traj.last();
        let deviation = sup_deviation(end.masses(), 0.5);
        if deviation > eps * (1.0 + 1e-9) {
            return Err(Error::Precondition(format!(
                "stage {j} left the epsilon band after equilibrating: {deviation}"
            )));
        }
        stages.push(StageReport {
            stage: j,
            window: end.window_size(),
            inserted: eq.jumps.total(),
            t_used: eq.t_used,
            deviation,
        });
        stage_snapshots.push(end.scaled(scale));
        creation_ops.push(eq.jumps);
        stage_trajs.push(traj);
    }

    // index_maps[j]: stage-j window -> final window.
    let final_window = stage_snapshots[n].window_size();
    let mut index_maps = vec![Vec::new(); n + 1];
    index_maps[n] = (0..final_window).collect();
    for j in (1..=n).rev() {
        let psi = creation_ops[j - 1].index_map();
        index_maps[j - 1] = psi.iter().map(|&p| index_maps[j][p]).collect();
    }

    let embed = |j: usize, values: &[f64], factor: f64| {
        let mut out = vec![0.0; final_window];
        for (&site, &v) in index_maps[j].iter().zip(values) {
            out[site] = factor * v;
        }
        Configuration::from_vec_unchecked(out)
    };

    let t_final = schedule.t_final();
    let mut trajectory = Trajectory::new();
    let mut events = Vec::new();
    for j in (1..=n).rev() {
        let traj = &stage_trajs[j - 1];
        let scale = schedule.stage_scale(j);
        let mu = schedule.time_factor(j);
        let t_start = schedule.t_events[n - j];
        let t_end = schedule.t_events[n + 1 - j];
        let last = traj.len() - 1;
        // Stage end (sigma = T) coincides with the start of the next stage in
        // forward time, which was already pushed.
        for i in (0..=last).rev() {
            if i == last && j < n {
                continue;
            }
            let t = if i == last {
                t_start
            } else if i == 0 {
                t_end
            } else {
                t_final - (schedule.tau[j - 1] + mu * traj.times[i])
            };
            let snap = if i == 0 {
                // Psi_j applied to the exact stage input.
                embed(j - 1, stage_snapshots[j - 1].masses(), 1.0).into_masses()
            } else {
                embed(j, traj.snapshots[i].masses(), scale).into_masses()
            };
            // Interior samples that round onto a stitch time are dropped.
            let after_prev = trajectory.times.last().map_or(true, |&p| t > p);
            if !after_prev || (i != 0 && t >= t_end) {
                continue;
            }
            trajectory.push(t, Configuration::from_vec_unchecked(snap));
        }
        let image: std::collections::HashSet<usize> =
            creation_ops[j - 1].index_map().into_iter().collect();
        for i in (0..traj.first().window_size()).filter(|i| !image.contains(i)) {
            events.push(Event {
                time: t_end,
                site: index_maps[j][i],
                kind: EventKind::Vanish,
            });
        }
    }
    let terminal = embed(0, stage_snapshots[0].masses(), 1.0);
    if n == 0 {
        trajectory.push(0.0, terminal.clone());
    }
    let spacing = if n == 0 { t_eq } else { schedule.t_events[1] };
    for k in 1..=opts.tail_snapshots {
        trajectory.push(t_final + spacing * k as f64, terminal.clone());
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.site.cmp(&b.site)));
    trajectory.stats = stats;
    trajectory.stats.events = events.len();
    trajectory.events = events;

    Ok(ApproximantSolution {
        trajectory,
        schedule,
        creation_ops,
        stage_snapshots,
        index_maps,
        stages,
        restarts,
    })
}

/// Coarsening-rate fits of the living mean sampled at the vanishing times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproximantRates {
    /// Power law in `t + t*` (`beta < 1`) or exponential in `t` (`beta = 1`).
    pub fit: RateFit,
    /// Power law in the raw `t_j`, `j >= 1` (`beta < 1`, at least 5 samples).
    pub raw: Option<RateFit>,
    pub virtual_origin: Option<f64>,
}

pub fn approximant_rates(sol: &ApproximantSolution) -> Result<ApproximantRates> {
    let s = &sol.schedule;
    let times = &s.t_events;
    let means = living_mean_series(&sol.trajectory, times)?;
    let origin = s.virtual_origin();
    let fit = match origin {
        None => fit_rate(times, &means, FitMode::Exponential)?,
        Some(t0) => {
            let shifted: Vec<f64> = times.iter().map(|t| t + t0).collect();
            fit_rate(&shifted, &means, FitMode::Power)?
        }
    };
    let raw = match origin {
        Some(_) if times.len() > 5 => Some(fit_rate(&times[1..], &means[1..], FitMode::Power)?),
        _ => None,
    };
    Ok(ApproximantRates {
        fit,
        raw,
        virtual_origin: origin,
    })
}

/// Checks the structural properties of an approximant within `rel` relative
/// slack: stationary value after `T_n`, the sup bound `theta^(p-n+j)` between
/// consecutive vanishings, and the lower bound half of it at each vanishing.
/// Returns the first violation.
pub fn check_approximant(sol: &ApproximantSolution, rel: f64) -> std::result::Result<(), String> {
    let s = &sol.schedule;
    let traj = &sol.trajectory;
    let n = s.n;
    let base = s.terminal_power as i32 - n as i32;
    let t_final = s.t_final();
    let stat = s.terminal_value();
    for (t, x) in traj.times.iter().zip(&traj.snapshots) {
        if *t >= t_final {
            for &v in x.masses().iter().filter(|&&v| v > 0.0) {
                if (v - stat).abs() > rel * stat {
                    return Err(format!("t = {t}: alive mass {v} != stationary {stat}"));
                }
            }
        }
    }
    for j in 1..=n {
        let (a, b) = (s.t_events[j - 1], s.t_events[j]);
        let bound = s.theta.powi(base + j as i32);
        for (t, x) in traj.times.iter().zip(&traj.snapshots) {
            if *t >= a && *t <= b && x.max_mass() > bound * (1.0 + rel) {
                return Err(format!("t = {t} in [t_{}, t_{j}]: max {} > {bound}", j - 1, x.max_mass()));
            }
        }
        let x = traj
            .snapshot_at(b)
            .ok_or_else(|| format!("no snapshot at t_{j}"))?;
        let floor = 0.5 * bound;
        let min_alive = x.masses().iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
        if min_alive < floor * (1.0 - rel) {
            return Err(format!("t_{j} = {b}: alive min {min_alive} < {floor}"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_opts() -> ConstructionOptions {
        ConstructionOptions {
            window: 96,
            probes: 2,
            ..Default::default()
        }
    }

    #[test]
    fn schedule_examples() {
        let p = ModelParams::new(1.0, 1.0 / 6.0).unwrap().with_t_equilibrate(2.0);
        let s = vanishing_schedule(&p, 3);
        assert_eq!(s.t_events, vec![0.0, 2.0, 4.0, 6.0]);
        assert_eq!(s.tau, vec![0.0, 2.0, 4.0, 6.0]);

        // theta = 2 needs epsilon = 0, outside the admissible range; check the
        // geometric sum with the general formula instead.
        let p = ModelParams::new(0.5, 1.0 / 6.0).unwrap();
        let s = vanishing_schedule(&p, 4);
        let q = p.theta().sqrt();
        for j in 0..=4 {
            let want: f64 = (1..=j).map(|m| q.powi(m as i32)).sum();
            assert!((s.t_events[j] - want).abs() <= 1e-12 * want.max(1.0), "{j}");
        }
        assert!(s.t_events.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(vanishing_schedule(&p, 0).t_events, vec![0.0]);
    }

    #[test]
    fn equilibrate_trivial_and_constant_one() {
        let p = ModelParams::new(1.0, 1.0 / 6.0).unwrap();
        let half = Configuration::constant(0.5, 64).unwrap();
        let (t, u, d) = equilibrate(&half, &p).unwrap();
        assert_eq!(t, 0.0);
        assert!(d.is_identity());
        assert_eq!(u, half);

        let one = Configuration::constant(1.0, 96).unwrap();
        let (t, u, d) = equilibrate(&one, &p).unwrap();
        assert!(t > 0.0 && t.is_finite());
        assert_eq!(u.window_size(), d.image_size());
        assert!(sup_deviation(u.masses(), 0.5) <= p.epsilon * (1.0 + 1e-12));
        assert!((u.total_mass() - 96.0).abs() <= 1e-9 * 96.0);
    }

    #[test]
    fn equilibrate_timeout() {
        let p = ModelParams::new(1.0, 1.0 / 6.0).unwrap();
        let one = Configuration::constant(1.0, 96).unwrap();
        let opts = ConstructionOptions {
            t_max: 1e-3,
            ..Default::default()
        };
        assert!(matches!(
            equilibrate_with(&one, &p, &opts),
            Err(Error::EquilibrationTimeout { .. })
        ));
    }

    #[test]
    fn approximant_n0_is_stationary() {
        let p = ModelParams::new(0.5, 1.0 / 6.0).unwrap();
        let sol = build_approximant_with(&p, 0, &small_opts()).unwrap();
        assert!(sol.trajectory.events.is_empty());
        assert!(sol.trajectory.snapshots.iter().all(|x| x.masses().iter().all(|&v| v == 1.0)));
        assert_eq!(sol.trajectory.t_start(), 0.0);
    }

    #[test]
    fn approximant_n1_properties() {
        let p = ModelParams::new(0.5, 1.0 / 6.0).unwrap();
        let sol = build_approximant_with(&p, 1, &small_opts()).unwrap();
        let s = &sol.schedule;
        assert!((s.t_final() - s.t_equilibrate * p.theta().sqrt()).abs() < 1e-12 * s.t_final());
        check_approximant(&sol, 1e-6).unwrap();
        sol.trajectory.check_invariants().unwrap();
        let theta = p.theta();
        let after = sol.trajectory.snapshot_at(s.t_final()).unwrap();
        assert!(after.masses().iter().filter(|&&v| v > 0.0).all(|&v| v == theta));
        // Total mass is conserved along the glued trajectory.
        let m0 = sol.trajectory.first().total_mass();
        for x in &sol.trajectory.snapshots {
            assert!((x.total_mass() - m0).abs() <= 1e-9 * m0);
        }
    }

    #[test]
    fn gluing_is_continuous_and_events_are_scheduled() {
        let p = ModelParams::new(-1.0, 1.0 / 6.0).unwrap();
        let sol = build_approximant_with(&p, 2, &small_opts()).unwrap();
        check_approximant(&sol, 1e-6).unwrap();
        sol.trajectory.check_invariants().unwrap();
        let s = &sol.schedule;
        for ev in &sol.trajectory.events {
            assert!(s.t_events[1..].contains(&ev.time));
        }
        // Stage j ends where the next one starts (backward clock).
        for j in 1..s.n {
            let pushed = push_forward(&sol.creation_ops[j], &sol.stage_snapshots[j]).unwrap();
            let t = s.t_events[s.n - j];
            let x = sol.trajectory.snapshot_at(t).unwrap();
            for (i, &site) in sol.index_maps[j + 1].iter().enumerate() {
                assert_eq!(x.get(site), pushed.get(i));
            }
        }
    }

    #[test]
    fn glued_trajectory_is_a_mild_solution() {
        let p = ModelParams::new(0.5, 1.0 / 6.0).unwrap();
        let sol = build_approximant_with(&p, 2, &small_opts()).unwrap();
        let s = &sol.schedule;
        let traj = &sol.trajectory;
        // Limited by the Hermite quadrature between recorded snapshots.
        for j in 1..=2 {
            let tol = 1e-3 * s.theta.powi(j as i32);
            for k in 0..traj.window_size() {
                let r = crate::forward::mild_residual(traj, &p, k, s.t_events[j - 1], s.t_events[j]).unwrap();
                assert!(r <= tol, "site {k}, stage interval {j}: {r}");
            }
        }
        let r = crate::forward::mild_residual(traj, &p, 0, s.t_final(), traj.t_end()).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn rates_from_virtual_origin() {
        let p = ModelParams::new(0.5, 1.0 / 6.0).unwrap().with_t_equilibrate(3.0);
        let s = vanishing_schedule(&p, 5);
        let t0 = s.virtual_origin().unwrap();
        let q = p.theta().sqrt();
        for j in 0..=5 {
            let want = t0 * q.powi(j as i32);
            assert!((s.t_events[j] + t0 - want).abs() <= 1e-12 * want);
        }
        let p1 = ModelParams::new(1.0, 1.0 / 6.0).unwrap();
        assert_eq!(vanishing_schedule(&p1, 3).virtual_origin(), None);
    }

    #[test]
    fn instability_datum_is_flat() {
        let p = ModelParams::new(1.0, 1.0 / 6.0).unwrap();
        let sol = instability_approximant(&p, 0, &small_opts()).unwrap();
        let x0 = sol.initial_data();
        let dev = sup_deviation(x0.masses(), 0.5);
        assert!(dev <= p.epsilon * (1.0 + 1e-9), "{dev}");
        check_approximant(&sol, 1e-6).unwrap();
    }
}
