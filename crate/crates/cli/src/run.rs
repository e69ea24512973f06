//! Pipelines behind each command and the run directory layout.

use std::path::{Path, PathBuf};
use std::time::Instant;

use coarselat_core::analysis::{living_mean_window, EstimateFit};
use coarselat_core::backward::{kernel_csv, max_heavy_gap};
use coarselat_core::construction::{
    approximant_rates, build_approximant_with, check_approximant, instability_approximant,
    ApproximantSolution,
};
use coarselat_core::trajectory::fmt_f64;
use coarselat_core::{
    fit_rate, heat_kernel, holder_fit, integrate_backward, integrate_forward, kernel_estimates,
    positivity_fit, stationarity_time, Configuration, Error, FitMode, IntegratorPolicy, IntegratorStats,
    KernelProfile, ModelParams, PositivityClass, RateFit, Trajectory,
};
use serde::{Deserialize, Serialize};

use crate::config::{Command, RunConfig};
use crate::RunError;

/// Bumped whenever a CSV column layout changes.
pub const CSV_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Relative slack for mass conservation checks.
const MASS_TOL: f64 = 1e-9;
/// Relative slack for the structural checks on constructed approximants.
const APPROXIMANT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub version: u32,
    pub trajectory: String,
    pub events: String,
    pub kernel: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            version: CSV_SCHEMA_VERSION,
            trajectory: "time,site,mass,alive".into(),
            events: "time,site,kind".into(),
            kernel: "t,k,psi,U_xi,xi".into(),
        }
    }
}

/// One fitted quantity; unused fields are null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub kind: String,
    pub exponent: Option<f64>,
    /// Prefactor or constant.
    pub c: Option<f64>,
    pub residual: Option<f64>,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl FitRecord {
    fn rate(kind: &str, f: &RateFit) -> Self {
        Self {
            kind: kind.into(),
            exponent: Some(f.exponent),
            c: Some(f.prefactor),
            residual: Some(f.residual),
            samples: f.samples,
            note: Some(format!("{:?}", f.mode).to_lowercase()),
        }
    }

    fn estimate(kind: &str, f: &EstimateFit) -> Self {
        Self {
            kind: kind.into(),
            exponent: f.alpha,
            c: Some(f.c),
            residual: None,
            samples: f.samples,
            note: None,
        }
    }

    fn value(kind: &str, v: Option<f64>, samples: usize) -> Self {
        Self {
            kind: kind.into(),
            exponent: None,
            c: v,
            residual: None,
            samples,
            note: None,
        }
    }

    fn skipped(kind: &str, why: String) -> Self {
        Self {
            kind: kind.into(),
            exponent: None,
            c: None,
            residual: None,
            samples: 0,
            note: Some(why),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub config: RunConfig,
    pub csv_schema: CsvSchema,
    pub artifacts: Vec<Artifact>,
    pub fits: Vec<FitRecord>,
    pub checks: Vec<Check>,
    pub stats: IntegratorStats,
    pub wall_clock_seconds: f64,
    pub passed: bool,
}

impl RunManifest {
    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Collects the files of one run directory.
struct Output {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl Output {
    fn create(dir: &Path) -> Result<Self, RunError> {
        std::fs::create_dir_all(dir)?;
        // A stale manifest would mark a partial rerun as complete.
        let stale = dir.join(MANIFEST_FILE);
        if stale.exists() {
            std::fs::remove_file(stale)?;
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), RunError> {
        std::fs::write(self.dir.join(name), contents)?;
        self.artifacts.push(Artifact {
            file: name.into(),
            bytes: contents.len() as u64,
        });
        Ok(())
    }

    fn write_trajectory(&mut self, traj: &Trajectory) -> Result<(), RunError> {
        self.write("trajectory.csv", &traj.to_csv())?;
        self.write("events.csv", &traj.events_csv())
    }
}

/// What a pipeline hands back before the manifest is assembled.
#[derive(Default)]
struct Outcome {
    fits: Vec<FitRecord>,
    checks: Vec<Check>,
    stats: IntegratorStats,
}

impl Outcome {
    fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }
}

/// Runs one non-sweep command into `dir`. Invariant failures are reported in
/// the manifest, not as an error.
pub fn run(config: &RunConfig, dir: &Path) -> Result<RunManifest, RunError> {
    config.validate()?;
    let start = Instant::now();
    let params = config.params.model()?;
    let mut out = Output::create(dir)?;
    let outcome = match config.command {
        Command::Forward => forward(config, &params, &mut out)?,
        Command::Backward => backward(config, &params, &mut out)?,
        Command::Construct => construct(config, &params, &mut out)?,
        Command::Kernel => kernel(config, &params, &mut out)?,
        Command::Analyze => analyze(config, &params, &mut out)?,
        Command::Sweep => return Err(RunError::Config("nested sweep".into())),
    };
    out.write("fits.json", &serde_json::to_string_pretty(&outcome.fits).expect("fits serialize"))?;
    let manifest = RunManifest {
        command: config.command,
        config: config.clone(),
        csv_schema: CsvSchema::default(),
        artifacts: out.artifacts,
        passed: outcome.checks.iter().all(|c| c.passed),
        fits: outcome.fits,
        checks: outcome.checks,
        stats: outcome.stats,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

pub(crate) fn write_manifest<T: Serialize>(dir: &Path, manifest: &T) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

fn policy(config: &RunConfig, params: &ModelParams) -> IntegratorPolicy {
    IntegratorPolicy::for_params(params).with_record_interval(config.record_interval)
}

/// Largest relative deviation of the window mass from the first snapshot.
fn mass_drift(traj: &Trajectory) -> f64 {
    let m0 = traj.first().total_mass();
    traj.snapshots
        .iter()
        .map(|s| (s.total_mass() - m0).abs() / m0.max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

fn check_trajectory(o: &mut Outcome, traj: &Trajectory) {
    match traj.check_invariants() {
        Ok(()) => o.check("trajectory_invariants", true, ""),
        Err(e) => o.check("trajectory_invariants", false, e.to_string()),
    }
}

fn check_mass(o: &mut Outcome, traj: &Trajectory) {
    let drift = mass_drift(traj);
    o.check("mass_conservation", drift <= MASS_TOL, format!("relative drift {drift:e}"));
}

fn forward(config: &RunConfig, params: &ModelParams, out: &mut Output) -> Result<Outcome, RunError> {
    let x0 = config.initial_configuration()?;
    let traj = integrate_forward(&x0, params, config.t_end, &policy(config, params))?;
    out.write_trajectory(&traj)?;

    let mut o = Outcome {
        stats: traj.stats,
        ..Outcome::default()
    };
    check_trajectory(&mut o, &traj);
    check_mass(&mut o, &traj);
    let beta = params.beta;
    if beta > 0.0 {
        // Sup-norm growth bound from dx/dt <= 2 x^beta.
        let m0 = x0.max_mass();
        let worst = traj
            .times
            .iter()
            .zip(&traj.snapshots)
            .map(|(&t, s)| {
                let bound = if beta == 1.0 {
                    (2.0 * t).exp() * m0
                } else {
                    ((1.0 - beta) * 2.0 * t + m0.powf(1.0 - beta)).powf(1.0 / (1.0 - beta))
                };
                s.max_mass() - bound * (1.0 + 1e-6)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        o.check("growth_bound", worst <= 0.0, format!("max excess {worst:e}"));
    }
    let vanished = traj.vanish_events().count();
    o.fits.push(FitRecord::value(
        "stationarity_time",
        stationarity_time(&traj, params.ode_tol),
        traj.len(),
    ));
    o.fits.push(FitRecord::value("vanish_events", Some(vanished as f64), vanished));
    Ok(o)
}

fn backward(config: &RunConfig, params: &ModelParams, out: &mut Output) -> Result<Outcome, RunError> {
    let u0 = config.initial_configuration()?;
    let traj = integrate_backward(&u0, params, config.t_end, config.delta, &policy(config, params))?;
    out.write_trajectory(&traj)?;

    let mut o = Outcome {
        stats: traj.stats,
        ..Outcome::default()
    };
    check_trajectory(&mut o, &traj);
    check_mass(&mut o, &traj);
    let first = traj.first();
    let (lo, hi) = (first.min_mass(), first.max_mass());
    let ok = coarselat_core::backward::comparison_holds(&traj, lo, hi, 1e-9 * hi.max(1.0));
    o.check("comparison", ok, format!("bounds [{lo}, {hi}]"));
    o.fits.push(FitRecord::estimate("holder_time", &holder_fit(&traj, params.beta)?));
    if params.beta > 0.0 && hi > 0.0 {
        let gap = max_heavy_gap(first, hi).expect("the maximum is attained");
        let pc = PositivityClass::new(gap, hi)?;
        let c = positivity_fit(&traj, params, &pc)?;
        o.check("positivity", c > 0.0, format!("P_(L={gap}, d={hi}), c = {c}"));
        o.fits.push(FitRecord {
            note: Some(format!("L = {gap}, d = {hi}")),
            ..FitRecord::value("positivity", Some(c), traj.len())
        });
    }
    Ok(o)
}

fn construct(config: &RunConfig, params: &ModelParams, out: &mut Output) -> Result<Outcome, RunError> {
    let opts = config.construction_options();
    let sol = if config.instability {
        instability_approximant(params, config.n, &opts)?
    } else {
        build_approximant_with(params, config.n, &opts)?
    };
    out.write_trajectory(&sol.trajectory)?;
    out.write("schedule.json", &schedule_json(&sol))?;

    let mut o = Outcome {
        stats: sol.trajectory.stats,
        ..Outcome::default()
    };
    check_trajectory(&mut o, &sol.trajectory);
    match check_approximant(&sol, APPROXIMANT_TOL) {
        Ok(()) => o.check("approximant_structure", true, ""),
        Err(e) => o.check("approximant_structure", false, e),
    }
    let t_final = sol.schedule.t_final();
    let stat = stationarity_time(&sol.trajectory, params.ode_tol);
    o.check(
        "stationary_after_final_vanishing",
        stat.is_some_and(|t| t <= t_final),
        format!("stationary from {stat:?}, last vanishing {t_final}"),
    );
    match approximant_rates(&sol) {
        Ok(r) => {
            o.fits.push(FitRecord {
                note: Some(match r.virtual_origin {
                    Some(t0) => format!("power in t + {t0}"),
                    None => "exponential".into(),
                }),
                ..FitRecord::rate("coarsening_rate", &r.fit)
            });
            if let Some(raw) = &r.raw {
                o.fits.push(FitRecord::rate("coarsening_rate_raw", raw));
            }
        }
        Err(Error::InsufficientData(why)) => o.fits.push(FitRecord::skipped("coarsening_rate", why)),
        Err(e) => return Err(e.into()),
    }
    Ok(o)
}

#[derive(Serialize)]
struct ScheduleRecord<'a> {
    #[serde(flatten)]
    schedule: &'a coarselat_core::ConstructionSchedule,
    creation_ops: &'a [coarselat_core::JumpSequence],
    stages: &'a [coarselat_core::construction::StageReport],
    restarts: usize,
}

fn schedule_json(sol: &ApproximantSolution) -> String {
    let rec = ScheduleRecord {
        schedule: &sol.schedule,
        creation_ops: &sol.creation_ops,
        stages: &sol.stages,
        restarts: sol.restarts,
    };
    serde_json::to_string_pretty(&rec).expect("schedule serializes")
}

fn kernel(config: &RunConfig, params: &ModelParams, out: &mut Output) -> Result<Outcome, RunError> {
    let mut times = config.t_list.clone();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut o = Outcome::default();
    let profiles = if params.beta == 1.0 {
        times
            .iter()
            .map(|&t| KernelProfile::heat(t, coarselat_core::backward::heat_kernel_radius(t)))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        let (profiles, traj) = nonlinear_kernel(config, params, &times)?;
        out.write_trajectory(&traj)?;
        o.stats = traj.stats;
        check_mass(&mut o, &traj);
        profiles
    };
    out.write("kernel.csv", &kernel_csv(&profiles))?;

    // Rows of one time carry the whole initial mass.
    let expected = if params.beta == 1.0 {
        1.0
    } else {
        1.0 + config.delta * (config.window_size - 1) as f64
    };
    let worst = profiles
        .iter()
        .map(|p| (p.mass() - expected).abs())
        .fold(0.0, f64::max);
    o.check("kernel_mass", worst <= 1e-9, format!("max |sum - {expected}| = {worst:e}"));
    if params.beta == 1.0 {
        let worst = profiles
            .iter()
            .flat_map(|p| p.offsets().zip(&p.values).map(move |(k, &v)| (v - heat_kernel(p.t, k)).abs()))
            .fold(0.0, f64::max);
        o.check("closed_form", worst == 0.0, format!("max deviation {worst:e}"));
    }
    match kernel_estimates(&profiles) {
        Ok((aronson, nash)) => {
            o.fits.push(FitRecord::estimate("aronson", &aronson));
            o.fits.push(FitRecord::estimate("nash", &nash));
        }
        Err(Error::InsufficientData(why)) => o.fits.push(FitRecord::skipped("kernel_estimates", why)),
        Err(e) => return Err(e.into()),
    }
    Ok(o)
}

/// Runs from a unit mass at the window centre and reads a profile at every
/// requested time.
fn nonlinear_kernel(
    config: &RunConfig,
    params: &ModelParams,
    times: &[f64],
) -> Result<(Vec<KernelProfile>, Trajectory), RunError> {
    let m = config.window_size;
    let source = m / 2;
    let mut masses = vec![0.0; m];
    masses[source] = 1.0;
    let mut u = Configuration::new(masses)?;
    let pol = policy(config, params);
    let mut glued = Trajectory::new();
    let mut profiles = Vec::with_capacity(times.len());
    let mut t0 = 0.0;
    for &t in times {
        let seg = integrate_backward(&u, params, t - t0, config.delta, &pol)?;
        for (s, snap) in seg.times.iter().zip(&seg.snapshots) {
            let ts = t0 + s;
            if glued.times.last().map_or(true, |&last| ts > last) {
                glued.push(ts, snap.clone());
            }
        }
        glued.events.extend(seg.events.iter().map(|e| coarselat_core::Event {
            time: t0 + e.time,
            ..*e
        }));
        glued.stats.merge(&seg.stats);
        u = seg.last().clone();
        profiles.push(KernelProfile::from_snapshot(&u, source, t, params.beta)?);
        t0 = t;
    }
    Ok((profiles, glued))
}

fn analyze(config: &RunConfig, params: &ModelParams, out: &mut Output) -> Result<Outcome, RunError> {
    let path = config.input.as_ref().expect("validated");
    let text = std::fs::read_to_string(path)?;
    let traj = Trajectory::from_csv(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
    let mut o = Outcome::default();
    check_trajectory(&mut o, &traj);
    check_mass(&mut o, &traj);

    let mut csv = String::from("time,living_mean\n");
    let mut series = (Vec::new(), Vec::new());
    for (&t, s) in traj.times.iter().zip(&traj.snapshots) {
        let Ok(mean) = living_mean_window(s) else { continue };
        csv.push_str(&format!("{},{}\n", fmt_f64(t), fmt_f64(mean)));
        if t > 0.0 {
            series.0.push(t);
            series.1.push(mean);
        }
    }
    out.write("living_mean.csv", &csv)?;

    let mode = if params.beta == 1.0 {
        FitMode::Exponential
    } else {
        FitMode::Power
    };
    match fit_rate(&series.0, &series.1, mode) {
        Ok(f) => o.fits.push(FitRecord::rate("living_mean_rate", &f)),
        Err(e) => o.fits.push(FitRecord::skipped("living_mean_rate", e.to_string())),
    }
    o.fits.push(FitRecord::estimate("holder_time", &holder_fit(&traj, params.beta)?));
    o.fits.push(FitRecord::value(
        "stationarity_time",
        stationarity_time(&traj, params.ode_tol),
        traj.len(),
    ));
    Ok(o)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mass_drift_of_constant_run_is_zero() {
        let mut t = Trajectory::new();
        t.push(0.0, Configuration::constant(1.0, 4).unwrap());
        t.push(1.0, Configuration::constant(1.0, 4).unwrap());
        assert_eq!(mass_drift(&t), 0.0);
        t.push(2.0, Configuration::constant(1.5, 4).unwrap());
        assert!((mass_drift(&t) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn skipped_fit_serializes_nulls() {
        let r = FitRecord::skipped("coarsening_rate", "too few".into());
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert!(v["exponent"].is_null());
        assert_eq!(v["note"], "too few");
    }
}
