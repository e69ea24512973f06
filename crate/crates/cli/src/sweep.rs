//! Independent sub-runs over one config axis, dispatched on a thread pool.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{axis_dir_name, Command, RunConfig};
use crate::run::{run, write_manifest, FitRecord, MANIFEST_FILE};
use crate::{RunError, EXIT_INVARIANT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub value: f64,
    pub dir: String,
    /// 0 on success, otherwise the exit status the sub-run would have had.
    pub exit_code: i32,
    pub error: Option<String>,
    pub fits: Vec<FitRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub axis: String,
    pub command: Command,
    pub entries: Vec<SweepEntry>,
}

impl SweepSummary {
    /// Largest sub-run exit status (0 when every value succeeded).
    pub fn exit_code(&self) -> i32 {
        self.entries.iter().map(|e| e.exit_code).max().unwrap_or(0)
    }
}

#[derive(Serialize)]
struct SweepManifest<'a> {
    command: Command,
    config: &'a RunConfig,
    threads: usize,
    artifacts: Vec<String>,
    wall_clock_seconds: f64,
    passed: bool,
}

/// Runs every axis value into `dir/<axis>=<value>` and writes `summary.json`
/// and a top-level manifest.
pub fn sweep(config: &RunConfig, dir: &Path, threads: usize) -> Result<SweepSummary, RunError> {
    config.validate()?;
    let axis = config.sweep_axis.as_ref().expect("validated");
    let start = Instant::now();
    std::fs::create_dir_all(dir)?;
    let stale = dir.join(MANIFEST_FILE);
    if stale.exists() {
        std::fs::remove_file(stale)?;
    }
    let subs = axis
        .values
        .iter()
        .map(|&v| Ok((v, config.with_axis_value(&axis.name, v)?)))
        .collect::<Result<Vec<_>, RunError>>()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| RunError::Config(format!("thread pool: {e}")))?;
    let entries: Vec<SweepEntry> = pool.install(|| {
        subs.par_iter()
            .map(|(value, sub)| {
                let name = axis_dir_name(&axis.name, *value);
                let mut entry = SweepEntry {
                    value: *value,
                    dir: name.clone(),
                    exit_code: 0,
                    error: None,
                    fits: Vec::new(),
                };
                match run(sub, &dir.join(&name)) {
                    Ok(m) => {
                        if !m.passed {
                            entry.exit_code = EXIT_INVARIANT;
                            let failed: Vec<_> = m.failed_checks().map(|c| c.name.clone()).collect();
                            entry.error = Some(format!("failed checks: {}", failed.join(", ")));
                        }
                        entry.fits = m.fits;
                    }
                    Err(e) => {
                        entry.exit_code = e.exit_code();
                        entry.error = Some(e.to_string());
                    }
                }
                entry
            })
            .collect()
    });

    let summary = SweepSummary {
        axis: axis.name.clone(),
        command: config.effective_command(),
        entries,
    };
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    let mut artifacts = vec!["summary.json".to_string()];
    artifacts.extend(
        summary
            .entries
            .iter()
            .filter(|e| dir.join(&e.dir).join(MANIFEST_FILE).is_file())
            .map(|e| format!("{}/{MANIFEST_FILE}", e.dir)),
    );
    write_manifest(
        dir,
        &SweepManifest {
            command: Command::Sweep,
            config,
            threads,
            artifacts,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
            passed: summary.exit_code() == 0,
        },
    )?;
    Ok(summary)
}
