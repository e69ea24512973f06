//! Time-ordered snapshots plus the vanishing/creation event log of one run.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::IntegratorStats;
use crate::lattice::Configuration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Vanish,
    Create,
    /// Every site of the window died; the run halts.
    Terminal,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Vanish => "vanish",
            EventKind::Create => "create",
            EventKind::Terminal => "terminal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub site: usize,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<Configuration>,
    pub events: Vec<Event>,
    pub stats: IntegratorStats,
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: f64, snapshot: Configuration) {
        debug_assert!(self.times.last().map_or(true, |&t| time > t));
        self.times.push(time);
        self.snapshots.push(snapshot);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn window_size(&self) -> usize {
        self.snapshots.first().map_or(0, |s| s.window_size())
    }

    pub fn t_start(&self) -> f64 {
        self.times.first().copied().unwrap_or(0.0)
    }

    pub fn t_end(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn first(&self) -> &Configuration {
        &self.snapshots[0]
    }

    pub fn last(&self) -> &Configuration {
        self.snapshots.last().expect("nonempty trajectory")
    }

    /// Index of the last recorded time `<= t`.
    pub fn index_at_or_before(&self, t: f64) -> Option<usize> {
        match self.times.partition_point(|&s| s <= t) {
            0 => None,
            i => Some(i - 1),
        }
    }

    /// Snapshot at the last recorded time `<= t`.
    pub fn snapshot_at(&self, t: f64) -> Option<&Configuration> {
        self.index_at_or_before(t).map(|i| &self.snapshots[i])
    }

    /// Piecewise-linear interpolation of one site's mass.
    pub fn mass_at(&self, t: f64, site: usize) -> Option<f64> {
        let i = self.index_at_or_before(t)?;
        if i + 1 == self.len() || self.times[i] == t {
            return Some(self.snapshots[i].get(site));
        }
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let w = (t - t0) / (t1 - t0);
        Some((1.0 - w) * self.snapshots[i].get(site) + w * self.snapshots[i + 1].get(site))
    }

    pub fn vanish_events(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| e.kind == EventKind::Vanish)
    }

    /// Checks the structural invariants: strictly increasing times, constant
    /// window, and vanish events consistent with the recorded masses.
    pub fn check_invariants(&self) -> Result<()> {
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Precondition("trajectory times not strictly increasing".into()));
        }
        let m = self.window_size();
        if self.snapshots.iter().any(|s| s.window_size() != m) {
            return Err(Error::Precondition("window size changes within trajectory".into()));
        }
        for ev in self.vanish_events() {
            for (t, s) in self.times.iter().zip(&self.snapshots) {
                let alive = s.get(ev.site) > 0.0;
                if (*t < ev.time) != alive {
                    return Err(Error::Precondition(format!(
                        "site {} vanishing at {} has mass {} at t = {}",
                        ev.site,
                        ev.time,
                        s.get(ev.site),
                        t
                    )));
                }
            }
        }
        Ok(())
    }

    /// `time,site,mass,alive` rows, time-major then site.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,site,mass,alive\n");
        for (t, s) in self.times.iter().zip(&self.snapshots) {
            let ts = fmt_f64(*t);
            for (k, &m) in s.masses().iter().enumerate() {
                let _ = writeln!(out, "{ts},{k},{},{}", fmt_f64(m), u8::from(m > 0.0));
            }
        }
        out
    }

    /// `time,site,kind` rows in event order.
    pub fn events_csv(&self) -> String {
        let mut out = String::from("time,site,kind\n");
        let mut events = self.events.clone();
        events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.site.cmp(&b.site)));
        for e in &events {
            let _ = writeln!(out, "{},{},{}", fmt_f64(e.time), e.site, e.kind.as_str());
        }
        out
    }

    /// Parses the `time,site,mass,alive` schema written by [`Trajectory::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut traj = Trajectory::new();
        let mut cur_t: Option<f64> = None;
        let mut cur: Vec<f64> = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split(',');
            let bad = || Error::Domain(format!("malformed trajectory row {}", lineno + 1));
            let t: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let site: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let mass: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if cur_t != Some(t) {
                if let Some(pt) = cur_t {
                    traj.push(pt, Configuration::new(std::mem::take(&mut cur))?);
                }
                cur_t = Some(t);
            }
            if site != cur.len() {
                return Err(bad());
            }
            cur.push(mass);
        }
        if let Some(pt) = cur_t {
            traj.push(pt, Configuration::new(cur)?);
        }
        Ok(traj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj() -> Trajectory {
        let mut t = Trajectory::new();
        t.push(0.0, Configuration::new(vec![1.0, 2.0]).unwrap());
        t.push(0.5, Configuration::new(vec![0.5, 2.5]).unwrap());
        t.push(1.0, Configuration::new(vec![0.0, 3.0]).unwrap());
        t.events.push(Event { time: 1.0, site: 0, kind: EventKind::Vanish });
        t
    }

    #[test]
    fn csv_roundtrip_and_ordering() {
        let t = traj();
        let csv = t.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("time,site,mass,alive"));
        assert!(lines.next().unwrap().ends_with(",0,1.0000000000000000e0,1"));
        let back = Trajectory::from_csv(&csv).unwrap();
        assert_eq!(back.times, t.times);
        assert_eq!(back.snapshots, t.snapshots);
        assert_eq!(t.events_csv(), "time,site,kind\n1.0000000000000000e0,0,vanish\n");
    }

    #[test]
    fn invariants_and_interpolation() {
        let t = traj();
        t.check_invariants().unwrap();
        assert_eq!(t.mass_at(0.25, 0), Some(0.75));
        assert_eq!(t.snapshot_at(0.7).unwrap().get(1), 2.5);
        let mut bad = t.clone();
        bad.events[0].time = 0.4;
        assert!(bad.check_invariants().is_err());
    }
}
