//! Creation operators and the block insertion scheme that drives local
//! averages to 1/2.
//!
//! A jump sequence `d` inserts `d(k)` empty sites directly after site `k`, so
//! site `k` lands at `psi(k) = k + sum_{m<k} d(m)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{sigma_laplacian_flux_all, Configuration};

/// Number of empty sites inserted after every site of a window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JumpSequence {
    jumps: Vec<usize>,
}

impl JumpSequence {
    pub fn new(jumps: Vec<usize>) -> Self {
        Self { jumps }
    }

    pub fn zeros(window_size: usize) -> Self {
        Self::new(vec![0; window_size])
    }

    pub fn jumps(&self) -> &[usize] {
        &self.jumps
    }

    pub fn len(&self) -> usize {
        self.jumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jumps.is_empty()
    }

    /// `||d||_inf`.
    pub fn bound(&self) -> usize {
        self.jumps.iter().copied().max().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.jumps.iter().sum()
    }

    pub fn is_identity(&self) -> bool {
        self.jumps.iter().all(|&d| d == 0)
    }

    /// Window size after insertion.
    pub fn image_size(&self) -> usize {
        self.jumps.len() + self.total()
    }

    /// `psi(k)` for every original site.
    pub fn index_map(&self) -> Vec<usize> {
        let mut acc = 0;
        self.jumps
            .iter()
            .enumerate()
            .map(|(k, &d)| {
                let p = k + acc;
                acc += d;
                p
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("integer array serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Domain(format!("jump sequence JSON: {e}")))
    }
}

fn check_len(d: &JumpSequence, m: usize) -> Result<()> {
    if d.len() != m {
        return Err(Error::Domain(format!(
            "jump sequence of length {} on a window of size {m}",
            d.len()
        )));
    }
    Ok(())
}

/// Pushes an arbitrary site field through `psi`, filling new sites with 0.
pub fn push_forward_values(d: &JumpSequence, values: &[f64]) -> Result<Vec<f64>> {
    check_len(d, values.len())?;
    let mut out = vec![0.0; d.image_size()];
    for (p, &v) in d.index_map().into_iter().zip(values) {
        out[p] = v;
    }
    Ok(out)
}

/// `Psi_* x`: `x(k)` moves to `psi(k)`, inserted sites are empty.
pub fn push_forward(d: &JumpSequence, x: &Configuration) -> Result<Configuration> {
    Ok(Configuration::from_vec_unchecked(push_forward_values(d, x.masses())?))
}

/// `max |Delta_sigma F(Psi_* x) - Psi_* Delta_sigma F(x)|`.
pub fn commutator_residual(d: &JumpSequence, beta: f64, x: &Configuration) -> Result<f64> {
    let pushed = push_forward(d, x)?;
    let lhs = sigma_laplacian_flux_all(&pushed, beta)?;
    let rhs = push_forward_values(d, &sigma_laplacian_flux_all(x, beta)?)?;
    Ok(lhs
        .iter()
        .zip(&rhs)
        .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs())))
}

/// One block of the partition of the original window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub start: usize,
    pub len: usize,
    /// Index into the level grid.
    pub level: usize,
    /// Block average before insertion.
    pub average: f64,
    /// Empty sites inserted after the block.
    pub inserted: usize,
}

/// The block insertion scheme for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsertionPlan {
    pub block_length: usize,
    /// Equidistant levels from 1/2 to 1 with spacing at most epsilon.
    pub level_grid: Vec<f64>,
    /// Sites inserted after a full block of each level.
    pub insert_counts: Vec<usize>,
    pub blocks: Vec<Block>,
}

impl InsertionPlan {
    /// Block averages of the pushed-forward configuration.
    pub fn post_insertion_averages(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .map(|b| b.average * b.len as f64 / (b.len + b.inserted) as f64)
            .collect()
    }
}

/// Slack on the `1/2 <= u0 <= 1` precondition.
const RANGE_SLACK: f64 = 1e-9;

/// Block length `K = ceil(4 / epsilon)`.
pub fn block_length(epsilon: f64) -> usize {
    (4.0 / epsilon - 1e-9).ceil() as usize
}

/// `N0 = ceil(K / epsilon)`.
pub fn averaging_radius(epsilon: f64) -> usize {
    (block_length(epsilon) as f64 / epsilon - 1e-9).ceil() as usize
}

/// Inserts empty sites after blocks of `u0` so that every local average over
/// at least `2 N0 + 1` sites ends up within `epsilon` of 1/2.
///
/// Each block of length `K` (plus one shorter remainder block at the end of
/// the window) is assigned the smallest grid level `lambda* >= ` its average,
/// and `round(len (2 lambda* - 1))` empty sites follow it, which rescales the
/// block average by `len / (len + L) ~ 1 / (2 lambda*)`.
pub fn average_modifying_insertion(
    u0: &Configuration,
    epsilon: f64,
) -> Result<(JumpSequence, InsertionPlan, usize)> {
    if !(epsilon > 0.0 && epsilon <= 0.5) {
        return Err(Error::InvalidParameter(format!("epsilon = {epsilon} outside (0, 1/2]")));
    }
    if let Some(k) = u0
        .masses()
        .iter()
        .position(|&v| !(v >= 0.5 - RANGE_SLACK && v <= 1.0 + RANGE_SLACK))
    {
        return Err(Error::Precondition(format!(
            "u0({k}) = {} outside [1/2, 1]",
            u0.get(k)
        )));
    }
    let k_len = block_length(epsilon);
    let intervals = (0.5 / epsilon - 1e-9).ceil() as usize;
    let level_grid: Vec<f64> = (0..=intervals)
        .map(|i| 0.5 + 0.5 * i as f64 / intervals as f64)
        .collect();
    let count = |len: usize, lambda: f64| (len as f64 * (2.0 * lambda - 1.0)).round() as usize;
    let insert_counts = level_grid.iter().map(|&l| count(k_len, l)).collect();

    let m = u0.window_size();
    let x = u0.masses();
    let mut jumps = vec![0usize; m];
    let mut blocks = Vec::with_capacity(m / k_len + 1);
    let mut start = 0;
    while start < m {
        let len = k_len.min(m - start);
        let average = x[start..start + len].iter().sum::<f64>() / len as f64;
        let level = level_grid
            .iter()
            .position(|&l| l >= average - 1e-12)
            .unwrap_or(intervals);
        let inserted = count(len, level_grid[level]);
        jumps[start + len - 1] = inserted;
        blocks.push(Block {
            start,
            len,
            level,
            average,
            inserted,
        });
        start += len;
    }
    let plan = InsertionPlan {
        block_length: k_len,
        level_grid,
        insert_counts,
        blocks,
    };
    Ok((JumpSequence::new(jumps), plan, averaging_radius(epsilon)))
}
