use std::hash::{DefaultHasher, Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Paired snapshot samples: `y[j]` is the time-`t_step` image of `x[j]`.
///
/// When several paths are concatenated, `path_boundaries` holds the start
/// index of every path after the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub t_step: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_boundaries: Option<Vec<usize>>,
}

impl SnapshotData {
    pub fn new(x: Vec<f64>, y: Vec<f64>, t_step: f64) -> Result<Self> {
        if x.len() != y.len() {
            return Err(invalid(format!(
                "x and y lengths differ ({} vs {})",
                x.len(),
                y.len()
            )));
        }
        if x.is_empty() {
            return Err(invalid("snapshot data must contain at least one pair"));
        }
        if !(t_step > 0.0 && t_step.is_finite()) {
            return Err(invalid(format!("time step must be positive, got {t_step}")));
        }
        Ok(Self {
            x,
            y,
            t_step,
            path_boundaries: None,
        })
    }

    /// Builds pairs `(s[j], s[j+1])` from a sampled trajectory.
    pub fn from_path(states: &[f64], t_step: f64) -> Result<Self> {
        if states.len() < 2 {
            return Err(invalid("a sample path needs at least two states"));
        }
        let n = states.len() - 1;
        Self::new(states[..n].to_vec(), states[1..].to_vec(), t_step)
    }

    /// Concatenates datasets sharing a time step, recording path starts.
    pub fn concat(parts: &[SnapshotData]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| invalid("nothing to concatenate"))?;
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut starts = Vec::new();
        for part in parts {
            if part.t_step != first.t_step {
                return Err(invalid("cannot concatenate datasets with different time steps"));
            }
            if !x.is_empty() {
                starts.push(x.len());
            }
            x.extend_from_slice(&part.x);
            y.extend_from_slice(&part.y);
        }
        let mut out = Self::new(x, y, first.t_step)?;
        if !starts.is_empty() {
            out.path_boundaries = Some(starts);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// The first `n` pairs.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(invalid(format!("prefix length {n} out of range 1..={}", self.len())));
        }
        Self::new(self.x[..n].to_vec(), self.y[..n].to_vec(), self.t_step)
    }

    pub fn min_max_x(&self) -> (f64, f64) {
        self.x
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Bit-level fingerprint of the data, used to check that paired
    /// comparisons really share their inputs.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.t_step.to_bits().hash(&mut h);
        for (a, b) in self.x.iter().zip(&self.y) {
            a.to_bits().hash(&mut h);
            b.to_bits().hash(&mut h);
        }
        h.finish()
    }
}
