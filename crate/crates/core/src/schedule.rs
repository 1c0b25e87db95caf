//! Dynamic parameters for the two clusterings.
//!
//! The first clustering's parameter rises linearly from `base` to
//! `base + delta` at mid-training and falls back; the second mirrors it below
//! `base`. With `delta = 0` both clusterings share one parameter.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    DbscanEps,
    InfomapPsi,
    KmeansK,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub base: f64,
    pub delta: f64,
    pub total_epochs: usize,
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.base.is_finite() && self.delta.is_finite()) {
            return Err(Error::config("base", "must be finite"));
        }
        if self.delta < 0.0 {
            return Err(Error::config("delta", "must be >= 0"));
        }
        if self.total_epochs < 2 {
            return Err(Error::config("epochs", "must be >= 2"));
        }
        match self.kind {
            ScheduleKind::KmeansK if self.base - self.delta < 1.0 => {
                Err(Error::config("delta", "base - delta must be >= 1 for k-means"))
            }
            ScheduleKind::DbscanEps | ScheduleKind::InfomapPsi if self.base - self.delta <= 0.0 => {
                Err(Error::config("delta", "base - delta must be > 0"))
            }
            _ => Ok(()),
        }
    }

    /// Parameters `(p1, p2)` of the two clusterings at epoch `i` in `[0, E]`.
    ///
    /// `p1 + p2 == 2 * base` holds exactly for the distance kinds: `p2` is
    /// computed as `2 * base - p1`, which is exact because `p1` lies in
    /// `[base, 2 * base]`. For k-means both values are rounded up.
    pub fn params_at(&self, epoch: usize) -> Result<(f64, f64)> {
        self.validate()?;
        let e = self.total_epochs;
        if epoch > e {
            return Err(Error::OutOfRange {
                what: "epoch",
                index: epoch,
                size: e + 1,
            });
        }
        // distance from the nearest endpoint: i on the rising half, E - i after
        let ramp = if 2 * epoch < e { epoch } else { e - epoch };
        let step = (2.0 * self.delta * ramp as f64 / e as f64).min(self.delta);
        let mut p1 = self.base + step;
        // keep p1 - base <= delta exactly despite rounding in the addition
        while p1 - self.base > self.delta {
            p1 = p1.next_down();
        }
        let p2 = 2.0 * self.base - p1;
        Ok(match self.kind {
            ScheduleKind::KmeansK => (p1.ceil(), p2.ceil()),
            _ => (p1, p2),
        })
    }

    /// Both clusterings at `base` (the single-clustering ablation).
    pub fn fixed(&self) -> (f64, f64) {
        match self.kind {
            ScheduleKind::KmeansK => (self.base.ceil(), self.base.ceil()),
            _ => (self.base, self.base),
        }
    }
}
