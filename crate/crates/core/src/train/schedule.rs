use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScheduleKind {
    CosineWarmup,
    InverseSqrt,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::CosineWarmup => "cosine_warmup",
            ScheduleKind::InverseSqrt => "inverse_sqrt",
        })
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "cosine_warmup" | "cosine" => Ok(ScheduleKind::CosineWarmup),
            "inverse_sqrt" => Ok(ScheduleKind::InverseSqrt),
            _ => Err(Error::config(format!("unknown schedule {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub lr_min: f64,
    pub lr_max: f64,
    pub warmup: f64,
    /// Length of the single cosine cycle after warmup.
    pub period: f64,
}

impl ScheduleSpec {
    /// Warm up from 1e-7 to 1e-3 over 10k steps, then one cosine cycle.
    pub fn cosine_default(period: f64) -> Self {
        ScheduleSpec {
            kind: ScheduleKind::CosineWarmup,
            lr_min: 1e-7,
            lr_max: 1e-3,
            warmup: 10_000.0,
            period,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_min > 0.0 && self.lr_max >= self.lr_min && self.lr_max.is_finite()) {
            return Err(Error::config(format!(
                "need 0 < lr_min <= lr_max, got {} and {}",
                self.lr_min, self.lr_max
            )));
        }
        if !(self.warmup > 0.0 && self.warmup.is_finite()) {
            return Err(Error::config("warmup must be positive"));
        }
        if self.kind == ScheduleKind::CosineWarmup && !(self.period > 0.0) {
            return Err(Error::config("cosine period must be positive"));
        }
        Ok(())
    }

    /// Learning rate at `step`.
    ///
    /// Both kinds warm up linearly from `lr_min` to `lr_max`. Cosine then
    /// anneals back to `lr_min` over `period` steps and stays there; the
    /// inverse square root decays as `lr_max·√(warmup/step)`.
    pub fn lr_at(&self, step: f64) -> f64 {
        let span = self.lr_max - self.lr_min;
        if step < self.warmup {
            return self.lr_min + span * (step.max(0.0) / self.warmup);
        }
        match self.kind {
            ScheduleKind::CosineWarmup => {
                let progress = ((step - self.warmup) / self.period).min(1.0);
                self.lr_max - 0.5 * span * (1.0 - (PI * progress).cos())
            }
            ScheduleKind::InverseSqrt => self.lr_max * (self.warmup / step).sqrt(),
        }
    }
}
