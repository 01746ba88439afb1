use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `α_t = 1 − t`, `σ_t = t`, `t ∈ [0, 1]`.
    FlowLinear,
    /// `α_t = √ᾱ_t`, `σ_t = √(1 − ᾱ_t)` over a discrete table.
    VpDiscrete,
}

/// Noise schedule coefficients of `x_t = α_t x₀ + σ_t ε`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    horizon: f64,
    /// `ᾱ_k` for integer steps `k = 0..=horizon`, with `ᾱ_0 = 1`.
    alphas_cumprod: Vec<f64>,
}

impl NoiseSchedule {
    pub fn flow_linear() -> Self {
        Self {
            kind: ScheduleKind::FlowLinear,
            horizon: 1.0,
            alphas_cumprod: Vec::new(),
        }
    }

    /// Linear-β table from `1e-4` to `2e-2` over 1000 steps.
    pub fn vp_linear() -> Self {
        let steps = 1000;
        let (lo, hi) = (1e-4, 2e-2);
        let mut table = Vec::with_capacity(steps + 1);
        let mut acc = 1.0;
        table.push(acc);
        for i in 0..steps {
            let beta = lo + (hi - lo) * i as f64 / (steps - 1) as f64;
            acc *= 1.0 - beta;
            table.push(acc);
        }
        Self {
            kind: ScheduleKind::VpDiscrete,
            horizon: steps as f64,
            alphas_cumprod: table,
        }
    }

    /// VP schedule from an explicit `ᾱ` table indexed by integer step.
    /// The table must be strictly decreasing and lie in `(0, 1]`.
    pub fn vp_from_table(alphas_cumprod: Vec<f64>) -> Result<Self> {
        if alphas_cumprod.len() < 2 {
            return Err(Error::Config("ᾱ table needs at least two entries".into()));
        }
        if alphas_cumprod.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(Error::Config("ᾱ entries must lie in (0, 1]".into()));
        }
        if alphas_cumprod.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("ᾱ table must be strictly decreasing".into()));
        }
        Ok(Self {
            kind: ScheduleKind::VpDiscrete,
            horizon: (alphas_cumprod.len() - 1) as f64,
            alphas_cumprod,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Horizon `T`.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Rejected(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }

    pub(crate) fn require(&self, kind: ScheduleKind, what: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Rejected(format!(
                "{what} requires a {kind:?} schedule, got {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    /// `ᾱ_t` with linear interpolation between table entries.
    pub fn alpha_bar(&self, t: f64) -> Result<f64> {
        self.require(ScheduleKind::VpDiscrete, "ᾱ_t")?;
        self.check_time(t)?;
        let lo = t.floor() as usize;
        if lo + 1 >= self.alphas_cumprod.len() {
            return Ok(self.alphas_cumprod[lo]);
        }
        let frac = t - lo as f64;
        let (a, b) = (self.alphas_cumprod[lo], self.alphas_cumprod[lo + 1]);
        Ok(a + (b - a) * frac)
    }

    pub fn alpha_sigma(&self, t: f64) -> Result<(f64, f64)> {
        self.check_time(t)?;
        match self.kind {
            ScheduleKind::FlowLinear => Ok((1.0 - t, t)),
            ScheduleKind::VpDiscrete => {
                let ab = self.alpha_bar(t)?;
                Ok((ab.sqrt(), (1.0 - ab).sqrt()))
            }
        }
    }

    /// `σ̄_t = √((1 − ᾱ_t)/ᾱ_t)`, the rescaled DDIM time.
    pub fn sigma_bar(&self, t: f64) -> Result<f64> {
        let ab = self.alpha_bar(t)?;
        Ok(((1.0 - ab) / ab).sqrt())
    }
}
