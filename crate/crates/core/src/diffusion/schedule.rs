use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Edm,
    Vp,
    Ve,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edm" => Ok(Self::Edm),
            "vp" => Ok(Self::Vp),
            "ve" => Ok(Self::Ve),
            other => Err(Error::InvalidSchedule(format!("unknown schedule kind `{other}`"))),
        }
    }
}

/// Parametrized noise-level family and its sampling discretization.
///
/// * EDM: `sigma(t) = t`, steps interpolate `sigma^(1/rho)` linearly.
/// * VP: `sigma(t) = sqrt(exp(beta_d t^2 / 2 + beta_min t) - 1)`, steps uniform in `t`.
/// * VE: `sigma(t) = sqrt(t)`, steps geometric in `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub vp_beta_d: f64,
    pub vp_beta_min: f64,
    /// Log-normal training distribution of sigma (EDM kind).
    pub p_mean: f64,
    pub p_std: f64,
}

pub const VP_BETA_D: f64 = 19.9;
pub const VP_BETA_MIN: f64 = 0.1;
/// Smallest diffusion time used by the VP discretization.
pub const VP_EPS_T: f64 = 1e-3;

fn vp_sigma(t: f64, beta_d: f64, beta_min: f64) -> f64 {
    ((0.5 * beta_d * t * t + beta_min * t).exp() - 1.0).sqrt()
}

fn vp_time(sigma: f64, beta_d: f64, beta_min: f64) -> f64 {
    ((beta_min * beta_min + 2.0 * beta_d * (sigma * sigma).ln_1p()).sqrt() - beta_min) / beta_d
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::edm()
    }
}

impl NoiseSchedule {
    pub fn edm() -> Self {
        Self {
            kind: ScheduleKind::Edm,
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
            vp_beta_d: VP_BETA_D,
            vp_beta_min: VP_BETA_MIN,
            p_mean: -1.2,
            p_std: 1.2,
        }
    }

    pub fn vp() -> Self {
        Self {
            kind: ScheduleKind::Vp,
            sigma_min: vp_sigma(VP_EPS_T, VP_BETA_D, VP_BETA_MIN),
            sigma_max: vp_sigma(1.0, VP_BETA_D, VP_BETA_MIN),
            ..Self::edm()
        }
    }

    pub fn ve() -> Self {
        Self {
            kind: ScheduleKind::Ve,
            sigma_min: 0.02,
            sigma_max: 100.0,
            ..Self::edm()
        }
    }

    pub fn of_kind(kind: ScheduleKind) -> Self {
        match kind {
            ScheduleKind::Edm => Self::edm(),
            ScheduleKind::Vp => Self::vp(),
            ScheduleKind::Ve => Self::ve(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidSchedule(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("sigma_min", self.sigma_min)?;
        positive("sigma_max", self.sigma_max)?;
        if self.sigma_min >= self.sigma_max {
            return Err(Error::InvalidSchedule(format!(
                "sigma_min {} must be below sigma_max {}",
                self.sigma_min, self.sigma_max
            )));
        }
        match self.kind {
            ScheduleKind::Edm => positive("rho", self.rho)?,
            ScheduleKind::Vp => {
                positive("vp_beta_d", self.vp_beta_d)?;
                positive("vp_beta_min", self.vp_beta_min)?;
            }
            ScheduleKind::Ve => {}
        }
        if !(self.p_std.is_finite() && self.p_std > 0.0 && self.p_mean.is_finite()) {
            return Err(Error::InvalidSchedule("p_mean/p_std must be finite, p_std > 0".into()));
        }
        Ok(())
    }

    /// Noise level at diffusion time `t`.
    pub fn sigma(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Edm => t,
            ScheduleKind::Vp => vp_sigma(t, self.vp_beta_d, self.vp_beta_min),
            ScheduleKind::Ve => t.sqrt(),
        }
    }

    /// Inverse of [`NoiseSchedule::sigma`].
    pub fn time(&self, sigma: f64) -> f64 {
        match self.kind {
            ScheduleKind::Edm => sigma,
            ScheduleKind::Vp => vp_time(sigma, self.vp_beta_d, self.vp_beta_min),
            ScheduleKind::Ve => sigma * sigma,
        }
    }

    /// Decreasing noise levels `sigma_0 = sigma_max, ..., sigma_{n-1} = sigma_min`
    /// followed by a terminal zero.
    pub fn sigma_steps(&self, n_steps: usize) -> Result<Vec<f64>> {
        self.validate()?;
        if n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
        }
        let mut out = Vec::with_capacity(n_steps + 1);
        if n_steps == 1 {
            out.push(self.sigma_max);
        } else {
            let denom = (n_steps - 1) as f64;
            match self.kind {
                ScheduleKind::Edm => {
                    let a = self.sigma_max.powf(1.0 / self.rho);
                    let b = self.sigma_min.powf(1.0 / self.rho);
                    for i in 0..n_steps {
                        out.push((a + i as f64 / denom * (b - a)).powf(self.rho));
                    }
                }
                ScheduleKind::Vp => {
                    let t_hi = self.time(self.sigma_max);
                    let t_lo = self.time(self.sigma_min);
                    for i in 0..n_steps {
                        out.push(self.sigma(t_hi + i as f64 / denom * (t_lo - t_hi)));
                    }
                }
                ScheduleKind::Ve => {
                    let ratio = self.sigma_min / self.sigma_max;
                    for i in 0..n_steps {
                        out.push(self.sigma_max * ratio.powf(i as f64 / denom));
                    }
                }
            }
            // Pin the endpoints against round-off in the power/log round trips.
            out[0] = self.sigma_max;
            out[n_steps - 1] = self.sigma_min;
        }
        out.push(0.0);
        Ok(out)
    }

    /// Draws one training noise level from the kind's training distribution.
    pub fn sample_training_sigma<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            ScheduleKind::Edm => (self.p_mean + self.p_std * normal(rng)).exp(),
            ScheduleKind::Vp => {
                let (lo, hi) = (self.time(self.sigma_min), self.time(self.sigma_max));
                self.sigma(lo + (hi - lo) * rng.random::<f64>())
            }
            ScheduleKind::Ve => {
                let u: f64 = rng.random();
                self.sigma_min * (self.sigma_max / self.sigma_min).powf(u)
            }
        }
    }
}
