//! Deterministic probability-flow integrators over a [`Denoise`].
//!
//! The ODE `dx/dsigma = (x - D(x; sigma)) / sigma` is integrated from
//! `sigma_max` to 0 along the schedule's step grid. Each chain's starting
//! noise comes from its own derived seed, so results do not depend on `n` or
//! on how chains are batched.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::batch::ImageBatch;
use crate::diffusion::{Denoise, NoiseSchedule, Stage};
use crate::error::{Error, Result};
use crate::guidance::GuidanceConfig;
use crate::rng::{derive_seed, fill_normal, rng_from_seed, Stream};

/// Chains integrated together in one denoiser call.
pub const CHAIN_BLOCK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Heun,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Euler => "euler",
            Method::Heun => "heun",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Method::Euler),
            "heun" => Ok(Method::Heun),
            _ => Err(Error::Parse(format!("unknown sampler method {s:?} (expected euler or heun)"))),
        }
    }
}

/// Denoiser evaluations for `steps` steps. Heun skips the corrector on the last step.
pub fn nfe_for(steps: usize, method: Method) -> Result<usize> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    Ok(match method {
        Method::Euler => steps,
        Method::Heun => 2 * steps - 1,
    })
}

#[derive(Debug, Clone)]
pub struct SamplerRun {
    pub method: Method,
    pub steps: usize,
    pub nfe: usize,
    pub seed: u64,
    pub schedule: NoiseSchedule,
    pub guidance: Option<GuidanceConfig>,
    pub samples: ImageBatch,
}

/// Starting points `sigma_0 * eps_i` for chains `first..first + count`.
pub fn initial_noise(d: &dyn Denoise, sigma0: f64, first: usize, count: usize, seed: u64) -> ImageBatch {
    let mut x = ImageBatch::zeros(count, d.item_shape());
    let len = x.item_len();
    for (k, item) in x.as_mut_slice().chunks_exact_mut(len).enumerate() {
        let mut rng = rng_from_seed(derive_seed(seed, Stream::SamplerNoise, (first + k) as u64));
        fill_normal(&mut rng, item);
        item.iter_mut().for_each(|v| *v *= sigma0);
    }
    x
}

/// Integrates one block of chains; returns the terminal state and the number
/// of denoiser calls made.
pub fn integrate(
    d: &dyn Denoise,
    sigmas: &[f64],
    mut x: ImageBatch,
    method: Method,
) -> Result<(ImageBatch, usize)> {
    let mut calls = 0usize;
    for w in sigmas.windows(2) {
        let (s, s_next) = (w[0], w[1]);
        let h = s_next - s;
        let den = d.denoise_at(&x, s, Stage::Predictor)?;
        calls += 1;
        let mut slope = x.clone();
        slope.axpy(-1.0, &den)?;
        slope.scale(1.0 / s);
        let mut x_next = x.clone();
        x_next.axpy(h, &slope)?;
        if method == Method::Heun && s_next > 0.0 {
            let den2 = d.denoise_at(&x_next, s_next, Stage::Corrector)?;
            calls += 1;
            let mut slope2 = x_next;
            slope2.axpy(-1.0, &den2)?;
            slope2.scale(1.0 / s_next);
            slope.axpy(1.0, &slope2)?;
            x.axpy(h / 2.0, &slope)?;
        } else {
            x = x_next;
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("sampler state"));
        }
    }
    Ok((x, calls))
}

pub fn sample(
    d: &dyn Denoise,
    schedule: &NoiseSchedule,
    steps: usize,
    n: usize,
    seed: u64,
    method: Method,
) -> Result<SamplerRun> {
    let nfe = nfe_for(steps, method)?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let sigmas = schedule.sigma_steps(steps)?;
    let mut data = Vec::with_capacity(n * d.item_shape().len());
    let mut first = 0;
    while first < n {
        let count = CHAIN_BLOCK.min(n - first);
        let x0 = initial_noise(d, sigmas[0], first, count, seed);
        let (x, calls) = integrate(d, &sigmas, x0, method)?;
        debug_assert_eq!(calls, nfe);
        data.extend_from_slice(x.as_slice());
        first += count;
    }
    Ok(SamplerRun {
        method,
        steps,
        nfe,
        seed,
        schedule: *schedule,
        guidance: d.guidance(),
        samples: ImageBatch::from_vec(n, d.item_shape(), data)?,
    })
}

/// Second-order deterministic sampling; guidance comes from the denoiser
/// (see [`crate::guidance::guided_denoiser`]).
pub fn sample_heun(d: &dyn Denoise, schedule: &NoiseSchedule, steps: usize, n: usize, seed: u64) -> Result<SamplerRun> {
    sample(d, schedule, steps, n, seed, Method::Heun)
}

pub fn sample_euler(d: &dyn Denoise, schedule: &NoiseSchedule, steps: usize, n: usize, seed: u64) -> Result<SamplerRun> {
    sample(d, schedule, steps, n, seed, Method::Euler)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub steps: usize,
    pub nfe: usize,
    pub fid: f64,
    pub n_samples: usize,
    pub seed: u64,
}

pub const SWEEP_HEADER: &str = "steps,nfe,fid,n_samples,seed";

/// One FID point per entry of `step_list`. Samples for each entry are drawn
/// with a sub-seed derived from `(seed, steps)`, so repeated entries agree.
pub fn fid_vs_nfe_sweep(
    d: &dyn Denoise,
    schedule: &NoiseSchedule,
    step_list: &[usize],
    n: usize,
    seed: u64,
    method: Method,
    mut metric: impl FnMut(&ImageBatch) -> Result<f64>,
) -> Result<Vec<SweepRow>> {
    if step_list.is_empty() {
        return Err(Error::InvalidArgument("step list is empty".into()));
    }
    step_list
        .iter()
        .map(|&steps| {
            let sub = derive_seed(seed, Stream::Sweep, steps as u64);
            let run = sample(d, schedule, steps, n, sub, method)?;
            Ok(SweepRow {
                steps,
                nfe: run.nfe,
                fid: metric(&run.samples)?,
                n_samples: n,
                seed: sub,
            })
        })
        .collect()
}

pub fn write_sweep_csv(rows: &[SweepRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.steps, r.nfe, r.fid, r.n_samples, r.seed)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::ItemShape;
    use crate::diffusion::{Denoiser, Gaussian};

    #[test]
    fn nfe_counts() {
        assert_eq!(nfe_for(30, Method::Heun).unwrap(), 59);
        assert_eq!(nfe_for(18, Method::Heun).unwrap(), 35);
        assert_eq!(nfe_for(1, Method::Heun).unwrap(), 1);
        assert_eq!(nfe_for(7, Method::Euler).unwrap(), 7);
        assert!(nfe_for(0, Method::Euler).is_err());
    }

    #[test]
    fn single_step_lands_on_denoised_start() {
        let g = Gaussian::diagonal(vec![0.3, -0.1], &[0.5, 2.0]).unwrap();
        let d = Denoiser::gaussian(ItemShape::vector(2), g).unwrap();
        let sched = NoiseSchedule::edm();
        let heun = sample_heun(&d, &sched, 1, 5, 3).unwrap();
        let euler = sample_euler(&d, &sched, 1, 5, 3).unwrap();
        assert_eq!(heun.samples, euler.samples);
        let x0 = initial_noise(&d, sched.sigma_max, 0, 5, 3);
        let want = d.denoise(&x0, sched.sigma_max).unwrap();
        for (a, b) in heun.samples.as_slice().iter().zip(want.as_slice()) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn chains_do_not_depend_on_n() {
        let d = Denoiser::gaussian(ItemShape::vector(3), Gaussian::isotropic(vec![1.0; 3], 0.2).unwrap()).unwrap();
        let sched = NoiseSchedule::edm();
        let small = sample_heun(&d, &sched, 4, 3, 9).unwrap();
        let big = sample_heun(&d, &sched, 4, CHAIN_BLOCK + 7, 9).unwrap();
        assert_eq!(small.samples.as_slice(), &big.samples.as_slice()[..9]);
    }

    #[test]
    fn sweep_csv_header() {
        let rows = [SweepRow { steps: 2, nfe: 3, fid: 0.5, n_samples: 10, seed: 1 }];
        let mut out = Vec::new();
        write_sweep_csv(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next().unwrap(), "steps,nfe,fid,n_samples,seed");
        assert_eq!(text.lines().nth(1).unwrap(), "2,3,0.5,10,1");
    }
}
