//! Denoisers, samplers, discriminators and data generators checked against
//! closed forms and classical goodness-of-fit statistics.

use std::sync::atomic::{AtomicUsize, Ordering};

use echolab::data::{generate_gmm_dataset, generate_phantoms, PhantomParams};
use echolab::diffusion::{score_from_denoiser, Denoise, Denoiser, Gaussian, GaussianMixture, NoiseSchedule, Stage};
use echolab::guidance::{discriminator_network, Discriminator, NeuralDiscriminator};
use echolab::metrics::{compute_stats, frechet_distance};
use echolab::rng::{fill_normal, rng_from_seed};
use echolab::samplers::{fid_vs_nfe_sweep, nfe_for, sample, sample_euler, sample_heun, Method};
use echolab::{ImageBatch, ItemShape};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

fn two_bump() -> GaussianMixture {
    let a = Gaussian::new(
        vec![-1.0, 0.5],
        nalgebra::DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.1, 0.3]),
    )
    .unwrap();
    let b = Gaussian::diagonal(vec![1.5, -0.5], &[0.2, 0.6]).unwrap();
    GaussianMixture::new(vec![0.3, 0.7], vec![a, b]).unwrap()
}

/// Kolmogorov-Smirnov statistic of `xs` against `cdf`.
fn ks_statistic(xs: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic one-sample KS critical value at alpha = 0.01.
fn ks_critical_01(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

#[test]
fn tweedie_posterior_mean_matches_density_gradient() {
    let mix = two_bump();
    let d = Denoiser::gmm(ItemShape::vector(2), mix.clone()).unwrap();
    let mut rng = rng_from_seed(11);
    let h = 1e-5;
    for sigma in [0.05, 0.3, 1.0, 4.0] {
        let mut pts = ImageBatch::zeros(25, ItemShape::vector(2));
        fill_normal(&mut rng, pts.as_mut_slice());
        let den = d.denoise(&pts, sigma).unwrap();
        for (i, x) in pts.items().enumerate() {
            for k in 0..2 {
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[k] += h;
                m[k] -= h;
                let grad = (mix.noisy_log_density(&p, sigma) - mix.noisy_log_density(&m, sigma)) / (2.0 * h);
                let tweedie = x[k] + sigma * sigma * grad;
                let got = den.item(i)[k];
                assert!(
                    (got - tweedie).abs() <= 1e-6 * (1.0 + sigma * sigma),
                    "sigma {sigma} point {i} dim {k}: {got} vs {tweedie}"
                );
            }
        }
    }
}

#[test]
fn score_from_denoiser_equals_analytic_score() {
    let d = Denoiser::gmm(ItemShape::vector(2), two_bump()).unwrap();
    let mut x = ImageBatch::zeros(50, ItemShape::vector(2));
    fill_normal(&mut rng_from_seed(4), x.as_mut_slice());
    for sigma in [0.01, 0.5, 20.0] {
        let a = d.analytic_score(&x, sigma).unwrap();
        let b = score_from_denoiser(&d, &x, sigma).unwrap();
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((u - v).abs() <= 1e-8 * u.abs().max(1.0), "{u} vs {v} at sigma {sigma}");
        }
    }
}

/// Counts every denoiser evaluation.
struct Counting<'a> {
    inner: &'a Denoiser,
    calls: AtomicUsize,
}

impl Denoise for Counting<'_> {
    fn item_shape(&self) -> ItemShape {
        self.inner.item_shape()
    }

    fn denoise(&self, x: &ImageBatch, sigma: f64) -> echolab::Result<ImageBatch> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.denoise(x, sigma)
    }
}

#[test]
fn nfe_equals_instrumented_call_count() {
    let base = Denoiser::gaussian(ItemShape::vector(3), Gaussian::isotropic(vec![0.0; 3], 1.0).unwrap()).unwrap();
    let sched = NoiseSchedule::edm();
    for method in [Method::Euler, Method::Heun] {
        for steps in [1, 2, 18, 30] {
            let c = Counting {
                inner: &base,
                calls: AtomicUsize::new(0),
            };
            let run = sample(&c, &sched, steps, 10, 1, method).unwrap();
            assert_eq!(run.nfe, c.calls.load(Ordering::SeqCst), "{method} {steps}");
            assert_eq!(run.nfe, nfe_for(steps, method).unwrap());
        }
    }
}

#[test]
fn single_euler_step_equals_single_heun_step() {
    let d = Denoiser::gmm(ItemShape::vector(2), two_bump()).unwrap();
    let s = NoiseSchedule::edm();
    let a = sample_euler(&d, &s, 1, 200, 5).unwrap();
    let b = sample_heun(&d, &s, 1, 200, 5).unwrap();
    assert_eq!(a.samples.as_slice(), b.samples.as_slice());
}

#[test]
fn unit_gaussian_samples_pass_ks() {
    let d = Denoiser::gaussian(ItemShape::vector(1), Gaussian::isotropic(vec![0.0], 1.0).unwrap()).unwrap();
    let n = 10_000;
    let run = sample_euler(&d, &NoiseSchedule::edm(), 100, n, 2024).unwrap();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut xs = run.samples.into_vec();
    let ks = ks_statistic(&mut xs, |x| normal.cdf(x));
    println!("KS = {ks:.5}, critical {:.5}", ks_critical_01(n));
    assert!(ks < ks_critical_01(n));
}

#[test]
fn repeated_sweep_entries_agree() {
    let d = Denoiser::gmm(ItemShape::vector(2), two_bump()).unwrap();
    let real = generate_gmm_dataset(&two_bump(), 2000, 3).unwrap().data;
    let rs = compute_stats(&real).unwrap();
    let rows = fid_vs_nfe_sweep(&d, &NoiseSchedule::edm(), &[5, 9, 5], 500, 8, Method::Heun, |x| {
        frechet_distance(&rs, &compute_stats(x)?)
    })
    .unwrap();
    assert_eq!(rows[0], rows[2]);
    assert_ne!(rows[0].fid, rows[1].fid);
}

#[test]
fn gmm_component_counts_pass_chi_square() {
    let mix = GaussianMixture::new(
        vec![0.1, 0.2, 0.3, 0.4],
        (0..4).map(|k| Gaussian::isotropic(vec![k as f64], 0.1).unwrap()).collect(),
    )
    .unwrap();
    let n = 20_000;
    let s = generate_gmm_dataset(&mix, n, 77).unwrap();
    let mut counts = [0usize; 4];
    s.components.iter().for_each(|&k| counts[k] += 1);
    let chi2: f64 = counts
        .iter()
        .zip(mix.weights())
        .map(|(&c, &w)| {
            let e = w * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let crit = ChiSquared::new(3.0).unwrap().inverse_cdf(0.99);
    println!("chi2 = {chi2:.3}, critical {crit:.3}, counts {counts:?}");
    assert!(chi2 < crit);
}

#[test]
fn gmm_draws_within_a_component_are_gaussian() {
    let g = Gaussian::new(vec![2.0, -1.0], nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 0.5])).unwrap();
    let s = generate_gmm_dataset(&GaussianMixture::single(g), 10_000, 5).unwrap();
    // Projection onto (1, 1) is N(1, 1 + 0.5 + 1.2).
    let normal = Normal::new(1.0, 2.7f64.sqrt()).unwrap();
    let mut proj: Vec<f64> = s.data.items().map(|x| x[0] + x[1]).collect();
    let ks = ks_statistic(&mut proj, |x| normal.cdf(x));
    assert!(ks < ks_critical_01(10_000), "KS {ks}");
}

#[test]
fn phantom_sector_intensities_follow_the_mixture() {
    let params = PhantomParams::default();
    let ds = generate_phantoms(&params, 20, 9).unwrap();
    let mask = params.sector_mask();
    let native = ds.native_images();
    for i in 0..ds.len() {
        let mut vals: Vec<f64> = native
            .item(i)
            .iter()
            .zip(&mask)
            .filter(|(_, m)| **m)
            .map(|(v, _)| *v)
            .collect();
        let m = vals.len();
        let ks = ks_statistic(&mut vals, |x| params.intensity.cdf(x));
        assert!(ks < ks_critical_01(m), "image {i}: KS {ks} over {m} pixels");
    }
}

#[test]
fn neural_discriminator_gradient_matches_finite_differences() {
    let shape = ItemShape::vector(3);
    let mut net = discriminator_network(shape, 8, 21).unwrap();
    // The head starts at zero; perturb it so the logit depends on the input.
    let n = net.param_count();
    fill_normal(&mut rng_from_seed(2), &mut net.params_mut()[n - 9..]);
    let disc = Discriminator::Neural(NeuralDiscriminator::new(net, shape, 0.5).unwrap());
    let mut x = ImageBatch::zeros(6, shape);
    fill_normal(&mut rng_from_seed(6), x.as_mut_slice());
    let h = 1e-5;
    for sigma in [0.1, 1.0, 10.0] {
        let g = disc.density_ratio_grad(&x, sigma).unwrap();
        for k in 0..x.as_slice().len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p.as_mut_slice()[k] += h;
            m.as_mut_slice()[k] -= h;
            let i = k / 3;
            let num = (disc.logits(&p, sigma).unwrap()[i] - disc.logits(&m, sigma).unwrap()[i]) / (2.0 * h);
            let got = g.as_slice()[k];
            assert!((got - num).abs() <= 1e-6 * got.abs().max(1e-2), "sigma {sigma} k {k}: {got} vs {num}");
        }
    }
}

#[test]
fn guided_denoiser_shifts_by_sigma_squared_times_gradient() {
    let real = two_bump();
    let model = real.shifted(&[0.3, -0.2]).unwrap();
    let base = Denoiser::gmm(ItemShape::vector(2), model.clone()).unwrap();
    let disc = Discriminator::analytic(ItemShape::vector(2), real, model).unwrap();
    let cfg = echolab::guidance::GuidanceConfig::new(1.5, 0.5, 2.0).unwrap();
    let g = echolab::guidance::guided_denoiser(&base, &disc, cfg).unwrap();
    let mut x = ImageBatch::zeros(10, ItemShape::vector(2));
    fill_normal(&mut rng_from_seed(1), x.as_mut_slice());
    let sigma = 0.7;
    let grad = disc.density_ratio_grad(&x, sigma).unwrap();
    let plain = base.denoise(&x, sigma).unwrap();
    for (stage, m) in [(Stage::Predictor, 3.0), (Stage::Corrector, 1.0)] {
        let out = g.denoise_at(&x, sigma, stage).unwrap();
        for k in 0..x.as_slice().len() {
            let want = plain.as_slice()[k] + sigma * sigma * m * grad.as_slice()[k];
            assert!((out.as_slice()[k] - want).abs() < 1e-12);
        }
    }
}
