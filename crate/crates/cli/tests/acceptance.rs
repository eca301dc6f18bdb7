//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use echolab::data::generate_gmm_dataset;
use echolab::diffusion::{Denoise, Denoiser, Gaussian, GaussianMixture, NoiseSchedule, Stage};
use echolab::guidance::{guided_denoiser, Discriminator, GuidanceConfig};
use echolab::metrics::{
    compute_stats, fid_variance_protocol, frechet_distance, matrix_sqrt_psd, FeatureExtractor, FeatureStats,
    VarianceConfig, VarianceMode,
};
use echolab::nn::{Activation, Layer, Mode, Network, Tape};
use echolab::rng::{fill_normal, rng_from_seed};
use echolab::samplers::{initial_noise, integrate, nfe_for, sample_heun, Method};
use echolab::shift::{train_shift_classifier, ClassifierKind, ShiftStudyConfig};
use echolab::{ImageBatch, ItemShape};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

type Criterion = (&'static str, Duration, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn nfe_accounting() -> Outcome {
    let a = nfe_for(30, Method::Heun).unwrap();
    let b = nfe_for(18, Method::Heun).unwrap();
    outcome(a == 59 && b == 35, format!("nfe(30, heun) = {a}, nfe(18, heun) = {b}"))
}

fn fid_closed_form() -> Outcome {
    let mut rng = rng_from_seed(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let d = rng.random_range(1..33);
        let m1: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m2: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let v1: Vec<f64> = (0..d).map(|_| rng.random_range(0.01..4.0)).collect();
        let v2: Vec<f64> = (0..d).map(|_| rng.random_range(0.01..4.0)).collect();
        let closed: f64 = (0..d)
            .map(|i| (m1[i] - m2[i]).powi(2) + (v1[i].sqrt() - v2[i].sqrt()).powi(2))
            .sum();
        let a = FeatureStats::new(DVector::from_vec(m1), DMatrix::from_diagonal(&DVector::from_vec(v1)), 2).unwrap();
        let b = FeatureStats::new(DVector::from_vec(m2), DMatrix::from_diagonal(&DVector::from_vec(v2)), 2).unwrap();
        worst = worst.max((frechet_distance(&a, &b).unwrap() - closed).abs());
    }
    outcome(worst <= 1e-8, format!("1000 diagonal pairs, max |matrix - closed form| = {worst:.2e} (tol 1e-8)"))
}

fn sqrt_reconstruction() -> Outcome {
    let mut rng = rng_from_seed(2);
    let mut worst: f64 = 0.0;
    for k in 0..200 {
        let d = 1 + (k * 127) / 199;
        let mut b = DMatrix::zeros(d, d);
        fill_normal(&mut rng, b.as_mut_slice());
        let a = &b * b.transpose() + DMatrix::identity(d, d) * 1e-3;
        let s = matrix_sqrt_psd(&a).unwrap();
        worst = worst.max((&s * &s - &a).norm() / a.norm());
    }
    outcome(worst <= 1e-8, format!("200 SPD matrices 1x1..128x128, max relative Frobenius error = {worst:.2e} (tol 1e-8)"))
}

fn guidance_identity() -> Outcome {
    let shape = ItemShape::vector(3);
    let real = GaussianMixture::new(
        vec![0.4, 0.6],
        vec![
            Gaussian::diagonal(vec![-1.0, 0.0, 0.5], &[0.3, 0.5, 0.2]).unwrap(),
            Gaussian::diagonal(vec![1.0, 0.5, -0.5], &[0.4, 0.2, 0.3]).unwrap(),
        ],
    )
    .unwrap();
    let model = real.shifted(&[0.6, -0.4, 0.3]).unwrap();
    let base = Denoiser::gmm(shape, model.clone()).unwrap();
    let truth = Denoiser::gmm(shape, real.clone()).unwrap();
    let disc = Discriminator::analytic(shape, real, model).unwrap();
    let g = guided_denoiser(&base, &disc, GuidanceConfig::new(1.0, 1.0, 1.0).unwrap()).unwrap();
    let mut x = ImageBatch::zeros(100, shape);
    fill_normal(&mut rng_from_seed(3), x.as_mut_slice());
    let mut worst: f64 = 0.0;
    for sigma in [0.2, 1.0, 5.0] {
        let want = truth.analytic_score(&x, sigma).unwrap();
        for stage in [Stage::Predictor, Stage::Corrector] {
            let den = g.denoise_at(&x, sigma, stage).unwrap();
            for (k, w) in want.as_slice().iter().enumerate() {
                let got = (den.as_slice()[k] - x.as_slice()[k]) / (sigma * sigma);
                worst = worst.max((got - w).abs() / w.abs().max(1.0));
            }
        }
    }
    outcome(worst <= 1e-10, format!("100 points x 3 sigmas, max score error = {worst:.2e} (tol 1e-10)"))
}

fn guidance_improvement() -> Outcome {
    let shape = ItemShape::vector(4);
    let cov = DMatrix::from_row_slice(
        4,
        4,
        &[1.0, 0.3, 0.0, 0.1, 0.3, 0.6, 0.1, 0.0, 0.0, 0.1, 0.8, 0.2, 0.1, 0.0, 0.2, 0.4],
    );
    let real_g = Gaussian::new(vec![0.0, 0.5, -0.5, 1.0], cov).unwrap();
    let model_g = real_g.shifted(&[0.5, -0.3, 0.2, 0.4]).unwrap();
    let real = GaussianMixture::single(real_g);
    let model = GaussianMixture::single(model_g.clone());
    let base = Denoiser::gaussian(shape, model_g).unwrap();
    let disc = Discriminator::analytic(shape, real.clone(), model).unwrap();
    let guided = guided_denoiser(&base, &disc, GuidanceConfig::default()).unwrap();
    let sched = NoiseSchedule::edm();
    let n = 20_000;
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..5u64 {
        let real_x = generate_gmm_dataset(&real, n, 1000 + seed).unwrap().data;
        let rs = compute_stats(&real_x).unwrap();
        let fid = |d: &dyn Denoise| {
            let x = sample_heun(d, &sched, 18, n, seed).unwrap().samples;
            frechet_distance(&rs, &compute_stats(&x).unwrap()).unwrap()
        };
        let (u, g) = (fid(&base), fid(&guided));
        wins += usize::from(g < u);
        pairs.push(format!("{u:.4}->{g:.4}"));
    }
    outcome(
        wins == 5,
        format!("guided < unguided in {wins}/5 seeds (unguided->guided FID: {})", pairs.join(", ")),
    )
}

fn slope(steps: &[usize], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = steps.iter().map(|&s| (s as f64).ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / xs.len() as f64, ys.iter().sum::<f64>() / ys.len() as f64);
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

fn convergence_orders() -> Outcome {
    let shape = ItemShape::vector(2);
    let g = Gaussian::new(vec![1.0, -0.5], DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 0.3])).unwrap();
    let d = Denoiser::gaussian(shape, g).unwrap();
    let sched = NoiseSchedule::edm();
    let x0 = initial_noise(&d, sched.sigma_max, 0, 256, 5);
    let terminal = |steps: usize, m: Method| integrate(&d, &sched.sigma_steps(steps).unwrap(), x0.clone(), m).unwrap().0;
    let reference = terminal(10_000, Method::Heun);
    let rms = |x: &ImageBatch| {
        let s: f64 = x.as_slice().iter().zip(reference.as_slice()).map(|(a, b)| (a - b).powi(2)).sum();
        (s / x.len() as f64).sqrt()
    };
    let steps = [10, 20, 40, 80, 160];
    let mut out = Vec::new();
    for m in [Method::Heun, Method::Euler] {
        let errs: Vec<f64> = steps.iter().map(|&s| rms(&terminal(s, m))).collect();
        out.push(slope(&steps, &errs));
    }
    let (heun, euler) = (out[0], out[1]);
    outcome(
        heun <= -1.8 && (-1.3..=-0.7).contains(&euler),
        format!("log-log slopes: heun {heun:.3} (need <= -1.8), euler {euler:.3} (need in [-1.3, -0.7])"),
    )
}

fn random_net(seed: u64) -> (Network, ItemShape) {
    let mut rng = rng_from_seed(seed);
    let act = |rng: &mut rand_chacha::ChaCha8Rng| {
        Layer::Activation([Activation::Relu, Activation::Silu, Activation::Sigmoid][rng.random_range(0..3)])
    };
    let mut layers = Vec::new();
    let shape = if seed.is_multiple_of(2) {
        let d = rng.random_range(2..7);
        let h = rng.random_range(2..9);
        layers.extend([Layer::Dense { inputs: d, outputs: h }, act(&mut rng), Layer::Dropout { rate: 0.2 }]);
        layers.push(Layer::Dense { inputs: h, outputs: 2 });
        ItemShape::vector(d)
    } else {
        let c = rng.random_range(1..3);
        let o = rng.random_range(1..4);
        layers.extend([
            Layer::Conv { in_channels: c, out_channels: o, kernel: 3, stride: rng.random_range(1..3) },
            act(&mut rng),
            Layer::GlobalAvgPool,
            Layer::Dense { inputs: o, outputs: 1 },
        ]);
        ItemShape::new(c, 5, 5)
    };
    (Network::init(layers, seed + 77).unwrap(), shape)
}

fn gradient_checks() -> Outcome {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let (net, shape) = random_net(seed);
        let mut x = ImageBatch::zeros(3, shape);
        fill_normal(&mut rng_from_seed(seed), x.as_mut_slice());
        let out_len = net.output_shape(shape).unwrap().len();
        let mut r = vec![0.0; 3 * out_len];
        fill_normal(&mut rng_from_seed(seed + 500), &mut r);
        let f = |net: &Network, x: &ImageBatch| -> f64 {
            let y = net.forward(x, Mode::Train, &mut rng_from_seed(9)).unwrap();
            y.as_slice().iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let mut tape = Tape::new();
        let y = net.forward_with_tape(&x, Mode::Train, &mut rng_from_seed(9), &mut tape).unwrap();
        let grads = net.backward(&tape, &ImageBatch::from_vec(3, y.shape(), r.clone()).unwrap()).unwrap();
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
        for k in 0..net.param_count() {
            let (mut p, mut m) = (net.clone(), net.clone());
            p.params_mut()[k] += h;
            m.params_mut()[k] -= h;
            worst = worst.max(rel(grads.params[k], (f(&p, &x) - f(&m, &x)) / (2.0 * h)));
        }
        for k in 0..x.as_slice().len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p.as_mut_slice()[k] += h;
            m.as_mut_slice()[k] -= h;
            worst = worst.max(rel(grads.input.as_slice()[k], (f(&net, &p) - f(&net, &m)) / (2.0 * h)));
        }
    }
    outcome(worst <= 1e-4, format!("20 random nets, max relative error = {worst:.2e} (tol 1e-4)"))
}

fn classifier_calibration() -> Outcome {
    let cov = DMatrix::from_row_slice(4, 4, &[1.0, 0.2, 0.0, 0.0, 0.2, 0.7, 0.1, 0.0, 0.0, 0.1, 0.9, 0.3, 0.0, 0.0, 0.3, 0.5]);
    let a = Gaussian::new(vec![0.0; 4], cov.clone()).unwrap();
    let delta = [0.6, -0.4, 0.3, 0.2];
    let b = a.shifted(&delta).unwrap();
    let n = 10_000;
    let draw = |g: &Gaussian, seed| generate_gmm_dataset(&GaussianMixture::single(g.clone()), n, seed).unwrap().data;
    let cfg = ShiftStudyConfig {
        classifier: ClassifierKind::Linear,
        seed: 3,
        ..ShiftStudyConfig::default()
    };
    // Same distribution, independent draws.
    let same = train_shift_classifier(&draw(&a, 1), &draw(&a, 2), &cfg).unwrap();
    // Byte-identical sets.
    let x = draw(&a, 1);
    let ident = train_shift_classifier(&x, &x, &cfg).unwrap();
    // Equal-covariance pair: Bayes accuracy is Phi(Mahalanobis / 2).
    let dv = DVector::from_row_slice(&delta);
    let maha = (dv.transpose() * cov.try_inverse().unwrap() * &dv)[(0, 0)].sqrt();
    let bayes = Normal::new(0.0, 1.0).unwrap().cdf(maha / 2.0);
    let pair = train_shift_classifier(&draw(&a, 3), &draw(&b, 4), &cfg).unwrap();
    let chance = |acc: f64| (0.45..=0.55).contains(&acc);
    let pass = chance(same.best_accuracy)
        && chance(same.final_accuracy)
        && chance(ident.best_accuracy)
        && (pair.best_accuracy - bayes).abs() <= 0.03
        && (pair.final_accuracy - bayes).abs() <= 0.03;
    outcome(
        pass,
        format!(
            "same dist best/final {:.4}/{:.4}, identical sets {:.4}; shifted pair best/final {:.4}/{:.4} vs Bayes {bayes:.4}",
            same.best_accuracy, same.final_accuracy, ident.best_accuracy, pair.best_accuracy, pair.final_accuracy
        ),
    )
}

fn variance_protocol() -> Outcome {
    let shape = ItemShape::vector(2);
    let real = GaussianMixture::new(
        vec![0.5, 0.5],
        vec![
            Gaussian::diagonal(vec![-1.0, 0.0], &[0.3, 0.2]).unwrap(),
            Gaussian::diagonal(vec![1.0, 0.5], &[0.2, 0.3]).unwrap(),
        ],
    )
    .unwrap();
    let pool = generate_gmm_dataset(&real, 10_000, 4).unwrap().data;
    let model = Denoiser::gmm(shape, real.shifted(&[0.2, 0.1]).unwrap()).unwrap();
    let sched = NoiseSchedule::edm();
    let gen = |s: u64| Ok(sample_heun(&model, &sched, 18, 2000, s)?.samples);
    let ex = FeatureExtractor::default();
    let base = VarianceConfig {
        mode: VarianceMode::VaryReal,
        repeats: 10,
        n_real: 2000,
        seed: 11,
        forced_seed: None,
    };
    let vr = fid_variance_protocol(&pool, gen, &ex, &base).unwrap();
    let vg = fid_variance_protocol(
        &pool,
        gen,
        &ex,
        &VarianceConfig {
            mode: VarianceMode::VaryGenerated,
            forced_seed: Some(5),
            ..base
        },
    )
    .unwrap();
    let vg_free = fid_variance_protocol(&pool, gen, &ex, &VarianceConfig { mode: VarianceMode::VaryGenerated, ..base }).unwrap();
    outcome(
        vr.std > 0.0 && vg.std == 0.0 && vr.rows.len() == 10 && vg.rows.len() == 10 && vg_free.std > 0.0,
        format!(
            "vary_real std {:.3e} (10 rows), vary_generated fixed-seed std {:.1e}, vary_generated free-seed std {:.3e}",
            vr.std, vg.std, vg_free.std
        ),
    )
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn end_to_end() -> Outcome {
    let exe = env!("CARGO_BIN_EXE_echolab");
    let smoke = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    let tmp = tempfile::tempdir().unwrap();
    let commands = [
        "generate",
        "fid",
        "optimal-fid",
        "fid-variance",
        "sweep-nfe",
        "train-denoiser",
        "train-discriminator",
        "train-classifier",
    ];
    for (rep, threads) in [("a", None), ("b", Some("2"))] {
        let root = tmp.path().join(rep);
        for c in commands {
            let mut cmd = Command::new(exe);
            cmd.args([c, "--config"]).arg(&smoke).arg("--output").arg(root.join(c));
            if let Some(t) = threads {
                cmd.args(["--threads", t]);
            }
            let out = cmd.output().unwrap();
            if !out.status.success() {
                return outcome(false, format!("{c} failed: {}", String::from_utf8_lossy(&out.stderr)));
            }
        }
        let runs: Vec<String> = commands.iter().map(|c| format!("\"{c}\"")).collect();
        std::fs::write(
            root.join("report.toml"),
            format!("run_id = \"report\"\n[report]\nruns = [{}]\n", runs.join(", ")),
        )
        .unwrap();
        let out = Command::new(exe)
            .args(["report", "--config"])
            .arg(root.join("report.toml"))
            .arg("--output")
            .arg(root.join("report"))
            .output()
            .unwrap();
        if !out.status.success() {
            return outcome(false, format!("report failed: {}", String::from_utf8_lossy(&out.stderr)));
        }
    }
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let files: Vec<PathBuf> = files_under(&a)
        .into_iter()
        .filter(|p| p.file_name().unwrap() != "timings.json")
        .collect();
    let differing: Vec<String> = files
        .iter()
        .filter(|p| std::fs::read(a.join(p)).ok() != std::fs::read(b.join(p)).ok())
        .map(|p| p.display().to_string())
        .collect();
    let same_listing = files_under(&a) == files_under(&b);
    outcome(
        differing.is_empty() && same_listing,
        format!(
            "9 commands run twice (default threads vs --threads 2): {} files compared, {} differ{}",
            files.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(": {}", differing.join(", ")) }
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("nfe accounting", Duration::from_secs(1), nfe_accounting),
        ("fid closed form", Duration::from_secs(10), fid_closed_form),
        ("matrix sqrt reconstruction", Duration::from_secs(30), sqrt_reconstruction),
        ("optimal-discriminator guidance identity", Duration::from_secs(5), guidance_identity),
        ("guidance improvement", Duration::from_secs(300), guidance_improvement),
        ("sampler convergence orders", Duration::from_secs(120), convergence_orders),
        ("gradient checks", Duration::from_secs(60), gradient_checks),
        ("shift-classifier calibration", Duration::from_secs(300), classifier_calibration),
        ("fid-variance protocol", Duration::from_secs(120), variance_protocol),
        ("end-to-end reproducibility", Duration::from_secs(300), end_to_end),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, budget, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let took = start.elapsed();
        let pass = o.pass && took <= budget;
        failed += usize::from(!pass);
        println!(
            "{} {name}: {} [{:.2}s, budget {}s]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
