//! One function per subcommand. Each returns the JSON result record that goes
//! into the run manifest; artifacts are written through [`RunDir`].

use std::fmt::Write as _;

use echolab::data::{
    encode_dataset, generate_gmm_dataset, generate_phantoms, ingest_frame_dir, load_dataset, FrameDataset, IngestConfig,
    PhantomParams,
};
use echolab::diffusion::{train_denoiser, AnalyticSpec, Denoise, Denoiser, Gaussian, GaussianMixture};
use echolab::guidance::{
    epoch_selection, guided_denoiser, train_discriminator, Discriminator, DiscriminatorTrainConfig, NeuralDiscriminator,
};
use echolab::metrics::{
    compute_stats, encode_stats, fid_record, fid_variance_protocol, frechet_distance, optimal_fid, pinned_subsample,
    CachedStats, FeatureStats, VarianceConfig,
};
use echolab::nn::checkpoint;
use echolab::rng::{derive_seed, Stream};
use echolab::samplers::{fid_vs_nfe_sweep, sample, write_sweep_csv};
use echolab::shift::{shift_report, write_shift_csv, ShiftStudyConfig};
use echolab::ImageBatch;
use serde_json::{json, Value};

use crate::config::{Config, DatasetCfg, DenoiserCfg};
use crate::error::{CliError, CliResult};
use crate::manifest::{Manifest, RunDir};

/// The real dataset plus, for synthetic mixtures, its exact distribution.
pub struct RealData {
    pub data: FrameDataset,
    pub mixture: Option<GaussianMixture>,
}

pub fn load_real(cfg: &Config, run: &mut RunDir) -> CliResult<RealData> {
    match &cfg.dataset {
        DatasetCfg::Gmm {
            n,
            weights,
            means,
            variances,
        } => {
            let comps = means
                .iter()
                .zip(variances)
                .map(|(m, v)| Gaussian::diagonal(m.clone(), v))
                .collect::<echolab::Result<Vec<_>>>()?;
            let mix = GaussianMixture::new(weights.clone(), comps)?;
            let samples = generate_gmm_dataset(&mix, *n, cfg.seed)?;
            Ok(RealData {
                data: FrameDataset::from_vectors(samples.data, "gmm")?,
                mixture: Some(mix),
            })
        }
        DatasetCfg::Phantom {
            n,
            height,
            width,
            sector_angle,
            speckle_grain,
            structure_seed,
        } => {
            let params = PhantomParams {
                height: *height,
                width: *width,
                sector_angle: *sector_angle,
                speckle_grain: *speckle_grain,
                structure_seed: *structure_seed,
                ..PhantomParams::default()
            };
            Ok(RealData {
                data: generate_phantoms(&params, *n, cfg.seed)?,
                mixture: None,
            })
        }
        DatasetCfg::File { path } => {
            let path = cfg.resolve_path(path);
            run.record_input(&path)?;
            Ok(RealData {
                data: load_dataset(&path)?,
                mixture: None,
            })
        }
        DatasetCfg::Frames {
            path,
            raw_height,
            raw_width,
            stride,
            resize,
            ..
        } => {
            let dir = cfg.resolve_path(path);
            run.record_input(&dir.join(echolab::data::MANIFEST_FILE))?;
            let ingest = IngestConfig {
                raw_height: *raw_height,
                raw_width: *raw_width,
                stride: *stride,
                target: resize.map(|[h, w]| (h, w)),
            };
            Ok(RealData {
                data: ingest_frame_dir(&dir, &ingest)?,
                mixture: None,
            })
        }
    }
}

fn load_batch(cfg: &Config, run: &mut RunDir, path: &str) -> CliResult<ImageBatch> {
    let path = cfg.resolve_path(path);
    run.record_input(&path)?;
    Ok(load_dataset(&path)?.images)
}

/// Base denoiser plus an optional discriminator for guided sampling.
pub struct Model {
    pub base: Denoiser,
    pub disc: Option<Discriminator>,
}

fn build_denoiser(cfg: &Config, run: &mut RunDir, real: &RealData) -> CliResult<Denoiser> {
    match &cfg.denoiser {
        DenoiserCfg::Analytic { shift, spec: Some(path) } => {
            let path = cfg.resolve_path(path);
            run.record_input(&path)?;
            let text = std::fs::read_to_string(&path)?;
            let d = AnalyticSpec::from_text(&text)?.build()?;
            match (shift, d.mixture()) {
                (Some(delta), Some(mix)) => Ok(Denoiser::gmm(d.item_shape(), mix.shifted(delta)?)?),
                _ => Ok(d),
            }
        }
        DenoiserCfg::Analytic { shift, spec: None } => {
            let mix = real
                .mixture
                .clone()
                .ok_or_else(|| CliError::Config("denoiser.kind: analytic denoiser without a mixture".into()))?;
            let mix = match shift {
                Some(delta) => mix.shifted(delta)?,
                None => mix,
            };
            Ok(Denoiser::gmm(real.data.shape(), mix)?)
        }
        DenoiserCfg::Neural { checkpoint: path, sigma_data } => {
            let path = cfg.resolve_path(path);
            run.record_input(&path)?;
            Ok(Denoiser::neural(checkpoint::load(&path)?, *sigma_data, real.data.shape())?)
        }
    }
}

fn build_discriminator(cfg: &Config, run: &mut RunDir, real: &RealData, base: &Denoiser) -> CliResult<Discriminator> {
    if cfg.guidance.discriminator == "analytic" {
        let (Some(real_mix), Some(model_mix)) = (real.mixture.clone(), base.mixture()) else {
            return Err(CliError::Config(
                "guidance.discriminator: \"analytic\" needs a gmm dataset and an analytic denoiser".into(),
            ));
        };
        return Ok(Discriminator::analytic(base.item_shape(), real_mix, model_mix)?);
    }
    let path = cfg.resolve_path(&cfg.guidance.discriminator);
    run.record_input(&path)?;
    let net = checkpoint::load(&path)?;
    Ok(Discriminator::Neural(NeuralDiscriminator::new(
        net,
        base.item_shape(),
        cfg.discriminator.sigma_data,
    )?))
}

impl Model {
    pub fn build(cfg: &Config, run: &mut RunDir, real: &RealData, with_disc: bool) -> CliResult<Self> {
        let base = build_denoiser(cfg, run, real)?;
        let disc = if with_disc {
            Some(build_discriminator(cfg, run, real, &base)?)
        } else {
            None
        };
        Ok(Self { base, disc })
    }

    /// Runs `f` on the guided denoiser when `guided`, else on the base.
    fn with<T>(&self, cfg: &Config, guided: bool, f: impl FnOnce(&dyn Denoise) -> CliResult<T>) -> CliResult<T> {
        match (guided, &self.disc) {
            (true, Some(disc)) => f(&guided_denoiser(&self.base, disc, cfg.guidance.weights)?),
            (true, None) => Err(CliError::Config("guidance requested without a discriminator".into())),
            (false, _) => f(&self.base),
        }
    }

    fn generate(&self, cfg: &Config, guided: bool, n: usize, seed: u64) -> CliResult<ImageBatch> {
        self.with(cfg, guided, |d| {
            Ok(sample(d, &cfg.schedule, cfg.sampler.steps, n, seed, cfg.sampler.method)?.samples)
        })
    }
}

fn stats(cfg: &Config, x: &ImageBatch) -> CliResult<FeatureStats> {
    Ok(compute_stats(&cfg.metric.extractor.extract(x)?)?)
}

/// Real features, subsampled to `metric.n_real` when set. The subsample seed
/// is `metric.split_seed` when pinned, so every run shares one subsample.
fn real_subsample(cfg: &Config, run: &mut RunDir, real: &ImageBatch) -> CliResult<ImageBatch> {
    let Some(n) = cfg.metric.n_real.filter(|&n| n < real.len()) else {
        return Ok(real.clone());
    };
    let seed = if cfg.metric.pin_subsample { cfg.metric.split_seed } else { cfg.seed };
    let idx = pinned_subsample(real.len(), n, seed)?;
    let mut text = String::new();
    for i in &idx {
        writeln!(text, "{i}").unwrap();
    }
    run.write("subsample.idx", text.as_bytes())?;
    Ok(real.select(&idx))
}

fn dataset_like(real: &FrameDataset, images: ImageBatch, source: &str) -> CliResult<FrameDataset> {
    let manifest = (0..images.len())
        .map(|i| echolab::data::ManifestEntry {
            source_id: source.to_string(),
            frame_index: i as u64,
        })
        .collect();
    Ok(FrameDataset::new(images, manifest, real.native_lo, real.native_hi)?)
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("plain data serializes")
}

pub fn generate(cfg: &Config, run: &mut RunDir) -> CliResult<Value> {
    let real = load_real(cfg, run)?;
    let model = Model::build(cfg, run, &real, cfg.guidance.enabled)?;
    let out = model.with(cfg, cfg.guidance.enabled, |d| {
        Ok(sample(d, &cfg.schedule, cfg.sampler.steps, cfg.sampler.n, cfg.seed, cfg.sampler.method)?)
    })?;
    let ds = dataset_like(&real.data, out.samples, "generated")?;
    run.write("samples.dbds", &encode_dataset(&ds))?;
    Ok(json!({
        "method": out.method,
        "steps": out.steps,
        "nfe": out.nfe,
        "n": ds.len(),
        "seed": out.seed,
        "guided": out.guidance.is_some(),
        "samples_digest": echolab::digest::hex(ds.digest()),
    }))
}

fn generated_set(cfg: &Config, run: &mut RunDir, real: &RealData, path: Option<&String>) -> CliResult<ImageBatch> {
    match path {
        Some(p) => load_batch(cfg, run, p),
        None => {
            let model = Model::build(cfg, run, real, cfg.guidance.enabled)?;
            model.generate(cfg, cfg.guidance.enabled, cfg.sampler.n, cfg.seed)
        }
    }
}

pub fn fid(cfg: &Config, run: &mut RunDir) -> CliResult<Value> {
    let real = load_real(cfg, run)?;
    let real_sub = real_subsample(cfg, run, &real.data.images)?;
    let real_stats = stats(cfg, &real_sub)?;
    let cached = CachedStats {
        extractor: cfg.metric.extractor.id(),
        stats: real_stats,
    };
    run.write("real_stats.dbfs", &encode_stats(&cached))?;
    let gen = generated_set(cfg, run, &real, cfg.metric.generated.as_ref())?;
    let gen_stats = stats(cfg, &gen)?;
    let record = fid_record(&cached.stats, &gen_stats, &cfg.metric.extractor, cfg.seed)?;
    let text = serde_json::to_string_pretty(&record).expect("record serializes");
    run.write("fid.json", (text + "\n").as_bytes())?;
    println!("fid = {}", record.value);
    Ok(to_json(&record))
}

pub fn optimal(cfg: &Config, run: &mut RunDir) -> CliResult<Value> {
    let real = load_real(cfg, run)?;
    let r = optimal_fid(&real.data.images, &cfg.metric.extractor, cfg.metric.split_seed)?;
    let record = json!({
        "extractor": cfg.metric.extractor.id(),
        "value": r.value,
        "n_first": r.n_first,
        "n_second": r.n_second,
        "split_seed": r.split_seed,
    });
    run.write("optimal_fid.json", (serde_json::to_string_pretty(&record).unwrap() + "\n").as_bytes())?;
    println!("optimal fid = {}", r.value);
    Ok(record)
}

pub fn fid_variance(cfg: &Config, run: &mut RunDir) -> CliResult<Value> {
    let real = load_real(cfg, run)?;
    let pool = &real.data.images;
    let model = Model::build(cfg, run, &real, cfg.guidance.enabled)?;
    let vc = VarianceConfig {
        mode: cfg.metric.mode,
        repeats: cfg.metric.repeats,
        n_real: cfg.metric.n_real.unwrap_or(pool.len() / 2),
        seed: cfg.seed,
        forced_seed: cfg.metric.forced_seed,
    };
    let r = fid_variance_protocol(
        pool,
        |s| model.generate(cfg, cfg.guidance.enabled, cfg.sampler.n, s).map_err(|e| match e {
            CliError::Core(e) => e,
            other => echolab::Error::InvalidArgument(other.to_string()),
        }),
        &cfg.metric.extractor,
        &vc,
    )?;
    let mut csv = String::from("repeat,seed,fid\n");
    for row in &r.rows {
        writeln!(csv, "{},{},{}", row.repeat, row.seed, row.value).unwrap();
    }
    run.write("fid_variance.csv", csv.as_bytes())?;
    let summary = format!(
        "{} over {} repeats: fid = {} +- {} (sample std){}\n",
        r.mode,
        r.rows.len(),
        r.mean,
        r.std,
        if r.overlapping { "; real subsamples overlap" } else { "" }
    );
    run.write("fid_variance_summary.txt", summary.as_bytes())?;
    print!("{summary}");
    Ok(json!({ "n_real": vc.n_real, "result": to_json(&r) }))
}

pub fn sweep(cfg: &Config, run: &mut RunDir) -> CliResult<Value> {
    let real = load_real(cfg, run)?;
    let real_sub = real_subsample(cfg, run, &real.data.images)?;
    let real_stats = stats(cfg, &real_sub)?;
    let model = Model::build(cfg, run, &real, cfg.guidance.enabled)?;
    let rows = model.with(cfg, cfg.guidance.enabled, |d| {
        Ok(fid_vs_nfe_sweep(
            d,
            &cfg.schedule,
            &cfg.sampler.step_list,
            cfg.sampler.n,
            cfg.seed,
            cfg.sampler.method,
            |x| frechet_distance(&real_stats, &compute_stats(&cfg.metric.extractor.extract(x)?)?),
        )?)
    })?;
    let mut csv = Vec::new();
    write_sweep_csv(&rows, &mut csv)?;
    run.write("sweep.csv", &csv)?;
    Ok(json!({ "rows": to_json(&rows) }))
}

pub fn train_denoiser_cmd(cfg: &Config, run: &mut RunDir) -> CliResult<Value> {
    let real = load_real(cfg, run)?;
    let t = train_denoiser(&real.data.images, &cfg.schedule, &cfg.training)?;
    for (i, net) in t.checkpoints.iter().enumerate() {
        run.write(&format!("checkpoints/denoiser_epoch_{i:03}.dbnn"), &checkpoint::encode(net))?;
    }
    let last = t.checkpoints.last().expect("epochs >= 1");
    run.write("denoiser.dbnn", &checkpoint::encode(last))?;
    let mut csv = String::from("epoch,train_loss,eval_loss\n");
    for e in &t.log {
        writeln!(csv, "{},{},{}", e.epoch, e.train_loss, e.eval_loss).unwrap();
    }
    run.write("loss.csv", csv.as_bytes())?;
    Ok(json!({ "epochs": to_json(&t.log) }))
}

pub fn train_discriminator_cmd(cfg: &Config, run: &mut RunDir) -> CliResult<Value> {
    let real = load_real(cfg, run)?;
    let model = Model::build(cfg, run, &real, false)?;
    let generated = match &cfg.discriminator.generated {
        Some(p) => load_batch(cfg, run, p)?,
        None => model.generate(cfg, false, cfg.sampler.n, cfg.seed)?,
    };
    let dc = DiscriminatorTrainConfig {
        epochs: cfg.discriminator.epochs,
        lr: cfg.discriminator.lr,
        batch_size: cfg.discriminator.batch_size,
        hidden: cfg.discriminator.hidden,
        train_fraction: 0.9,
        sigma_data: cfg.discriminator.sigma_data,
        seed: cfg.seed,
    };
    let t = train_discriminator(&real.data.images, &generated, &cfg.schedule, &dc)?;
    let shape = real.data.shape();

    // Pick the checkpoint whose guided samples score the lowest FID.
    let selection = if cfg.discriminator.select {
        let real_stats = stats(cfg, &real.data.images)?;
        let eval_seed = derive_seed(cfg.seed, Stream::Protocol, 3);
        Some(epoch_selection(&t.checkpoints, |_, net| {
            let disc = Discriminator::Neural(NeuralDiscriminator::new(net.clone(), shape, dc.sigma_data)?);
            let g = guided_denoiser(&model.base, &disc, cfg.guidance.weights)?;
            let x = sample(&g, &cfg.schedule, cfg.sampler.steps, cfg.sampler.n, eval_seed, cfg.sampler.method)?.samples;
            frechet_distance(&real_stats, &compute_stats(&cfg.metric.extractor.extract(&x)?)?)
        })?)
    } else {
        None
    };
    let chosen = selection.as_ref().map_or(t.checkpoints.len() - 1, |s| s.best);

    for (i, net) in t.checkpoints.iter().enumerate() {
        run.write(&format!("checkpoints/discriminator_epoch_{i:03}.dbnn"), &checkpoint::encode(net))?;
    }
    run.write("discriminator.dbnn", &checkpoint::encode(&t.checkpoints[chosen]))?;
    let mut csv = String::from("epoch,train_loss,val_loss,val_accuracy,guided_fid\n");
    for (i, e) in t.log.iter().enumerate() {
        let fid = selection.as_ref().map(|s| s.fids[i].to_string()).unwrap_or_default();
        writeln!(csv, "{},{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.val_accuracy, fid).unwrap();
    }
    run.write("discriminator_log.csv", csv.as_bytes())?;
    Ok(json!({
        "initial_loss": t.initial_loss,
        "epochs": to_json(&t.log),
        "selected_epoch": chosen,
        "selection_fids": selection.map(|s| s.fids),
    }))
}

pub fn train_classifier(cfg: &Config, run: &mut RunDir) -> CliResult<Value> {
    let real = load_real(cfg, run)?;
    let c = &cfg.classifier;
    let needs_model = c.pre.is_none() || c.post.is_none();
    let model = if needs_model {
        Some(Model::build(cfg, run, &real, c.post.is_none())?)
    } else {
        None
    };
    let n = cfg.sampler.n;
    let pre = match &c.pre {
        Some(p) => load_batch(cfg, run, p)?,
        None => model.as_ref().unwrap().generate(cfg, false, n, cfg.seed)?,
    };
    let post = match &c.post {
        Some(p) => load_batch(cfg, run, p)?,
        None => model.as_ref().unwrap().generate(cfg, true, n, cfg.seed)?,
    };
    let mut cells = Vec::new();
    for &classifier in &c.kinds {
        for &augment in &c.augment {
            for &seed in &c.seeds {
                cells.push(ShiftStudyConfig {
                    classifier,
                    augment,
                    epochs: c.epochs,
                    lr: c.lr,
                    batch_size: c.batch_size,
                    split: c.split,
                    seed,
                });
            }
        }
    }
    let rows = shift_report(&real.data.images, &pre, &post, &cells)?;
    let mut csv = Vec::new();
    write_shift_csv(&rows, &mut csv)?;
    run.write("shift_report.csv", &csv)?;
    Ok(json!({ "rows": to_json(&rows) }))
}

/// Flattens a JSON value into `(dotted.path, scalar text)` leaves in key order.
fn leaves(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(map) => map.iter().for_each(|(k, v)| leaves(&join(k), v, out)),
        Value::Array(items) => items
            .iter()
            .enumerate()
            .for_each(|(i, v)| leaves(&join(&i.to_string()), v, out)),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn report(cfg: &Config, run: &mut RunDir) -> CliResult<Value> {
    if cfg.report_runs.is_empty() {
        return Err(CliError::Config("report.runs: list at least one run directory".into()));
    }
    let mut csv = String::from("run_id,command,key,value\n");
    let mut summary = String::new();
    let mut runs = Vec::new();
    for dir in &cfg.report_runs {
        let m = Manifest::load_verified(&cfg.resolve_path(dir))?;
        let mut rows = Vec::new();
        leaves("", &m.results, &mut rows);
        for (k, v) in &rows {
            writeln!(csv, "{},{},{},{}", csv_field(&m.run_id), m.command, csv_field(k), csv_field(v)).unwrap();
        }
        writeln!(summary, "{} ({}): {} records, manifest {}", m.run_id, m.command, rows.len(), m.digest.as_deref().unwrap_or("")).unwrap();
        runs.push(json!({ "run_id": m.run_id, "command": m.command, "records": rows.len(), "manifest_digest": m.digest }));
    }
    run.write("report.csv", csv.as_bytes())?;
    run.write("summary.txt", summary.as_bytes())?;
    print!("{summary}");
    Ok(json!({ "runs": runs }))
}
