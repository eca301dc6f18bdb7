//! Run configuration: a TOML document checked key-by-key against a fixed
//! schema, then resolved into typed sections with every default filled in.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use echolab::diffusion::{DenoiserTrainConfig, NoiseSchedule, ScheduleKind};
use echolab::guidance::GuidanceConfig;
use echolab::metrics::{FeatureExtractor, VarianceMode};
use echolab::samplers::Method;
use echolab::shift::ClassifierKind;
use serde::Serialize;
use toml::Value;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ty {
    Str,
    Int,
    Float,
    Bool,
    IntList,
    FloatList,
    StrList,
    BoolList,
    FloatMatrix,
}

impl Ty {
    fn name(self) -> &'static str {
        match self {
            Ty::Str => "a string",
            Ty::Int => "a non-negative integer",
            Ty::Float => "a number",
            Ty::Bool => "a boolean",
            Ty::IntList => "a list of non-negative integers",
            Ty::FloatList => "a list of numbers",
            Ty::StrList => "a list of strings",
            Ty::BoolList => "a list of booleans",
            Ty::FloatMatrix => "a list of lists of numbers",
        }
    }
}

const SCHEMA: &[(&str, Ty)] = &[
    ("run_id", Ty::Str),
    ("seed", Ty::Int),
    ("dataset.kind", Ty::Str),
    ("dataset.n", Ty::Int),
    ("dataset.path", Ty::Str),
    ("dataset.weights", Ty::FloatList),
    ("dataset.means", Ty::FloatMatrix),
    ("dataset.variances", Ty::FloatMatrix),
    ("dataset.height", Ty::Int),
    ("dataset.width", Ty::Int),
    ("dataset.sector_angle", Ty::Float),
    ("dataset.speckle_grain", Ty::Float),
    ("dataset.structure_seed", Ty::Int),
    ("dataset.raw_height", Ty::Int),
    ("dataset.raw_width", Ty::Int),
    ("dataset.stride", Ty::Int),
    ("dataset.resize", Ty::IntList),
    ("denoiser.kind", Ty::Str),
    ("denoiser.shift", Ty::FloatList),
    ("denoiser.spec", Ty::Str),
    ("denoiser.checkpoint", Ty::Str),
    ("denoiser.sigma_data", Ty::Float),
    ("schedule.kind", Ty::Str),
    ("schedule.sigma_min", Ty::Float),
    ("schedule.sigma_max", Ty::Float),
    ("schedule.rho", Ty::Float),
    ("sampler.method", Ty::Str),
    ("sampler.steps", Ty::Int),
    ("sampler.n", Ty::Int),
    ("sampler.step_list", Ty::IntList),
    ("guidance.enabled", Ty::Bool),
    ("guidance.weight_first_order", Ty::Float),
    ("guidance.weight_correction", Ty::Float),
    ("guidance.dg_scale", Ty::Float),
    ("guidance.discriminator", Ty::Str),
    ("metric.extractor", Ty::Str),
    ("metric.downsample", Ty::Int),
    ("metric.dim", Ty::Int),
    ("metric.extractor_seed", Ty::Int),
    ("metric.n_real", Ty::Int),
    ("metric.pin_subsample", Ty::Bool),
    ("metric.split_seed", Ty::Int),
    ("metric.generated", Ty::Str),
    ("metric.mode", Ty::Str),
    ("metric.repeats", Ty::Int),
    ("metric.forced_seed", Ty::Int),
    ("training.epochs", Ty::Int),
    ("training.lr", Ty::Float),
    ("training.batch_size", Ty::Int),
    ("training.dropout", Ty::Float),
    ("training.hidden", Ty::Int),
    ("training.sigma_data", Ty::Float),
    ("discriminator.epochs", Ty::Int),
    ("discriminator.lr", Ty::Float),
    ("discriminator.batch_size", Ty::Int),
    ("discriminator.hidden", Ty::Int),
    ("discriminator.sigma_data", Ty::Float),
    ("discriminator.generated", Ty::Str),
    ("discriminator.select", Ty::Bool),
    ("classifier.kinds", Ty::StrList),
    ("classifier.augment", Ty::BoolList),
    ("classifier.epochs", Ty::Int),
    ("classifier.lr", Ty::Float),
    ("classifier.batch_size", Ty::Int),
    ("classifier.split", Ty::Float),
    ("classifier.seeds", Ty::IntList),
    ("classifier.pre", Ty::Str),
    ("classifier.post", Ty::Str),
    ("report.runs", Ty::StrList),
];

/// Keys valid only for particular values of a section's `kind`.
const KIND_KEYS: &[(&str, &str, &[&str])] = &[
    ("dataset", "gmm", &["n", "weights", "means", "variances"]),
    (
        "dataset",
        "phantom",
        &["n", "height", "width", "sector_angle", "speckle_grain", "structure_seed"],
    ),
    ("dataset", "file", &["path"]),
    ("dataset", "frames", &["path", "raw_height", "raw_width", "stride", "resize"]),
    ("denoiser", "analytic", &["shift", "spec"]),
    ("denoiser", "neural", &["checkpoint", "sigma_data"]),
];

fn config_err(path: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {msg}"))
}

/// Flattened `dotted.key -> value` view of a TOML document.
#[derive(Debug, Default)]
pub struct RawConfig {
    values: BTreeMap<String, Value>,
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&path, t, out),
            other => {
                out.insert(path, other.clone());
            }
        }
    }
}

fn type_ok(v: &Value, ty: Ty) -> bool {
    let num = |v: &Value| matches!(v, Value::Float(_) | Value::Integer(_));
    let nonneg = |v: &Value| matches!(v, Value::Integer(i) if *i >= 0);
    let list = |v: &Value, f: &dyn Fn(&Value) -> bool| matches!(v, Value::Array(a) if a.iter().all(f));
    match ty {
        Ty::Str => v.is_str(),
        Ty::Int => nonneg(v),
        Ty::Float => num(v),
        Ty::Bool => v.is_bool(),
        Ty::IntList => list(v, &nonneg),
        Ty::FloatList => list(v, &num),
        Ty::StrList => list(v, &|x| x.is_str()),
        Ty::BoolList => list(v, &|x| x.is_bool()),
        Ty::FloatMatrix => list(v, &|row| list(row, &num)),
    }
}

fn as_f64(v: &Value) -> f64 {
    match v {
        Value::Float(f) => *f,
        Value::Integer(i) => *i as f64,
        _ => unreachable!("type checked"),
    }
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let mut values = BTreeMap::new();
        flatten("", &table, &mut values);
        for (path, v) in &values {
            let Some((_, ty)) = SCHEMA.iter().find(|(k, _)| k == path) else {
                return Err(config_err(path, "unknown key"));
            };
            if !type_ok(v, *ty) {
                return Err(config_err(path, format!("expected {}", ty.name())));
            }
        }
        for (section, _, _) in KIND_KEYS {
            let kind_key = format!("{section}.kind");
            let kind = values.get(&kind_key).and_then(|v| v.as_str().map(str::to_string));
            let default_kind = if *section == "dataset" { "gmm" } else { "analytic" };
            let kind = kind.unwrap_or_else(|| default_kind.to_string());
            let allowed: Vec<&str> = KIND_KEYS
                .iter()
                .filter(|(s, k, _)| s == section && *k == kind)
                .flat_map(|(_, _, keys)| keys.iter().copied())
                .collect();
            for path in values.keys() {
                if let Some(rest) = path.strip_prefix(&format!("{section}.")) {
                    if rest != "kind" && !allowed.contains(&rest) {
                        return Err(config_err(path, format!("not used when {kind_key} = \"{kind}\"")));
                    }
                }
            }
        }
        Ok(Self { values })
    }

    fn get(&self, path: &str) -> Option<&Value> {
        self.values.get(path)
    }

    fn str_or(&self, path: &str, default: &str) -> String {
        self.get(path).and_then(|v| v.as_str()).unwrap_or(default).to_string()
    }

    fn opt_str(&self, path: &str) -> Option<String> {
        self.get(path).and_then(|v| v.as_str()).map(str::to_string)
    }

    fn u64_or(&self, path: &str, default: u64) -> u64 {
        self.get(path).and_then(|v| v.as_integer()).map(|i| i as u64).unwrap_or(default)
    }

    fn opt_u64(&self, path: &str) -> Option<u64> {
        self.get(path).and_then(|v| v.as_integer()).map(|i| i as u64)
    }

    fn usize_or(&self, path: &str, default: usize) -> usize {
        self.u64_or(path, default as u64) as usize
    }

    fn f64_or(&self, path: &str, default: f64) -> f64 {
        self.get(path).map(as_f64).unwrap_or(default)
    }

    fn bool_or(&self, path: &str, default: bool) -> bool {
        self.get(path).and_then(|v| v.as_bool()).unwrap_or(default)
    }

    fn array(&self, path: &str) -> Option<&Vec<Value>> {
        self.get(path).and_then(|v| v.as_array())
    }

    fn f64_list(&self, path: &str) -> Option<Vec<f64>> {
        self.array(path).map(|a| a.iter().map(as_f64).collect())
    }

    fn usize_list(&self, path: &str) -> Option<Vec<usize>> {
        self.array(path)
            .map(|a| a.iter().map(|v| v.as_integer().unwrap_or(0) as usize).collect())
    }

    fn u64_list(&self, path: &str) -> Option<Vec<u64>> {
        self.array(path)
            .map(|a| a.iter().map(|v| v.as_integer().unwrap_or(0) as u64).collect())
    }

    fn str_list(&self, path: &str) -> Option<Vec<String>> {
        self.array(path)
            .map(|a| a.iter().map(|v| v.as_str().unwrap_or("").to_string()).collect())
    }

    fn bool_list(&self, path: &str) -> Option<Vec<bool>> {
        self.array(path).map(|a| a.iter().map(|v| v.as_bool().unwrap_or(false)).collect())
    }

    fn matrix(&self, path: &str) -> Option<Vec<Vec<f64>>> {
        self.array(path).map(|rows| {
            rows.iter()
                .map(|r| r.as_array().map(|a| a.iter().map(as_f64).collect()).unwrap_or_default())
                .collect()
        })
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetCfg {
    Gmm {
        n: usize,
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        /// Diagonal covariance per component.
        variances: Vec<Vec<f64>>,
    },
    Phantom {
        n: usize,
        height: usize,
        width: usize,
        sector_angle: f64,
        speckle_grain: f64,
        structure_seed: u64,
    },
    File {
        path: String,
    },
    Frames {
        path: String,
        raw_height: usize,
        raw_width: usize,
        stride: usize,
        resize: Option<[usize; 2]>,
        interpolation: &'static str,
    },
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DenoiserCfg {
    /// Exact posterior mean of the dataset's mixture, optionally shifted to
    /// make a deliberately biased model; or of a mixture read from `spec`.
    Analytic { shift: Option<Vec<f64>>, spec: Option<String> },
    Neural { checkpoint: String, sigma_data: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct SamplerCfg {
    pub method: Method,
    pub steps: usize,
    pub n: usize,
    pub step_list: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GuidanceCfg {
    pub enabled: bool,
    pub weights: GuidanceConfig,
    /// `"analytic"` or a discriminator checkpoint path.
    pub discriminator: String,
    pub composition: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricCfg {
    pub extractor: FeatureExtractor,
    pub n_real: Option<usize>,
    pub pin_subsample: bool,
    pub split_seed: u64,
    pub generated: Option<String>,
    pub mode: VarianceMode,
    pub repeats: usize,
    pub forced_seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiscriminatorCfg {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub sigma_data: f64,
    pub generated: Option<String>,
    pub select: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassifierCfg {
    pub kinds: Vec<ClassifierKind>,
    pub augment: Vec<bool>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub split: f64,
    pub seeds: Vec<u64>,
    pub pre: Option<String>,
    pub post: Option<String>,
    pub convnet_substitute_for: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct Config {
    pub run_id: String,
    pub seed: u64,
    pub dataset: DatasetCfg,
    pub denoiser: DenoiserCfg,
    pub schedule: NoiseSchedule,
    pub sampler: SamplerCfg,
    pub guidance: GuidanceCfg,
    pub metric: MetricCfg,
    pub training: DenoiserTrainConfig,
    pub discriminator: DiscriminatorCfg,
    pub classifier: ClassifierCfg,
    pub report_runs: Vec<String>,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn positive(path: &str, v: usize) -> Result<usize, CliError> {
    if v == 0 {
        Err(config_err(path, "must be >= 1"))
    } else {
        Ok(v)
    }
}

fn positive_f(path: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(config_err(path, format!("must be a positive finite number, got {v}")))
    }
}

fn parse_enum<T: std::str::FromStr>(path: &str, s: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| config_err(path, e))
}

const DEFAULT_MEANS: [[f64; 2]; 2] = [[-1.0, 0.0], [1.0, 0.5]];
const DEFAULT_VARIANCES: [[f64; 2]; 2] = [[0.3, 0.2], [0.2, 0.3]];

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_text(&text, base)
    }

    pub fn from_text(text: &str, base_dir: PathBuf) -> Result<Self, CliError> {
        let raw = RawConfig::parse(text)?;
        Self::resolve(&raw, base_dir)
    }

    fn resolve(r: &RawConfig, base_dir: PathBuf) -> Result<Self, CliError> {
        let run_id = r.str_or("run_id", "run");
        if run_id.is_empty() || run_id.contains(['/', '\\', ',']) {
            return Err(config_err("run_id", "must be non-empty without '/', '\\' or ','"));
        }
        let seed = r.u64_or("seed", 0);

        let dataset = match r.str_or("dataset.kind", "gmm").as_str() {
            "gmm" => {
                let means = r
                    .matrix("dataset.means")
                    .unwrap_or_else(|| DEFAULT_MEANS.iter().map(|m| m.to_vec()).collect());
                let variances = r
                    .matrix("dataset.variances")
                    .unwrap_or_else(|| DEFAULT_VARIANCES.iter().map(|m| m.to_vec()).collect());
                let k = means.len();
                let weights = r.f64_list("dataset.weights").unwrap_or_else(|| vec![1.0 / k as f64; k]);
                if k == 0 || weights.len() != k || variances.len() != k {
                    return Err(config_err(
                        "dataset.means",
                        "weights, means and variances need one entry per component",
                    ));
                }
                let d = means[0].len();
                if d == 0 || means.iter().chain(&variances).any(|m| m.len() != d) {
                    return Err(config_err("dataset.variances", "every mean and variance row needs the same length"));
                }
                DatasetCfg::Gmm {
                    n: positive("dataset.n", r.usize_or("dataset.n", 2000))?,
                    weights,
                    means,
                    variances,
                }
            }
            "phantom" => DatasetCfg::Phantom {
                n: positive("dataset.n", r.usize_or("dataset.n", 256))?,
                height: positive("dataset.height", r.usize_or("dataset.height", 32))?,
                width: positive("dataset.width", r.usize_or("dataset.width", 32))?,
                sector_angle: r.f64_or("dataset.sector_angle", 75.0),
                speckle_grain: r.f64_or("dataset.speckle_grain", 1.0),
                structure_seed: r.u64_or("dataset.structure_seed", 0),
            },
            "file" => DatasetCfg::File {
                path: r.opt_str("dataset.path").ok_or_else(|| config_err("dataset.path", "required"))?,
            },
            "frames" => {
                let resize = match r.usize_list("dataset.resize") {
                    None => None,
                    Some(v) if v.len() == 2 && v[0] > 0 && v[1] > 0 => Some([v[0], v[1]]),
                    Some(_) => return Err(config_err("dataset.resize", "expected [height, width] with positive entries")),
                };
                DatasetCfg::Frames {
                    path: r.opt_str("dataset.path").ok_or_else(|| config_err("dataset.path", "required"))?,
                    raw_height: positive("dataset.raw_height", r.usize_or("dataset.raw_height", 0))?,
                    raw_width: positive("dataset.raw_width", r.usize_or("dataset.raw_width", 0))?,
                    stride: positive("dataset.stride", r.usize_or("dataset.stride", 5))?,
                    resize,
                    interpolation: "bilinear",
                }
            }
            other => return Err(config_err("dataset.kind", format!("unknown kind {other:?}"))),
        };

        let denoiser = match r.str_or("denoiser.kind", "analytic").as_str() {
            "analytic" => DenoiserCfg::Analytic {
                shift: r.f64_list("denoiser.shift"),
                spec: r.opt_str("denoiser.spec"),
            },
            "neural" => DenoiserCfg::Neural {
                checkpoint: r
                    .opt_str("denoiser.checkpoint")
                    .ok_or_else(|| config_err("denoiser.checkpoint", "required for neural denoisers"))?,
                sigma_data: positive_f("denoiser.sigma_data", r.f64_or("denoiser.sigma_data", 0.5))?,
            },
            other => return Err(config_err("denoiser.kind", format!("unknown kind {other:?}"))),
        };
        if let (DenoiserCfg::Analytic { spec: None, .. }, false) = (&denoiser, matches!(dataset, DatasetCfg::Gmm { .. })) {
            return Err(config_err(
                "denoiser.kind",
                "analytic denoisers need dataset.kind = \"gmm\" or denoiser.spec",
            ));
        }

        let kind: ScheduleKind = parse_enum("schedule.kind", &r.str_or("schedule.kind", "edm"))?;
        let mut schedule = NoiseSchedule::of_kind(kind);
        schedule.sigma_min = r.f64_or("schedule.sigma_min", schedule.sigma_min);
        schedule.sigma_max = r.f64_or("schedule.sigma_max", schedule.sigma_max);
        schedule.rho = r.f64_or("schedule.rho", schedule.rho);
        schedule.validate().map_err(|e| config_err("schedule", e))?;

        let sampler = SamplerCfg {
            method: parse_enum("sampler.method", &r.str_or("sampler.method", "heun"))?,
            steps: positive("sampler.steps", r.usize_or("sampler.steps", 18))?,
            n: positive("sampler.n", r.usize_or("sampler.n", 1000))?,
            step_list: r.usize_list("sampler.step_list").unwrap_or_else(|| vec![2, 5, 10, 50]),
        };
        if sampler.step_list.is_empty() || sampler.step_list.contains(&0) {
            return Err(config_err("sampler.step_list", "must be non-empty with entries >= 1"));
        }

        let defaults = GuidanceConfig::default();
        let weights = GuidanceConfig {
            weight_first_order: r.f64_or("guidance.weight_first_order", defaults.weight_first_order),
            weight_correction: r.f64_or("guidance.weight_correction", defaults.weight_correction),
            dg_scale: r.f64_or("guidance.dg_scale", defaults.dg_scale),
        };
        weights.validate().map_err(|e| config_err("guidance", e))?;
        let guidance = GuidanceCfg {
            enabled: r.bool_or("guidance.enabled", false),
            weights,
            discriminator: r.str_or("guidance.discriminator", "analytic"),
            composition: "score + w_stage * dg_scale * grad log(d / (1 - d)); w_stage = weight_first_order on predictor, weight_correction on corrector",
        };

        let extractor = match r.str_or("metric.extractor", "raw_pixels").as_str() {
            "raw_pixels" => FeatureExtractor::RawPixels {
                downsample: positive("metric.downsample", r.usize_or("metric.downsample", 1))?,
            },
            "random_projection" => FeatureExtractor::RandomProjection {
                dim: positive("metric.dim", r.usize_or("metric.dim", 64))?,
                seed: r.u64_or("metric.extractor_seed", 0),
            },
            "random_conv" => FeatureExtractor::RandomConv {
                seed: r.u64_or("metric.extractor_seed", 0),
                dim: positive("metric.dim", r.usize_or("metric.dim", 64))?,
            },
            other => return Err(config_err("metric.extractor", format!("unknown extractor {other:?}"))),
        };
        let metric = MetricCfg {
            extractor,
            n_real: r.opt_u64("metric.n_real").map(|v| v as usize),
            pin_subsample: r.bool_or("metric.pin_subsample", true),
            split_seed: r.u64_or("metric.split_seed", 0),
            generated: r.opt_str("metric.generated"),
            mode: parse_enum("metric.mode", &r.str_or("metric.mode", "vary_real"))?,
            repeats: r.usize_or("metric.repeats", 10),
            forced_seed: r.opt_u64("metric.forced_seed"),
        };
        if metric.repeats < 2 {
            return Err(config_err("metric.repeats", "must be >= 2"));
        }
        if metric.n_real.is_some_and(|n| n < 2) {
            return Err(config_err("metric.n_real", "must be >= 2"));
        }

        let td = DenoiserTrainConfig::default();
        let training = DenoiserTrainConfig {
            epochs: positive("training.epochs", r.usize_or("training.epochs", td.epochs))?,
            lr: positive_f("training.lr", r.f64_or("training.lr", td.lr))?,
            batch_size: positive("training.batch_size", r.usize_or("training.batch_size", td.batch_size))?,
            dropout: r.f64_or("training.dropout", td.dropout),
            hidden: positive("training.hidden", r.usize_or("training.hidden", td.hidden))?,
            sigma_data: positive_f("training.sigma_data", r.f64_or("training.sigma_data", td.sigma_data))?,
            seed,
        };
        if !(0.0..1.0).contains(&training.dropout) {
            return Err(config_err("training.dropout", "must be in [0, 1)"));
        }

        let discriminator = DiscriminatorCfg {
            epochs: positive("discriminator.epochs", r.usize_or("discriminator.epochs", 5))?,
            lr: positive_f("discriminator.lr", r.f64_or("discriminator.lr", 1e-3))?,
            batch_size: positive("discriminator.batch_size", r.usize_or("discriminator.batch_size", 128))?,
            hidden: positive("discriminator.hidden", r.usize_or("discriminator.hidden", 32))?,
            sigma_data: positive_f("discriminator.sigma_data", r.f64_or("discriminator.sigma_data", 0.5))?,
            generated: r.opt_str("discriminator.generated"),
            select: r.bool_or("discriminator.select", true),
        };

        let kinds = r
            .str_list("classifier.kinds")
            .unwrap_or_else(|| vec!["linear".into()])
            .iter()
            .map(|s| parse_enum("classifier.kinds", s))
            .collect::<Result<Vec<ClassifierKind>, _>>()?;
        let classifier = ClassifierCfg {
            kinds,
            augment: r.bool_list("classifier.augment").unwrap_or_else(|| vec![false]),
            epochs: positive("classifier.epochs", r.usize_or("classifier.epochs", 50))?,
            lr: positive_f("classifier.lr", r.f64_or("classifier.lr", 1e-4))?,
            batch_size: positive("classifier.batch_size", r.usize_or("classifier.batch_size", 64))?,
            split: r.f64_or("classifier.split", 0.9),
            seeds: r.u64_list("classifier.seeds").unwrap_or_else(|| vec![seed]),
            pre: r.opt_str("classifier.pre"),
            post: r.opt_str("classifier.post"),
            convnet_substitute_for: "ResNet-18",
        };
        if !(classifier.split > 0.0 && classifier.split < 1.0) {
            return Err(config_err("classifier.split", "must be in (0, 1)"));
        }
        if classifier.kinds.is_empty() || classifier.augment.is_empty() || classifier.seeds.is_empty() {
            return Err(config_err("classifier", "kinds, augment and seeds must be non-empty"));
        }

        Ok(Config {
            run_id,
            seed,
            dataset,
            denoiser,
            schedule,
            sampler,
            guidance,
            metric,
            training,
            discriminator,
            classifier,
            report_runs: r.str_list("report.runs").unwrap_or_default(),
            base_dir,
        })
    }

    /// Applies `--seed`, which replaces the master seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.training.seed = seed;
        self
    }

    pub fn resolve_path(&self, p: &str) -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }
}
