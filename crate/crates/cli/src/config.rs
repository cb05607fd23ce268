//! Experiment configuration as flat dotted keys.
//!
//! A TOML file may use tables or dotted keys; both flatten to the same key
//! set. Resolution order is defaults, then the file, then `--set` pairs, then
//! the dedicated flags. Every key is validated before any work starts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use prism_core::monitor::ClassWeighting;
use prism_core::{DrAxis, DrConfig, EnvKind, EnvParams, EnvSpec, PrismConfig, StrideConfig};
use toml::Value;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: {msg}")]
    BadValue { key: String, msg: String },
    #[error("cannot read config: {0}")]
    Read(String),
    #[error("{0}")]
    Invalid(String),
}

fn bad(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::BadValue { key: key.to_string(), msg: msg.into() }
}

/// Settings for the Monte-Carlo reference grid.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleSettings {
    /// Cells per axis; unset means 200 for braking and 10 for cart-pole.
    pub resolution: Option<usize>,
    pub m: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub alphas: Vec<f64>,
    pub strides: Vec<usize>,
    pub stride_traj: usize,
    pub dr_list: Vec<DrConfig>,
    /// Score this checkpoint instead of training one first.
    pub monitor: Option<PathBuf>,
    /// Uniform baseline size; when unset it matches the iterative run's label count.
    pub baseline_traj: Option<usize>,
    pub baseline_stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceSettings {
    pub traj_id: u64,
    pub m: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SliceSettings {
    pub resolution: usize,
    pub x_dim: usize,
    pub y_dim: usize,
}

/// Unresolved plant overrides; applied over the environment's defaults.
#[derive(Clone, Debug, Default, PartialEq)]
struct ParamOverrides {
    damping_scale: Option<f64>,
    gain_scale: Option<f64>,
    friction_scale: Option<f64>,
    disturbance_sigma: Option<f64>,
    dt: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub seed: u64,
    pub out: PathBuf,
    overrides: ParamOverrides,
    pub prism: PrismConfig,
    pub oracle: OracleSettings,
    pub eval: EvalSettings,
    pub trace: TraceSettings,
    pub slice: SliceSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::Braking,
            seed: 0,
            out: PathBuf::from("out"),
            overrides: ParamOverrides::default(),
            prism: PrismConfig::default(),
            oracle: OracleSettings { resolution: None, m: 8 },
            eval: EvalSettings {
                alphas: vec![0.3, 0.4, 0.47, 0.5, 0.53, 0.6, 0.7],
                strides: vec![60, 50, 40, 30, 20],
                stride_traj: 30,
                dr_list: vec![
                    DrConfig::none(),
                    DrConfig { axis: DrAxis::Damping, low: 0.7, high: 1.3 },
                    DrConfig { axis: DrAxis::Gain, low: 0.6, high: 1.4 },
                    DrConfig { axis: DrAxis::Friction, low: 0.5, high: 0.8 },
                    DrConfig { axis: DrAxis::Friction, low: 1.3, high: 2.0 },
                ],
                monitor: None,
                baseline_traj: None,
                baseline_stride: 20,
            },
            trace: TraceSettings { traj_id: 1 << 40, m: 8 },
            slice: SliceSettings { resolution: 100, x_dim: 0, y_dim: 1 },
        }
    }
}

/// Flatten nested tables into dotted keys; arrays stay as values.
pub fn flatten(table: &toml::Table) -> BTreeMap<String, Value> {
    fn walk(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
        for (k, v) in table {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                Value::Table(t) => walk(&key, t, out),
                other => {
                    out.insert(key, other.clone());
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", table, &mut out);
    out
}

/// Parse the value half of a `--set key=value` pair; bare words become strings.
pub fn parse_value(raw: &str) -> Value {
    raw.parse::<Value>().unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn as_f64(key: &str, v: &Value) -> Result<f64, ConfigError> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(bad(key, "expected a number")),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize, ConfigError> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(bad(key, "expected a non-negative integer")),
    }
}

fn as_u64(key: &str, v: &Value) -> Result<u64, ConfigError> {
    as_usize(key, v).map(|x| x as u64)
}

fn as_bool(key: &str, v: &Value) -> Result<bool, ConfigError> {
    v.as_bool().ok_or_else(|| bad(key, "expected true or false"))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str, ConfigError> {
    v.as_str().ok_or_else(|| bad(key, "expected a string"))
}

fn as_list<T>(key: &str, v: &Value, item: impl Fn(&str, &Value) -> Result<T, ConfigError>) -> Result<Vec<T>, ConfigError> {
    let arr = v.as_array().ok_or_else(|| bad(key, "expected an array"))?;
    arr.iter().map(|x| item(key, x)).collect()
}

/// `none` or `axis:low:high`, e.g. `friction:1.3:2.0`.
pub fn parse_dr(key: &str, s: &str) -> Result<DrConfig, ConfigError> {
    let parts: Vec<&str> = s.split(':').collect();
    let axis = DrAxis::parse(parts[0]).ok_or_else(|| bad(key, format!("unknown randomization axis `{}`", parts[0])))?;
    let dr = match (axis, parts.len()) {
        (DrAxis::None, 1) => DrConfig::none(),
        (_, 3) => {
            let num = |p: &str| p.parse::<f64>().map_err(|_| bad(key, format!("bad number `{p}`")));
            DrConfig { axis, low: num(parts[1])?, high: num(parts[2])? }
        }
        _ => return Err(bad(key, format!("expected `none` or `axis:low:high`, got `{s}`"))),
    };
    dr.validate().map_err(|e| bad(key, e.to_string()))?;
    Ok(dr)
}

pub fn dr_to_string(dr: &DrConfig) -> String {
    match dr.axis {
        DrAxis::None => "none".into(),
        axis => format!("{}:{}:{}", axis.name(), dr.low, dr.high),
    }
}

fn weighting_name(w: ClassWeighting) -> &'static str {
    match w {
        ClassWeighting::InverseFrequency => "inverse_frequency",
        ClassWeighting::Uniform => "uniform",
        ClassWeighting::Fixed { .. } => "fixed",
    }
}

impl ExperimentConfig {
    /// Apply one dotted key.
    pub fn set(&mut self, key: &str, v: &Value) -> Result<(), ConfigError> {
        let p = &mut self.prism;
        let t = &mut p.train;
        match key {
            "env" => {
                let name = as_str(key, v)?;
                self.env = EnvKind::parse(name).ok_or_else(|| bad(key, format!("unknown environment `{name}`")))?;
            }
            "seed" => self.seed = as_u64(key, v)?,
            "out" => self.out = PathBuf::from(as_str(key, v)?),

            "env_params.damping_scale" => self.overrides.damping_scale = Some(as_f64(key, v)?),
            "env_params.gain_scale" => self.overrides.gain_scale = Some(as_f64(key, v)?),
            "env_params.friction_scale" => self.overrides.friction_scale = Some(as_f64(key, v)?),
            "env_params.disturbance_sigma" => self.overrides.disturbance_sigma = Some(as_f64(key, v)?),
            "env_params.dt" => self.overrides.dt = Some(as_f64(key, v)?),

            "prism.alpha" => p.alpha = as_f64(key, v)?,
            "prism.beta" => p.beta = as_f64(key, v)?,
            "prism.delta" => p.delta = as_f64(key, v)?,
            "prism.n0" => p.n0 = as_usize(key, v)?,
            "prism.n_i" => p.n_i = as_usize(key, v)?,
            "prism.k_iters" => p.k_iters = as_usize(key, v)?,
            "prism.n_val" => p.n_val = as_usize(key, v)?,
            "prism.t_max" => p.t_max = as_usize(key, v)?,
            "prism.horizon" => p.horizon = Some(as_usize(key, v)?),
            "prism.coarse_stride" => p.strides.coarse = as_usize(key, v)?,
            "prism.fine_stride" => p.strides.fine = as_usize(key, v)?,
            "prism.fallback_band_lo" => p.fallback_band.0 = as_f64(key, v)?,
            "prism.fallback_band_hi" => p.fallback_band.1 = as_f64(key, v)?,
            "prism.dr" => p.dr = parse_dr(key, as_str(key, v)?)?,

            "train.learning_rate" => t.learning_rate = as_f64(key, v)?,
            "train.batch_size" => t.batch_size = as_usize(key, v)?,
            "train.epochs" => t.epochs = as_usize(key, v)?,
            "train.momentum" => t.momentum = as_f64(key, v)?,
            "train.hidden" => t.hidden = as_list(key, v, as_usize)?,
            "train.warm_start" => t.warm_start = as_bool(key, v)?,
            "train.class_weighting" => {
                t.class_weighting = match as_str(key, v)? {
                    "inverse_frequency" => ClassWeighting::InverseFrequency,
                    "uniform" => ClassWeighting::Uniform,
                    other => return Err(bad(key, format!("expected inverse_frequency or uniform, got `{other}`"))),
                }
            }

            "oracle.resolution" => self.oracle.resolution = Some(as_usize(key, v)?),
            "oracle.m" => self.oracle.m = as_usize(key, v)?,

            "eval.alphas" => self.eval.alphas = as_list(key, v, as_f64)?,
            "eval.strides" => self.eval.strides = as_list(key, v, as_usize)?,
            "eval.stride_traj" => self.eval.stride_traj = as_usize(key, v)?,
            "eval.dr_list" => self.eval.dr_list = as_list(key, v, |k, x| parse_dr(k, as_str(k, x)?))?,
            "eval.monitor" => self.eval.monitor = Some(PathBuf::from(as_str(key, v)?)),
            "eval.baseline_traj" => self.eval.baseline_traj = Some(as_usize(key, v)?),
            "eval.baseline_stride" => self.eval.baseline_stride = as_usize(key, v)?,

            "trace.traj_id" => self.trace.traj_id = as_u64(key, v)?,
            "trace.m" => self.trace.m = as_usize(key, v)?,

            "slice.resolution" => self.slice.resolution = as_usize(key, v)?,
            "slice.x_dim" => self.slice.x_dim = as_usize(key, v)?,
            "slice.y_dim" => self.slice.y_dim = as_usize(key, v)?,

            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn apply_toml(&mut self, text: &str) -> Result<(), ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Read(e.to_string()))?;
        for (k, v) in flatten(&table) {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn oracle_resolution(&self) -> usize {
        self.oracle.resolution.unwrap_or(match self.env {
            EnvKind::Braking => 200,
            EnvKind::CartPole => 10,
        })
    }

    pub fn spec(&self) -> EnvSpec {
        self.env.spec()
    }

    /// Environment defaults with any overrides applied.
    pub fn params(&self) -> EnvParams {
        let mut p = self.spec().default_params();
        let o = &self.overrides;
        p.damping_scale = o.damping_scale.unwrap_or(p.damping_scale);
        p.gain_scale = o.gain_scale.unwrap_or(p.gain_scale);
        p.friction_scale = o.friction_scale.unwrap_or(p.friction_scale);
        p.disturbance_sigma = o.disturbance_sigma.unwrap_or(p.disturbance_sigma);
        p.dt = o.dt.unwrap_or(p.dt);
        p
    }

    /// Copy the root seed into the pipeline and check every module's preconditions.
    pub fn finalize(mut self) -> Result<Self, ConfigError> {
        self.prism.seed = self.seed;
        let invalid = |e: prism_core::PrismError| ConfigError::Invalid(e.to_string());
        self.prism.validate().map_err(invalid)?;
        self.params().validate().map_err(invalid)?;
        StrideConfig::new(self.prism.strides.coarse, self.prism.strides.fine).map_err(invalid)?;
        if self.oracle_resolution() < 2 {
            return Err(bad("oracle.resolution", "must be >= 2"));
        }
        if self.oracle.m == 0 || self.trace.m == 0 {
            return Err(ConfigError::Invalid("oracle.m and trace.m must be >= 1".into()));
        }
        if self.eval.alphas.is_empty() || self.eval.alphas.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(bad("eval.alphas", "need a non-empty list in (0, 1]"));
        }
        if self.eval.strides.is_empty() || self.eval.strides.contains(&0) {
            return Err(bad("eval.strides", "need a non-empty list of strides >= 1"));
        }
        if self.eval.stride_traj == 0 || self.eval.baseline_stride == 0 || self.eval.baseline_traj == Some(0) {
            return Err(ConfigError::Invalid("eval trajectory counts and strides must be >= 1".into()));
        }
        if self.eval.dr_list.is_empty() {
            return Err(bad("eval.dr_list", "need at least one entry"));
        }
        let dim = self.spec().dimension();
        if self.slice.x_dim >= dim || self.slice.y_dim >= dim || self.slice.x_dim == self.slice.y_dim {
            return Err(bad("slice.x_dim", format!("slice axes must be two distinct coordinates below {dim}")));
        }
        if self.slice.resolution < 2 {
            return Err(bad("slice.resolution", "must be >= 2"));
        }
        Ok(self)
    }

    /// Every key with its resolved value. The output directory is left out so
    /// the snapshot does not depend on where a run is written.
    pub fn to_flat(&self) -> Vec<(String, Value)> {
        let p = &self.prism;
        let t = &p.train;
        let params = self.params();
        let f = Value::Float;
        let i = |x: usize| Value::Integer(x as i64);
        let s = |x: &str| Value::String(x.to_string());
        let mut out = vec![
            ("env", s(self.env.name())),
            ("seed", Value::Integer(self.seed as i64)),
            ("env_params.damping_scale", f(params.damping_scale)),
            ("env_params.gain_scale", f(params.gain_scale)),
            ("env_params.friction_scale", f(params.friction_scale)),
            ("env_params.disturbance_sigma", f(params.disturbance_sigma)),
            ("env_params.dt", f(params.dt)),
            ("prism.alpha", f(p.alpha)),
            ("prism.beta", f(p.beta)),
            ("prism.delta", f(p.delta)),
            ("prism.n0", i(p.n0)),
            ("prism.n_i", i(p.n_i)),
            ("prism.k_iters", i(p.k_iters)),
            ("prism.n_val", i(p.n_val)),
            ("prism.t_max", i(p.t_max)),
            ("prism.horizon", i(p.horizon_for(&self.spec()))),
            ("prism.coarse_stride", i(p.strides.coarse)),
            ("prism.fine_stride", i(p.strides.fine)),
            ("prism.fallback_band_lo", f(p.fallback_band.0)),
            ("prism.fallback_band_hi", f(p.fallback_band.1)),
            ("prism.dr", s(&dr_to_string(&p.dr))),
            ("train.learning_rate", f(t.learning_rate)),
            ("train.batch_size", i(t.batch_size)),
            ("train.epochs", i(t.epochs)),
            ("train.momentum", f(t.momentum)),
            ("train.hidden", Value::Array(t.hidden.iter().map(|&h| i(h)).collect())),
            ("train.warm_start", Value::Boolean(t.warm_start)),
            ("train.class_weighting", s(weighting_name(t.class_weighting))),
            ("oracle.resolution", i(self.oracle_resolution())),
            ("oracle.m", i(self.oracle.m)),
            ("eval.alphas", Value::Array(self.eval.alphas.iter().map(|&a| f(a)).collect())),
            ("eval.strides", Value::Array(self.eval.strides.iter().map(|&x| i(x)).collect())),
            ("eval.stride_traj", i(self.eval.stride_traj)),
            ("eval.dr_list", Value::Array(self.eval.dr_list.iter().map(|d| s(&dr_to_string(d))).collect())),
            ("eval.baseline_stride", i(self.eval.baseline_stride)),
            ("trace.traj_id", Value::Integer(self.trace.traj_id as i64)),
            ("trace.m", i(self.trace.m)),
            ("slice.resolution", i(self.slice.resolution)),
            ("slice.x_dim", i(self.slice.x_dim)),
            ("slice.y_dim", i(self.slice.y_dim)),
        ];
        if let Some(m) = &self.eval.monitor {
            out.push(("eval.monitor", s(&m.to_string_lossy())));
        }
        if let Some(n) = self.eval.baseline_traj {
            out.push(("eval.baseline_traj", i(n)));
        }
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// The resolved configuration as re-loadable TOML with dotted keys.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_flat() {
            writeln!(out, "{k} = {v}").expect("string write");
        }
        out
    }

    /// The resolved configuration as JSON, for manifests and fingerprints.
    pub fn to_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .to_flat()
            .into_iter()
            .map(|(k, v)| (k, serde_json::to_value(&v).expect("toml values are JSON-representable")))
            .collect();
        serde_json::Value::Object(map)
    }
}
