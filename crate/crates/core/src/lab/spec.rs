use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::net::{Activation, BiasMode, NetworkConfig};
use crate::optim::{Preconditioner, DEFAULT_LOSS_THRESHOLD, FULL_STEP_CAP, LINEARIZED_STEP_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SigmaSweep,
    AdaptiveCompare,
    BatchSweep,
    LinearizationGap,
    Mitigation,
    McInitNorm,
    UnderparamDemo,
    LateLinearization,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SigmaSweep => "sigma_sweep",
            ExperimentKind::AdaptiveCompare => "adaptive_compare",
            ExperimentKind::BatchSweep => "batch_sweep",
            ExperimentKind::LinearizationGap => "linearization_gap",
            ExperimentKind::Mitigation => "mitigation",
            ExperimentKind::McInitNorm => "mc_init_norm",
            ExperimentKind::UnderparamDemo => "underparam_demo",
            ExperimentKind::LateLinearization => "late_linearization",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub depth: usize,
    pub width: usize,
    pub sigma: f64,
    pub activation: Activation,
    pub bias_mode: BiasMode,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            depth: 2,
            width: 256,
            sigma: 1.0,
            activation: Activation::Relu,
            bias_mode: BiasMode::Zero,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Idx,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    /// Seeds the data draw (synthetic inputs and teacher, or the subset
    /// selection for file sources); independent of the run seed.
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    // synthetic
    pub input_dim: usize,
    pub min_radius: f64,
    pub noise: f64,
    pub teacher_depth: usize,
    pub teacher_width: usize,
    pub teacher_sigma: f64,
    // files
    pub images: String,
    pub labels: String,
    pub path: String,
    pub class_a: f64,
    pub class_b: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: DataSource::Synthetic,
            seed: 0,
            n_train: 100,
            n_val: 50,
            n_test: 100,
            input_dim: 5,
            min_radius: 0.5,
            noise: 0.0,
            teacher_depth: 2,
            teacher_width: 64,
            teacher_sigma: 1.0,
            images: String::new(),
            labels: String::new(),
            path: String::new(),
            class_a: 0.0,
            class_b: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub loss_threshold: f64,
    /// Gradient-norm stop; the only criterion of the underparameterized demo.
    pub grad_tol: f64,
    pub step_cap: usize,
    pub lin_step_cap: usize,
    /// Fixed learning rate; 0 selects `0.5/λ_max` for plain (S)GD and the
    /// grid search for adaptive rules.
    pub eta: f64,
    pub lr_grid_min: i32,
    pub lr_grid_max: i32,
    pub lr_probe_steps: usize,
    pub eps_div: f64,
    pub rho: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub optimizers: Vec<String>,
    /// Batch size of plain SGD runs outside the batch sweep, as `ceil(r·N)`.
    pub split_ratio: f64,
    pub shuffle: bool,
    /// Also train the linearized model where a runner supports it.
    pub linearized: bool,
    /// `full`, `linearized` or `both` (batch sweep).
    pub model: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            loss_threshold: DEFAULT_LOSS_THRESHOLD,
            grad_tol: 1e-12,
            step_cap: FULL_STEP_CAP,
            lin_step_cap: LINEARIZED_STEP_CAP,
            eta: 0.0,
            lr_grid_min: -4,
            lr_grid_max: 2,
            lr_probe_steps: 50,
            eps_div: crate::optim::DEFAULT_EPS_DIV,
            rho: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            optimizers: vec!["gd".into(), "adagrad".into(), "adam".into(), "sgd".into()],
            split_ratio: 0.25,
            shuffle: true,
            linearized: true,
            model: "full".into(),
        }
    }
}

impl TrainSection {
    /// The preconditioner named `kind` with this section's hyperparameters.
    pub fn preconditioner(&self, kind: &str) -> Result<Preconditioner> {
        Ok(match kind {
            "gd" | "sgd" => Preconditioner::Identity,
            "adagrad" | "adagrad_sgd" => Preconditioner::AdaGrad { eps_div: self.eps_div },
            "rmsprop" | "rmsprop_sgd" => Preconditioner::RmsProp {
                rho: self.rho,
                eps_div: self.eps_div,
            },
            "adam" | "adam_sgd" => Preconditioner::Adam {
                beta1: self.beta1,
                beta2: self.beta2,
                eps_div: self.eps_div,
            },
            // D ≡ 𝟙; runners size the diagonal to the network
            "explicit_adaptive" => Preconditioner::Explicit { diagonal: Vec::new() },
            other => return Err(Error::config("train.optimizers", format!("unknown optimizer `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub sigmas: Vec<f64>,
    pub widths: Vec<usize>,
    pub split_ratios: Vec<f64>,
    pub shuffle: Vec<bool>,
    pub t_grid: Vec<usize>,
    pub mc_samples: usize,
    /// Probe inputs of the Monte-Carlo check; one per row, `input_dim`
    /// columns. Empty means one unit vector.
    pub mc_inputs: Vec<Vec<f64>>,
    pub features: usize,
    pub ridge: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            sigmas: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            widths: vec![256, 1024, 4096],
            split_ratios: vec![0.1, 0.25, 0.5, 1.0],
            shuffle: vec![true, false],
            t_grid: vec![0, 10, 100],
            mc_samples: 100_000,
            mc_inputs: Vec::new(),
            features: 10,
            ridge: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MitigationSection {
    pub sigma_start: f64,
    pub decay: f64,
    pub plateau_rel: f64,
    pub min_sigma: f64,
    /// `teacher_interpolator` replaces the labels by a kernel interpolator
    /// of the student's own features, a task where large σ only hurts.
    pub task: String,
}

impl Default for MitigationSection {
    fn default() -> Self {
        MitigationSection {
            sigma_start: 4.0,
            decay: 0.7,
            plateau_rel: 0.02,
            min_sigma: 0.05,
            task: "data".into(),
        }
    }
}

/// A declarative experiment description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: ExperimentKind,
    /// Base seed; repetition `r` uses `seed + r` for its initialization.
    pub seed: u64,
    pub repetitions: usize,
    /// Results file; relative paths resolve against the output directory.
    pub output: String,
    pub network: NetworkSection,
    pub data: DataSection,
    pub train: TrainSection,
    pub sweep: SweepSection,
    pub mitigation: MitigationSection,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            experiment: ExperimentKind::SigmaSweep,
            seed: 0,
            repetitions: 10,
            output: String::new(),
            network: NetworkSection::default(),
            data: DataSection::default(),
            train: TrainSection::default(),
            sweep: SweepSection::default(),
            mitigation: MitigationSection::default(),
        }
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, toml::Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            _ => {
                out.insert(key, v.clone());
            }
        }
    }
}

fn type_name(v: &toml::Value) -> &'static str {
    v.type_str()
}

fn compatible(template: &toml::Value, v: &toml::Value) -> bool {
    use toml::Value as V;
    match (template, v) {
        (V::Float(_), V::Integer(_) | V::Float(_)) => true,
        (V::Array(t), V::Array(a)) => match t.first() {
            Some(elem) => a.iter().all(|x| compatible(elem, x)),
            None => true,
        },
        _ => type_name(template) == type_name(v),
    }
}

/// `1` → `1.0` where the schema wants a float.
fn coerce(template: &toml::Value, v: toml::Value) -> toml::Value {
    use toml::Value as V;
    match (template, v) {
        (V::Float(_), V::Integer(i)) => V::Float(i as f64),
        (V::Array(t), V::Array(a)) => match t.first() {
            Some(elem) => V::Array(a.into_iter().map(|x| coerce(elem, x)).collect()),
            None => V::Array(a),
        },
        (_, v) => v,
    }
}

/// Every dotted key of the schema with its default value.
pub fn schema_keys() -> BTreeMap<String, toml::Value> {
    let table = toml::Table::try_from(ExperimentSpec::default()).expect("default spec serializes");
    let mut keys = BTreeMap::new();
    flatten("", &table, &mut keys);
    // empty arrays carry no element type; give the one grid that defaults empty
    keys.insert(
        "sweep.mc_inputs".into(),
        toml::Value::Array(vec![toml::Value::Array(vec![toml::Value::Float(0.0)])]),
    );
    keys
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("nonempty key");
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .expect("schema sections are tables");
    }
    cur.insert(last.to_string(), value);
}

/// Parses an override value as a TOML literal, falling back to a bare string.
fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::SpecFile {
            path: path.into(),
            source,
        })?;
        Self::from_toml_with_overrides(&text, &[])
    }

    /// Loads `path` and applies `key=value` overrides (dotted keys).
    pub fn load_with_overrides(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::SpecFile {
            path: path.into(),
            source,
        })?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config("<spec>", e.message().to_string()))?;
        let schema = schema_keys();
        let mut present = BTreeMap::new();
        flatten("", &table, &mut present);
        for (key, value) in &present {
            check_key(&schema, key, value)?;
        }
        for raw in overrides {
            let (key, value) = raw
                .split_once('=')
                .ok_or_else(|| Error::config(raw.as_str(), "override must look like key=value"))?;
            let key = key.trim();
            let value = parse_literal(value.trim());
            let template = check_key(&schema, key, &value)?;
            set_dotted(&mut table, key, coerce(template, value));
        }
        // integers written where floats are expected
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        for (key, value) in flat {
            let template = &schema[&key];
            set_dotted(&mut table, &key, coerce(template, value));
        }
        let spec: ExperimentSpec = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("<spec>", e.message().to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    /// Hash of the experiment design: everything except the run seed and
    /// the output location.
    pub fn hash(&self) -> String {
        let mut design = self.clone();
        design.seed = 0;
        design.output.clear();
        let digest = Sha256::digest(design.to_toml().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn network_config(&self, input_dim: usize) -> NetworkConfig {
        NetworkConfig {
            depth: self.network.depth,
            input_dim,
            width: self.network.width,
            sigma: self.network.sigma,
            activation: self.network.activation,
            bias_mode: self.network.bias_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::config(key, msg));
        if self.repetitions < 1 {
            return bad("repetitions", "must be >= 1");
        }
        if self.network.depth < 1 {
            return bad("network.depth", "must be >= 1");
        }
        if self.network.width < 1 {
            return bad("network.width", "must be >= 1");
        }
        if !(self.network.sigma > 0.0) {
            return bad("network.sigma", "must be positive");
        }
        if self.data.n_train < 1 {
            return bad("data.n_train", "must be >= 1");
        }
        if !(self.train.loss_threshold >= 0.0) {
            return bad("train.loss_threshold", "must be nonnegative");
        }
        if !(self.train.grad_tol >= 0.0) {
            return bad("train.grad_tol", "must be nonnegative");
        }
        if !(self.train.eta >= 0.0) {
            return bad("train.eta", "must be nonnegative (0 selects the default rule)");
        }
        if self.train.lr_grid_min > self.train.lr_grid_max {
            return bad("train.lr_grid_min", "must not exceed train.lr_grid_max");
        }
        if !(self.train.split_ratio > 0.0 && self.train.split_ratio <= 1.0) {
            return bad("train.split_ratio", "must lie in (0, 1]");
        }
        for o in &self.train.optimizers {
            self.train.preconditioner(o)?;
        }
        if !["full", "linearized", "both"].contains(&self.train.model.as_str()) {
            return bad("train.model", "must be full, linearized or both");
        }
        if self.data.source == DataSource::Synthetic && self.data.input_dim < 2 {
            return bad("data.input_dim", "synthetic data needs input_dim >= 2");
        }
        if self.data.source == DataSource::Idx && (self.data.images.is_empty() || self.data.labels.is_empty()) {
            return bad("data.images", "idx source needs data.images and data.labels");
        }
        if self.data.source == DataSource::Text && self.data.path.is_empty() {
            return bad("data.path", "text source needs data.path");
        }
        let s = &self.sweep;
        match self.experiment {
            ExperimentKind::SigmaSweep | ExperimentKind::McInitNorm => {
                if s.sigmas.is_empty() {
                    return bad("sweep.sigmas", "grid must be nonempty");
                }
                if s.sigmas.iter().any(|v| !(*v >= 0.0)) {
                    return bad("sweep.sigmas", "values must be nonnegative");
                }
                if self.experiment == ExperimentKind::SigmaSweep && s.sigmas.iter().any(|v| *v == 0.0) {
                    return bad("sweep.sigmas", "training needs sigma > 0");
                }
                if self.experiment == ExperimentKind::McInitNorm && s.mc_samples < 2 {
                    return bad("sweep.mc_samples", "need at least 2 samples");
                }
            }
            ExperimentKind::AdaptiveCompare | ExperimentKind::LinearizationGap => {
                if s.widths.is_empty() || s.widths.contains(&0) {
                    return bad("sweep.widths", "grid must be nonempty and positive");
                }
                if self.train.optimizers.is_empty() {
                    return bad("train.optimizers", "list must be nonempty");
                }
            }
            ExperimentKind::BatchSweep => {
                if s.split_ratios.is_empty() || s.split_ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
                    return bad("sweep.split_ratios", "grid must be nonempty with values in (0, 1]");
                }
                if s.shuffle.is_empty() {
                    return bad("sweep.shuffle", "grid must be nonempty");
                }
                if s.widths.is_empty() || s.widths.contains(&0) {
                    return bad("sweep.widths", "grid must be nonempty and positive");
                }
            }
            ExperimentKind::LateLinearization => {
                if s.t_grid.is_empty() {
                    return bad("sweep.t_grid", "grid must be nonempty");
                }
            }
            ExperimentKind::Mitigation => {
                let m = &self.mitigation;
                if !(m.decay > 0.0 && m.decay < 1.0) {
                    return bad("mitigation.decay", "must lie in (0, 1)");
                }
                if !(m.sigma_start > 0.0) || !(m.min_sigma > 0.0) || m.min_sigma > m.sigma_start {
                    return bad("mitigation.min_sigma", "need 0 < min_sigma <= sigma_start");
                }
                if !(m.plateau_rel >= 0.0) {
                    return bad("mitigation.plateau_rel", "must be nonnegative");
                }
                if self.data.n_val == 0 {
                    return bad("data.n_val", "mitigation needs a validation split");
                }
                if !["data", "teacher_interpolator"].contains(&m.task.as_str()) {
                    return bad("mitigation.task", "must be data or teacher_interpolator");
                }
            }
            ExperimentKind::UnderparamDemo => {
                if s.features < 1 || s.features >= self.data.n_train {
                    return bad("sweep.features", "need 1 <= features < data.n_train");
                }
                if !(s.ridge >= 0.0) {
                    return bad("sweep.ridge", "must be nonnegative");
                }
            }
        }
        Ok(())
    }
}

fn check_key<'a>(schema: &'a BTreeMap<String, toml::Value>, key: &str, value: &toml::Value) -> Result<&'a toml::Value> {
    let template = schema.get(key).ok_or_else(|| Error::config(key, "unknown key"))?;
    if !compatible(template, value) {
        return Err(Error::config(
            key,
            format!("expected {}, got {}", type_name(template), type_name(value)),
        ));
    }
    Ok(template)
}
