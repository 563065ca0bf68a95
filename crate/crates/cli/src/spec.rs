//! Experiment specification and named presets.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use dett_core::datagen::{BiasMode, SyntheticConfig};
use dett_core::debias::{TrainConfig, UpweightConvention};
use dett_core::nncore::MlpArch;

use crate::config::Config;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Erm,
    Jtt,
    GroupDro,
    Kd,
    KdUp,
    Simkd,
    Dett,
    DettOod,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Erm,
        Method::Jtt,
        Method::GroupDro,
        Method::Kd,
        Method::KdUp,
        Method::Simkd,
        Method::Dett,
        Method::DettOod,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Jtt => "jtt",
            Method::GroupDro => "group_dro",
            Method::Kd => "kd",
            Method::KdUp => "kd_up",
            Method::Simkd => "simkd",
            Method::Dett => "dett",
            Method::DettOod => "dett_ood",
        }
    }

    /// Whether the student receives the teacher's frozen classifier.
    pub fn transplants(self) -> bool {
        matches!(self, Method::Simkd | Method::Dett | Method::DettOod)
    }

    /// Whether identified errors are upweighted.
    pub fn upweights(self) -> bool {
        matches!(self, Method::Jtt | Method::KdUp | Method::Dett)
    }

    pub fn needs_teacher(self) -> bool {
        matches!(self, Method::Kd | Method::KdUp | Method::Simkd | Method::Dett | Method::DettOod)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeacherMethod {
    GroupDro,
    Jtt,
}

impl TeacherMethod {
    pub fn name(self) -> &'static str {
        match self {
            TeacherMethod::GroupDro => "group_dro",
            TeacherMethod::Jtt => "jtt",
        }
    }
}

impl FromStr for TeacherMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "group_dro" => Ok(TeacherMethod::GroupDro),
            "jtt" => Ok(TeacherMethod::Jtt),
            _ => Err(format!("teacher method must be group_dro or jtt, got `{s}`")),
        }
    }
}

/// Architecture widths plus optimizer settings for one role.
#[derive(Debug, Clone, PartialEq)]
pub struct RoleConfig {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl RoleConfig {
    pub fn arch(&self, d_in: usize, n_classes: usize) -> MlpArch {
        MlpArch::new(d_in, self.hidden.clone(), n_classes)
    }

    pub fn train_for_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.train.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grids {
    pub alpha: Vec<f64>,
    pub lambda_up: Vec<f64>,
    pub jtt_lambda_up: Vec<f64>,
    pub eta_q: Vec<f64>,
}

/// One grid cell: a method with concrete hyperparameters (seed excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub method: Method,
    pub hyperparams: BTreeMap<String, f64>,
}

impl CellSpec {
    pub fn new(method: Method, hyperparams: &[(&str, f64)]) -> Self {
        Self {
            method,
            hyperparams: hyperparams.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    pub fn param(&self, key: &str) -> f64 {
        self.hyperparams[key]
    }

    /// Stable identifier used in file names, e.g. `dett_lambda_up-20`.
    pub fn id(&self) -> String {
        let mut id = self.method.name().to_string();
        for (k, v) in &self.hyperparams {
            id.push_str(&format!("_{k}-{v}"));
        }
        id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub seeds: Vec<u64>,
    pub data: SyntheticConfig,
    pub n_pool: usize,
    pub teacher_method: TeacherMethod,
    pub teacher: RoleConfig,
    pub teacher_eta_q: f64,
    pub teacher_lambda_up: f64,
    pub student: RoleConfig,
    pub feature_learning_rate: f64,
    pub id_epochs: usize,
    pub methods: Vec<Method>,
    pub grids: Grids,
    pub tau: f64,
    pub attach_projector_to_baselines: bool,
    pub upweight: UpweightConvention,
}

pub const PRESETS: [&str; 5] = ["table1", "appendixD", "ablation", "lambda", "smoke"];

const TABLE1: &str = "\
name = table1
seeds = 1, 2, 3
teacher.method = group_dro
teacher.hidden = 32, 32
student.hidden = 8
methods = erm, jtt, group_dro, kd, simkd, dett, dett_ood
grid.alpha = 0.5, 1
grid.lambda_up = 5, 20, 50
";

/// Config text of a named preset.
pub fn preset_text(name: &str) -> Result<String> {
    Ok(match name {
        "table1" => TABLE1.to_string(),
        "appendixD" => format!("{TABLE1}name = appendixD\nteacher.method = jtt\n"),
        "ablation" => format!(
            "{TABLE1}name = ablation\nmethods = dett, simkd, kd_up, kd\ngrid.alpha = 1\ngrid.lambda_up = 50\n"
        ),
        "lambda" => format!("{TABLE1}name = lambda\nmethods = dett\ngrid.lambda_up = 1, 5, 20, 50\n"),
        "smoke" => format!(
            "{TABLE1}name = smoke\nseeds = 1\ndata.n_train = 240\ndata.n_val = 40\ndata.n_test = 80\n\
             data.n_pool = 240\nteacher.epochs = 4\nstudent.epochs = 2\n\
             methods = erm, jtt, group_dro, kd, kd_up, simkd, dett, dett_ood\n"
        ),
        other => return Err(CliError::UnknownPreset(other.to_string())),
    })
}

fn bad(key: &str, message: impl Into<String>) -> CliError {
    CliError::BadValue {
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_bias_mode(key: &str, v: &str) -> Result<BiasMode> {
    if v == "symmetric" {
        return Ok(BiasMode::Symmetric);
    }
    v.strip_prefix("unbiased_class:")
        .and_then(|c| c.parse().ok())
        .map(BiasMode::UnbiasedClass)
        .ok_or_else(|| bad(key, format!("expected `symmetric` or `unbiased_class:<k>`, got `{v}`")))
}

/// Reads `data.*` keys on top of the defaults.
pub fn data_config(cfg: &Config) -> Result<SyntheticConfig> {
    let d = SyntheticConfig::default();
    let prior = cfg.get_list::<f64>("data.class_prior")?;
    let n_classes = cfg.get_or("data.n_classes", d.n_classes)?;
    let default_prior = d.class_prior.filter(|p| p.len() == n_classes);
    let data = SyntheticConfig {
        n_train: cfg.get_or("data.n_train", d.n_train)?,
        n_val: cfg.get_or("data.n_val", d.n_val)?,
        n_test: cfg.get_or("data.n_test", d.n_test)?,
        bias_rho: cfg.get_or("data.bias_rho", d.bias_rho)?,
        mu_core: cfg.get_or("data.mu_core", d.mu_core)?,
        mu_spurious: cfg.get_or("data.mu_spurious", d.mu_spurious)?,
        sigma: cfg.get_or("data.sigma", d.sigma)?,
        d_core: cfg.get_or("data.d_core", d.d_core)?,
        d_spurious: cfg.get_or("data.d_spurious", d.d_spurious)?,
        d_noise: cfg.get_or("data.d_noise", d.d_noise)?,
        n_classes,
        class_prior: match prior {
            None => default_prior,
            Some(p) if p.is_empty() => None,
            Some(p) => Some(p),
        },
        bias_mode: match cfg.get_str("data.bias_mode") {
            Some(v) => parse_bias_mode("data.bias_mode", &v)?,
            None => d.bias_mode,
        },
        seed: cfg.get_or("data.seed", d.seed)?,
    };
    data.validate()?;
    Ok(data)
}

/// Reads `<section>.*` optimizer and width keys.
pub fn role_config(cfg: &Config, section: &str, default: &RoleConfig) -> Result<RoleConfig> {
    let key = |k: &str| format!("{section}.{k}");
    let t = &default.train;
    let role = RoleConfig {
        hidden: cfg.get_list(&key("hidden"))?.unwrap_or_else(|| default.hidden.clone()),
        train: TrainConfig {
            epochs: cfg.get_or(&key("epochs"), t.epochs)?,
            batch_size: cfg.get_or(&key("batch_size"), t.batch_size)?,
            learning_rate: cfg.get_or(&key("learning_rate"), t.learning_rate)?,
            weight_decay: cfg.get_or(&key("weight_decay"), t.weight_decay)?,
            momentum: cfg.get_or(&key("momentum"), t.momentum)?,
            eval_every: cfg.get_or(&key("eval_every"), t.eval_every)?,
            seed: 0,
        },
    };
    role.train.validate()?;
    Ok(role)
}

pub fn default_teacher() -> RoleConfig {
    RoleConfig {
        hidden: vec![32, 32],
        train: TrainConfig {
            epochs: 40,
            learning_rate: 0.03,
            ..TrainConfig::default()
        },
    }
}

pub fn default_student() -> RoleConfig {
    RoleConfig {
        hidden: vec![8],
        train: TrainConfig {
            epochs: 5,
            learning_rate: 0.03,
            eval_every: 1,
            ..TrainConfig::default()
        },
    }
}

pub const DEFAULT_FEATURE_LR: f64 = 0.0005;

impl ExperimentSpec {
    pub fn from_preset(name: &str) -> Result<Self> {
        Self::from_config(&Config::parse(&preset_text(name)?)?)
    }

    /// Builds a spec from a preset name (default `table1`) with optional
    /// override text applied on top.
    pub fn load(preset: Option<&str>, overrides: Option<&str>) -> Result<Self> {
        let mut cfg = Config::parse(&preset_text(preset.unwrap_or("table1"))?)?;
        if let Some(text) = overrides {
            cfg.extend(text)?;
        }
        Self::from_config(&cfg)
    }

    pub fn from_config(cfg: &Config) -> Result<Self> {
        let data = data_config(cfg)?;
        let teacher = role_config(cfg, "teacher", &default_teacher())?;
        let student = role_config(cfg, "student", &default_student())?;
        let seeds: Vec<u64> = cfg.get_list("seeds")?.unwrap_or_else(|| vec![1, 2, 3]);
        if seeds.is_empty() {
            return Err(bad("seeds", "at least one seed is required"));
        }
        let methods: Vec<Method> = cfg.get_list("methods")?.unwrap_or_else(|| Method::ALL.to_vec());
        let upweight = match cfg.get_str("upweight.convention").as_deref() {
            None | Some("factor") => UpweightConvention::Factor,
            Some("concatenate") => UpweightConvention::Concatenate,
            Some(other) => return Err(bad("upweight.convention", format!("`{other}`"))),
        };
        let id_epochs = cfg.get_or("student.id_epochs", student.train.identification().epochs)?;
        let spec = ExperimentSpec {
            name: cfg.get_str("name").unwrap_or_else(|| "custom".into()),
            seeds,
            n_pool: cfg.get_or("data.n_pool", data.n_train)?,
            data,
            teacher_method: cfg.get_or("teacher.method", TeacherMethod::GroupDro)?,
            teacher_eta_q: cfg.get_or("teacher.eta_q", 0.1)?,
            teacher_lambda_up: cfg.get_or("teacher.lambda_up", 20.0)?,
            teacher,
            feature_learning_rate: cfg.get_or("student.feature_learning_rate", DEFAULT_FEATURE_LR)?,
            id_epochs,
            student,
            methods,
            grids: Grids {
                alpha: cfg.get_list("grid.alpha")?.unwrap_or_else(|| vec![0.5, 1.0]),
                lambda_up: cfg.get_list("grid.lambda_up")?.unwrap_or_else(|| vec![5.0, 20.0, 50.0]),
                jtt_lambda_up: cfg.get_list("grid.jtt_lambda_up")?.unwrap_or_else(|| vec![20.0]),
                eta_q: cfg.get_list("grid.eta_q")?.unwrap_or_else(|| vec![0.1]),
            },
            tau: cfg.get_or("distill.tau", dett_core::distill::DEFAULT_TAU)?,
            attach_projector_to_baselines: cfg.get_or("distill.attach_projector_to_baselines", false)?,
            upweight,
        };
        cfg.ensure_all_used()?;
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.grids.alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(bad("grid.alpha", "values must lie in [0, 1]"));
        }
        let lambdas = self.grids.lambda_up.iter().chain(&self.grids.jtt_lambda_up);
        if lambdas.chain([&self.teacher_lambda_up]).any(|l| !(*l >= 1.0)) {
            return Err(bad("grid.lambda_up", "upweighting factors must be >= 1"));
        }
        if self.grids.eta_q.iter().chain([&self.teacher_eta_q]).any(|e| !(*e >= 0.0)) {
            return Err(bad("grid.eta_q", "group weight step sizes must be >= 0"));
        }
        if !(self.tau > 0.0) {
            return Err(bad("distill.tau", "must be positive"));
        }
        if !(self.feature_learning_rate >= 0.0) {
            return Err(bad("student.feature_learning_rate", "must be >= 0"));
        }
        if self.id_epochs == 0 {
            return Err(bad("student.id_epochs", "must be >= 1"));
        }
        Ok(())
    }

    /// Every grid cell, in method order.
    pub fn cells(&self) -> Vec<CellSpec> {
        let mut cells = Vec::new();
        for &m in &self.methods {
            match m {
                Method::Erm | Method::Simkd | Method::DettOod => cells.push(CellSpec::new(m, &[])),
                Method::Jtt => {
                    for &l in &self.grids.jtt_lambda_up {
                        cells.push(CellSpec::new(m, &[("lambda_up", l)]));
                    }
                }
                Method::GroupDro => {
                    for &e in &self.grids.eta_q {
                        cells.push(CellSpec::new(m, &[("eta_q", e)]));
                    }
                }
                Method::Kd => {
                    for &a in &self.grids.alpha {
                        cells.push(CellSpec::new(m, &[("alpha", a)]));
                    }
                }
                Method::KdUp => {
                    for &a in &self.grids.alpha {
                        for &l in &self.grids.lambda_up {
                            cells.push(CellSpec::new(m, &[("alpha", a), ("lambda_up", l)]));
                        }
                    }
                }
                Method::Dett => {
                    for &l in &self.grids.lambda_up {
                        cells.push(CellSpec::new(m, &[("lambda_up", l)]));
                    }
                }
            }
        }
        cells
    }

    pub fn student_train(&self, seed: u64) -> dett_core::debias::TrainConfig {
        self.student.train_for_seed(seed)
    }

    pub fn feature_train(&self, seed: u64) -> dett_core::debias::TrainConfig {
        TrainConfig {
            learning_rate: self.feature_learning_rate,
            ..self.student.train_for_seed(seed)
        }
    }

    pub fn id_train(&self, seed: u64) -> dett_core::debias::TrainConfig {
        TrainConfig {
            epochs: self.id_epochs,
            eval_every: 0,
            ..self.student.train_for_seed(seed)
        }
    }

    /// Effective per-sample weight for a nominal upweighting factor.
    pub fn effective_lambda(&self, lambda_up: f64) -> f64 {
        match self.upweight {
            UpweightConvention::Factor => lambda_up,
            UpweightConvention::Concatenate => lambda_up + 1.0,
        }
    }
}
