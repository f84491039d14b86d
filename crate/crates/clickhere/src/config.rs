//! Project configuration: one TOML file plus `--set path=value` overrides.

use std::fmt;
use std::path::Path;

use clickhere_core::model::ModelConfig;
use clickhere_core::objective::default_temperature;
use clickhere_core::render::{Domain, GenerationConfig};
use clickhere_core::train::Schedule;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    /// Root seed. Dataset, init and training seeds are derived from it.
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: Schedule,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub synthetic: GenerationConfig,
    pub realish: GenerationConfig,
    pub test: GenerationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Perturbation sigmas as fractions of the image side.
    pub sigmas: Vec<f64>,
    pub trials: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            synthetic: GenerationConfig {
                domain: Domain::Synthetic,
                renders_per_class: 600,
                ..GenerationConfig::default()
            },
            realish: GenerationConfig {
                domain: Domain::Realish,
                renders_per_class: 300,
                ..GenerationConfig::default()
            },
            test: GenerationConfig {
                domain: Domain::Realish,
                renders_per_class: 100,
                split: [0.0, 0.0, 1.0],
                max_instances: Some(1000),
                ..GenerationConfig::default()
            },
        }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sigmas: vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.3],
            trials: 5,
        }
    }
}

impl Default for ProjectConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: Schedule::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Dataset labels, in generation order.
pub const DATASETS: [&str; 3] = ["synthetic", "realish", "test"];

/// A config problem located by its dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.into(),
        message: message.into(),
    }
}

/// FNV-1a over the label, mixed into the root seed.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = root ^ h;
    z = (z ^ (z >> 33)).wrapping_mul(0xff51_afd7_ed55_8ccd);
    z = (z ^ (z >> 33)).wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    z ^ (z >> 33)
}

impl ProjectConfig {
    /// Generation config for one of [`DATASETS`], with its seed derived from
    /// the root seed. A nonzero `data.<label>.seed` is mixed in as an offset.
    pub fn dataset(&self, label: &str) -> Option<GenerationConfig> {
        let base = match label {
            "synthetic" => &self.data.synthetic,
            "realish" => &self.data.realish,
            "test" => &self.data.test,
            _ => return None,
        };
        let mut g = base.clone();
        g.seed = derive_seed(self.seed ^ base.seed, label);
        Some(g)
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, "init")
    }

    pub fn train_seed(&self) -> u64 {
        derive_seed(self.seed, "train")
    }

    pub fn sweep_seed(&self) -> u64 {
        derive_seed(self.seed, "sweep")
    }

    /// Semantic checks beyond what deserialization enforces.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Err(issues) = self.model.validate() {
            let i = &issues[0];
            return Err(err(i.field.clone(), i.message.clone()));
        }
        for label in DATASETS {
            let g = self.dataset(label).expect("known label");
            if let Err(e) = g.validate() {
                use clickhere_core::render::RenderError;
                let (sub, message) = match &e {
                    RenderError::EmptyRange(f) => (format!(".camera.{f}"), "empty or invalid range".to_string()),
                    RenderError::InvalidConfig { field, message } => (format!(".{field}"), message.clone()),
                    RenderError::EmptyClass(_) => (".renders_per_class".to_string(), "must be positive".to_string()),
                    other => (String::new(), other.to_string()),
                };
                return Err(err(format!("data.{label}{sub}"), message));
            }
            if g.image_size != self.model.image_size {
                return Err(err(
                    format!("data.{label}.image_size"),
                    format!("{} does not match model.image_size {}", g.image_size, self.model.image_size),
                ));
            }
        }
        if let Err(e) = self.train.validate() {
            return Err(err("train", e.to_string()));
        }
        if self.eval.trials == 0 {
            return Err(err("eval.trials", "must be positive"));
        }
        if let Some(s) = self.eval.sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(err("eval.sigmas", format!("{s} is not a nonnegative fraction")));
        }
        Ok(())
    }

    /// Parses TOML text, applies overrides and validates. Tables given in
    /// the text are merged key by key over the defaults, so a partial
    /// `[data.test]` keeps the other test-set defaults.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| err("", format!("invalid TOML: {}", e.message())))?;
        let mut root: toml::Table = toml::Table::try_from(ProjectConfig::default()).expect("defaults serialize");
        // An unset temperature follows the merged bin count.
        let model = root.get_mut("model").and_then(toml::Value::as_table_mut).expect("model table");
        model.remove("temperature");
        merge(&mut root, user);
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        if let Some(model) = root.get_mut("model").and_then(toml::Value::as_table_mut) {
            let n = model.get("n_bins").and_then(toml::Value::as_integer);
            if let (None, Some(n @ 1..)) = (model.get("temperature"), n) {
                model.insert("temperature".into(), toml::Value::Float(default_temperature(n as usize)));
            }
        }
        let cfg: ProjectConfig = serde_path_to_error::deserialize(toml::Value::Table(root)).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { String::new() } else { path };
            err(field, e.inner().message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` if given, otherwise starts from the defaults.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| err("", format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Recursively overlays `top` onto `base`; non-table values replace.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies `a.b.c=value`. The value is read as a TOML value when it parses as
/// one and as a bare string otherwise.
pub fn apply_override(root: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| err("", format!("override `{spec}` is not of the form path=value")))?;
    let path = path.trim();
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(err(path, "empty key in override path"));
    }
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let mut table = root;
    for (i, k) in keys[..keys.len() - 1].iter().enumerate() {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| err(keys[..=i].join("."), "not a table"))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}
