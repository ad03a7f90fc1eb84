use std::fs;
use std::path::{Path, PathBuf};

use contrailseg::train::DataSplit;
use contrailseg::{NetworkSpec, SceneConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const CONFIG_FILE: &str = "config.json";
pub const HASH_FILE: &str = "config.sha256";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    /// One corpus and one training seed per entry; the table reports the median.
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { seeds: vec![0] }
    }
}

/// Everything a command needs, as one JSON document. Every field has a
/// default, so `{}` (or an empty file) is a complete config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub split: DataSplit,
    pub ablation: AblationConfig,
    /// Not echoed: artifacts must not depend on where they are written.
    #[serde(skip_serializing)]
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            network: NetworkSpec::default(),
            train: TrainConfig::default(),
            split: DataSplit::default(),
            ablation: AblationConfig::default(),
            out: PathBuf::from("out"),
        }
    }
}

/// Flag values that win over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub use_mc: Option<bool>,
    pub use_soft_labels: Option<bool>,
    pub use_pseudo_labels: Option<bool>,
    pub image_size: Option<usize>,
    pub folds: Option<usize>,
    pub epochs: Option<usize>,
}

/// `a/b/0/c` or serde's `a.b[0].c` as the dotted field path users type.
fn dotted(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("[{index}]")),
            Segment::Map { key } => {
                if !out.is_empty() {
                    out.push('.');
                }
                out.push_str(key);
            }
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let mut field = dotted(e.path());
            let reason = e.inner().to_string();
            // Unknown keys are reported at their parent; name the key itself.
            if let Some(key) = reason.strip_prefix("unknown field `").and_then(|r| r.split('`').next()) {
                if !field.ends_with(key) {
                    field = if field.is_empty() { key.to_string() } else { format!("{field}.{key}") };
                }
            }
            if field.is_empty() {
                field = "<root>".into();
            }
            CliError::Config { field, reason }
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config { field: "--config".into(), reason: format!("{}: {e}", path.display()) })?;
        Self::parse(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.scene.seed = s;
            self.train.seed = s;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(v) = o.use_mc {
            self.train.use_mc = v;
        }
        if let Some(v) = o.use_soft_labels {
            self.train.use_soft_labels = v;
        }
        if let Some(v) = o.use_pseudo_labels {
            self.train.use_pseudo_labels = v;
        }
        if let Some(n) = o.image_size {
            // Keep contrails the same fraction of the frame.
            let k = n as f64 / self.scene.image_size as f64;
            self.scene.contrail_length.min *= k;
            self.scene.contrail_length.max *= k;
            self.scene.image_size = n;
            self.train.image_size = n;
            self.network.input_size = n;
        }
        if let Some(k) = o.folds {
            self.train.folds = k;
        }
        if let Some(n) = o.epochs {
            self.train.epochs = n;
        }
    }

    /// Checks each section and that the sections agree with one another.
    pub fn validate(&self) -> Result<(), CliError> {
        self.scene.validate()?;
        self.network.scaled()?;
        self.train.validate()?;
        self.split.validate()?;
        if self.scene.image_size != self.train.image_size {
            return Err(CliError::Config {
                field: "train.image_size".into(),
                reason: format!("{} differs from scene.image_size {}", self.train.image_size, self.scene.image_size),
            });
        }
        if self.scene.channels != self.network.in_channels {
            return Err(CliError::Config {
                field: "network.in_channels".into(),
                reason: format!("{} differs from scene.channels {}", self.network.in_channels, self.scene.channels),
            });
        }
        if self.ablation.seeds.is_empty() {
            return Err(CliError::Config { field: "ablation.seeds".into(), reason: "need at least one seed".into() });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Echoes the resolved config and its hash into `dir`.
    pub fn write_into(&self, dir: &Path) -> Result<(), CliError> {
        write_file(&dir.join(CONFIG_FILE), self.to_json().as_bytes())?;
        write_file(&dir.join(HASH_FILE), format!("{}\n", self.hash()).as_bytes())
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        leaf => out.push((prefix.to_string(), leaf.to_string())),
    }
}

/// Every config key with its default, one per line.
pub fn keys_help() -> String {
    // Round-trip through text so f32 defaults print in their short form.
    let text = serde_json::to_string(&RunConfig::default()).expect("config serializes");
    let value: serde_json::Value = serde_json::from_str(&text).expect("valid json");
    let mut keys = Vec::new();
    flatten("", &value, &mut keys);
    let width = keys.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    keys.push(("out".into(), "\"out\"".into()));
    let mut out = String::from("Config keys (JSON file via --config; defaults shown):\n");
    for (k, v) in keys {
        out.push_str(&format!("  {k:<width$}  {v}\n"));
    }
    out
}
