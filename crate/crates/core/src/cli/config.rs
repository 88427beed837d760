use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use nambert::llm::{EndpointConfig, PromptTemplate};
use nambert::macu::{ProbeConfig, Thresholds};
use nambert::model::ModelConfig;
use nambert::trainer::{Ablation, GlyphPretrainConfig, MlmConfig, TrainConfig};
use nambert::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    #[default]
    Test,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub pinyin: PathBuf,
    pub glyphs: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
    /// Font to rasterize glyphs from in `prepare-data`.
    #[serde(default)]
    pub font: Option<PathBuf>,
    /// Further named test sets scored by `evaluate`.
    #[serde(default)]
    pub extra_tests: BTreeMap<String, PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacuConfig {
    pub thresholds: Thresholds,
    /// Sentences probed for the filter set; all of the split when absent.
    pub filter_sentences: Option<usize>,
    pub split: Split,
    pub seed: u64,
}

impl Default for MacuConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            filter_sentences: None,
            split: Split::Test,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub classifier: ProbeConfig,
    /// Glyph clusters used as graphemic probe labels.
    pub clusters: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            classifier: ProbeConfig::default(),
            clusters: 8,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub endpoint: EndpointConfig,
    pub template: PromptTemplate,
    pub split: Split,
    /// Score this saved log instead of calling the endpoint.
    pub replay: Option<PathBuf>,
    /// Only the first N sentences.
    pub limit: Option<usize>,
}

/// Everything a subcommand may read. Relative paths resolve against the
/// directory holding the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    /// Use the data-parallel kernels.
    #[serde(default = "yes")]
    pub parallel: bool,
    pub data: DataConfig,
    /// Model shape with `vocab_size` left to the data.
    pub model: ModelConfig,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub glyph: GlyphPretrainConfig,
    #[serde(default)]
    pub mlm: MlmConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub macu: MacuConfig,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub llm: LlmSection,
    /// Model checkpoint read by evaluate, macu and probe; `<out>/model.namb`
    /// when absent.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Context-only model for the macu filter step; `<out>/baseline.namb`
    /// when absent.
    #[serde(default)]
    pub baseline: Option<PathBuf>,
    /// Pretrained graphemic encoder for train; `<out>/glyph_encoder.namb`
    /// when absent and that file exists.
    #[serde(default)]
    pub glyph_encoder: Option<PathBuf>,
}

fn yes() -> bool {
    true
}

const PRESETS: &[&str] = &["full", "desk", "toy"];

/// Replace a `"preset"` key in the model section by that preset's fields,
/// keeping explicitly given fields.
fn expand_model(model: &mut Value) -> Result<()> {
    let Some(obj) = model.as_object_mut() else {
        return Err(Error::Config("`model` must be an object".into()));
    };
    let preset = match obj.remove("preset") {
        None => return Ok(()),
        Some(Value::String(p)) => p,
        Some(other) => return Err(Error::Config(format!("model.preset must be a string, got {other}"))),
    };
    let base = match preset.as_str() {
        "full" => ModelConfig::full(0),
        "desk" => ModelConfig::desk(0),
        "toy" => ModelConfig::toy(0),
        _ => {
            return Err(Error::Config(format!(
                "unknown model preset {preset:?}; expected one of {PRESETS:?}"
            )))
        }
    };
    let Value::Object(mut merged) = serde_json::to_value(base)? else {
        unreachable!("model config serializes to an object")
    };
    for (k, v) in std::mem::take(obj) {
        if !merged.contains_key(&k) {
            return Err(Error::Config(format!("unknown model field {k:?}")));
        }
        merged.insert(k, v);
    }
    *obj = merged;
    Ok(())
}

/// Set `a.b.c = value`, creating objects on the way. The value is parsed as
/// JSON when possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} has an empty segment")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("cannot set {key}: a parent is not an object")))?;
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    node.as_object_mut()
        .ok_or_else(|| Error::Config(format!("cannot set {key}: a parent is not an object")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Sections whose own `seed` defaults to the top-level one.
const SEEDED: &[&str] = &["glyph", "mlm", "train", "macu", "probe"];

pub struct Loaded {
    pub config: RunConfig,
    /// Effective configuration after overrides and preset expansion.
    pub effective: Value,
    pub hash: String,
}

pub fn load(path: &Path, overrides: &[String]) -> Result<Loaded> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut root: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if !root.is_object() {
        return Err(Error::Config(format!(
            "{}: top level must be an object",
            path.display()
        )));
    }
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    if let Some(m) = root.get_mut("model") {
        expand_model(m)?;
        m.as_object_mut()
            .expect("expanded to an object")
            .entry("vocab_size")
            .or_insert(Value::from(0));
    }
    let seed = root.get("seed").cloned().unwrap_or(Value::from(0));
    let obj = root.as_object_mut().expect("checked above");
    for section in SEEDED {
        let entry = obj
            .entry(section.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
        if let Some(sec) = entry.as_object_mut() {
            sec.entry("seed").or_insert(seed.clone());
        }
    }
    let base = path.parent().unwrap_or(Path::new("."));
    if let Some(data) = obj.get_mut("data").and_then(Value::as_object_mut) {
        for v in data.values_mut() {
            resolve(v, base);
        }
    }
    for key in ["checkpoint", "baseline", "glyph_encoder"] {
        if let Some(v) = obj.get_mut(key) {
            resolve(v, base);
        }
    }
    if let Some(v) = obj.get_mut("llm").and_then(|l| l.get_mut("replay")) {
        resolve(v, base);
    }
    let config: RunConfig =
        serde_json::from_value(root.clone()).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let hash = hex(&Sha256::digest(serde_json::to_vec(&root)?));
    Ok(Loaded {
        config,
        effective: root,
        hash,
    })
}

fn resolve(v: &mut Value, base: &Path) {
    match v {
        Value::String(s) => {
            let p = Path::new(s.as_str());
            if p.is_relative() {
                *s = base.join(p).to_string_lossy().into_owned();
            }
        }
        Value::Object(map) => map.values_mut().for_each(|x| resolve(x, base)),
        _ => {}
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
