//! Run configuration: schema check, typed parse, path resolution.

use std::path::{Path, PathBuf};

use anyhow::Context;
use propnet_core::eval::LrConfig;
use propnet_core::features::FeatureOptions;
use propnet_core::fusion::FusionConfig;
use propnet_core::influence::InfluenceParams;
use propnet_core::ingest::{LabelWeights, Lexicon, SchemaConfig, SplitRatios, DEFAULT_BUCKET_SECS};
use propnet_core::pipeline::{Inputs, Settings};
use propnet_core::sentiment::TextCnnConfig;
use propnet_core::synthgen::SignalSpec;
use propnet_core::Error;
use serde::{Deserialize, Serialize};

/// The published JSON schema every config file is checked against.
pub const SCHEMA: &str = include_str!("../schema/run-config.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub datasets: Vec<PathBuf>,
    #[serde(default)]
    pub schema_config: Option<PathBuf>,
    #[serde(default)]
    pub edges: Option<PathBuf>,
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub labels: LabelWeights,
    #[serde(default = "default_bucket_secs")]
    pub bucket_secs: i64,
    #[serde(default = "default_segment_len")]
    pub segment_len: usize,
    #[serde(default = "default_min_segment_len")]
    pub min_segment_len: usize,
    #[serde(default)]
    pub split: SplitRatios,
    #[serde(default)]
    pub influence: InfluenceParams,
    #[serde(default)]
    pub features: FeatureOptions,
    #[serde(default)]
    pub sentiment: TextCnnConfig,
    #[serde(default)]
    pub model: FusionConfig,
    #[serde(default)]
    pub baseline_lr: LrConfig,
    #[serde(default)]
    pub synth: Option<SignalSpec>,
}

fn default_bucket_secs() -> i64 {
    DEFAULT_BUCKET_SECS
}

fn default_segment_len() -> usize {
    Settings::default().segment_len
}

fn default_min_segment_len() -> usize {
    Settings::default().min_segment_len
}

/// Command-line overrides applied after parsing.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

fn schema_error(msg: String) -> anyhow::Error {
    Error::Config(msg).into()
}

/// Checks `value` against [`SCHEMA`], reporting every violation.
pub fn check_schema(value: &serde_json::Value) -> anyhow::Result<()> {
    let schema: serde_json::Value = serde_json::from_str(SCHEMA).expect("bundled schema is valid JSON");
    let validator = jsonschema::validator_for(&schema).expect("bundled schema compiles");
    let problems: Vec<String> = validator
        .iter_errors(value)
        .map(|e| {
            let at = e.instance_path().to_string();
            if at.is_empty() {
                e.to_string()
            } else {
                format!("{e} (at {at})")
            }
        })
        .collect();
    if problems.is_empty() {
        Ok(())
    } else {
        Err(schema_error(format!("config does not match schema: {}", problems.join("; "))))
    }
}

impl RunConfig {
    /// Reads, schema-checks, parses and validates a config file; relative
    /// paths are resolved against the file's directory.
    pub fn load(path: &Path, overrides: &Overrides) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| schema_error(format!("{}: {e}", path.display())))?;
        check_schema(&value)?;
        let mut cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| schema_error(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &overrides.out {
            cfg.output_dir = out.clone();
        }
        cfg.settings().validate()?;
        if let Some(spec) = &cfg.synth {
            spec.validate()?;
        }
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.datasets.iter_mut().for_each(fix);
        self.schema_config.iter_mut().for_each(fix);
        self.edges.iter_mut().for_each(fix);
        self.lexicon.iter_mut().for_each(fix);
        fix(&mut self.output_dir);
    }

    pub fn settings(&self) -> Settings {
        Settings {
            labels: self.labels,
            bucket_secs: self.bucket_secs,
            segment_len: self.segment_len,
            min_segment_len: self.min_segment_len,
            split: self.split,
            influence: self.influence,
            features: self.features,
            sentiment: self.sentiment,
            model: self.model,
            baseline_lr: self.baseline_lr,
            seed: self.seed,
        }
    }

    pub fn lexicon(&self) -> anyhow::Result<Lexicon> {
        Ok(match &self.lexicon {
            Some(p) => Lexicon::load(p)?,
            None => Lexicon::builtin(),
        })
    }

    pub fn inputs(&self) -> anyhow::Result<Inputs> {
        if self.datasets.is_empty() {
            return Err(schema_error("config lists no datasets".into()));
        }
        let schema = match &self.schema_config {
            Some(p) => SchemaConfig::load(p)?,
            None => SchemaConfig::default(),
        };
        Ok(Inputs {
            datasets: self.datasets.clone(),
            schema,
            lexicon: self.lexicon()?,
            edges: self.edges.clone(),
        })
    }

    /// Pretty JSON of the fully resolved configuration.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Dataset name used in reports: the first dataset's file stem.
    pub fn dataset_name(&self) -> String {
        self.datasets
            .first()
            .and_then(|p| p.file_stem())
            .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned())
    }
}

/// Reads the optional `--config` path with context for the error message.
pub fn load_with_context(path: &Path, overrides: &Overrides) -> anyhow::Result<RunConfig> {
    RunConfig::load(path, overrides).with_context(|| format!("loading config {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn keys(v: &serde_json::Value) -> BTreeSet<String> {
        v.as_object().unwrap().keys().cloned().collect()
    }

    fn full_config() -> RunConfig {
        RunConfig {
            datasets: vec!["a.csv".into()],
            schema_config: Some("s.json".into()),
            edges: Some("e.csv".into()),
            lexicon: Some("l.tsv".into()),
            output_dir: "out".into(),
            seed: 3,
            labels: LabelWeights::default(),
            bucket_secs: 3600,
            segment_len: 32,
            min_segment_len: 2,
            split: SplitRatios::default(),
            influence: InfluenceParams::default(),
            features: FeatureOptions::default(),
            sentiment: TextCnnConfig::default(),
            model: FusionConfig::default(),
            baseline_lr: LrConfig::default(),
            synth: Some(SignalSpec::default()),
        }
    }

    #[test]
    fn schema_lists_exactly_the_config_fields() {
        let schema: serde_json::Value = serde_json::from_str(SCHEMA).unwrap();
        let props = &schema["properties"];
        let value = serde_json::to_value(full_config()).unwrap();
        assert_eq!(keys(props), keys(&value));
        for (name, v) in value.as_object().unwrap() {
            if v.is_object() && name != "labels" {
                assert_eq!(keys(&props[name]["properties"]), keys(v), "section {name}");
            }
        }
        let labels = &value["labels"];
        assert_eq!(keys(&props["labels"]["properties"]), keys(labels));
        check_schema(&value).unwrap();
    }

    #[test]
    fn schema_rejects_unknown_and_bad_values() {
        let mut v = serde_json::to_value(full_config()).unwrap();
        v["model"]["dmodel"] = 8.into();
        let err = check_schema(&v).unwrap_err().to_string();
        assert!(err.contains("dmodel"), "{err}");
        let mut v = serde_json::to_value(full_config()).unwrap();
        v["seed"] = (-1).into();
        assert!(check_schema(&v).is_err());
        assert!(check_schema(&serde_json::json!({"datasets": []})).is_err());
    }

    #[test]
    fn load_resolves_relative_paths_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"datasets": ["data/x.csv"], "output_dir": "out", "model": {"epochs": 3}}"#).unwrap();
        let cfg = RunConfig::load(
            &path,
            &Overrides {
                seed: Some(9),
                out: None,
            },
        )
        .unwrap();
        assert_eq!(cfg.datasets[0], dir.path().join("data/x.csv"));
        assert_eq!(cfg.output_dir, dir.path().join("out"));
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model.epochs, 3);
        assert_eq!(cfg.model.d_model, FusionConfig::default().d_model);
        assert_eq!(cfg.dataset_name(), "x");
    }

    #[test]
    fn semantic_errors_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"output_dir": "o", "model": {"d_model": 30, "heads": 4}}"#).unwrap();
        let err = RunConfig::load(&path, &Overrides::default()).unwrap_err();
        assert!(matches!(err.downcast_ref::<Error>(), Some(Error::Config(_))), "{err}");
    }
}
