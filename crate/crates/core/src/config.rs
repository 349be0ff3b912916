//! Run configuration shared by every subcommand.
//!
//! Files are flat `key = value` lines (TOML syntax). Keys belong to a section
//! written as a dotted prefix: `data.n_scenarios = 40`, `model.layers = 2`,
//! `train.epochs = 15`, `infer.tau_loss = 10`, `ablate.eval = "easy"`. A bare `seed = N` seeds every
//! section. Later sources win: defaults, then the file, then overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ablation::AblateConfig;
use crate::error::{Error, Result};
use crate::inference::InferConfig;
use crate::model::ModelConfig;
use crate::simdata::SuiteConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub data: SuiteConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub ablate: AblateConfig,
}

fn parse_value(raw: &str) -> toml::Value {
    // Bare words such as `tmf` are taken as strings.
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::InvalidConfig(format!("empty key {key:?}")))?;
    let mut at = table;
    for p in parts {
        let entry = at
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        at = entry
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("{p} is not a section in {key}")))?;
    }
    at.insert(last.to_string(), value);
    Ok(())
}

fn check_known(given: &toml::Table, known: &toml::Table, prefix: &str) -> Result<()> {
    for (k, v) in given {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match known.get(k) {
            None if prefix.is_empty() && k == "seed" => {}
            None => return Err(Error::InvalidConfig(format!("unknown key {path}"))),
            Some(toml::Value::Table(kt)) => match v {
                toml::Value::Table(vt) => check_known(vt, kt, &path)?,
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "{path} is a section, not a value"
                    )))
                }
            },
            Some(_) => {}
        }
    }
    Ok(())
}

impl RunConfig {
    /// Parses config text and applies `key=value` overrides on top.
    pub fn from_str_with(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse {
            line: e
                .span()
                .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
                .unwrap_or(0),
            message: e.message().to_string(),
        })?;
        for (k, v) in overrides {
            set_path(&mut table, k, parse_value(v))?;
        }
        let known = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
        check_known(&table, &known, "")?;
        let mut cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.message().to_string()))?;
        if let Some(seed) = cfg.seed {
            cfg.set_seed(seed);
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_str_with(&text, overrides)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.data.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
    }

    /// Fully resolved config in the same flat format.
    pub fn to_flat(&self) -> String {
        fn walk(prefix: &str, t: &toml::Table, out: &mut String) {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                match v {
                    toml::Value::Table(inner) => walk(&key, inner, out),
                    other => out.push_str(&format!("{key} = {other}\n")),
                }
            }
        }
        let table = toml::Table::try_from(self).expect("config serializes");
        let mut out = String::new();
        walk("", &table, &mut out);
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.infer.validate()?;
        self.ablate.validate()?;
        if self.data.oracle.d_det != self.model.d_det {
            return Err(Error::InvalidConfig(format!(
                "data.d_det {} differs from model.d_det {}",
                self.data.oracle.d_det, self.model.d_det
            )));
        }
        Ok(())
    }
}
