//! Sectioned `key = value` run configuration.
//!
//! ```text
//! # 8 Gaussians, Soft-IntroVAE
//! [regime]
//! regime = sintrovae
//! seed = 0
//! [data]
//! dataset = eight_gaussians
//! [optim]
//! iterations = 30000
//! [betas]
//! beta_rec = 0.2
//! beta_kl = 0.3
//! beta_neg = 0.9
//! ```
//!
//! Each key belongs to one section. Unset keys take the defaults of
//! [`TrainConfig::new`]; `seed` is required.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{DatasetSpec, ToyDatasetId};
use crate::error::{Error, Result};
use crate::trainers::{Regime, TrainConfig};

const SECTIONS: &[(&str, &[&str])] = &[
    ("regime", &["regime", "seed"]),
    ("data", &["dataset", "idx_path"]),
    (
        "optim",
        &[
            "lr",
            "batch_size",
            "iterations",
            "log_interval",
            "checkpoint_interval",
            "z_dim",
            "hidden",
            "record_wall_clock",
        ],
    ),
    (
        "betas",
        &[
            "beta_rec", "beta_kl", "beta_neg", "gamma_r", "alpha", "margin", "scale", "exp_elbo",
        ],
    ),
];

fn section_of(key: &str) -> Option<&'static str> {
    SECTIONS
        .iter()
        .find(|(_, keys)| keys.contains(&key))
        .map(|(s, _)| *s)
}

/// Flat `key → value` map as read from a file, before validation.
pub type ConfigMap = BTreeMap<String, String>;

/// Parses the sectioned text format into a flat map.
pub fn parse_text(text: &str) -> Result<ConfigMap> {
    let mut map = ConfigMap::new();
    let mut section: Option<String> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            if !SECTIONS.iter().any(|(s, _)| *s == name) {
                return Err(Error::config(name, format!("unknown section on line {}", n + 1)));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config(line, format!("line {} is not `key = value`", n + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        let home = section_of(key).ok_or_else(|| Error::config(key, "unknown key"))?;
        match section.as_deref() {
            Some(s) if s == home => {}
            Some(s) => {
                return Err(Error::config(key, format!("belongs in [{home}], found in [{s}]")))
            }
            None => return Err(Error::config(key, format!("must appear under [{home}]"))),
        }
        if map.insert(key.to_string(), value.to_string()).is_some() {
            return Err(Error::config(key, "set twice"));
        }
    }
    Ok(map)
}

/// Applies `key=value` overrides on top of `map`.
pub fn apply_overrides(map: &mut ConfigMap, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (key, value) = o
            .split_once('=')
            .ok_or_else(|| Error::config(o.as_str(), "override is not `key=value`"))?;
        let key = key.trim();
        if section_of(key).is_none() {
            return Err(Error::config(key, "unknown key"));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(())
}

fn typed<T: FromStr>(map: &ConfigMap, key: &str) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v.parse::<T>().map(Some).map_err(|_| {
            Error::config(key, format!("cannot parse `{v}` as {}", std::any::type_name::<T>()))
        }),
    }
}

/// Builds and validates a config from a flat map.
pub fn from_map(map: &ConfigMap) -> Result<TrainConfig> {
    for key in map.keys() {
        if section_of(key).is_none() {
            return Err(Error::config(key.as_str(), "unknown key"));
        }
    }
    let regime: Regime = match map.get("regime") {
        Some(r) => r.parse()?,
        None => return Err(Error::config("regime", "required")),
    };
    let seed: u64 = typed(map, "seed")?.ok_or_else(|| Error::config("seed", "required"))?;
    let dataset = match map.get("dataset").map(String::as_str) {
        None => return Err(Error::config("dataset", "required")),
        Some("idx") => {
            let p: PathBuf = map
                .get("idx_path")
                .map(PathBuf::from)
                .ok_or_else(|| Error::config("idx_path", "required when dataset = idx"))?;
            DatasetSpec::Idx(p)
        }
        Some(name) => {
            if map.contains_key("idx_path") {
                return Err(Error::config("idx_path", "only valid with dataset = idx"));
            }
            DatasetSpec::Toy(name.parse::<ToyDatasetId>()?)
        }
    };

    let mut c = TrainConfig::new(regime, dataset, seed);
    macro_rules! set {
        ($($field:ident),*) => {
            $(if let Some(v) = typed(map, stringify!($field))? { c.$field = v; })*
        };
    }
    set!(
        lr,
        batch_size,
        iterations,
        log_interval,
        checkpoint_interval,
        z_dim,
        record_wall_clock,
        beta_rec,
        beta_kl,
        beta_neg,
        gamma_r,
        alpha,
        margin,
        exp_elbo
    );
    if let Some(s) = typed::<f64>(map, "scale")? {
        c.scale = Some(s);
    }
    if let Some(h) = map.get("hidden") {
        c.hidden = h
            .split(',')
            .map(|w| w.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::config("hidden", format!("expected comma-separated widths, got `{h}`")))?;
    }
    c.validate()?;
    Ok(c)
}

/// Flat echo of every field; `from_map(&to_map(c)) == c`.
pub fn to_map(c: &TrainConfig) -> ConfigMap {
    let mut m = ConfigMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(k.to_string(), v);
    };
    put("regime", c.regime.to_string());
    put("seed", c.seed.to_string());
    match &c.dataset {
        DatasetSpec::Toy(id) => put("dataset", id.to_string()),
        DatasetSpec::Idx(p) => {
            put("dataset", "idx".into());
            put("idx_path", p.display().to_string());
        }
    }
    put("lr", c.lr.to_string());
    put("batch_size", c.batch_size.to_string());
    put("iterations", c.iterations.to_string());
    put("log_interval", c.log_interval.to_string());
    put("checkpoint_interval", c.checkpoint_interval.to_string());
    put("z_dim", c.z_dim.to_string());
    put(
        "hidden",
        c.hidden.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
    );
    put("record_wall_clock", c.record_wall_clock.to_string());
    put("beta_rec", c.beta_rec.to_string());
    put("beta_kl", c.beta_kl.to_string());
    put("beta_neg", c.beta_neg.to_string());
    put("gamma_r", c.gamma_r.to_string());
    put("alpha", c.alpha.to_string());
    put("margin", c.margin.to_string());
    if let Some(s) = c.scale {
        put("scale", s.to_string());
    }
    put("exp_elbo", c.exp_elbo.to_string());
    m
}

/// Renders a config in the sectioned file format.
pub fn to_text(c: &TrainConfig) -> String {
    let map = to_map(c);
    let mut out = String::new();
    for (section, keys) in SECTIONS {
        out.push_str(&format!("[{section}]\n"));
        for k in *keys {
            if let Some(v) = map.get(*k) {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
    }
    out
}

/// Reads a config file and applies flag overrides after the file values.
pub fn parse_config(path: &Path, overrides: &[String]) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = parse_text(&text)?;
    apply_overrides(&mut map, overrides)?;
    from_map(&map)
}
