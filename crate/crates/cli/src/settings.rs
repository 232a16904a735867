//! Effective configuration: built-in defaults, then the config file, then
//! command-line overrides.

use std::path::Path;

use factost::config::{AdapterConfig, BackboneConfig, KvDoc, TrainConfig};
use factost::{Error, Result};

/// Overrides the built-in default for every seed key.
pub const SEED_ENV: &str = "FACTOST_SEED";

/// Keys that have no built-in default but are still accepted.
const OPTIONAL_KEYS: &[&str] = &["adapter.n_nodes", "data.path"];

const SEED_KEYS: &[&str] = &["pretrain.seed", "adapt.seed", "synth.seed", "audit.seed", "scale.seed"];

pub fn defaults(seed: u64) -> KvDoc {
    let mut d = KvDoc::default();
    BackboneConfig::default().write_kv(&mut d);
    AdapterConfig::default().write_kv(&mut d);
    // the node count is taken from the data unless set explicitly
    let mut a = KvDoc::default();
    for k in d.keys().filter(|k| *k != "adapter.n_nodes") {
        a.set(k, d.get(k).unwrap_or_default());
    }
    let mut d = a;
    TrainConfig::pretrain_defaults().write_kv(&mut d, "pretrain");
    TrainConfig::adapt_defaults().write_kv(&mut d, "adapt");
    for (k, v) in [
        ("synth.kind", "kernel"),
        ("synth.n_series", "2000"),
        ("synth.length", "576"),
        ("synth.days", "28"),
        ("synth.freq_seconds", "300"),
        ("data.split", "0.7,0.1,0.2"),
        ("data.forward_fill", "false"),
        ("adapt.context_len", "128"),
        ("adapt.horizon", "64"),
        ("adapt.stride", "1"),
        ("adapt.few_shot_frac", "0.1"),
        ("adapt.eval_every", "50"),
        ("eval.context_len", "128"),
        ("eval.horizon", "64"),
        ("eval.stride", "64"),
        ("eval.interval", "0.1,0.9"),
        ("audit.instances", "20"),
        ("audit.step", "0.0001"),
        ("audit.tolerance", "0.001"),
        ("scale.n_list", "100,200,400,800"),
        ("scale.context_len", "128"),
        ("scale.horizon", "64"),
        ("scale.repeats", "5"),
        ("scale.warmups", "2"),
    ] {
        d.set(k, v);
    }
    for k in SEED_KEYS {
        d.set(k, seed);
    }
    d
}

fn env_seed() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::config(SEED_ENV, format!("`{v}` is not a non-negative integer"))),
        Err(_) => Ok(0),
    }
}

/// Rejects keys the program does not know.
pub fn check_keys(doc: &KvDoc, known: &KvDoc, origin: &str) -> Result<()> {
    for k in doc.keys() {
        if !known.contains(k) && !OPTIONAL_KEYS.contains(&k) {
            return Err(Error::config(k, format!("unknown key in {origin}")));
        }
    }
    Ok(())
}

/// Parses `key=value` override strings.
pub fn parse_overrides(pairs: &[String]) -> Result<KvDoc> {
    let mut d = KvDoc::default();
    for p in pairs {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| Error::config(p.as_str(), "override must look like key=value"))?;
        d.set(k.trim(), v.trim());
    }
    Ok(d)
}

pub fn resolve(config: Option<&Path>, overrides: &KvDoc) -> Result<KvDoc> {
    let base = defaults(env_seed()?);
    let mut doc = base.clone();
    if let Some(path) = config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        let file = KvDoc::parse(&text)?;
        check_keys(&file, &base, "config file")?;
        doc.merge(&file);
    }
    check_keys(overrides, &base, "command-line overrides")?;
    doc.merge(overrides);
    Ok(doc)
}

pub fn get<T: std::str::FromStr>(doc: &KvDoc, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let v = doc
        .get(key)
        .ok_or_else(|| Error::config(key, "missing"))?;
    v.parse()
        .map_err(|e| Error::config(key, format!("cannot parse `{v}`: {e}")))
}

pub fn get_list<T: std::str::FromStr>(doc: &KvDoc, key: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let v = doc.get(key).ok_or_else(|| Error::config(key, "missing"))?;
    v.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| Error::config(key, format!("cannot parse `{s}`: {e}")))
        })
        .collect()
}
