//! Model, adapter and training configuration plus the flat key-value
//! document they are persisted in (`section.key=value`, one per line).

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::data::calendar::CalendarCycle;
use crate::error::{Error, Result};

/// Flat UTF-8 key-value document with dotted section keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDoc {
    entries: BTreeMap<String, String>,
}

impl KvDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", lineno + 1), "expected `key=value`")
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::config(format!("line {}", lineno + 1), "empty key"));
            }
            entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Overlays `other` on top of `self` (other wins).
    pub fn merge(&mut self, other: &KvDoc) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn as_map(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Parses `key` if present, otherwise leaves `slot` untouched.
    pub fn read<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: Display,
    {
        if let Some(v) = self.get(key) {
            *slot = v
                .parse()
                .map_err(|e| Error::config(key, format!("cannot parse `{v}`: {e}")))?;
        }
        Ok(())
    }

    pub fn read_list(&self, key: &str, slot: &mut Vec<f64>) -> Result<()> {
        if let Some(v) = self.get(key) {
            *slot = v
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::config(key, format!("cannot parse list `{v}`: {e}")))?;
        }
        Ok(())
    }
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Architecture of the temporal backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Time steps per patch.
    pub patch_len: usize,
    pub max_ctx_patches: usize,
    pub max_fut_patches: usize,
    pub min_ctx_patches: usize,
    pub quantiles: Vec<f64>,
    pub rope_fraction: f64,
    pub rope_base: f64,
    pub dropout: f64,
    /// Normalization floor.
    pub eps: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            d_ff: 256,
            n_layers: 2,
            n_heads: 4,
            patch_len: 16,
            max_ctx_patches: 32,
            max_fut_patches: 4,
            min_ctx_patches: 4,
            quantiles: (1..=9).map(|i| i as f64 / 10.0).collect(),
            rope_fraction: 0.75,
            rope_base: 10_000.0,
            dropout: 0.1,
            eps: 1e-5,
        }
    }
}

impl BackboneConfig {
    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Number of leading head dimensions that receive rotary encoding.
    pub fn rope_dims(&self) -> usize {
        (self.rope_fraction * self.d_head() as f64).round() as usize
    }

    pub fn n_tokens(&self) -> usize {
        self.max_ctx_patches + 1 + self.max_fut_patches
    }

    pub fn register_index(&self) -> usize {
        self.max_ctx_patches
    }

    pub fn max_context(&self) -> usize {
        self.max_ctx_patches * self.patch_len
    }

    pub fn max_horizon(&self) -> usize {
        self.max_fut_patches * self.patch_len
    }

    pub fn n_quantiles(&self) -> usize {
        self.quantiles.len()
    }

    pub fn median_index(&self) -> usize {
        self.quantiles
            .iter()
            .position(|&q| (q - 0.5).abs() < 1e-12)
            .expect("validated config contains the median")
    }

    pub fn quantile_index(&self, q: f64) -> Option<usize> {
        self.quantiles.iter().position(|&x| (x - q).abs() < 1e-9)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |k: &str, v: usize| {
            if v == 0 {
                Err(Error::config(format!("backbone.{k}"), "must be positive"))
            } else {
                Ok(())
            }
        };
        pos("d_model", self.d_model)?;
        pos("d_ff", self.d_ff)?;
        pos("n_heads", self.n_heads)?;
        pos("patch_len", self.patch_len)?;
        pos("max_ctx_patches", self.max_ctx_patches)?;
        pos("max_fut_patches", self.max_fut_patches)?;
        pos("min_ctx_patches", self.min_ctx_patches)?;
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config("backbone.n_heads", "must divide d_model"));
        }
        if !(self.rope_fraction > 0.0 && self.rope_fraction <= 1.0) {
            return Err(Error::config("backbone.rope_fraction", "must lie in (0, 1]"));
        }
        let r = self.rope_dims();
        if r < 2 || r % 2 != 0 {
            return Err(Error::config(
                "backbone.rope_fraction",
                format!("rotated dimension count {r} must be even and >= 2"),
            ));
        }
        if self.rope_base <= 0.0 {
            return Err(Error::config("backbone.rope_base", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("backbone.dropout", "must lie in [0, 1)"));
        }
        if self.eps <= 0.0 {
            return Err(Error::config("backbone.eps", "must be positive"));
        }
        if self.min_ctx_patches > self.max_ctx_patches {
            return Err(Error::config("backbone.min_ctx_patches", "exceeds max_ctx_patches"));
        }
        if self.quantiles.is_empty()
            || self.quantiles.iter().any(|&q| !(q > 0.0 && q < 1.0))
            || self.quantiles.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::config(
                "backbone.quantiles",
                "must be strictly increasing levels in (0, 1)",
            ));
        }
        if self.quantile_index(0.5).is_none() {
            return Err(Error::config("backbone.quantiles", "must contain 0.5"));
        }
        Ok(())
    }

    pub fn write_kv(&self, doc: &mut KvDoc) {
        doc.set("backbone.d_model", self.d_model);
        doc.set("backbone.d_ff", self.d_ff);
        doc.set("backbone.n_layers", self.n_layers);
        doc.set("backbone.n_heads", self.n_heads);
        doc.set("backbone.patch_len", self.patch_len);
        doc.set("backbone.max_ctx_patches", self.max_ctx_patches);
        doc.set("backbone.max_fut_patches", self.max_fut_patches);
        doc.set("backbone.min_ctx_patches", self.min_ctx_patches);
        doc.set("backbone.quantiles", join(&self.quantiles));
        doc.set("backbone.rope_fraction", self.rope_fraction);
        doc.set("backbone.rope_base", self.rope_base);
        doc.set("backbone.dropout", self.dropout);
        doc.set("backbone.eps", self.eps);
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let mut c = Self::default();
        doc.read("backbone.d_model", &mut c.d_model)?;
        doc.read("backbone.d_ff", &mut c.d_ff)?;
        doc.read("backbone.n_layers", &mut c.n_layers)?;
        doc.read("backbone.n_heads", &mut c.n_heads)?;
        doc.read("backbone.patch_len", &mut c.patch_len)?;
        doc.read("backbone.max_ctx_patches", &mut c.max_ctx_patches)?;
        doc.read("backbone.max_fut_patches", &mut c.max_fut_patches)?;
        doc.read("backbone.min_ctx_patches", &mut c.min_ctx_patches)?;
        doc.read_list("backbone.quantiles", &mut c.quantiles)?;
        doc.read("backbone.rope_fraction", &mut c.rope_fraction)?;
        doc.read("backbone.rope_base", &mut c.rope_base)?;
        doc.read("backbone.dropout", &mut c.dropout)?;
        doc.read("backbone.eps", &mut c.eps)?;
        c.validate()?;
        Ok(c)
    }
}

/// Spatio-temporal adapter hyperparameters and ablation switches.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterConfig {
    pub n_nodes: usize,
    pub id_dim: usize,
    pub calendar_cycles: Vec<CalendarCycle>,
    pub n_prompts: usize,
    pub prompt_rank: usize,
    pub n_prototypes: usize,
    pub max_lag: usize,
    pub backbone_frozen: bool,
    /// Metadata fusion on/off.
    pub use_stmf: bool,
    /// Affinity gating on/off; when off the identifiers pass ungated.
    pub use_stf: bool,
    /// Prompt prefix on/off.
    pub use_dspa: bool,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            n_nodes: 1,
            id_dim: 32,
            calendar_cycles: vec![
                CalendarCycle::MinuteOfHour,
                CalendarCycle::TimeOfDay,
                CalendarCycle::DayOfWeek,
            ],
            n_prompts: 3,
            prompt_rank: 2,
            n_prototypes: 16,
            max_lag: 3,
            backbone_frozen: false,
            use_stmf: true,
            use_stf: true,
            use_dspa: true,
        }
    }
}

impl AdapterConfig {
    pub fn validate(&self, d_model: usize) -> Result<()> {
        let pos = |k: &str, v: usize| {
            if v == 0 {
                Err(Error::config(format!("adapter.{k}"), "must be positive"))
            } else {
                Ok(())
            }
        };
        pos("n_nodes", self.n_nodes)?;
        pos("id_dim", self.id_dim)?;
        pos("n_prompts", self.n_prompts)?;
        pos("prompt_rank", self.prompt_rank)?;
        pos("n_prototypes", self.n_prototypes)?;
        pos("max_lag", self.max_lag)?;
        if self.prompt_rank > self.n_prompts.min(d_model) {
            return Err(Error::config(
                "adapter.prompt_rank",
                "must not exceed min(n_prompts, d_model)",
            ));
        }
        if self.calendar_cycles.is_empty() {
            return Err(Error::config("adapter.calendar_cycles", "at least one cycle required"));
        }
        Ok(())
    }

    pub fn write_kv(&self, doc: &mut KvDoc) {
        doc.set("adapter.n_nodes", self.n_nodes);
        doc.set("adapter.id_dim", self.id_dim);
        doc.set(
            "adapter.calendar_cycles",
            self.calendar_cycles.iter().map(|c| c.name()).collect::<Vec<_>>().join(","),
        );
        doc.set("adapter.n_prompts", self.n_prompts);
        doc.set("adapter.prompt_rank", self.prompt_rank);
        doc.set("adapter.n_prototypes", self.n_prototypes);
        doc.set("adapter.max_lag", self.max_lag);
        doc.set("adapter.backbone_frozen", self.backbone_frozen);
        doc.set("adapter.use_stmf", self.use_stmf);
        doc.set("adapter.use_stf", self.use_stf);
        doc.set("adapter.use_dspa", self.use_dspa);
    }

    pub fn from_kv(doc: &KvDoc, d_model: usize) -> Result<Self> {
        let mut c = Self::default();
        doc.read("adapter.n_nodes", &mut c.n_nodes)?;
        doc.read("adapter.id_dim", &mut c.id_dim)?;
        if let Some(v) = doc.get("adapter.calendar_cycles") {
            c.calendar_cycles = v
                .split(',')
                .map(|s| {
                    CalendarCycle::from_name(s.trim()).ok_or_else(|| {
                        Error::config("adapter.calendar_cycles", format!("unknown cycle `{s}`"))
                    })
                })
                .collect::<Result<_>>()?;
        }
        doc.read("adapter.n_prompts", &mut c.n_prompts)?;
        doc.read("adapter.prompt_rank", &mut c.prompt_rank)?;
        doc.read("adapter.n_prototypes", &mut c.n_prototypes)?;
        doc.read("adapter.max_lag", &mut c.max_lag)?;
        doc.read("adapter.backbone_frozen", &mut c.backbone_frozen)?;
        doc.read("adapter.use_stmf", &mut c.use_stmf)?;
        doc.read("adapter.use_stf", &mut c.use_stf)?;
        doc.read("adapter.use_dspa", &mut c.use_dspa)?;
        c.validate(d_model)?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Pinball,
    L1Median,
}

impl FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pinball" => Ok(LossKind::Pinball),
            "l1_median" => Ok(LossKind::L1Median),
            other => Err(format!("unknown loss kind `{other}` (pinball | l1_median)")),
        }
    }
}

impl Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Pinball => "pinball",
            LossKind::L1Median => "l1_median",
        })
    }
}

/// Optimizer, schedule and replay settings shared by both training stages.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub warmup_frac: f64,
    pub decay_frac: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub loss_kind: LossKind,
    /// Random sequence masking during pretraining.
    pub random_mask: bool,
    /// Continual memory replay during adaptation.
    pub use_cmr: bool,
    /// Memory size as a fraction of the adaptation stream.
    pub memory_frac: f64,
    /// Fraction of each batch replaced by memory samples.
    pub replace_ratio: f64,
}

impl TrainConfig {
    pub fn pretrain_defaults() -> Self {
        Self {
            peak_lr: 5e-4,
            batch_size: 32,
            total_steps: 1000,
            warmup_frac: 0.1,
            decay_frac: 0.2,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            grad_clip: 1.0,
            seed: 0,
            loss_kind: LossKind::Pinball,
            random_mask: true,
            use_cmr: false,
            memory_frac: 0.2,
            replace_ratio: 0.3,
        }
    }

    pub fn adapt_defaults() -> Self {
        Self {
            peak_lr: 1e-3,
            batch_size: 4,
            total_steps: 200,
            loss_kind: LossKind::L1Median,
            use_cmr: true,
            ..Self::pretrain_defaults()
        }
    }

    pub fn validate(&self, section: &str) -> Result<()> {
        if self.peak_lr <= 0.0 {
            return Err(Error::config(format!("{section}.peak_lr"), "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config(format!("{section}.batch_size"), "must be positive"));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) || !(0.0..1.0).contains(&self.decay_frac) {
            return Err(Error::config(format!("{section}.warmup_frac"), "fractions must lie in [0, 1)"));
        }
        if self.warmup_frac + self.decay_frac >= 1.0 {
            return Err(Error::config(
                format!("{section}.decay_frac"),
                "warmup_frac + decay_frac must be < 1",
            ));
        }
        if !(0.0..1.0).contains(&self.memory_frac) {
            return Err(Error::config(format!("{section}.memory_frac"), "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.replace_ratio) {
            return Err(Error::config(format!("{section}.replace_ratio"), "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn write_kv(&self, doc: &mut KvDoc, section: &str) {
        let k = |s: &str| format!("{section}.{s}");
        doc.set(&k("peak_lr"), self.peak_lr);
        doc.set(&k("batch_size"), self.batch_size);
        doc.set(&k("total_steps"), self.total_steps);
        doc.set(&k("warmup_frac"), self.warmup_frac);
        doc.set(&k("decay_frac"), self.decay_frac);
        doc.set(&k("adam_beta1"), self.adam_betas.0);
        doc.set(&k("adam_beta2"), self.adam_betas.1);
        doc.set(&k("adam_eps"), self.adam_eps);
        doc.set(&k("grad_clip"), self.grad_clip);
        doc.set(&k("seed"), self.seed);
        doc.set(&k("loss_kind"), self.loss_kind);
        doc.set(&k("random_mask"), self.random_mask);
        doc.set(&k("use_cmr"), self.use_cmr);
        doc.set(&k("memory_frac"), self.memory_frac);
        doc.set(&k("replace_ratio"), self.replace_ratio);
    }

    pub fn from_kv(doc: &KvDoc, section: &str, defaults: Self) -> Result<Self> {
        let k = |s: &str| format!("{section}.{s}");
        let mut c = defaults;
        doc.read(&k("peak_lr"), &mut c.peak_lr)?;
        doc.read(&k("batch_size"), &mut c.batch_size)?;
        doc.read(&k("total_steps"), &mut c.total_steps)?;
        doc.read(&k("warmup_frac"), &mut c.warmup_frac)?;
        doc.read(&k("decay_frac"), &mut c.decay_frac)?;
        doc.read(&k("adam_beta1"), &mut c.adam_betas.0)?;
        doc.read(&k("adam_beta2"), &mut c.adam_betas.1)?;
        doc.read(&k("adam_eps"), &mut c.adam_eps)?;
        doc.read(&k("grad_clip"), &mut c.grad_clip)?;
        doc.read(&k("seed"), &mut c.seed)?;
        doc.read(&k("loss_kind"), &mut c.loss_kind)?;
        doc.read(&k("random_mask"), &mut c.random_mask)?;
        doc.read(&k("use_cmr"), &mut c.use_cmr)?;
        doc.read(&k("memory_frac"), &mut c.memory_frac)?;
        doc.read(&k("replace_ratio"), &mut c.replace_ratio)?;
        c.validate(section)?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_backbone_is_valid() {
        let c = BackboneConfig::default();
        c.validate().unwrap();
        assert_eq!(c.d_head(), 16);
        assert_eq!(c.rope_dims(), 12);
        assert_eq!(c.n_tokens(), 37);
    }

    #[test]
    fn odd_rotary_count_rejected() {
        let c = BackboneConfig {
            d_model: 8,
            n_heads: 1,
            rope_fraction: 0.4, // round(3.2) = 3
            ..BackboneConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn quantiles_must_contain_median() {
        let c = BackboneConfig {
            quantiles: vec![0.1, 0.9],
            ..BackboneConfig::default()
        };
        assert!(c.validate().is_err());
        let c = BackboneConfig {
            quantiles: vec![0.5, 0.1],
            ..BackboneConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn kv_round_trip_preserves_configs() {
        let mut doc = KvDoc::default();
        let b = BackboneConfig {
            d_model: 32,
            quantiles: vec![0.1, 0.5, 0.9],
            ..Default::default()
        };
        b.write_kv(&mut doc);
        let a = AdapterConfig {
            n_nodes: 7,
            ..Default::default()
        };
        a.write_kv(&mut doc);
        let t = TrainConfig::adapt_defaults();
        t.write_kv(&mut doc, "adapt");
        let parsed = KvDoc::parse(&doc.render()).unwrap();
        assert_eq!(BackboneConfig::from_kv(&parsed).unwrap(), b);
        assert_eq!(AdapterConfig::from_kv(&parsed, 32).unwrap(), a);
        assert_eq!(
            TrainConfig::from_kv(&parsed, "adapt", TrainConfig::pretrain_defaults()).unwrap(),
            t
        );
    }

    #[test]
    fn schema_errors_name_the_key() {
        let doc = KvDoc::parse("backbone.d_model=abc\n").unwrap();
        match BackboneConfig::from_kv(&doc) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "backbone.d_model"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(KvDoc::parse("no equals sign").is_err());
    }

    #[test]
    fn wsd_fractions_validated() {
        let t = TrainConfig {
            warmup_frac: 0.5,
            decay_frac: 0.5,
            ..TrainConfig::pretrain_defaults()
        };
        assert!(t.validate("pretrain").is_err());
    }

    #[test]
    fn prompt_rank_bounded_by_prompt_count() {
        let a = AdapterConfig {
            n_prompts: 3,
            prompt_rank: 4,
            ..Default::default()
        };
        assert!(a.validate(64).is_err());
    }
}
