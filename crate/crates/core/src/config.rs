//! Model and training configuration in a flat `key = value` text format.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

macro_rules! config_struct {
    ($( $(#[$doc:meta])* $field:ident : $ty:ty ),* $(,)?) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct ModelConfig {
            $( $(#[$doc])* pub $field: $ty, )*
        }

        impl ModelConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            fn set_raw(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( stringify!($field) => {
                        self.$field = value.trim().parse().map_err(|_| {
                            Error::config(key, format!("cannot parse `{}`", value.trim()))
                        })?;
                    } )*
                    _ => return Err(Error::config(key, "unknown key")),
                }
                Ok(())
            }

            fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$( (stringify!($field), self.$field.to_string()) ),*]
            }
        }
    };
}

config_struct! {
    d_model: usize,
    layers: usize,
    heads: usize,
    d_k: usize,
    d_v: usize,
    d_ff: usize,
    char_dim: usize,
    /// Character-CNN filter count; must equal `d_model` so the vectors can be summed.
    char_filters: usize,
    char_width: usize,
    max_word_len: usize,
    /// 1-based decoder layer feeding the POS head.
    pos_tag_layer: usize,
    rel_clip: usize,
    vocab_size: usize,
    /// Word budget of the extractor-generator input; also the position-table size.
    max_src_len: usize,
    max_sentences: usize,
    max_decode_len: usize,
    selector_layers: usize,
    dropout: f64,
    lr: f64,
    batch_size: usize,
    clip_norm: f64,
    patience: usize,
    max_epochs: usize,
    alpha: f64,
    beta: f64,
    omega_selector: f64,
    omega_extractor: f64,
    bn_momentum: f64,
    bn_eps: f64,
    select_threshold: f64,
    extract_threshold: f64,
    seed: u64,
}

impl ModelConfig {
    /// The full-size setting.
    pub fn full() -> Self {
        ModelConfig {
            d_model: 512,
            layers: 6,
            heads: 8,
            d_k: 64,
            d_v: 64,
            d_ff: 2048,
            char_dim: 50,
            char_filters: 512,
            char_width: 3,
            max_word_len: 20,
            pos_tag_layer: 3,
            rel_clip: 16,
            vocab_size: 50_000,
            max_src_len: 200,
            max_sentences: 64,
            max_decode_len: 40,
            selector_layers: 6,
            dropout: 0.2,
            lr: 1e-4,
            batch_size: 80,
            clip_norm: 1.0,
            patience: 5,
            max_epochs: 50,
            alpha: 0.7,
            beta: 0.5,
            omega_selector: 0.7,
            omega_extractor: 2.0,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            select_threshold: 0.5,
            extract_threshold: 0.5,
            seed: 42,
        }
    }

    /// Small CPU-friendly setting.
    pub fn desk() -> Self {
        let mut c = ModelConfig {
            d_model: 64,
            layers: 2,
            heads: 2,
            d_ff: 128,
            char_dim: 16,
            vocab_size: 2000,
            ..Self::full()
        };
        c.derive(&BTreeSet::new());
        c
    }

    /// Desk profile shrunk to `d_model = 8` for gradient checks.
    pub fn tiny() -> Self {
        let mut c = ModelConfig {
            d_model: 8,
            d_ff: 16,
            char_dim: 4,
            rel_clip: 2,
            vocab_size: 50,
            max_src_len: 32,
            max_sentences: 8,
            max_decode_len: 12,
            dropout: 0.0,
            ..Self::desk()
        };
        c.derive(&BTreeSet::new());
        c
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::config("profile", format!("unknown profile `{other}`"))),
        }
    }

    /// Keys `d_k`, `d_v`, `char_filters`, `pos_tag_layer` and `selector_layers`
    /// follow other keys unless set explicitly.
    fn derive(&mut self, explicit: &BTreeSet<String>) {
        let unset = |k: &str| !explicit.contains(k);
        if unset("d_k") && self.heads > 0 {
            self.d_k = self.d_model / self.heads;
        }
        if unset("d_v") && self.heads > 0 {
            self.d_v = self.d_model / self.heads;
        }
        if unset("char_filters") {
            self.char_filters = self.d_model;
        }
        if unset("pos_tag_layer") {
            self.pos_tag_layer = self.layers.div_ceil(2);
        }
        if unset("selector_layers") {
            self.selector_layers = self.layers;
        }
    }

    /// Applies `key=value` assignments, rederiving dependent defaults unless
    /// they are among the assigned keys. A `profile` key resets to that profile first.
    pub fn with_assignments(mut self, pairs: &[(String, String)]) -> Result<Self> {
        let mut explicit = BTreeSet::new();
        for (k, v) in pairs {
            if k == "profile" {
                self = Self::profile(v.trim())?;
                explicit.clear();
                continue;
            }
            self.set_raw(k, v)?;
            explicit.insert(k.clone());
        }
        if !pairs.is_empty() {
            self.derive(&explicit);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let positive: [(&str, usize); 15] = [
            ("d_model", self.d_model),
            ("layers", self.layers),
            ("heads", self.heads),
            ("d_k", self.d_k),
            ("d_v", self.d_v),
            ("d_ff", self.d_ff),
            ("char_dim", self.char_dim),
            ("char_width", self.char_width),
            ("max_word_len", self.max_word_len),
            ("rel_clip", self.rel_clip),
            ("max_src_len", self.max_src_len),
            ("max_sentences", self.max_sentences),
            ("max_decode_len", self.max_decode_len),
            ("selector_layers", self.selector_layers),
            ("batch_size", self.batch_size),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::config(k, "must be positive"));
            }
        }
        if self.heads * self.d_k != self.d_model {
            return Err(Error::config(
                "d_k",
                format!("heads ({}) x d_k ({}) must equal d_model ({})", self.heads, self.d_k, self.d_model),
            ));
        }
        if self.char_filters != self.d_model {
            return Err(Error::config("char_filters", "must equal d_model"));
        }
        if self.pos_tag_layer == 0 || self.pos_tag_layer > self.layers {
            return Err(Error::config(
                "pos_tag_layer",
                format!("must lie in 1..={}", self.layers),
            ));
        }
        if self.max_word_len < self.char_width {
            return Err(Error::config("max_word_len", "must be at least char_width"));
        }
        if self.d_model < 2 {
            return Err(Error::config("d_model", "selector classifier needs d_model >= 2"));
        }
        for (k, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(k, "must lie in [0, 1]"));
            }
        }
        for (k, v) in [
            ("lr", self.lr),
            ("clip_norm", self.clip_norm),
            ("omega_selector", self.omega_selector),
            ("omega_extractor", self.omega_extractor),
            ("bn_eps", self.bn_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(k, "must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::config("bn_momentum", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Every key, one per line, in declaration order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Parses text on top of `base`. Blank lines and `#` comments are skipped.
    pub fn parse_onto(base: Self, text: &str) -> Result<Self> {
        base.with_assignments(&parse_pairs(text)?)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::parse_onto(Self::full(), text)
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

/// `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}", i + 1), "expected `key = value`"))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses a `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::config(s, "override must be `key=value`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Defaults, then the optional file, then overrides; then validation.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<ModelConfig> {
    load_config_onto(ModelConfig::full(), path, overrides)
}

/// As [`load_config`] with a different starting point.
pub fn load_config_onto(base: ModelConfig, path: Option<&Path>, overrides: &[(String, String)]) -> Result<ModelConfig> {
    let mut pairs = match path {
        Some(p) => parse_pairs(&std::fs::read_to_string(p)?)?,
        None => Vec::new(),
    };
    pairs.extend(overrides.iter().cloned());
    base.with_assignments(&pairs)
}
