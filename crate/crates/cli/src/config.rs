//! Typed key-value run configuration with sections. Unknown sections or
//! keys are rejected with the offending key path; every run writes back a
//! resolved snapshot that replays identically.

use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
}

impl Value {
    pub fn render(&self) -> String {
        match self {
            Value::Int(v) => v.to_string(),
            Value::Float(v) => {
                if v.fract() == 0.0 && v.abs() < 1e15 {
                    format!("{v:.1}")
                } else {
                    format!("{v}")
                }
            }
            Value::Bool(v) => v.to_string(),
            Value::Str(v) => format!("\"{v}\""),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Int,
    Float,
    Bool,
    Str,
}

#[derive(Debug)]
pub struct ConfigError {
    pub key: String,
    pub msg: String,
}

impl ConfigError {
    fn new(key: impl Into<String>, msg: impl Into<String>) -> Self {
        ConfigError {
            key: key.into(),
            msg: msg.into(),
        }
    }
}

/// Schema: section → key → (kind, default).
pub fn schema() -> BTreeMap<&'static str, BTreeMap<&'static str, (Kind, Value)>> {
    fn int(v: i64) -> (Kind, Value) {
        (Kind::Int, Value::Int(v))
    }
    fn num(v: f64) -> (Kind, Value) {
        (Kind::Float, Value::Float(v))
    }
    fn flag(v: bool) -> (Kind, Value) {
        (Kind::Bool, Value::Bool(v))
    }
    fn text(v: &str) -> (Kind, Value) {
        (Kind::Str, Value::Str(v.into()))
    }
    let mut s: BTreeMap<&'static str, BTreeMap<&'static str, (Kind, Value)>> = BTreeMap::new();
    let corpus: &[(&str, (Kind, Value))] = &[
        ("train_count", int(2000)),
        ("eval_count", int(200)),
        ("image_size", int(64)),
        ("uv_size", int(64)),
        ("seed", int(7)),
        ("yaw_range_deg", num(60.0)),
        ("pitch_range_deg", num(15.0)),
        ("roll_range_deg", num(8.0)),
        ("occluder_prob", num(0.3)),
        ("freckle_prob", num(0.7)),
        ("wrinkle_prob", num(0.7)),
        ("beard_prob", num(0.45)),
        ("makeup_prob", num(0.4)),
        ("sigma_shape", num(0.05)),
        ("sigma_expr", num(0.05)),
        ("sigma_rot_deg", num(3.0)),
        ("sigma_trans_px", num(1.0)),
        ("preview_count", int(8)),
    ];
    let train: &[(&str, (Kind, Value))] = &[
        ("steps", int(2000)),
        ("warmup_steps", int(1200)),
        ("batch_size", int(4)),
        ("lr", num(3e-3)),
        ("warmup_lr", num(2e-3)),
        ("seed", int(11)),
        ("t_count", int(1000)),
        ("beta_min", num(1e-4)),
        ("beta_max", num(0.02)),
        ("dropout_prob", num(0.1)),
        ("attention", text("self")),
        ("use_landmarks", flag(true)),
        ("direction", text("forward")),
    ];
    let sample: &[(&str, (Kind, Value))] = &[
        ("guidance", num(1.4)),
        ("steps", int(30)),
        ("seed", int(1)),
        ("color_adjust", flag(true)),
        ("views", int(1)),
    ];
    let eval: &[(&str, (Kind, Value))] = &[
        ("guidance", num(1.4)),
        ("steps", int(30)),
        ("seed", int(1)),
        ("color_adjust", flag(true)),
        ("max_faces", int(50)),
        ("sheets", int(4)),
    ];
    let edit: &[(&str, (Kind, Value))] = &[
        ("base", text("")),
        ("layers", text("")),
    ];
    let interp: &[(&str, (Kind, Value))] = &[
        ("input_a", text("")),
        ("input_b", text("")),
        ("tau", num(0.5)),
    ];
    let ablate: &[(&str, (Kind, Value))] = &[("arms", text("all"))];
    let sections: &[(&str, &[(&str, (Kind, Value))])] = &[
        ("corpus", corpus),
        ("train_a", train),
        ("train_s", train),
        ("sample", sample),
        ("eval", eval),
        ("edit", edit),
        ("interp", interp),
        ("ablate", ablate),
    ];
    for (name, keys) in sections {
        let mut m = BTreeMap::new();
        for (k, v) in *keys {
            m.insert(*k, v.clone());
        }
        s.insert(*name, m);
    }
    // the two train sections differ in their attention default
    if let Some(m) = s.get_mut("train_a") {
        m.insert("attention", text("channel"));
    }
    s
}

/// Fully resolved configuration: every schema key has a value.
#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, Value>,
}

impl RunConfig {
    pub fn defaults() -> Self {
        let mut values = BTreeMap::new();
        for (section, keys) in schema() {
            for (key, (_, default)) in keys {
                values.insert(format!("{section}.{key}"), default);
            }
        }
        RunConfig { values }
    }

    /// Parse config text over the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::defaults();
        let sch = schema();
        let mut section: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !sch.contains_key(name) {
                    return Err(ConfigError::new(name, format!("unknown section (line {})", lineno + 1)));
                }
                section = Some(name.to_string());
                continue;
            }
            let Some((key, val)) = line.split_once('=') else {
                return Err(ConfigError::new(
                    format!("line {}", lineno + 1),
                    format!("expected `key = value`, got `{line}`"),
                ));
            };
            let sec = section.as_deref().ok_or_else(|| {
                ConfigError::new(key.trim(), "key outside any [section]")
            })?;
            cfg.set(&format!("{sec}.{}", key.trim()), val.trim())?;
        }
        Ok(cfg)
    }

    /// Set one `section.key` from its string form; applies CLI overrides too.
    pub fn set(&mut self, path: &str, raw: &str) -> Result<(), ConfigError> {
        let sch = schema();
        let Some((section, key)) = path.split_once('.') else {
            return Err(ConfigError::new(path, "expected section.key"));
        };
        let Some(keys) = sch.get(section) else {
            return Err(ConfigError::new(path, "unknown section"));
        };
        let Some((kind, _)) = keys.get(key) else {
            return Err(ConfigError::new(path, "unknown key"));
        };
        let raw = raw.trim().trim_matches('"');
        let value = match kind {
            Kind::Int => Value::Int(raw.parse::<i64>().map_err(|_| {
                ConfigError::new(path, format!("expected integer, got `{raw}`"))
            })?),
            Kind::Float => Value::Float(raw.parse::<f64>().map_err(|_| {
                ConfigError::new(path, format!("expected number, got `{raw}`"))
            })?),
            Kind::Bool => Value::Bool(raw.parse::<bool>().map_err(|_| {
                ConfigError::new(path, format!("expected true/false, got `{raw}`"))
            })?),
            Kind::Str => Value::Str(raw.to_string()),
        };
        self.values.insert(path.to_string(), value);
        Ok(())
    }

    pub fn int(&self, path: &str) -> i64 {
        match self.values.get(path) {
            Some(Value::Int(v)) => *v,
            other => panic!("config key {path} is not an int: {other:?}"),
        }
    }

    pub fn float(&self, path: &str) -> f64 {
        match self.values.get(path) {
            Some(Value::Float(v)) => *v,
            Some(Value::Int(v)) => *v as f64,
            other => panic!("config key {path} is not a number: {other:?}"),
        }
    }

    pub fn bool(&self, path: &str) -> bool {
        match self.values.get(path) {
            Some(Value::Bool(v)) => *v,
            other => panic!("config key {path} is not a bool: {other:?}"),
        }
    }

    pub fn str(&self, path: &str) -> String {
        match self.values.get(path) {
            Some(Value::Str(v)) => v.clone(),
            other => panic!("config key {path} is not a string: {other:?}"),
        }
    }

    /// Canonical snapshot text; parsing it back reproduces the config.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        let mut current = String::new();
        for (path, value) in &self.values {
            let (section, key) = path.split_once('.').unwrap();
            if section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{section}]");
                current = section.to_string();
            }
            let _ = writeln!(out, "{key} = {}", value.render());
        }
        out
    }

    /// Content hash of the resolved configuration.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for b in self.snapshot().as_bytes() {
            h = (h ^ *b as u64).wrapping_mul(0x100_0000_01b3);
        }
        h
    }
}
