//! Flat key-value run configuration.
//!
//! A config file is UTF-8 text, one `key = value` pair per line, `#`
//! comments and blank lines ignored. Every subcommand publishes a schema
//! (key, type, default) below; unknown keys and malformed values are
//! rejected before any computation runs. Values are canonicalized (sorted
//! keys, shortest round-trip float formatting) so the manifest can embed a
//! config whose hash is reproducible byte for byte.
//!
//! Empty list/text defaults in the schemas below stand for non-literal
//! defaults resolved when the schema is applied.

use crate::error::{Error, Result};
use std::collections::BTreeMap;

/// Typed config value.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    U64(u64),
    F64(f64),
    Text(&'static str),
    U64List(&'static [u64]),
    F64List(&'static [f64]),
}

/// Resolved, owned value.
#[derive(Debug, Clone, PartialEq)]
pub enum Resolved {
    U64(u64),
    F64(f64),
    Text(String),
    U64List(Vec<u64>),
    F64List(Vec<f64>),
}

impl Resolved {
    fn canonical(&self) -> String {
        match self {
            Resolved::U64(v) => format!("{v}"),
            Resolved::F64(v) => {
                if v.is_infinite() {
                    "inf".to_string()
                } else {
                    format!("{v}")
                }
            }
            Resolved::Text(s) => s.clone(),
            Resolved::U64List(vs) => vs
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
            Resolved::F64List(vs) => vs
                .iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(","),
        }
    }
}

fn resolve_default(v: &Value) -> Resolved {
    match v {
        Value::U64(x) => Resolved::U64(*x),
        Value::F64(x) => Resolved::F64(*x),
        Value::Text(s) => Resolved::Text((*s).to_string()),
        Value::U64List(xs) => Resolved::U64List(xs.to_vec()),
        Value::F64List(xs) => Resolved::F64List(xs.to_vec()),
    }
}

/// Declared type of one schema key.
#[derive(Debug, Clone)]
pub enum Kind {
    U64,
    /// Accepts "inf".
    F64,
    /// One of the listed tokens.
    Choice(&'static [&'static str]),
    U64List,
    F64List,
}

/// One schema entry: key, type, default.
pub struct KeySpec {
    pub key: &'static str,
    pub kind: Kind,
    pub default: Value,
}

impl KeySpec {
    fn parse(&self, raw: &str) -> Result<Resolved> {
        let bad = |k: &str, r: &str| Error::InvalidConfig(format!("bad value {r:?} for key {k}"));
        match &self.kind {
            Kind::U64 => raw
                .parse::<u64>()
                .map(Resolved::U64)
                .map_err(|_| bad(self.key, raw)),
            Kind::F64 => parse_f64(raw)
                .map(Resolved::F64)
                .ok_or_else(|| bad(self.key, raw)),
            Kind::Choice(options) => {
                if options.contains(&raw) {
                    Ok(Resolved::Text(raw.to_string()))
                } else {
                    Err(Error::InvalidConfig(format!(
                        "key {} must be one of {options:?}, got {raw:?}",
                        self.key
                    )))
                }
            }
            Kind::U64List => raw
                .split(',')
                .map(|p| p.trim().parse::<u64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Resolved::U64List)
                .map_err(|_| bad(self.key, raw)),
            Kind::F64List => raw
                .split(',')
                .map(|p| parse_f64(p.trim()))
                .collect::<Option<Vec<_>>>()
                .map(Resolved::F64List)
                .ok_or_else(|| bad(self.key, raw)),
        }
    }
}

fn parse_f64(raw: &str) -> Option<f64> {
    if raw == "inf" {
        return Some(f64::INFINITY);
    }
    raw.parse::<f64>().ok().filter(|v| !v.is_nan())
}

/// A validated configuration: every schema key resolved to a value.
pub struct RunConfig {
    values: BTreeMap<&'static str, Resolved>,
}

impl RunConfig {
    /// Parse `text` against `schema`; unknown keys are rejected and
    /// missing keys take their defaults.
    pub fn parse(text: &str, schema: &[KeySpec]) -> Result<Self> {
        let mut raw: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim().to_string();
            if raw.contains_key(&key) {
                return Err(Error::InvalidConfig(format!("duplicate key {key}")));
            }
            // Values never contain '#': anything after one is a comment.
            let value = match value.split_once('#') {
                Some((v, _)) => v,
                None => value,
            };
            raw.insert(key, value.trim().to_string());
        }
        let mut values = BTreeMap::new();
        for spec in schema {
            let value = match raw.remove(spec.key) {
                Some(text) => spec.parse(&text)?,
                None => resolve_default(&spec.default),
            };
            values.insert(spec.key, value);
        }
        if let Some((key, _)) = raw.into_iter().next() {
            return Err(Error::InvalidConfig(format!("unknown key {key}")));
        }
        Ok(Self { values })
    }

    pub fn override_seed(&mut self, seed: u64) {
        if self.values.contains_key("seed") {
            self.values.insert("seed", Resolved::U64(seed));
        }
    }

    pub fn u64(&self, key: &str) -> u64 {
        match self.values.get(key) {
            Some(Resolved::U64(v)) => *v,
            other => panic!("config key {key} is not u64: {other:?}"),
        }
    }

    pub fn usize(&self, key: &str) -> usize {
        self.u64(key) as usize
    }

    pub fn f64(&self, key: &str) -> f64 {
        match self.values.get(key) {
            Some(Resolved::F64(v)) => *v,
            other => panic!("config key {key} is not f64: {other:?}"),
        }
    }

    pub fn text(&self, key: &str) -> &str {
        match self.values.get(key) {
            Some(Resolved::Text(s)) => s,
            other => panic!("config key {key} is not text: {other:?}"),
        }
    }

    pub fn usize_list(&self, key: &str) -> Vec<usize> {
        match self.values.get(key) {
            Some(Resolved::U64List(v)) => v.iter().map(|&x| x as usize).collect(),
            other => panic!("config key {key} is not a u64 list: {other:?}"),
        }
    }

    pub fn u64_list(&self, key: &str) -> Vec<u64> {
        match self.values.get(key) {
            Some(Resolved::U64List(v)) => v.clone(),
            other => panic!("config key {key} is not a u64 list: {other:?}"),
        }
    }

    pub fn f64_list(&self, key: &str) -> Vec<f64> {
        match self.values.get(key) {
            Some(Resolved::F64List(v)) => v.clone(),
            other => panic!("config key {key} is not a f64 list: {other:?}"),
        }
    }

    /// Sorted `key = value` lines; hashing this is the config hash.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (key, value) in &self.values {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value.canonical());
            out.push('\n');
        }
        out
    }
}

pub const SADDLE_SCHEMA: &[KeySpec] = &[
    KeySpec { key: "seed", kind: Kind::U64, default: Value::U64(0) },
    KeySpec { key: "data.n", kind: Kind::U64, default: Value::U64(200) },
    KeySpec { key: "data.m", kind: Kind::U64, default: Value::U64(10) },
    KeySpec { key: "data.labels", kind: Kind::U64, default: Value::U64(6) },
    KeySpec { key: "data.overlap", kind: Kind::F64, default: Value::F64(2.0) },
    KeySpec { key: "data.privileged", kind: Kind::U64, default: Value::U64(2) },
    KeySpec { key: "epsilon", kind: Kind::F64, default: Value::F64(0.02) },
    KeySpec { key: "mu", kind: Kind::F64, default: Value::F64(2.0) },
    KeySpec { key: "eta", kind: Kind::F64, default: Value::F64(0.02) },
    KeySpec { key: "iters", kind: Kind::U64, default: Value::U64(2000) },
    KeySpec {
        key: "schedule",
        kind: Kind::Choice(&["constant", "inv_sqrt"]),
        default: Value::Text("inv_sqrt"),
    },
    KeySpec {
        key: "dual_rule",
        kind: Kind::Choice(&["exact", "raw"]),
        default: Value::Text("exact"),
    },
    KeySpec {
        key: "init",
        kind: Kind::Choice(&["prior", "zero"]),
        default: Value::Text("prior"),
    },
    KeySpec {
        key: "mode",
        kind: Kind::Choice(&["saddle", "fixed"]),
        default: Value::Text("saddle"),
    },
    KeySpec { key: "fixed_lambda", kind: Kind::F64, default: Value::F64(1.0) },
];

pub const MINMAX_SCHEMA: &[KeySpec] = &[
    KeySpec { key: "seed", kind: Kind::U64, default: Value::U64(0) },
    KeySpec { key: "tasks.k", kind: Kind::U64, default: Value::U64(2) },
    KeySpec { key: "tasks.n_train", kind: Kind::U64, default: Value::U64(150) },
    KeySpec { key: "tasks.n_val", kind: Kind::U64, default: Value::U64(150) },
    KeySpec { key: "tasks.m", kind: Kind::U64, default: Value::U64(6) },
    KeySpec {
        key: "tasks.noise",
        kind: Kind::F64List,
        default: Value::F64List(&[0.0, 0.3]),
    },
    KeySpec { key: "tasks.margin", kind: Kind::F64, default: Value::F64(1.0) },
    KeySpec { key: "alpha1", kind: Kind::F64, default: Value::F64(0.0005) },
    KeySpec { key: "alpha2", kind: Kind::F64, default: Value::F64(50.0) },
    KeySpec { key: "iters", kind: Kind::U64, default: Value::U64(25) },
    KeySpec {
        key: "mode",
        kind: Kind::Choice(&["hard", "gumbel", "fixed"]),
        default: Value::Text("hard"),
    },
    KeySpec { key: "gumbel_tau", kind: Kind::F64, default: Value::F64(1e-4) },
    KeySpec {
        key: "gumbel_noise",
        kind: Kind::Choice(&["on", "off"]),
        default: Value::Text("on"),
    },
    KeySpec { key: "theta_init_scale", kind: Kind::F64, default: Value::F64(2.0) },
    KeySpec {
        key: "regularizer",
        kind: Kind::Choice(&["none", "l2"]),
        default: Value::Text("none"),
    },
    KeySpec {
        key: "val_normalization",
        kind: Kind::Choice(&["none", "initial"]),
        default: Value::Text("none"),
    },
];

pub const DEDIER_SCHEMA: &[KeySpec] = &[
    KeySpec { key: "seed", kind: Kind::U64, default: Value::U64(0) },
    KeySpec { key: "data.rho", kind: Kind::F64, default: Value::F64(0.95) },
    KeySpec { key: "data.core_snr", kind: Kind::F64, default: Value::F64(4.0) },
    KeySpec { key: "data.spur_snr", kind: Kind::F64, default: Value::F64(8.0) },
    KeySpec { key: "data.n_train", kind: Kind::U64, default: Value::U64(1200) },
    KeySpec { key: "data.n_val", kind: Kind::U64, default: Value::U64(600) },
    KeySpec { key: "data.n_test_per_group", kind: Kind::U64, default: Value::U64(150) },
    KeySpec {
        key: "teacher.hidden",
        kind: Kind::U64List,
        default: Value::U64List(&[32, 32]),
    },
    KeySpec { key: "teacher.lr", kind: Kind::F64, default: Value::F64(0.05) },
    KeySpec { key: "teacher.batch", kind: Kind::U64, default: Value::U64(64) },
    KeySpec { key: "teacher.epochs", kind: Kind::U64, default: Value::U64(60) },
    KeySpec { key: "teacher.group_step", kind: Kind::F64, default: Value::F64(0.5) },
    KeySpec {
        key: "student.hidden",
        kind: Kind::U64List,
        default: Value::U64List(&[24, 24]),
    },
    KeySpec { key: "student.lr", kind: Kind::F64, default: Value::F64(0.02) },
    KeySpec { key: "student.batch", kind: Kind::U64, default: Value::U64(32) },
    KeySpec { key: "student.epochs", kind: Kind::U64, default: Value::U64(30) },
    KeySpec { key: "alpha", kind: Kind::F64, default: Value::F64(0.05) },
    KeySpec { key: "beta", kind: Kind::F64, default: Value::F64(4.0) },
    KeySpec { key: "kd_mix", kind: Kind::F64, default: Value::F64(1.0) },
    KeySpec { key: "kd_temperature", kind: Kind::F64, default: Value::F64(2.0) },
    KeySpec { key: "aux_position", kind: Kind::U64, default: Value::U64(1) },
    KeySpec { key: "refresh_interval", kind: Kind::U64, default: Value::U64(1) },
    KeySpec { key: "aux_epochs", kind: Kind::U64, default: Value::U64(1) },
    KeySpec { key: "aux_lr", kind: Kind::F64, default: Value::F64(0.2) },
];

pub const PROBE_SCHEMA: &[KeySpec] = &[
    KeySpec { key: "seed", kind: Kind::U64, default: Value::U64(0) },
    KeySpec { key: "data.rho", kind: Kind::F64, default: Value::F64(0.95) },
    KeySpec { key: "data.core_snr", kind: Kind::F64, default: Value::F64(4.0) },
    KeySpec { key: "data.spur_snr", kind: Kind::F64, default: Value::F64(8.0) },
    KeySpec { key: "data.n_train", kind: Kind::U64, default: Value::U64(1200) },
    KeySpec { key: "data.n_val", kind: Kind::U64, default: Value::U64(600) },
    KeySpec { key: "data.n_test_per_group", kind: Kind::U64, default: Value::U64(150) },
    KeySpec {
        key: "model.hidden",
        kind: Kind::U64List,
        default: Value::U64List(&[32, 32]),
    },
    KeySpec { key: "model.lr", kind: Kind::F64, default: Value::F64(0.3) },
    KeySpec { key: "model.batch", kind: Kind::U64, default: Value::U64(8) },
    KeySpec { key: "model.epochs", kind: Kind::U64, default: Value::U64(1) },
    KeySpec {
        key: "depths",
        kind: Kind::U64List,
        default: Value::U64List(&[1, 2, 3]),
    },
    KeySpec { key: "decoder.epochs", kind: Kind::U64, default: Value::U64(2) },
    KeySpec { key: "decoder.lr", kind: Kind::F64, default: Value::F64(0.1) },
    KeySpec { key: "decoder.batch", kind: Kind::U64, default: Value::U64(32) },
];

pub const SWEEP_SCHEMA: &[KeySpec] = &[
    KeySpec { key: "seed", kind: Kind::U64, default: Value::U64(0) },
    KeySpec {
        key: "seeds",
        kind: Kind::U64List,
        default: Value::U64List(&[0, 1, 2, 3, 4]),
    },
    KeySpec {
        key: "methods",
        kind: Kind::Choice(&["erm", "kd", "jtt", "groupdro", "dedier", "all"]),
        default: Value::Text("all"),
    },
    KeySpec { key: "data.rho", kind: Kind::F64, default: Value::F64(0.95) },
    KeySpec { key: "data.core_snr", kind: Kind::F64, default: Value::F64(4.0) },
    KeySpec { key: "data.spur_snr", kind: Kind::F64, default: Value::F64(8.0) },
    KeySpec { key: "data.n_train", kind: Kind::U64, default: Value::U64(1200) },
    KeySpec { key: "data.n_val", kind: Kind::U64, default: Value::U64(600) },
    KeySpec { key: "data.n_test_per_group", kind: Kind::U64, default: Value::U64(150) },
    KeySpec {
        key: "teacher.hidden",
        kind: Kind::U64List,
        default: Value::U64List(&[32, 32]),
    },
    KeySpec { key: "teacher.lr", kind: Kind::F64, default: Value::F64(0.05) },
    KeySpec { key: "teacher.batch", kind: Kind::U64, default: Value::U64(64) },
    KeySpec { key: "teacher.epochs", kind: Kind::U64, default: Value::U64(60) },
    KeySpec { key: "teacher.group_step", kind: Kind::F64, default: Value::F64(0.5) },
    KeySpec {
        key: "student.hidden",
        kind: Kind::U64List,
        default: Value::U64List(&[24, 24]),
    },
    KeySpec { key: "student.lr", kind: Kind::F64, default: Value::F64(0.02) },
    KeySpec { key: "student.batch", kind: Kind::U64, default: Value::U64(32) },
    KeySpec { key: "student.epochs", kind: Kind::U64, default: Value::U64(30) },
    KeySpec { key: "kd_mix", kind: Kind::F64, default: Value::F64(1.0) },
    KeySpec { key: "kd_temperature", kind: Kind::F64, default: Value::F64(2.0) },
    KeySpec { key: "aux_position", kind: Kind::U64, default: Value::U64(1) },
    KeySpec { key: "refresh_interval", kind: Kind::U64, default: Value::U64(1) },
    KeySpec { key: "aux_epochs", kind: Kind::U64, default: Value::U64(1) },
    KeySpec { key: "aux_lr", kind: Kind::F64, default: Value::F64(0.2) },
    KeySpec { key: "jtt.first_epochs", kind: Kind::U64, default: Value::U64(1) },
    KeySpec { key: "jtt.upweight", kind: Kind::F64, default: Value::F64(20.0) },
    KeySpec {
        key: "grid.alpha",
        kind: Kind::F64List,
        default: Value::F64List(&[0.05]),
    },
    KeySpec {
        key: "grid.beta",
        kind: Kind::F64List,
        default: Value::F64List(&[4.0]),
    },
];

pub const GRADCHECK_SCHEMA: &[KeySpec] = &[
    KeySpec { key: "seed", kind: Kind::U64, default: Value::U64(0) },
    KeySpec { key: "trials", kind: Kind::U64, default: Value::U64(100) },
    KeySpec { key: "step", kind: Kind::F64, default: Value::F64(1e-5) },
    KeySpec { key: "tolerance", kind: Kind::F64, default: Value::F64(1e-4) },
];
