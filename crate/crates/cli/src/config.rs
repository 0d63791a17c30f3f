//! Layered `section.key` settings: built-in defaults, then the config
//! file, then command-line flags.

use std::collections::BTreeMap;

use toml::Value;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Flag,
}

pub type Layer = BTreeMap<String, Value>;

fn s(v: &str) -> Value {
    Value::String(v.to_string())
}

pub fn defaults() -> Layer {
    let entries: Vec<(&str, Value)> = vec![
        ("global.seed", Value::Integer(0)),
        ("global.sequential", Value::Boolean(false)),
        ("synth.sessions", Value::Integer(2000)),
        ("synth.items", Value::Integer(50)),
        ("synth.min_len", Value::Integer(3)),
        ("synth.max_len", Value::Integer(7)),
        ("preprocess.input", s("")),
        ("preprocess.metadata", s("")),
        ("preprocess.mode", s("prefix")),
        ("preprocess.min_item_freq", Value::Integer(5)),
        ("preprocess.min_session_len", Value::Integer(1)),
        ("preprocess.gap_minutes", Value::Float(5.0)),
        ("preprocess.max_span_hours", Value::Float(24.0)),
        ("preprocess.test_fraction", Value::Float(0.1)),
        ("preprocess.augment", Value::Boolean(true)),
        ("model.d", Value::Integer(100)),
        ("model.steps", Value::Integer(1)),
        ("optim.batch_size", Value::Integer(100)),
        ("optim.learning_rate", Value::Float(1e-3)),
        ("optim.lr_decay", Value::Float(0.1)),
        ("optim.lr_decay_every", Value::Integer(3)),
        ("optim.weight_decay", Value::Float(1e-5)),
        ("optim.ce", s("binary")),
        ("pretrain.epochs", Value::Integer(5)),
        ("candidates.k", Value::Integer(50)),
        ("mine.client", s("http")),
        ("mine.url", s("http://127.0.0.1:8000/v1/chat/completions")),
        ("mine.model", s("Qwen2.5-7B-Instruct")),
        ("mine.api_key", s("")),
        ("mine.temperature", Value::Float(0.0)),
        ("mine.max_tokens", Value::Integer(512)),
        ("mine.retries", Value::Integer(3)),
        ("mine.backoff_ms", Value::Integer(500)),
        ("mine.timeout_secs", Value::Integer(120)),
        ("mine.workers", Value::Integer(4)),
        ("mine.max_intents", Value::Integer(10)),
        ("mine.strict", Value::Boolean(false)),
        ("mine.match_mode", s("exact")),
        ("encode.encoder", s("pretrained")),
        ("encode.dim", Value::Integer(768)),
        ("encode.buckets", Value::Integer(4096)),
        ("encode.url", s("http://127.0.0.1:8001/v1/embeddings")),
        ("encode.model", s("bert-base-uncased")),
        ("encode.api_key", s("")),
        ("train.epochs", Value::Integer(5)),
        ("train.sigma", Value::Float(0.2)),
        ("train.alpha", Value::Float(0.1)),
        ("train.beta", Value::Float(0.1)),
        ("train.strategy", s("kl")),
        ("train.temperature", Value::Float(0.2)),
        ("train.margin", Value::Float(0.5)),
        ("train.stop_grad_structural", Value::Boolean(false)),
        ("train.ablation", s("full")),
        ("train.warm_start", Value::Boolean(false)),
        ("sweep.param", s("sigma")),
        (
            "sweep.values",
            Value::Array((0..10).map(|i| Value::Float(i as f64 / 10.0)).collect()),
        ),
    ];
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn is_secret(key: &str) -> bool {
    key.ends_with("api_key")
}

/// Flattens a parsed file into `section.key` entries. Top-level scalars
/// land in `global`.
pub fn parse_file(text: &str) -> Result<Layer, CliError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(format!("config parse error: {e}")))?;
    let mut out = Layer::new();
    for (section, value) in table {
        match value {
            Value::Table(t) => {
                for (k, v) in t {
                    out.insert(format!("{section}.{k}"), v);
                }
            }
            other => {
                out.insert(format!("global.{section}"), other);
            }
        }
    }
    Ok(out)
}

/// Expands `${VAR}` in secret values from the environment.
pub fn interpolate(layer: &mut Layer, env: impl Fn(&str) -> Option<String>) -> Result<(), CliError> {
    for (key, value) in layer.iter_mut() {
        let Value::String(text) = value else { continue };
        let Some(name) = text.strip_prefix("${").and_then(|r| r.strip_suffix('}')) else {
            continue;
        };
        if !is_secret(key) {
            return Err(CliError::Config(format!(
                "{key}: environment interpolation is only allowed for api_key settings"
            )));
        }
        *text = env(name).ok_or_else(|| CliError::Config(format!("{key}: environment variable {name} is not set")))?;
    }
    Ok(())
}

/// Converts a flag's text to the type of the default it overrides.
fn coerce(key: &str, raw: &str, like: &Value) -> Result<Value, CliError> {
    let bad = || CliError::Config(format!("{key}: cannot parse {raw:?}"));
    Ok(match like {
        Value::String(_) => s(raw),
        Value::Integer(_) => Value::Integer(raw.parse().map_err(|_| bad())?),
        Value::Float(_) => Value::Float(raw.parse().map_err(|_| bad())?),
        Value::Boolean(_) => Value::Boolean(raw.parse().map_err(|_| bad())?),
        Value::Array(_) => Value::Array(
            raw.split(',')
                .map(|p| p.trim().parse::<f64>().map(Value::Float).map_err(|_| bad()))
                .collect::<Result<_, _>>()?,
        ),
        _ => return Err(bad()),
    })
}

fn same_kind(key: &str, v: Value, like: &Value) -> Result<Value, CliError> {
    match (&v, like) {
        (Value::Integer(i), Value::Float(_)) => Ok(Value::Float(*i as f64)),
        (Value::Array(items), Value::Array(_)) => Ok(Value::Array(
            items
                .iter()
                .map(|x| match x {
                    Value::Integer(i) => Ok(Value::Float(*i as f64)),
                    Value::Float(_) => Ok(x.clone()),
                    _ => Err(CliError::Config(format!("{key}: expected numbers"))),
                })
                .collect::<Result<_, _>>()?,
        )),
        _ if std::mem::discriminant(&v) == std::mem::discriminant(like) => Ok(v),
        _ => Err(CliError::Config(format!(
            "{key}: expected {}, found {}",
            like.type_str(),
            v.type_str()
        ))),
    }
}

#[derive(Debug, Clone)]
pub struct Settings {
    values: BTreeMap<String, (Value, Source)>,
}

impl Settings {
    /// Flags win over the file, the file over defaults. Unknown keys and
    /// type mismatches are configuration errors.
    pub fn resolve(file: Layer, flags: &[(String, String)]) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, (Value, Source)> =
            defaults().into_iter().map(|(k, v)| (k, (v, Source::Default))).collect();
        for (key, v) in file {
            let like = &values
                .get(&key)
                .ok_or_else(|| CliError::Config(format!("unknown config key {key}")))?
                .0;
            let v = same_kind(&key, v, like)?;
            values.insert(key, (v, Source::File));
        }
        for (key, raw) in flags {
            let like = &values
                .get(key)
                .ok_or_else(|| CliError::Config(format!("unknown config key {key}")))?
                .0;
            let v = coerce(key, raw, like)?;
            values.insert(key.clone(), (v, Source::Flag));
        }
        Ok(Self { values })
    }

    pub fn load(path: Option<&std::path::Path>, flags: &[(String, String)]) -> Result<Self, CliError> {
        let mut file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                parse_file(&text)?
            }
            None => Layer::new(),
        };
        interpolate(&mut file, |n| std::env::var(n).ok())?;
        Self::resolve(file, flags)
    }

    /// A copy with one more flag-level override.
    pub fn with(&self, key: &str, raw: &str) -> Result<Self, CliError> {
        let like = &self
            .values
            .get(key)
            .ok_or_else(|| CliError::Config(format!("unknown config key {key}")))?
            .0;
        let v = coerce(key, raw, like)?;
        let mut out = self.clone();
        out.values.insert(key.to_string(), (v, Source::Flag));
        Ok(out)
    }

    fn get(&self, key: &str) -> &Value {
        &self
            .values
            .get(key)
            .unwrap_or_else(|| panic!("setting {key} has no default"))
            .0
    }

    #[cfg(test)]
    pub fn source(&self, key: &str) -> Source {
        self.values[key].1
    }

    pub fn str(&self, key: &str) -> &str {
        self.get(key).as_str().expect("string setting")
    }

    pub fn opt_str(&self, key: &str) -> Option<&str> {
        Some(self.str(key)).filter(|v| !v.is_empty())
    }

    pub fn int(&self, key: &str) -> Result<u64, CliError> {
        let v = self.get(key).as_integer().expect("integer setting");
        u64::try_from(v).map_err(|_| CliError::Config(format!("{key} must be ≥ 0")))
    }

    pub fn usize(&self, key: &str) -> Result<usize, CliError> {
        Ok(self.int(key)? as usize)
    }

    pub fn float(&self, key: &str) -> f64 {
        self.get(key).as_float().expect("float setting")
    }

    pub fn bool(&self, key: &str) -> bool {
        self.get(key).as_bool().expect("bool setting")
    }

    pub fn floats(&self, key: &str) -> Vec<f64> {
        self.get(key)
            .as_array()
            .expect("array setting")
            .iter()
            .map(|v| v.as_float().expect("float entry"))
            .collect()
    }

    pub fn parse<T: std::str::FromStr<Err = dmsrec_core::Error>>(&self, key: &str) -> Result<T, CliError> {
        self.str(key).parse().map_err(|e: dmsrec_core::Error| CliError::Config(format!("{key}: {e}")))
    }

    /// JSON snapshot of the given sections with secrets redacted.
    pub fn snapshot(&self, sections: &[&str]) -> serde_json::Value {
        let mut out = serde_json::Map::new();
        for (key, (v, _)) in &self.values {
            let section = key.split('.').next().unwrap_or_default();
            if !sections.contains(&section) {
                continue;
            }
            let json = if is_secret(key) {
                serde_json::Value::String(if v.as_str().is_some_and(str::is_empty) { "" } else { "<redacted>" }.into())
            } else {
                serde_json::to_value(v).expect("toml value serializes")
            };
            out.insert(key.clone(), json);
        }
        serde_json::Value::Object(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn precedence_table() {
        // (file value, flag value, expected value, expected source)
        let cases: &[(Option<f64>, Option<&str>, f64, Source)] = &[
            (None, None, 0.2, Source::Default),
            (Some(0.5), None, 0.5, Source::File),
            (None, Some("0.7"), 0.7, Source::Flag),
            (Some(0.5), Some("0.7"), 0.7, Source::Flag),
        ];
        for &(file, flag, want, source) in cases {
            let mut layer = Layer::new();
            if let Some(f) = file {
                layer.insert("train.sigma".into(), Value::Float(f));
            }
            let fl = flag.map(|f| flags(&[("train.sigma", f)])).unwrap_or_default();
            let s = Settings::resolve(layer, &fl).unwrap();
            assert_eq!(s.float("train.sigma"), want, "{file:?} {flag:?}");
            assert_eq!(s.source("train.sigma"), source);
        }
    }

    #[test]
    fn file_sections_and_types() {
        let layer = parse_file("seed = 9\n[train]\nsigma = 1\nablation = \"no_kl\"\n[sweep]\nvalues = [0, 0.5]\n").unwrap();
        let s = Settings::resolve(layer, &[]).unwrap();
        assert_eq!(s.int("global.seed").unwrap(), 9);
        assert_eq!(s.float("train.sigma"), 1.0);
        assert_eq!(s.str("train.ablation"), "no_kl");
        assert_eq!(s.floats("sweep.values"), vec![0.0, 0.5]);
    }

    #[test]
    fn rejects_unknown_and_mistyped() {
        assert!(Settings::resolve(parse_file("[train]\nsgima = 1.0").unwrap(), &[]).is_err());
        assert!(Settings::resolve(parse_file("[train]\nsigma = \"high\"").unwrap(), &[]).is_err());
        assert!(Settings::resolve(Layer::new(), &flags(&[("train.epochs", "many")])).is_err());
        assert!(parse_file("[train\n").is_err());
    }

    #[test]
    fn secrets_from_environment_only() {
        let mut layer = parse_file("[mine]\napi_key = \"${LLM_KEY}\"").unwrap();
        interpolate(&mut layer, |n| (n == "LLM_KEY").then(|| "sk-1".to_string())).unwrap();
        let s = Settings::resolve(layer, &[]).unwrap();
        assert_eq!(s.str("mine.api_key"), "sk-1");
        assert_eq!(s.snapshot(&["mine"])["mine.api_key"], "<redacted>");

        let mut missing = parse_file("[mine]\napi_key = \"${NOPE}\"").unwrap();
        assert!(interpolate(&mut missing, |_| None).is_err());
        let mut not_secret = parse_file("[mine]\nurl = \"${HOST}\"").unwrap();
        assert!(interpolate(&mut not_secret, |_| Some("x".into())).is_err());
    }

    #[test]
    fn flag_lists() {
        let s = Settings::resolve(Layer::new(), &flags(&[("sweep.values", "0,0.25, 1")])).unwrap();
        assert_eq!(s.floats("sweep.values"), vec![0.0, 0.25, 1.0]);
    }
}
