//! Flat `key = value` experiment files with optional `[section]` headers
//! that prefix the keys below them (`[map]` then `eps = 0.02` is `map.eps`).

use std::collections::BTreeMap;

use nalgebra::DVector;
use thiserror::Error;

use crate::dynamics::ZooParams;
use crate::manifold::TorusPoint;
use crate::splitting::Dims;

#[derive(Debug, Clone, Error, PartialEq)]
#[error("config line {line}, key '{key}': {msg}")]
pub struct ConfigError {
    /// 1-based line, 0 when the key came from the command line or a default.
    pub line: usize,
    pub key: String,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, Entry>,
}

fn valid_key(k: &str) -> bool {
    !k.is_empty()
        && !k.starts_with('.')
        && !k.ends_with('.')
        && !k.contains("..")
        && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(rest) = body.strip_prefix('[') {
                let name = rest.strip_suffix(']').map(str::trim).ok_or_else(|| ConfigError {
                    line,
                    key: body.to_string(),
                    msg: "unterminated section header".into(),
                })?;
                if !name.is_empty() && !valid_key(name) {
                    return Err(ConfigError {
                        line,
                        key: name.to_string(),
                        msg: "invalid section name".into(),
                    });
                }
                section = name.to_string();
                continue;
            }
            let (k, v) = body.split_once('=').ok_or_else(|| ConfigError {
                line,
                key: body.to_string(),
                msg: "expected 'key = value'".into(),
            })?;
            let k = k.trim();
            let key = if section.is_empty() {
                k.to_string()
            } else {
                format!("{section}.{k}")
            };
            if !valid_key(k) {
                return Err(ConfigError {
                    line,
                    key,
                    msg: "keys use letters, digits, '_' and '.'".into(),
                });
            }
            let value = v.trim();
            if value.is_empty() {
                return Err(ConfigError {
                    line,
                    key,
                    msg: "empty value".into(),
                });
            }
            if let Some(prev) = entries.get(&key) {
                return Err(ConfigError {
                    line,
                    key,
                    msg: format!("duplicate key (first set on line {})", prev.line),
                });
            }
            entries.insert(
                key,
                Entry {
                    value: value.to_string(),
                    line,
                },
            );
        }
        Ok(Self { entries })
    }

    /// Sets a key programmatically (line 0).
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line: 0,
            },
        );
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.set(key, value);
        self
    }

    pub fn echo(&self) -> BTreeMap<String, String> {
        self.entries.iter().map(|(k, e)| (k.clone(), e.value.clone())).collect()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }

    pub fn error(&self, key: &str, msg: impl Into<String>) -> ConfigError {
        ConfigError {
            line: self.line_of(key),
            key: key.to_string(),
            msg: msg.into(),
        }
    }

    /// Rejects every key that is neither listed nor under one of `prefixes`.
    pub fn restrict(&self, allowed: &[&str], prefixes: &[&str]) -> Result<(), ConfigError> {
        for key in self.entries.keys() {
            let ok = allowed.contains(&key.as_str())
                || prefixes
                    .iter()
                    .any(|p| key.strip_prefix(p).is_some_and(|rest| rest.starts_with('.')));
            if !ok {
                let mut known: Vec<String> = allowed.iter().map(|s| s.to_string()).collect();
                known.extend(prefixes.iter().map(|p| format!("{p}.*")));
                return Err(self.error(key, format!("unknown key (accepted: {})", known.join(", "))));
            }
        }
        Ok(())
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    pub fn required_str(&self, key: &str) -> Result<&str, ConfigError> {
        self.str(key).ok_or_else(|| self.error(key, "required key missing"))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.str(key) {
            None => Ok(default),
            Some(s) => {
                let x: f64 = s.parse().map_err(|_| self.error(key, format!("'{s}' is not a number")))?;
                if !x.is_finite() {
                    return Err(self.error(key, "must be finite"));
                }
                Ok(x)
            }
        }
    }

    pub fn positive_f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let x = self.f64_or(key, default)?;
        if x <= 0.0 {
            return Err(self.error(key, "must be positive"));
        }
        Ok(x)
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.str(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| self.error(key, format!("'{s}' is not a non-negative integer"))),
        }
    }

    pub fn positive_usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        let n = self.usize_or(key, default)?;
        if n == 0 {
            return Err(self.error(key, "must be positive"));
        }
        Ok(n)
    }

    pub fn u64_opt(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.str(key)
            .map(|s| s.parse().map_err(|_| self.error(key, format!("'{s}' is not an unsigned integer"))))
            .transpose()
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.str(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(s) => Err(self.error(key, format!("'{s}' is not true or false"))),
        }
    }

    /// Comma-separated numbers.
    pub fn list_f64(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        let Some(s) = self.str(key) else {
            return Ok(None);
        };
        parse_list(s).map(Some).map_err(|m| self.error(key, m))
    }

    pub fn vector_or(&self, key: &str, dim: usize, default: DVector<f64>) -> Result<DVector<f64>, ConfigError> {
        match self.list_f64(key)? {
            None => Ok(default),
            Some(v) if v.len() == dim => Ok(DVector::from_vec(v)),
            Some(v) => Err(self.error(key, format!("expected {dim} components, got {}", v.len()))),
        }
    }

    /// `u,c,s` with `u + c + s = dim`.
    pub fn dims_or(&self, key: &str, dim: usize) -> Result<Dims, ConfigError> {
        let Some(v) = self.list_f64(key)? else {
            return Ok(Dims::default_for(dim));
        };
        if v.len() != 3 || v.iter().any(|x| *x < 0.0 || x.fract() != 0.0) {
            return Err(self.error(key, "expected three non-negative integers 'u,c,s'"));
        }
        let dims = Dims::new(v[0] as usize, v[1] as usize, v[2] as usize);
        if dims.total() != dim || dims.u == 0 || dims.s == 0 {
            return Err(self.error(key, format!("need u, s >= 1 and u + c + s = {dim}")));
        }
        Ok(dims)
    }

    /// Points written as `x0,x1,...; y0,y1,...`.
    pub fn points(&self, key: &str, dim: usize) -> Result<Option<Vec<TorusPoint>>, ConfigError> {
        let Some(s) = self.str(key) else {
            return Ok(None);
        };
        s.split(';')
            .map(|chunk| {
                let c = parse_list(chunk).map_err(|m| self.error(key, m))?;
                if c.len() != dim {
                    return Err(self.error(key, format!("point '{}' needs {dim} coordinates", chunk.trim())));
                }
                TorusPoint::wrap(&c).map_err(|e| self.error(key, e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    /// Keys below `prefix.`, with the prefix removed.
    pub fn params(&self, prefix: &str) -> ZooParams {
        let mut out = ZooParams::new();
        for (k, e) in &self.entries {
            if let Some(rest) = k.strip_prefix(prefix).and_then(|r| r.strip_prefix('.')) {
                out = out.with(rest, &e.value);
            }
        }
        out
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|x| {
            let x = x.trim();
            match x.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(format!("'{x}' is not a finite number")),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_prefix_keys() {
        let c = Config::parse("map = perturbed_skew\n[map]\neps = 0.02 # comment\n\n[orbit]\nn=40\n").unwrap();
        assert_eq!(c.str("map"), Some("perturbed_skew"));
        assert_eq!(c.str("map.eps"), Some("0.02"));
        assert_eq!(c.usize_or("orbit.n", 60).unwrap(), 40);
        assert_eq!(c.line_of("orbit.n"), 6);
        assert_eq!(c.params("map").0.get("eps").map(String::as_str), Some("0.02"));
    }

    #[test]
    fn diagnostics_name_line_and_key() {
        let e = Config::parse("a = 1\nb 2\n").unwrap_err();
        assert_eq!(e.line, 2);
        let e = Config::parse("a = 1\na = 2\n").unwrap_err();
        assert_eq!((e.line, e.key.as_str()), (2, "a"));
        let e = Config::parse("a =\n").unwrap_err();
        assert_eq!(e.msg, "empty value");
        let c = Config::parse("map = x\ngrid.resolutoin = 8\n").unwrap();
        let e = c.restrict(&["map", "grid.resolution"], &[]).unwrap_err();
        assert_eq!((e.line, e.key.as_str()), (2, "grid.resolutoin"));
        let c = Config::parse("n = abc\n").unwrap();
        assert_eq!(c.usize_or("n", 1).unwrap_err().line, 1);
    }

    #[test]
    fn prefixes_need_a_dot() {
        let c = Config::parse("mapx = 1\n").unwrap();
        assert!(c.restrict(&[], &["map"]).is_err());
        let c = Config::parse("map.eps = 1\n").unwrap();
        assert!(c.restrict(&[], &["map"]).is_ok());
    }

    #[test]
    fn points_and_dims() {
        let c = Config::parse("points = 0.1,0.2,0.3; 1.5,0,0\ndims = 1,1,1\nbad = 1,1\n").unwrap();
        let p = c.points("points", 3).unwrap().unwrap();
        assert_eq!(p[1].coords(), &[0.5, 0.0, 0.0]);
        assert_eq!(c.dims_or("dims", 3).unwrap(), Dims::new(1, 1, 1));
        assert!(c.dims_or("bad", 3).is_err());
        assert!(c.points("points", 2).is_err());
    }
}
