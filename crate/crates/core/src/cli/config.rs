//! `section.key = value` experiment configuration.

use std::collections::BTreeMap;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

const KEYS: &[(&str, &[&str])] = &[
    ("experiment", &["kind", "name"]),
    (
        "germ",
        &[
            "kind",
            "distribution",
            "amplitude",
            "frequency",
            "at",
            "function",
            "order",
            "beta",
            "a",
            "truncation",
            "phase",
        ],
    ),
    ("domain", &["kind", "lo", "hi"]),
    (
        "atlas",
        &[
            "kind",
            "compare",
            "chart",
            "pou_seed",
            "pou_seed_b",
            "per_overlap",
            "tolerance",
            "perturbation",
            "ensemble",
        ],
    ),
    (
        "scan",
        &[
            "k_lo", "k_hi", "m_min", "m_max", "n_pairs", "seed", "ensemble", "order", "test",
            "points",
        ],
    ),
    ("mollifier", &["order", "n_min", "n_max", "tol"]),
    ("quadrature", &["panels", "nodes", "tolerance"]),
    ("output", &["dir"]),
];

/// What `run` computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Coherence,
    Homogeneity,
    Enhanced,
    Reconstruct,
    Residual,
    Glue,
    AtlasCompare,
    Nonuniqueness,
    Demo,
}

impl FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Kind> {
        Ok(match s {
            "coherence" => Kind::Coherence,
            "homogeneity" => Kind::Homogeneity,
            "enhanced" => Kind::Enhanced,
            "reconstruct" => Kind::Reconstruct,
            "residual" => Kind::Residual,
            "glue" => Kind::Glue,
            "atlas-compare" => Kind::AtlasCompare,
            "nonuniqueness" => Kind::Nonuniqueness,
            "demo" => Kind::Demo,
            other => return Err(Error::Config(format!("unknown experiment.kind `{other}`"))),
        })
    }
}

/// Parsed configuration: raw text (for the header hash) and the key map.
#[derive(Clone, Debug)]
pub struct Config {
    pub text: String,
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| Error::Config(format!("line {}: {msg}", lineno + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `section.key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let (section, name) = key
                .split_once('.')
                .ok_or_else(|| at(format!("key `{key}` has no section")))?;
            let allowed = KEYS
                .iter()
                .find(|(s, _)| *s == section)
                .ok_or_else(|| at(format!("unknown section `{section}`")))?
                .1;
            if !allowed.contains(&name) {
                return Err(at(format!("unknown key `{key}`")));
            }
            if value.is_empty() {
                return Err(at(format!("`{key}` has an empty value")));
            }
            if values.insert(key.to_string(), value.to_string()).is_some() {
                return Err(at(format!("`{key}` given twice")));
            }
        }
        Ok(Config {
            text: text.to_string(),
            values,
        })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse `{key} = {v}`"))),
        }
    }

    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("cannot parse `{key} = {v}`")))
            })
            .transpose()
    }

    /// experiment.kind as a comma-separated list; defaults to coherence.
    pub fn kinds(&self) -> Result<Vec<Kind>> {
        let raw = self.get("experiment.kind").unwrap_or("coherence");
        raw.split(',').map(|k| k.trim().parse()).collect()
    }

    /// scan.seed exactly as written (0 when absent).
    pub fn seed_text(&self) -> &str {
        self.get("scan.seed").unwrap_or("0")
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse_or("scan.seed", 0)
    }

    /// First 16 hex digits of the SHA-256 of the config text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let c = Config::parse("# header\ngerm.kind = taylor  # trailing\n\nscan.seed = 0042\n")
            .unwrap();
        assert_eq!(c.get("germ.kind"), Some("taylor"));
        assert_eq!(c.seed_text(), "0042");
        assert_eq!(c.seed().unwrap(), 42);
        assert_eq!(c.kinds().unwrap(), vec![Kind::Coherence]);
    }

    #[test]
    fn rejects_malformed_lines() {
        for bad in [
            "germ.kind",
            "kind = x",
            "nosuch.key = 1",
            "germ.colour = red",
            "germ.kind =",
            "germ.kind = a\ngerm.kind = b",
        ] {
            assert!(matches!(Config::parse(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn kind_lists() {
        let c = Config::parse("experiment.kind = coherence, residual").unwrap();
        assert_eq!(c.kinds().unwrap(), vec![Kind::Coherence, Kind::Residual]);
        let c = Config::parse("experiment.kind = plots").unwrap();
        assert!(c.kinds().is_err());
    }

    #[test]
    fn hash_tracks_text() {
        let a = Config::parse("germ.kind = constant").unwrap();
        let b = Config::parse("germ.kind = constant ").unwrap();
        assert_eq!(a.hash().len(), 16);
        assert_ne!(a.hash(), b.hash());
    }
}
