//! Flat `key = value` configuration files for [`SimConfig`].

use crate::server::{Mutation, ReadRule};
use crate::sim::{Delay, SimConfig};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {msg}")]
pub struct ConfigError {
    pub line: usize,
    pub msg: String,
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
}

impl SimConfig {
    /// Set one field by name, using the textual forms accepted in config files.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let v = v.trim();
        match key {
            "clients" => self.clients = num(key, v)?,
            "partitions" => self.partitions = num(key, v)?,
            "keys" => self.keys = num(key, v)?,
            "theta" => self.theta = num(key, v)?,
            "read_proportion" => self.read_proportion = num(key, v)?,
            "read_keys" => self.read_keys = num(key, v)?,
            "write_keys" => self.write_keys = num(key, v)?,
            "txns_per_client" => self.txns_per_client = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "scan_cost" => self.scan_cost = num(key, v)?,
            "deep_checks" => self.deep_checks = num(key, v)?,
            "delay" => self.delay = Delay::parse(v).ok_or_else(|| format!("delay: cannot parse {v:?}"))?,
            "variant" => self.variant = ReadRule::parse(v).ok_or_else(|| format!("unknown variant {v:?}"))?,
            "mutation" => {
                self.mutation = match v {
                    "" | "none" => None,
                    _ => Some(Mutation::parse(v).ok_or_else(|| format!("unknown mutation {v:?}"))?),
                }
            }
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }
}

/// `(key, value)` pairs of a config file. Blank lines and lines starting
/// with `#` are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError {
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            });
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Apply a config file on top of `base`.
pub fn parse_config(text: &str, base: SimConfig) -> Result<SimConfig, ConfigError> {
    let mut cfg = base;
    let lines: Vec<usize> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim().starts_with('#'))
        .map(|(i, _)| i + 1)
        .collect();
    for ((k, v), line) in parse_pairs(text)?.into_iter().zip(lines) {
        cfg.set(&k, &v).map_err(|msg| ConfigError { line, msg })?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_field() {
        let text = "\
# desk run
clients = 2
partitions=3
keys = 40
theta = 0.99
read_proportion = 0.5
read_keys = 3
write_keys = 1
txns_per_client = 7
seed = 11
scan_cost = 0
deep_checks = true
delay = uniform:1-4

variant = eiger-port
mutation = gst-max
";
        let c = parse_config(text, SimConfig::default()).unwrap();
        assert_eq!((c.clients, c.partitions, c.keys), (2, 3, 40));
        assert_eq!((c.theta, c.read_proportion), (0.99, 0.5));
        assert_eq!((c.read_keys, c.write_keys, c.txns_per_client), (3, 1, 7));
        assert_eq!((c.seed, c.scan_cost, c.deep_checks), (11, 0, true));
        assert_eq!(c.delay, Delay::Uniform { lo: 1, hi: 4 });
        assert_eq!(c.variant, ReadRule::EigerPort);
        assert_eq!(c.mutation, Some(Mutation::GstMax));
    }

    #[test]
    fn reports_line_numbers() {
        let e = parse_config("clients = 2\n\nbogus = 1\n", SimConfig::default()).unwrap_err();
        assert_eq!(e.line, 3);
        let e = parse_config("# c\nkeys 4\n", SimConfig::default()).unwrap_err();
        assert_eq!(e.line, 2);
        let e = parse_config("keys = many\n", SimConfig::default()).unwrap_err();
        assert_eq!(e.line, 1);
        assert!(parse_config("mutation = none", SimConfig::default()).unwrap().mutation.is_none());
    }
}
