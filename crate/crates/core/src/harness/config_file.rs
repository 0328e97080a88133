//! Flat `key = value` configuration.
//!
//! One setting per line; blank lines and lines starting with `#` are
//! ignored. Keys use the command-line flag names with `-` or `_`:
//! `n`, `t`, `l`, `d_bits`, `k`, `beta`, `c`, `adversary`, `controlled`,
//! `trials`, `seed`, `sweep`, `output`, `format`, `trace`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{parse_cost, ExperimentSpec, HarnessError, Sweep, SweepParameter};
use crate::config::ProtocolConfig;
use crate::node::NodeId;

const KEYS: [&str; 15] = [
    "n", "t", "l", "d_bits", "k", "beta", "c", "adversary", "controlled", "trials", "seed", "sweep", "output",
    "format", "trace",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

impl FromStr for OutputFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(HarnessError::Parse {
                key: "format".into(),
                reason: format!("unknown format {other:?}"),
            }),
        }
    }
}

/// A fully resolved run: the experiment plus where its outputs go.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub spec: ExperimentSpec,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
    pub trace: Option<PathBuf>,
}

fn normalize(key: &str) -> String {
    key.trim().trim_start_matches("--").replace('-', "_")
}

pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, HarnessError> {
    let mut out = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(HarnessError::Parse {
                key: format!("line {}", no + 1),
                reason: format!("expected key = value, got {line:?}"),
            });
        };
        let key = normalize(key);
        if !KEYS.contains(&key.as_str()) {
            return Err(HarnessError::Parse {
                key,
                reason: "unknown setting".into(),
            });
        }
        let value = value.trim().trim_matches('"').to_string();
        out.insert(key, value);
    }
    Ok(out)
}

/// Parses an integer, accepting `2^18` as a power.
fn parse_int(key: &str, text: &str) -> Result<u64, HarnessError> {
    let bad = || HarnessError::Parse {
        key: key.to_string(),
        reason: format!("{text:?} is not a non-negative integer"),
    };
    let text = text.trim();
    if let Some((base, exp)) = text.split_once('^') {
        let base: u64 = base.trim().parse().map_err(|_| bad())?;
        let exp: u32 = exp.trim().parse().map_err(|_| bad())?;
        return base.checked_pow(exp).ok_or_else(bad);
    }
    text.parse().map_err(|_| bad())
}

fn parse_float(key: &str, text: &str) -> Result<f64, HarnessError> {
    let text = text.trim();
    if let Some((num, den)) = text.split_once('/') {
        let n = parse_float(key, num)?;
        let d = parse_float(key, den)?;
        return Ok(n / d);
    }
    if text.contains('^') {
        return parse_int(key, text).map(|v| v as f64);
    }
    text.parse().map_err(|_| HarnessError::Parse {
        key: key.to_string(),
        reason: format!("{text:?} is not a number"),
    })
}

fn parse_nodes(text: &str) -> Result<Vec<NodeId>, HarnessError> {
    text.trim_matches(|c| c == '[' || c == ']')
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_int("controlled", s).map(|v| NodeId(v as u32)))
        .collect()
}

/// `parameter=v1,v2,...`, for example `l=2^10,2^12,2^14`.
fn parse_sweep(text: &str) -> Result<Sweep, HarnessError> {
    let bad = |reason: &str| HarnessError::Parse {
        key: "sweep".into(),
        reason: reason.to_string(),
    };
    let (name, values) = text
        .split_once(|c| c == '=' || c == ':')
        .ok_or_else(|| bad("expected parameter=v1,v2,..."))?;
    let parameter = SweepParameter::parse(name.trim()).ok_or_else(|| bad("unknown sweep parameter"))?;
    let values = values
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|v| parse_float("sweep", v))
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(bad("no sweep values"));
    }
    Ok(Sweep { parameter, values })
}

/// Builds run options from settings; absent keys take defaults
/// (`n=4, t=1, l=1024, D=64, k=8, c=1, trials=1, seed=0`, honest).
pub fn spec_from_pairs(pairs: &BTreeMap<String, String>) -> Result<RunOptions, HarnessError> {
    let get = |k: &str| pairs.get(k).map(String::as_str);
    let int = |k: &str, default: u64| get(k).map_or(Ok(default), |v| parse_int(k, v));

    let n = int("n", 4)? as usize;
    let t = int("t", 1)? as usize;
    let l = int("l", 1024)?;
    let beta = get("beta").map(|v| parse_float("beta", v)).transpose()?;
    if beta.is_some() && (pairs.contains_key("k") || pairs.contains_key("d_bits")) {
        return Err(HarnessError::Parse {
            key: "beta".into(),
            reason: "give either beta or explicit k and d_bits, not both".into(),
        });
    }
    let k = int("k", 8)? as u32;
    let d_bits = int("d_bits", 64)?;
    let mut base = ProtocolConfig::new(n, t, l, d_bits, k);
    base.seed = int("seed", 0)?;
    if let Some(c) = get("c") {
        base.c = parse_cost(c)?;
    }

    let spec = ExperimentSpec {
        base,
        adversary: get("adversary").unwrap_or("honest").to_string(),
        controlled: get("controlled").map(parse_nodes).transpose()?,
        trials: int("trials", 1)?,
        sweep: get("sweep").map(parse_sweep).transpose()?,
        beta,
    };
    Ok(RunOptions {
        spec,
        output: get("output").map(PathBuf::from),
        format: get("format").map_or(Ok(OutputFormat::Json), str::parse)?,
        trace: get("trace").map(PathBuf::from),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file() {
        let text = "# experiment\nn = 7\nt=2\nl = 2^12\nadversary = colluders\ncontrolled = [1, 2]\nd-bits = 64\nk = 8\n\nc = 1/2\nsweep = l=2^10,2^12\n";
        let pairs = parse_key_values(text).unwrap();
        let opts = spec_from_pairs(&pairs).unwrap();
        assert_eq!(opts.spec.base.n, 7);
        assert_eq!(opts.spec.base.l, 4096);
        assert_eq!(opts.spec.controlled, Some(vec![NodeId(1), NodeId(2)]));
        assert_eq!(opts.spec.base.c, num_rational::Ratio::new(1, 2));
        assert_eq!(opts.spec.sweep.unwrap().values, vec![1024.0, 4096.0]);
        assert_eq!(opts.format, OutputFormat::Json);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_key_values("nonsense").is_err());
        assert!(parse_key_values("colour = blue").is_err());
        let pairs = parse_key_values("beta = 0.5\nk = 8").unwrap();
        assert!(spec_from_pairs(&pairs).is_err());
        let pairs = parse_key_values("format = xml").unwrap();
        assert!(spec_from_pairs(&pairs).is_err());
        let pairs = parse_key_values("n = four").unwrap();
        assert!(spec_from_pairs(&pairs).is_err());
    }

    #[test]
    fn empty_controlled_list() {
        let pairs = parse_key_values("controlled = ").unwrap();
        assert_eq!(spec_from_pairs(&pairs).unwrap().spec.controlled, Some(vec![]));
    }
}
