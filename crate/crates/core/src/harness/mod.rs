//! Experiment runner: builds configurations from a spec, fans trials out
//! over a thread pool and reduces them into an [`AggregateReport`].

mod config_file;
mod report;

use std::collections::BTreeMap;

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{AdversaryError, AdversaryStrategy};
use crate::config::{ConfigError, ProtocolConfig};
use crate::node::NodeId;
use crate::protocol::{parameter_schedule, run_session, run_session_traced, ProtocolError, SessionResult};
use crate::rng::trial_seed;
use crate::simnet::{security_bound_f64, RoundTrace};

pub use config_file::{parse_key_values, spec_from_pairs, OutputFormat, RunOptions};
pub use report::{emit_report, wilson_interval, AggregateReport, ReportRow, CSV_COLUMNS, SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("invalid adversary: {0}")]
    Adversary(#[from] AdversaryError),
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("cannot sweep {parameter} over {value}: {reason}")]
    Sweep {
        parameter: String,
        value: f64,
        reason: String,
    },
    #[error("{key}: {reason}")]
    Parse { key: String, reason: String },
    #[error("trial with seed {seed} failed: {source}")]
    Trial {
        seed: u64,
        #[source]
        source: ProtocolError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    L,
    N,
    T,
    DBits,
    K,
    Beta,
}

impl SweepParameter {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "l" => SweepParameter::L,
            "n" => SweepParameter::N,
            "t" => SweepParameter::T,
            "d_bits" | "d-bits" | "D" => SweepParameter::DBits,
            "k" => SweepParameter::K,
            "beta" => SweepParameter::Beta,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::L => "l",
            SweepParameter::N => "n",
            SweepParameter::T => "t",
            SweepParameter::DBits => "d_bits",
            SweepParameter::K => "k",
            SweepParameter::Beta => "beta",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub base: ProtocolConfig,
    pub adversary: String,
    /// `None` picks the strategy's default controlled set.
    pub controlled: Option<Vec<NodeId>>,
    pub trials: u64,
    pub sweep: Option<Sweep>,
    /// When set, `k` and `D` of every point come from the parameter schedule.
    pub beta: Option<f64>,
}

impl ExperimentSpec {
    pub fn new(base: ProtocolConfig, adversary: &str, trials: u64) -> Self {
        ExperimentSpec {
            base,
            adversary: adversary.to_string(),
            controlled: None,
            trials,
            sweep: None,
            beta: None,
        }
    }

    pub fn controlled_nodes(&self, t: usize) -> Vec<NodeId> {
        self.controlled
            .clone()
            .unwrap_or_else(|| AdversaryStrategy::default_controlled(&self.adversary, t))
    }

    /// One validated configuration per sweep point, with its `beta`.
    pub fn points(&self) -> Result<Vec<(ProtocolConfig, Option<f64>)>, HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::NoTrials);
        }
        let values: Vec<Option<f64>> = match &self.sweep {
            Some(s) => s.values.iter().map(|&v| Some(v)).collect(),
            None => vec![None],
        };
        let mut points = Vec::with_capacity(values.len());
        for value in values {
            let mut config = self.base.clone();
            let mut beta = self.beta;
            if let (Some(sweep), Some(v)) = (&self.sweep, value) {
                let bad = |reason: &str| HarnessError::Sweep {
                    parameter: sweep.parameter.name().to_string(),
                    value: v,
                    reason: reason.to_string(),
                };
                if sweep.parameter != SweepParameter::Beta && (v.fract() != 0.0 || v < 0.0) {
                    return Err(bad("not a non-negative integer"));
                }
                match sweep.parameter {
                    SweepParameter::L => config.l = v as u64,
                    SweepParameter::N => config.n = v as usize,
                    SweepParameter::T => config.t = v as usize,
                    SweepParameter::DBits => config.d_bits = v as u64,
                    SweepParameter::K => config.k = v as u32,
                    SweepParameter::Beta => beta = Some(v),
                }
            }
            if let Some(b) = beta {
                let (k, d) = parameter_schedule(config.l, b)?;
                config.k = k;
                config.d_bits = d;
                config.pad_final_generation = true;
            }
            config.validate()?;
            AdversaryStrategy::from_name(&self.adversary, &self.controlled_nodes(config.t), config.n, config.t)?;
            points.push((config, beta));
        }
        Ok(points)
    }
}

/// What the harness keeps from one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialSummary {
    pub seed: u64,
    pub correct: bool,
    pub diagnosis_sound: bool,
    pub alpha_measured: f64,
    pub alpha_model: f64,
    pub within_bound: bool,
    pub result: SessionResult,
}

pub fn run_trial(
    config: &ProtocolConfig,
    adversary: &AdversaryStrategy,
    base_seed: u64,
    index: u64,
) -> Result<TrialSummary, HarnessError> {
    let seed = trial_seed(base_seed, index);
    let config = config.clone().with_seed(seed);
    let mut adv = adversary.clone();
    let result = run_session(&config, &mut adv).map_err(|source| HarnessError::Trial { seed, source })?;
    let complexity = result.complexity(&config)?;
    Ok(TrialSummary {
        seed,
        correct: result.correct(),
        diagnosis_sound: result.diagnosis_sound(),
        alpha_measured: complexity.alpha_measured,
        alpha_model: complexity.alpha_model,
        within_bound: complexity.within_bound(),
        result,
    })
}

/// Runs every trial of one point in parallel, in trial order.
pub fn run_point(
    config: &ProtocolConfig,
    adversary: &AdversaryStrategy,
    trials: u64,
) -> Result<Vec<TrialSummary>, HarnessError> {
    (0..trials)
        .into_par_iter()
        .map(|i| run_trial(config, adversary, config.seed, i))
        .collect()
}

pub fn aggregate(
    config: &ProtocolConfig,
    beta: Option<f64>,
    adversary: &AdversaryStrategy,
    trials: &[TrialSummary],
) -> ReportRow {
    let count = trials.len() as u64;
    let successes = trials.iter().filter(|s| s.correct).count() as u64;
    let (ci_low, ci_high) = wilson_interval(successes, count);
    let mean = |f: &dyn Fn(&TrialSummary) -> f64| trials.iter().map(f).sum::<f64>() / count.max(1) as f64;
    let total = |f: &dyn Fn(&TrialSummary) -> u64| trials.iter().map(f).sum::<u64>();
    let mut histogram: BTreeMap<u64, u64> = BTreeMap::new();
    for s in trials {
        *histogram.entry(s.result.metrics.extended_steps).or_default() += 1;
    }
    ReportRow {
        l: config.l,
        d_bits: config.d_bits,
        k: config.k,
        n: config.n,
        t: config.t,
        beta,
        c: config.c,
        adversary: adversary.name().to_string(),
        controlled: adversary.controlled().into_iter().collect(),
        trials: count,
        base_seed: config.seed,
        successes,
        p_correct: if count == 0 { 0.0 } else { successes as f64 / count as f64 },
        ci_low,
        ci_high,
        bound: security_bound_f64(config).ok(),
        alpha_measured: mean(&|s| s.alpha_measured),
        alpha_model: mean(&|s| s.alpha_model),
        bits_data: total(&|s| s.result.metrics.bits_data),
        bits_hash: total(&|s| s.result.metrics.bits_hash),
        bits_hash_model: total(&|s| s.result.metrics.bits_hash_model),
        bits_notif_measured: total(&|s| s.result.metrics.bits_notification_measured),
        bits_notif_model: total(&|s| s.result.metrics.bits_notification_model),
        bits_ext_measured: total(&|s| s.result.metrics.bits_extended_measured),
        bits_ext_model: total(&|s| s.result.metrics.bits_extended_model),
        ext_steps_max: histogram.keys().next_back().copied().unwrap_or(0),
        ext_steps_histogram: histogram,
        misbehaving_generations: total(&|s| s.result.metrics.misbehaving_generations),
        deception_events: total(&|s| s.result.metrics.deception_events),
        disagreement_events: total(&|s| s.result.metrics.disagreement_events),
        soundness_violations: trials.iter().filter(|s| !s.diagnosis_sound).count() as u64,
        bound_violations: trials.iter().filter(|s| !s.within_bound).count() as u64,
    }
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<AggregateReport, HarnessError> {
    let mut rows = Vec::new();
    for (config, beta) in spec.points()? {
        let adversary =
            AdversaryStrategy::from_name(&spec.adversary, &spec.controlled_nodes(config.t), config.n, config.t)?;
        let trials = run_point(&config, &adversary, spec.trials)?;
        rows.push(aggregate(&config, beta, &adversary, &trials));
    }
    Ok(AggregateReport {
        schema_version: SCHEMA_VERSION,
        rows,
    })
}

/// Round trace of trial 0 at the first sweep point.
pub fn trace_first_trial(spec: &ExperimentSpec) -> Result<Vec<RoundTrace>, HarnessError> {
    let (config, _) = spec.points()?.into_iter().next().expect("at least one point");
    let mut adversary =
        AdversaryStrategy::from_name(&spec.adversary, &spec.controlled_nodes(config.t), config.n, config.t)?;
    let seed = trial_seed(config.seed, 0);
    let config = config.with_seed(seed);
    let result = run_session_traced(&config, &mut adversary).map_err(|source| HarnessError::Trial { seed, source })?;
    Ok(result.trace.unwrap_or_default())
}

/// Parses a broadcast cost constant such as `1`, `3/2` or `0.5`.
pub fn parse_cost(text: &str) -> Result<Ratio<u64>, HarnessError> {
    let bad = |reason: &str| HarnessError::Parse {
        key: "c".into(),
        reason: format!("{text:?}: {reason}"),
    };
    let text = text.trim();
    if let Some((whole, frac)) = text.split_once('.') {
        let digits = frac.len() as u32;
        let denom = 10u64.checked_pow(digits).ok_or_else(|| bad("too many decimals"))?;
        let w: u64 = if whole.is_empty() { 0 } else { whole.parse().map_err(|_| bad("not a number"))? };
        let f: u64 = frac.parse().map_err(|_| bad("not a number"))?;
        return Ok(Ratio::new(w * denom + f, denom));
    }
    text.parse::<Ratio<u64>>().map_err(|_| bad("not a rational"))
}
