use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use serde::{Deserialize, Serialize};

use super::StepTag;
use crate::broadcast::ideal_broadcast_cost;
use crate::config::{ConfigError, ProtocolConfig};
use crate::field;

/// Per-category bit counters and event counts for one session.
///
/// `*_measured` and `bits_data`/`bits_hash` count bits actually delivered by
/// the round engine. `*_model` counters follow the closed-form accounting
/// with a `(k + D/k)`-bit keyed digest and `B = c·n²` bits per broadcast bit.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub bits_data: u64,
    pub bits_hash: u64,
    pub bits_notification_measured: u64,
    pub bits_extended_measured: u64,
    pub bits_hash_model: u64,
    pub bits_notification_model: u64,
    pub bits_extended_model: u64,
    pub bits_total: u64,
    pub messages_delivered: u64,
    pub digest_messages: u64,
    pub generations_run: u64,
    pub extended_steps: u64,
    /// Generations in which fault-free nodes ended dissemination holding different payloads.
    pub misbehaving_generations: u64,
    /// Generations decided while fault-free nodes held different payloads.
    pub deception_events: u64,
    /// Generations in which fault-free peers decided different payloads.
    pub disagreement_events: u64,
    pub padded_bits: u64,
}

impl RunMetrics {
    pub(crate) fn charge(&mut self, tag: StepTag, bits: u64) {
        match tag {
            StepTag::Data => self.bits_data += bits,
            StepTag::HashExchange => self.bits_hash += bits,
            StepTag::NotificationBA => self.bits_notification_measured += bits,
            StepTag::ExtendedBA => self.bits_extended_measured += bits,
        }
        self.bits_total += bits;
        self.messages_delivered += 1;
    }

    pub fn measured_sum(&self) -> u64 {
        self.bits_data + self.bits_hash + self.bits_notification_measured + self.bits_extended_measured
    }

    pub fn c_measured(&self) -> u64 {
        self.measured_sum()
    }

    pub fn c_model(&self) -> u64 {
        self.bits_data + self.bits_hash_model + self.bits_notification_model + self.bits_extended_model
    }
}

/// The four cost terms: data, keyed digests, notification broadcasts,
/// extended-step broadcasts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostTerms {
    pub data: u64,
    pub hash: u64,
    pub notification: u64,
    pub extended: u64,
}

impl CostTerms {
    pub fn total(&self) -> u64 {
        self.data + self.hash + self.notification + self.extended
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub c_measured: u64,
    pub c_model: u64,
    pub alpha_measured: f64,
    pub alpha_model: f64,
    pub bound_model: u64,
    /// Model-track counters split by category.
    pub model_terms: CostTerms,
    /// The closed-form upper bound split by category.
    pub bound_terms: CostTerms,
}

impl ComplexityReport {
    pub fn within_bound(&self) -> bool {
        self.c_model <= self.bound_model
    }
}

/// Closed-form cost bound
/// `(n-1)l + n(n-1)(k + D/k)·l/D + n·B·l/D + n·D·B·t(t+1)`
/// with `l` taken as the padded length and `l/D` as the generation count.
pub fn bound_terms(config: &ProtocolConfig) -> CostTerms {
    let n = config.n as u64;
    let g = config.generations();
    let per_digest = u64::from(config.k) + config.blocks_per_generation();
    CostTerms {
        data: (n - 1) * config.padded_len(),
        hash: n * (n - 1) * per_digest * g,
        notification: n * ideal_broadcast_cost(config.n, 1, config.c) * g,
        extended: n * ideal_broadcast_cost(config.n, config.d_bits, config.c) * config.extended_step_budget(),
    }
}

pub fn complexity_report(metrics: &RunMetrics, config: &ProtocolConfig) -> Result<ComplexityReport, ConfigError> {
    config.validate()?;
    let l = config.l as f64;
    let model_terms = CostTerms {
        data: metrics.bits_data,
        hash: metrics.bits_hash_model,
        notification: metrics.bits_notification_model,
        extended: metrics.bits_extended_model,
    };
    let bound_terms = bound_terms(config);
    Ok(ComplexityReport {
        c_measured: metrics.c_measured(),
        c_model: model_terms.total(),
        alpha_measured: metrics.c_measured() as f64 / l,
        alpha_model: model_terms.total() as f64 / l,
        bound_model: bound_terms.total(),
        model_terms,
        bound_terms,
    })
}

/// Lower bound `(1 - 2^{-k}·D/k)^{t(t+1)}` on the probability that all `l`
/// bits are agreed correctly, as an exact rational.
pub fn security_bound(config: &ProtocolConfig) -> Result<BigRational, ConfigError> {
    let rho_miss = field::collision_bound(config.d_bits, config.k)?;
    if rho_miss >= BigRational::one() {
        return Err(ConfigError::BoundAssumption {
            product: rho_miss.to_f64().unwrap_or(f64::INFINITY),
        });
    }
    let rho = BigRational::one() - rho_miss;
    let exponent = config.extended_step_budget();
    let mut acc = BigRational::one();
    for _ in 0..exponent {
        acc *= &rho;
    }
    Ok(acc)
}

pub fn security_bound_f64(config: &ProtocolConfig) -> Result<f64, ConfigError> {
    security_bound(config).map(|r| r.to_f64().unwrap_or(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;

    fn ratio(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn security_bound_examples() {
        // (1 - 8/256)^2
        let c = ProtocolConfig::new(4, 1, 64, 64, 8);
        assert_eq!(security_bound(&c).unwrap(), ratio(248 * 248, 256 * 256));
        assert!((security_bound_f64(&c).unwrap() - 0.93848).abs() < 1e-5);
        // (1 - 2/16)^2
        let c = ProtocolConfig::new(4, 1, 64, 8, 4);
        assert_eq!(security_bound(&c).unwrap(), ratio(49, 64));
        assert_eq!(security_bound_f64(&c).unwrap(), 0.765625);
    }

    #[test]
    fn security_bound_empty_product() {
        let mut c = ProtocolConfig::new(4, 1, 64, 8, 4);
        c.t = 0;
        assert_eq!(security_bound(&c).unwrap(), BigRational::one());
    }

    #[test]
    fn security_bound_rejects_violated_assumption() {
        // D/k = 4 blocks, 2^-2 * 4 = 1
        let c = ProtocolConfig::new(4, 1, 64, 8, 2);
        assert!(matches!(security_bound(&c), Err(ConfigError::BoundAssumption { product }) if product == 1.0));
    }

    #[test]
    fn complexity_report_rejects_zero_length() {
        let c = ProtocolConfig::new(4, 1, 0, 8, 4);
        assert_eq!(complexity_report(&RunMetrics::default(), &c), Err(ConfigError::EmptyMessage));
    }

    #[test]
    fn bound_terms_closed_form() {
        let c = ProtocolConfig::new(4, 1, 1024, 64, 8);
        let b = bound_terms(&c);
        assert_eq!(b.data, 3 * 1024);
        assert_eq!(b.hash, 12 * (8 + 8) * 16);
        assert_eq!(b.notification, 4 * 16 * 16);
        assert_eq!(b.extended, 4 * 64 * 16 * 2);
    }
}
