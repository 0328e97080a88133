use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{self, FieldError, Payload};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("need n >= 4 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("need 1 <= t and n > 3t, got n={n} t={t}")]
    FaultBound { n: usize, t: usize },
    #[error("message length l must be positive")]
    EmptyMessage,
    #[error("D={d_bits} must be a positive multiple of k={k}")]
    BlockMisaligned { d_bits: u64, k: u32 },
    #[error("l={l} is not a multiple of D={d_bits} and padding is disabled")]
    GenerationMisaligned { l: u64, d_bits: u64 },
    #[error("D={d_bits} exceeds l={l}")]
    GenerationTooLong { l: u64, d_bits: u64 },
    #[error("collision bound 2^-k*D/k = {product} is not below 1")]
    BoundAssumption { product: f64 },
    #[error("default value has {got} bits, expected D={expected}")]
    DefaultValueLength { got: usize, expected: u64 },
    #[error("broadcast cost constant c must be positive")]
    NonPositiveCost,
    #[error("no admissible (k, D) schedule for l={l}, beta={beta}: {reason}")]
    Schedule { l: u64, beta: f64, reason: String },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Parameters of one broadcast session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub n: usize,
    pub t: usize,
    /// Message length in bits.
    pub l: u64,
    /// Bits agreed per generation.
    pub d_bits: u64,
    /// Field width; keys and digests are `k` bits.
    pub k: u32,
    /// Output after the source is identified as faulty. `None` means all zeros.
    pub default_value: Option<Payload>,
    /// Constant in the model broadcast cost `B = c·n²` per bit.
    pub c: Ratio<u64>,
    pub seed: u64,
    /// Allow `l` that is not a multiple of `D`; the final generation is zero-padded.
    pub pad_final_generation: bool,
}

impl ProtocolConfig {
    pub fn new(n: usize, t: usize, l: u64, d_bits: u64, k: u32) -> Self {
        ProtocolConfig {
            n,
            t,
            l,
            d_bits,
            k,
            default_value: None,
            c: Ratio::from_integer(1),
            seed: 0,
            pad_final_generation: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n < 4 {
            return Err(ConfigError::TooFewNodes(self.n));
        }
        if self.t < 1 || self.n <= 3 * self.t {
            return Err(ConfigError::FaultBound { n: self.n, t: self.t });
        }
        if self.l == 0 {
            return Err(ConfigError::EmptyMessage);
        }
        field::check_width(self.k)?;
        if self.d_bits == 0 || self.d_bits % u64::from(self.k) != 0 {
            return Err(ConfigError::BlockMisaligned {
                d_bits: self.d_bits,
                k: self.k,
            });
        }
        if self.d_bits > self.l {
            return Err(ConfigError::GenerationTooLong {
                l: self.l,
                d_bits: self.d_bits,
            });
        }
        if !self.pad_final_generation && self.l % self.d_bits != 0 {
            return Err(ConfigError::GenerationMisaligned {
                l: self.l,
                d_bits: self.d_bits,
            });
        }
        if let Some(dv) = &self.default_value {
            if dv.len() as u64 != self.d_bits {
                return Err(ConfigError::DefaultValueLength {
                    got: dv.len(),
                    expected: self.d_bits,
                });
            }
        }
        if *self.c.numer() == 0 {
            return Err(ConfigError::NonPositiveCost);
        }
        Ok(())
    }

    pub fn blocks_per_generation(&self) -> u64 {
        self.d_bits / u64::from(self.k)
    }

    /// Number of generations, counting a padded final one.
    pub fn generations(&self) -> u64 {
        self.l.div_ceil(self.d_bits)
    }

    pub fn padded_len(&self) -> u64 {
        self.generations() * self.d_bits
    }

    pub fn padded_bits(&self) -> u64 {
        self.padded_len() - self.l
    }

    pub fn default_payload(&self) -> Payload {
        self.default_value
            .clone()
            .unwrap_or_else(|| Payload::zeros(self.d_bits as usize))
    }

    /// `t(t+1)`, the budget of extended steps.
    pub fn extended_step_budget(&self) -> u64 {
        (self.t * (self.t + 1)) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ProtocolConfig::new(4, 1, 64, 16, 4).validate().is_ok());
        assert_eq!(
            ProtocolConfig::new(3, 1, 64, 16, 4).validate(),
            Err(ConfigError::TooFewNodes(3))
        );
        assert!(matches!(
            ProtocolConfig::new(6, 2, 64, 16, 4).validate(),
            Err(ConfigError::FaultBound { .. })
        ));
        assert!(matches!(
            ProtocolConfig::new(4, 0, 64, 16, 4).validate(),
            Err(ConfigError::FaultBound { .. })
        ));
        assert_eq!(
            ProtocolConfig::new(4, 1, 0, 16, 4).validate(),
            Err(ConfigError::EmptyMessage)
        );
        assert!(matches!(
            ProtocolConfig::new(4, 1, 64, 18, 4).validate(),
            Err(ConfigError::BlockMisaligned { .. })
        ));
        assert!(matches!(
            ProtocolConfig::new(4, 1, 60, 16, 4).validate(),
            Err(ConfigError::GenerationMisaligned { .. })
        ));
        let mut padded = ProtocolConfig::new(4, 1, 60, 16, 4);
        padded.pad_final_generation = true;
        assert!(padded.validate().is_ok());
        assert_eq!(padded.generations(), 4);
        assert_eq!(padded.padded_bits(), 4);
    }
}
