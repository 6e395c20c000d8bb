//! Reward terms scored on each attempt: the verifier loss `1 - valid`, the
//! judger loss `1 - confidence`, and their weighted sum. The generator's own
//! cross-entropy term is left to the external trainer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::Episode;
use crate::policy::prompt::Role;
use crate::policy::JudgerVerdict;
use crate::verifier::VerifierVerdict;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("reward weight {name} must be finite and non-negative, got {value}")]
pub struct InvalidWeight {
    pub name: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { beta1: 0.1, beta2: 0.1 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), InvalidWeight> {
        for (name, value) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !value.is_finite() || value < 0.0 {
                return Err(InvalidWeight { name, value });
            }
        }
        Ok(())
    }
}

pub fn verifier_loss(v: &VerifierVerdict) -> f64 {
    if v.valid {
        0.0
    } else {
        1.0
    }
}

pub fn judger_loss(j: &JudgerVerdict) -> f64 {
    1.0 - j.confidence
}

pub fn auxiliary_loss(v: &VerifierVerdict, j: &JudgerVerdict, cfg: &RewardConfig) -> f64 {
    cfg.beta1 * verifier_loss(v) + cfg.beta2 * judger_loss(j)
}

/// One exported row per attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub task_id: String,
    pub step: usize,
    pub attempt: usize,
    pub role: Role,
    pub action: String,
    pub verifier_valid: u8,
    pub judger_confidence: f64,
    /// False when the judger was skipped because the verifier rejected the
    /// attempt; `judger_confidence` is then 0.
    pub judged: bool,
    pub auxiliary_loss: f64,
}

pub fn reward_records(episodes: &[Episode], cfg: &RewardConfig) -> Vec<RewardRecord> {
    let mut out = Vec::new();
    for ep in episodes {
        for (step, rec) in ep.steps.iter().enumerate() {
            for (i, attempt) in rec.attempts.iter().enumerate() {
                let judged = attempt.judger.is_some();
                let verdict = attempt.judger.unwrap_or(JudgerVerdict::hard(false));
                out.push(RewardRecord {
                    task_id: ep.task_id.clone(),
                    step,
                    attempt: i,
                    role: if i == 0 { Role::Generator } else { Role::Reflector },
                    action: attempt.candidate.display_text(),
                    verifier_valid: u8::from(attempt.verifier.valid),
                    judger_confidence: verdict.confidence,
                    judged,
                    auxiliary_loss: auxiliary_loss(&attempt.verifier, &verdict, cfg),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verifier::RuleFailure;

    fn v(valid: bool) -> VerifierVerdict {
        if valid {
            VerifierVerdict::VALID
        } else {
            VerifierVerdict::failed(RuleFailure::NoEnvironmentChange)
        }
    }

    #[test]
    fn single_terms() {
        assert_eq!(verifier_loss(&v(true)), 0.0);
        assert_eq!(verifier_loss(&v(false)), 1.0);
        let batch = [v(true), v(true), v(true), v(false)];
        let mean = batch.iter().map(verifier_loss).sum::<f64>() / 4.0;
        assert_eq!(mean, 0.25);
        assert_eq!(judger_loss(&JudgerVerdict::from_confidence(1.0)), 0.0);
        assert!((judger_loss(&JudgerVerdict::from_confidence(0.3)) - 0.7).abs() < 1e-12);
        assert_eq!(judger_loss(&JudgerVerdict::from_confidence(0.5)), 0.5);
    }

    #[test]
    fn zero_weights_give_zero() {
        let cfg = RewardConfig { beta1: 0.0, beta2: 0.0 };
        for c in [0.0, 0.2, 1.0] {
            for valid in [true, false] {
                assert_eq!(auxiliary_loss(&v(valid), &JudgerVerdict::from_confidence(c), &cfg), 0.0);
            }
        }
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(RewardConfig::default().validate().is_ok());
        assert!(RewardConfig {
            beta1: -0.1,
            beta2: 0.1
        }
        .validate()
        .is_err());
        assert!(RewardConfig {
            beta1: 0.1,
            beta2: f64::NAN
        }
        .validate()
        .is_err());
    }
}
