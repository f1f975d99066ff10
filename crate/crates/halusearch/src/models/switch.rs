use crate::core::{ThinkingDecision, ThinkingLevel, ThinkingMode};

use super::{ModelError, SwitchLevel, SwitchModel, SwitchRequest};

fn level_of(request: &SwitchRequest) -> ThinkingLevel {
    match request.level {
        SwitchLevel::Instance => ThinkingLevel::Instance,
        SwitchLevel::Step => ThinkingLevel::Step,
    }
}

/// Routes every request to slow thinking (plain tree search, no switching).
pub struct AlwaysSlow;

impl SwitchModel for AlwaysSlow {
    fn decide(&self, request: &SwitchRequest) -> Result<ThinkingDecision, ModelError> {
        Ok(ThinkingDecision::new(level_of(request), ThinkingMode::Slow))
    }
}

/// Routes every request to fast thinking (direct generation everywhere).
pub struct AlwaysFast;

impl SwitchModel for AlwaysFast {
    fn decide(&self, request: &SwitchRequest) -> Result<ThinkingDecision, ModelError> {
        Ok(ThinkingDecision::new(level_of(request), ThinkingMode::Fast))
    }
}

/// Estimates the hallucination risk of a state on the Likert scale (1..=5).
pub trait RiskEstimator: Send + Sync {
    fn estimate(&self, request: &SwitchRequest) -> Result<f64, ModelError>;
}

/// Threshold switch: slow thinking iff the estimated Likert-scale risk
/// strictly exceeds gamma. With gamma below 1 every state goes slow; above 5,
/// every state goes fast.
pub struct ThresholdSwitch<E> {
    pub estimator: E,
    pub gamma: f64,
}

impl<E: RiskEstimator> SwitchModel for ThresholdSwitch<E> {
    fn decide(&self, request: &SwitchRequest) -> Result<ThinkingDecision, ModelError> {
        let risk = self.estimator.estimate(request)?;
        let mode = if risk > self.gamma { ThinkingMode::Slow } else { ThinkingMode::Fast };
        Ok(ThinkingDecision::new(level_of(request), mode))
    }
}
