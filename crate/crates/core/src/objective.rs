//! Earliness-weighted cross-entropy.
//!
//! The loss of one event is `Σ_t γ(t) · CE_t` with `γ(t) = −ln(t/τ)`, so a
//! confident correct prediction is worth more the earlier it appears and
//! nothing at `t = τ`.

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{NecError, Result};

/// Floor applied to probabilities before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightingMode {
    #[default]
    EarlinessWeighted,
    Uniform,
}

/// Which horizon `γ` is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Horizon {
    /// The configured maximum stream length.
    #[default]
    Global,
    /// Each event's own (truncated) length.
    PerEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: usize,
    pub weighting: WeightingMode,
    pub horizon: Horizon,
}

impl LossConfig {
    pub fn new(tau: usize, weighting: WeightingMode) -> Self {
        Self {
            tau,
            weighting,
            horizon: Horizon::Global,
        }
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::new(100, WeightingMode::EarlinessWeighted)
    }
}

/// `γ(t) = −ln(t/τ)` for `1 ≤ t ≤ τ`.
pub fn gamma(t: usize, tau: usize) -> Result<f64> {
    if t == 0 || t > tau {
        return Err(NecError::Domain(format!(
            "gamma needs 1 <= t <= tau, got t = {t}, tau = {tau}"
        )));
    }
    if t == tau {
        return Ok(0.0);
    }
    Ok(-(t as f64 / tau as f64).ln())
}

fn check_distribution(t: usize, p: &[f64; 2]) -> Result<()> {
    let ok = p.iter().all(|x| x.is_finite() && (0.0..=1.0).contains(x))
        && (p[0] + p[1] - 1.0).abs() <= 1e-9;
    if ok {
        Ok(())
    } else {
        Err(NecError::NonFinite(format!(
            "probability vector at step {}: {p:?}",
            t + 1
        )))
    }
}

/// Loss of one event and its gradient with respect to each step's logits.
///
/// `probs[t]` is the softmax output at step `t + 1`; index 1 is the fake
/// class. The gradient is `γ(t) · (P_t − onehot(label))`.
pub fn sequence_loss(
    probs: &[[f64; 2]],
    label: Label,
    config: &LossConfig,
) -> Result<(f64, Vec<[f64; 2]>)> {
    if probs.is_empty() {
        return Err(NecError::EmptyInput("sequence_loss: probabilities"));
    }
    let horizon = match config.horizon {
        Horizon::Global => config.tau,
        Horizon::PerEvent => probs.len(),
    };
    let target = label.index();
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(probs.len());
    for (i, p) in probs.iter().enumerate() {
        check_distribution(i, p)?;
        let weight = match config.weighting {
            WeightingMode::Uniform => 1.0,
            WeightingMode::EarlinessWeighted => gamma(i + 1, horizon)?,
        };
        let p_target = p[target].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss += weight * -p_target.ln();
        let mut g = [weight * p[0], weight * p[1]];
        g[target] -= weight;
        grads.push(g);
    }
    Ok((loss, grads))
}

/// Mean of [`sequence_loss`] over events, summed in input order.
pub fn batch_loss(events: &[(&[[f64; 2]], Label)], config: &LossConfig) -> Result<f64> {
    if events.is_empty() {
        return Err(NecError::EmptyInput("batch_loss: events"));
    }
    let mut total = 0.0;
    for (probs, label) in events {
        total += sequence_loss(probs, *label, config)?.0;
    }
    Ok(total / events.len() as f64)
}
