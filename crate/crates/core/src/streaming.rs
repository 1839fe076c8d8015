//! Online labeling: after each message, detect now or wait.
//!
//! With `p_t` the probability of the currently predicted label, the model
//! detects at step `t` when
//!
//! ```text
//! p_t > p_{t-1}  ∧  p_t > α  ∧  p_t − p_{t-1} < γ(t)
//! ```
//!
//! A stream that reaches `τ` (or runs out of messages) without detection is
//! labeled by the current argmax and flagged as forced.

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{NecError, Result};
use crate::model::{step_forward, ModelParams};
use crate::numerics::Vector;
use crate::objective::gamma;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingConfig {
    pub alpha: f64,
    pub tau: usize,
    pub force_decide_at_tau: bool,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            tau: 100,
            force_decide_at_tau: true,
        }
    }
}

impl StoppingConfig {
    pub fn new(alpha: f64, tau: usize) -> Result<Self> {
        let cfg = Self {
            alpha,
            tau,
            force_decide_at_tau: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.5 && self.alpha < 1.0) {
            return Err(NecError::Domain(format!(
                "alpha must lie in (0.5, 1), got {}",
                self.alpha
            )));
        }
        if self.tau == 0 {
            return Err(NecError::Domain("tau must be at least 1".into()));
        }
        Ok(())
    }
}

/// The three-clause stopping rule. Always false at `t = 1`, where there is
/// no previous probability, and beyond `τ`.
pub fn stopping_rule(p_t: f64, p_prev: Option<f64>, t: usize, config: &StoppingConfig) -> bool {
    let Some(p_prev) = p_prev else {
        return false;
    };
    let Ok(g) = gamma(t, config.tau) else {
        return false;
    };
    p_t > p_prev && p_t > config.alpha && p_t - p_prev < g
}

/// Predicted label and its probability. An exact tie goes to real.
pub fn predicted(probs: [f64; 2]) -> (Label, f64) {
    if probs[1] > probs[0] {
        (Label::Fake, probs[1])
    } else {
        (Label::Real, probs[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionState {
    Detect,
    Wait,
}

/// Output after one message. `label`, `prob` and `forced` are present only
/// when `state` is detect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub t: usize,
    pub state: DecisionState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced: Option<bool>,
}

impl Decision {
    fn wait(t: usize) -> Self {
        Self {
            t,
            state: DecisionState::Wait,
            label: None,
            prob: None,
            forced: None,
        }
    }

    fn detect(t: usize, probs: [f64; 2], forced: bool) -> Self {
        let (label, prob) = predicted(probs);
        Self {
            t,
            state: DecisionState::Detect,
            label: Some(label),
            prob: Some(prob),
            forced: Some(forced),
        }
    }

    pub fn is_detect(&self) -> bool {
        self.state == DecisionState::Detect
    }
}

/// Incremental classification of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Session<'a> {
    params: &'a ModelParams,
    config: StoppingConfig,
    hidden: Vector,
    prev_prob: Option<f64>,
    last_probs: Option<[f64; 2]>,
    t: usize,
    terminal: bool,
}

pub fn open_session(params: &ModelParams, config: StoppingConfig) -> Session<'_> {
    Session {
        params,
        config,
        hidden: Vector::zeros(params.hidden_dim),
        prev_prob: None,
        last_probs: None,
        t: 0,
        terminal: false,
    }
}

impl<'a> Session<'a> {
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn config(&self) -> &StoppingConfig {
        &self.config
    }

    /// Softmax output after the most recent message.
    pub fn last_probs(&self) -> Option<[f64; 2]> {
        self.last_probs
    }

    pub fn feed(&mut self, x: &Vector) -> Result<Decision> {
        if self.terminal {
            return Err(NecError::SessionClosed);
        }
        let step = step_forward(self.params, x, &self.hidden)?;
        self.t += 1;
        self.hidden = step.hidden;
        self.last_probs = Some(step.probs);
        let (_, p_t) = predicted(step.probs);
        let fire = stopping_rule(p_t, self.prev_prob, self.t, &self.config);
        self.prev_prob = Some(p_t);
        if fire {
            self.terminal = true;
            return Ok(Decision::detect(self.t, step.probs, false));
        }
        if self.t >= self.config.tau && self.config.force_decide_at_tau {
            self.terminal = true;
            return Ok(Decision::detect(self.t, step.probs, true));
        }
        Ok(Decision::wait(self.t))
    }

    /// Forced decision when the stream ends without detection.
    pub fn finish(&mut self) -> Result<Decision> {
        if self.terminal {
            return Err(NecError::SessionClosed);
        }
        let probs = self
            .last_probs
            .ok_or(NecError::EmptyInput("finish: no messages were fed"))?;
        self.terminal = true;
        Ok(Decision::detect(self.t, probs, true))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamOutcome {
    pub label: Label,
    pub stop_time: usize,
    pub probability: f64,
    pub forced: bool,
}

/// Runs a session over at most `τ` inputs and returns the first detection,
/// or a forced decision at the last input.
pub fn classify_stream(
    params: &ModelParams,
    config: &StoppingConfig,
    xs: &[Vector],
) -> Result<StreamOutcome> {
    if xs.is_empty() {
        return Err(NecError::EmptyInput("classify_stream: feature sequence"));
    }
    let mut session = open_session(params, *config);
    let limit = xs.len().min(config.tau);
    for x in &xs[..limit] {
        let decision = session.feed(x)?;
        if decision.is_detect() {
            return Ok(outcome(&decision));
        }
    }
    Ok(outcome(&session.finish()?))
}

fn outcome(d: &Decision) -> StreamOutcome {
    StreamOutcome {
        label: d.label.expect("detect decisions carry a label"),
        stop_time: d.t,
        probability: d.prob.expect("detect decisions carry a probability"),
        forced: d.forced.unwrap_or(false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(alpha: f64, tau: usize) -> StoppingConfig {
        StoppingConfig::new(alpha, tau).unwrap()
    }

    fn random_inputs(dx: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<Vector> {
        (0..len)
            .map(|_| Vector::from((0..dx).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>()))
            .collect()
    }

    #[test]
    fn rule_examples() {
        assert!(stopping_rule(0.75, Some(0.60), 50, &cfg(0.7, 100)));
        assert!(!stopping_rule(0.95, Some(0.80), 100, &cfg(0.7, 100)));
        assert!(!stopping_rule(0.99, None, 1, &cfg(0.7, 100)));
        assert!(!stopping_rule(0.99, Some(0.9), 101, &cfg(0.7, 100)));
    }

    #[test]
    fn config_validation() {
        assert!(StoppingConfig::new(0.5, 10).is_err());
        assert!(StoppingConfig::new(1.0, 10).is_err());
        assert!(StoppingConfig::new(0.7, 0).is_err());
    }

    #[test]
    fn fresh_sessions() {
        let p = ModelParams::zeros(3, 2);
        let a = open_session(&p, StoppingConfig::default());
        let b = open_session(&p, StoppingConfig::default());
        assert_eq!(a.t(), 0);
        assert!(!a.is_terminal());
        assert_eq!(a, b);
    }

    #[test]
    fn zero_model_waits_until_forced_real_at_tau() {
        let p = ModelParams::zeros(2, 3);
        let tau = 10;
        let mut s = open_session(&p, cfg(0.7, tau));
        let x = Vector::from(vec![1.0, -1.0]);
        for t in 1..tau {
            let d = s.feed(&x).unwrap();
            assert_eq!(d, Decision::wait(t));
        }
        let d = s.feed(&x).unwrap();
        assert_eq!(d.state, DecisionState::Detect);
        assert_eq!(d.label, Some(Label::Real));
        assert_eq!(d.prob, Some(0.5));
        assert_eq!(d.forced, Some(true));
        assert!(matches!(s.feed(&x), Err(NecError::SessionClosed)));
    }

    #[test]
    fn feed_rejects_wrong_dimension() {
        let p = ModelParams::zeros(2, 3);
        let mut s = open_session(&p, StoppingConfig::default());
        assert!(s.feed(&Vector::zeros(3)).is_err());
        assert_eq!(s.t(), 0);
    }

    /// A model whose fake probability is a known function of the input:
    /// the hidden state copies the first input coordinate almost exactly.
    fn copy_model() -> ModelParams {
        let mut p = ModelParams::zeros(1, 1);
        // z ≈ 1 so h ≈ h̃ = tanh(w x); head maps h to logits [0, k h].
        p.b_z[0] = 50.0;
        p.w_h.set(0, 0, 1.0);
        p.head_w.set(1, 0, 4.0);
        p
    }

    /// Input that drives the copy model to fake probability ≈ `q`.
    fn input_for(q: f64) -> Vector {
        let logit = (q / (1.0 - q)).ln();
        Vector::from(vec![(logit / 4.0).atanh()])
    }

    #[test]
    fn detects_at_second_step_on_rising_confidence() {
        let p = copy_model();
        let xs = vec![input_for(0.60), input_for(0.75), input_for(0.9)];
        let out = classify_stream(&p, &cfg(0.7, 100), &xs).unwrap();
        assert_eq!(out.stop_time, 2);
        assert_eq!(out.label, Label::Fake);
        assert!(!out.forced);
        assert!((out.probability - 0.75).abs() < 1e-6);
    }

    #[test]
    fn exhaustion_forces_argmax_at_last_step() {
        let p = copy_model();
        let xs = vec![input_for(0.40), input_for(0.45), input_for(0.42)];
        let out = classify_stream(&p, &cfg(0.7, 100), &xs).unwrap();
        assert_eq!(out.stop_time, 3);
        assert_eq!(out.label, Label::Real);
        assert!(out.forced);
        assert!(classify_stream(&p, &cfg(0.7, 100), &[]).is_err());
    }

    #[test]
    fn finish_requires_input_and_closes() {
        let p = ModelParams::zeros(1, 1);
        let mut s = open_session(&p, StoppingConfig::default());
        assert!(s.finish().is_err());
        s.feed(&Vector::zeros(1)).unwrap();
        assert!(s.finish().unwrap().forced.unwrap());
        assert!(s.finish().is_err());
    }

    #[test]
    fn session_matches_batch_forward_and_offline_replay() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..20 {
            let mut params = ModelParams::uniform(3, 4, &mut rng);
            params.head_w.as_mut_slice().iter_mut().for_each(|w| *w *= 6.0);
            let len = rng.random_range(1..30);
            let xs = random_inputs(3, len, &mut rng);
            let config = cfg(0.6 + 0.03 * (trial % 10) as f64, 25);
            let mut s = open_session(&params, config);
            let mut prev = None;
            for t in 1..=len.min(config.tau) {
                let d = s.feed(&xs[t - 1]).unwrap();
                // Offline: run the model over the whole prefix from scratch.
                let trace = forward(&params, &xs[..t]).unwrap();
                let probs = trace.steps[t - 1].probs;
                assert_eq!(s.last_probs().unwrap(), probs);
                let (_, p_t) = predicted(probs);
                let fire = stopping_rule(p_t, prev, t, &config);
                prev = Some(p_t);
                let expect_detect = fire || t == config.tau;
                assert_eq!(d.is_detect(), expect_detect);
                if let Some(forced) = d.forced {
                    assert_eq!(forced, !fire);
                    if !forced {
                        assert!(d.prob.unwrap() > config.alpha);
                    }
                }
                if d.is_detect() {
                    break;
                }
            }
        }
    }
}
