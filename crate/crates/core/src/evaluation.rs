//! Correctness and earliness of streaming classification.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{NecError, Result};
use crate::model::{forward, ModelParams};
use crate::numerics::Vector;
use crate::streaming::{classify_stream, predicted, StoppingConfig};

/// Model inputs of one event, ready for classification.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub event_id: String,
    pub label: Label,
    pub inputs: Vec<Vector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: String,
    pub true_label: Label,
    pub predicted: Label,
    pub stop_time: usize,
    /// Usable length after truncation at τ.
    pub length: usize,
    pub probability: f64,
    pub forced: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

impl ClassMetrics {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            support: tp + fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fake: ClassMetrics,
    pub real: ClassMetrics,
    pub accuracy: f64,
    /// Mean of `stop_time / length` over events.
    pub earliness: f64,
    pub forced_fraction: f64,
    pub mean_stop_time: f64,
    pub records: Vec<EventRecord>,
}

impl EvalReport {
    pub fn from_records(records: Vec<EventRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(NecError::EmptyInput("evaluation: events"));
        }
        let n = records.len() as f64;
        let count = |truth: Label, pred: Label| {
            records
                .iter()
                .filter(|r| r.true_label == truth && r.predicted == pred)
                .count()
        };
        let ff = count(Label::Fake, Label::Fake);
        let fr = count(Label::Fake, Label::Real);
        let rf = count(Label::Real, Label::Fake);
        let rr = count(Label::Real, Label::Real);
        let earliness = records
            .iter()
            .map(|r| r.stop_time as f64 / r.length as f64)
            .sum::<f64>()
            / n;
        Ok(Self {
            fake: ClassMetrics::from_counts(ff, rf, fr),
            real: ClassMetrics::from_counts(rr, fr, rf),
            accuracy: (ff + rr) as f64 / n,
            earliness,
            forced_fraction: records.iter().filter(|r| r.forced).count() as f64 / n,
            mean_stop_time: records.iter().map(|r| r.stop_time as f64).sum::<f64>() / n,
            records,
        })
    }

    pub fn n_events(&self) -> usize {
        self.records.len()
    }

    /// Plain-text summary table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str("class  precision  recall  f1      support\n");
        for (name, m) in [("fake", &self.fake), ("real", &self.real)] {
            out.push_str(&format!(
                "{name:<5}  {:<9.4}  {:<6.4}  {:<6.4}  {}\n",
                m.precision, m.recall, m.f1, m.support
            ));
        }
        out.push_str(&format!(
            "\nevents          {}\naccuracy        {:.4}\nearliness       {:.4}\nmean stop step  {:.2}\nforced          {:.4}\n",
            self.n_events(),
            self.accuracy,
            self.earliness,
            self.mean_stop_time,
            self.forced_fraction
        ));
        out
    }
}

/// Streams every event through the stopping rule and aggregates.
pub fn evaluate(
    params: &ModelParams,
    config: &StoppingConfig,
    events: &[LabeledSequence],
) -> Result<EvalReport> {
    if events.is_empty() {
        return Err(NecError::EmptyInput("evaluate: test events"));
    }
    config.validate()?;
    let records = events
        .par_iter()
        .map(|e| {
            let length = e.inputs.len().min(config.tau);
            let out = classify_stream(params, config, &e.inputs[..length])?;
            Ok(EventRecord {
                event_id: e.event_id.clone(),
                true_label: e.label,
                predicted: out.label,
                stop_time: out.stop_time,
                length,
                probability: out.probability,
                forced: out.forced,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_records(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub accuracy: f64,
    pub earliness: f64,
    pub forced_fraction: f64,
}

/// One [`evaluate`] per α, everything else fixed.
pub fn alpha_sweep(
    params: &ModelParams,
    base: &StoppingConfig,
    events: &[LabeledSequence],
    alphas: &[f64],
) -> Result<Vec<SweepRow>> {
    for &alpha in alphas {
        StoppingConfig { alpha, ..*base }.validate()?;
    }
    alphas
        .iter()
        .map(|&alpha| {
            let report = evaluate(params, &StoppingConfig { alpha, ..*base }, events)?;
            Ok(SweepRow {
                alpha,
                accuracy: report.accuracy,
                earliness: report.earliness,
                forced_fraction: report.forced_fraction,
            })
        })
        .collect()
}

/// Indices `i` where earliness drops from row `i` to row `i + 1` although
/// α increased.
pub fn earliness_violations(rows: &[SweepRow]) -> Vec<usize> {
    rows.windows(2)
        .enumerate()
        .filter(|(_, w)| w[1].alpha > w[0].alpha && w[1].earliness < w[0].earliness)
        .map(|(i, _)| i)
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("alpha,accuracy,earliness,forced_fraction\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.alpha, r.accuracy, r.earliness, r.forced_fraction
        ));
    }
    out
}

/// Labels every event from the argmax after a fixed number of messages,
/// ignoring the stopping rule.
pub fn fixed_prefix_baseline(
    params: &ModelParams,
    tau: usize,
    events: &[LabeledSequence],
    prefix: usize,
) -> Result<EvalReport> {
    if prefix == 0 {
        return Err(NecError::Domain("prefix length must be at least 1".into()));
    }
    let records = events
        .par_iter()
        .map(|e| {
            let length = e.inputs.len().min(tau);
            let stop = prefix.min(length);
            let trace = forward(params, &e.inputs[..stop])?;
            let (label, probability) = predicted(trace.steps[stop - 1].probs);
            Ok(EventRecord {
                event_id: e.event_id.clone(),
                true_label: e.label,
                predicted: label,
                stop_time: stop,
                length,
                probability,
                forced: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_records(records)
}

/// Accuracy and earliness of the stopping rule next to fixed-prefix
/// labeling at the rule's mean stop step and at the full sequence.
pub fn accuracy_earliness_csv(
    nec: &EvalReport,
    at_mean_stop: &EvalReport,
    full: &EvalReport,
) -> String {
    let mut out = String::from("mode,mean_stop_time,accuracy,earliness\n");
    for (name, r) in [
        ("stopping_rule", nec),
        ("fixed_prefix_at_mean_stop", at_mean_stop),
        ("full_sequence", full),
    ] {
        out.push_str(&format!(
            "{name},{},{},{}\n",
            r.mean_stop_time, r.accuracy, r.earliness
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(truth: Label, pred: Label, stop: usize, len: usize) -> EventRecord {
        EventRecord {
            event_id: format!("e{stop}-{len}"),
            true_label: truth,
            predicted: pred,
            stop_time: stop,
            length: len,
            probability: 0.8,
            forced: stop == len,
        }
    }

    #[test]
    fn stopping_at_length_gives_earliness_one() {
        let r = EvalReport::from_records(vec![
            record(Label::Fake, Label::Real, 5, 5),
            record(Label::Real, Label::Real, 9, 9),
        ])
        .unwrap();
        assert_eq!(r.earliness, 1.0);
        assert_eq!(r.forced_fraction, 1.0);
    }

    #[test]
    fn perfect_early_predictor() {
        let r = EvalReport::from_records(vec![
            record(Label::Fake, Label::Fake, 1, 10),
            record(Label::Real, Label::Real, 1, 10),
        ])
        .unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!((r.earliness - 0.1).abs() < 1e-15);
        assert_eq!(r.fake.f1, 1.0);
        assert_eq!(r.real.f1, 1.0);
    }

    #[test]
    fn empty_records_rejected() {
        assert!(EvalReport::from_records(vec![]).is_err());
        let p = ModelParams::zeros(2, 2);
        assert!(evaluate(&p, &StoppingConfig::default(), &[]).is_err());
    }

    #[test]
    fn class_without_predictions_has_zero_precision() {
        let r = EvalReport::from_records(vec![
            record(Label::Fake, Label::Real, 1, 2),
            record(Label::Real, Label::Real, 1, 2),
        ])
        .unwrap();
        assert_eq!(r.fake.precision, 0.0);
        assert_eq!(r.fake.recall, 0.0);
        assert_eq!(r.fake.f1, 0.0);
        assert_eq!(r.real.precision, 0.5);
        assert_eq!(r.real.recall, 1.0);
    }

    #[test]
    fn table_mentions_key_metrics() {
        let r = EvalReport::from_records(vec![record(Label::Fake, Label::Fake, 2, 4)]).unwrap();
        let t = r.to_table();
        assert!(t.contains("accuracy        1.0000"));
        assert!(t.contains("earliness       0.5000"));
    }

    #[test]
    fn zero_model_decides_everything_at_full_length() {
        let p = ModelParams::zeros(2, 3);
        let events: Vec<LabeledSequence> = (1..6)
            .map(|n| LabeledSequence {
                event_id: format!("e{n}"),
                label: if n % 2 == 0 { Label::Fake } else { Label::Real },
                inputs: vec![Vector::from(vec![0.3, -0.2]); n * 3],
            })
            .collect();
        let cfg = StoppingConfig::new(0.7, 10).unwrap();
        let r = evaluate(&p, &cfg, &events).unwrap();
        assert_eq!(r.earliness, 1.0);
        assert_eq!(r.forced_fraction, 1.0);
        assert!(r.records.iter().all(|x| x.predicted == Label::Real));
        assert_eq!(r.records[4].length, 10);

        let rows = alpha_sweep(&p, &cfg, &events, &[0.7]).unwrap();
        assert_eq!(rows[0].earliness, r.earliness);
        assert_eq!(rows[0].accuracy, r.accuracy);
        assert!(alpha_sweep(&p, &cfg, &events, &[0.7, 1.2]).is_err());

        let base = fixed_prefix_baseline(&p, 10, &events, 1).unwrap();
        assert!(base.records.iter().all(|x| x.stop_time == 1));
        assert!(fixed_prefix_baseline(&p, 10, &events, 0).is_err());
    }

    #[test]
    fn sweep_violation_detection() {
        let row = |alpha, earliness| SweepRow {
            alpha,
            accuracy: 0.9,
            earliness,
            forced_fraction: 0.0,
        };
        let rows = [row(0.6, 0.2), row(0.7, 0.3), row(0.8, 0.25), row(0.9, 0.25)];
        assert_eq!(earliness_violations(&rows), vec![1]);
        assert!(sweep_csv(&rows).starts_with("alpha,accuracy,earliness,forced_fraction\n0.6,0.9,0.2,0\n"));
    }

    fn label_of(b: bool) -> Label {
        if b {
            Label::Fake
        } else {
            Label::Real
        }
    }

    proptest! {
        #[test]
        fn metrics_match_independent_tally(
            rows in prop::collection::vec((any::<bool>(), any::<bool>(), 1usize..50, 0usize..50), 1..60)
        ) {
            let records: Vec<EventRecord> = rows
                .iter()
                .map(|&(t, p, len, s)| record(label_of(t), label_of(p), 1 + s % len, len))
                .collect();
            let r = EvalReport::from_records(records.clone()).unwrap();

            let (mut tp, mut fp, mut fn_, mut tn) = (0.0, 0.0, 0.0, 0.0);
            for &(t, p, _, _) in &rows {
                match (t, p) {
                    (true, true) => tp += 1.0,
                    (false, true) => fp += 1.0,
                    (true, false) => fn_ += 1.0,
                    (false, false) => tn += 1.0,
                }
            }
            let n = rows.len() as f64;
            prop_assert_eq!(r.accuracy, (tp + tn) / n);
            if tp + fp > 0.0 {
                prop_assert!((r.fake.precision - tp / (tp + fp)).abs() < 1e-12);
            }
            if tp + fn_ > 0.0 {
                prop_assert!((r.fake.recall - tp / (tp + fn_)).abs() < 1e-12);
            }
            for m in [&r.fake, &r.real] {
                if m.precision + m.recall > 0.0 {
                    let h = 2.0 * m.precision * m.recall / (m.precision + m.recall);
                    prop_assert!((m.f1 - h).abs() <= 1e-12);
                }
            }
            let mut sum = 0.0;
            for rec in &records {
                sum += rec.stop_time as f64 / rec.length as f64;
            }
            prop_assert_eq!(r.earliness, sum / n);
            prop_assert!(r.earliness > 0.0 && r.earliness <= 1.0);

            // Swapping the label convention swaps the class columns only.
            let flipped: Vec<EventRecord> = records
                .iter()
                .map(|x| EventRecord {
                    true_label: x.true_label.flipped(),
                    predicted: x.predicted.flipped(),
                    ..x.clone()
                })
                .collect();
            let f = EvalReport::from_records(flipped).unwrap();
            prop_assert_eq!(f.fake, r.real);
            prop_assert_eq!(f.real, r.fake);
            prop_assert_eq!(f.accuracy, r.accuracy);
            prop_assert_eq!(f.earliness, r.earliness);
        }
    }
}
