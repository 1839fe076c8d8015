//! Per-message feature vectors `X_t = [c_real | c_fake | u | dt]`.
//!
//! - `c_real`, `c_fake`: the message text embedded once under each class's
//!   representation ([`TextEmbedder`]).
//! - `u`: eight user-profile features, log-compressed and z-scored.
//! - `dt`: `log1p` of seconds since the event's first message.

use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::data::{EventStream, Label, RawMessage, UserProfile};
use crate::error::{NecError, Result};
use crate::numerics::Vector;

pub const USER_DIMS: usize = 8;
pub const TIME_DIMS: usize = 1;
pub const DEFAULT_TEXT_DIM: usize = 50;

/// Text representation conditioned on a class.
pub trait TextEmbedder {
    fn dim(&self) -> usize;

    /// Embedding of `text` under `class`'s representation.
    fn embed(&self, text: &str, class: Label) -> Result<Vec<f64>>;
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

fn bucket(token: &str, dim: usize) -> usize {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    (h.finish() % dim as u64) as usize
}

/// Class-conditional hashed TF-IDF.
///
/// Tokens are hashed into `dim` buckets. For each class, a bucket's weight
/// is its relative term frequency in that class's training texts times a
/// smoothed within-class inverse document frequency; buckets never seen in
/// the class weigh zero. An embedding is the text's bucket counts times the
/// class weights, L2-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashedTfIdfEmbedder {
    dim: usize,
    #[serde(with = "crate::codec::f64_array")]
    real_weights: Vec<f64>,
    #[serde(with = "crate::codec::f64_array")]
    fake_weights: Vec<f64>,
    fitted: bool,
}

impl HashedTfIdfEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            real_weights: vec![0.0; dim],
            fake_weights: vec![0.0; dim],
            fitted: false,
        }
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    pub fn fit<'a, I>(&mut self, corpus: I)
    where
        I: IntoIterator<Item = (&'a str, Label)>,
    {
        let dim = self.dim;
        let mut tf = [vec![0.0; dim], vec![0.0; dim]];
        let mut df = [vec![0.0; dim], vec![0.0; dim]];
        let mut docs = [0usize; 2];
        let mut seen = vec![false; dim];
        for (text, label) in corpus {
            let c = label.index();
            docs[c] += 1;
            seen.iter_mut().for_each(|s| *s = false);
            for token in tokenize(text) {
                let b = bucket(&token, dim);
                tf[c][b] += 1.0;
                if !seen[b] {
                    seen[b] = true;
                    df[c][b] += 1.0;
                }
            }
        }
        let weights = |c: usize| -> Vec<f64> {
            let total: f64 = tf[c].iter().sum();
            (0..dim)
                .map(|b| {
                    if tf[c][b] == 0.0 {
                        0.0
                    } else {
                        let idf = ((1.0 + docs[c] as f64) / (1.0 + df[c][b])).ln() + 1.0;
                        tf[c][b] / total * idf
                    }
                })
                .collect()
        };
        self.real_weights = weights(0);
        self.fake_weights = weights(1);
        self.fitted = true;
    }
}

impl TextEmbedder for HashedTfIdfEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str, class: Label) -> Result<Vec<f64>> {
        if !self.fitted {
            return Err(NecError::State("text embedder used before fit".into()));
        }
        let weights = match class {
            Label::Real => &self.real_weights,
            Label::Fake => &self.fake_weights,
        };
        let mut v = vec![0.0; self.dim];
        for token in tokenize(text) {
            let b = bucket(&token, self.dim);
            v[b] += weights[b];
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

/// `(c_real, c_fake)` for one text.
pub fn embed_text(embedder: &dyn TextEmbedder, text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((
        embedder.embed(text, Label::Real)?,
        embedder.embed(text, Label::Fake)?,
    ))
}

/// Per-dimension z-scoring fitted on training rows. Zero-variance
/// dimensions keep a unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    #[serde(with = "crate::codec::f64_array")]
    pub mean: Vec<f64>,
    #[serde(with = "crate::codec::f64_array")]
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn identity(dims: usize) -> Self {
        Self {
            mean: vec![0.0; dims],
            std: vec![1.0; dims],
        }
    }

    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(NecError::EmptyInput("scaler fit: rows"))?;
        let dims = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dims];
        for row in rows {
            if row.len() != dims {
                return Err(NecError::shape("scaler fit", dims, row.len()));
            }
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dims];
        for row in rows {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }
}

/// Unscaled user features in fixed order: log1p(followers), verified,
/// log1p(account age in days), geo enabled, username length, description
/// length, log1p(following), log1p(statuses).
pub fn raw_user_features(profile: &UserProfile, post_time: f64) -> Vec<f64> {
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    vec![
        (profile.followers_count as f64).ln_1p(),
        flag(profile.verified),
        profile.account_age_days(post_time).ln_1p(),
        flag(profile.geo_enabled),
        profile.username_length() as f64,
        profile.description_length as f64,
        (profile.following_count as f64).ln_1p(),
        (profile.status_count as f64).ln_1p(),
    ]
}

pub fn user_features(profile: &UserProfile, post_time: f64, scaler: &FeatureScaler) -> Vec<f64> {
    scaler.transform(&raw_user_features(profile, post_time))
}

/// `log1p` of seconds elapsed since the event started.
pub fn time_feature(post_time: f64, start: f64) -> Result<f64> {
    if post_time < start {
        return Err(NecError::Ordering {
            event: String::new(),
            detail: format!("post time {post_time} precedes event start {start}"),
        });
    }
    Ok((post_time - start).ln_1p())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub c_real: Vec<f64>,
    pub c_fake: Vec<f64>,
    pub u: Vec<f64>,
    pub dt: f64,
}

impl FeatureVector {
    /// `[c_real | c_fake | u | dt]`
    pub fn to_vector(&self) -> Vector {
        let mut data = Vec::with_capacity(self.c_real.len() * 2 + USER_DIMS + TIME_DIMS);
        data.extend_from_slice(&self.c_real);
        data.extend_from_slice(&self.c_fake);
        data.extend_from_slice(&self.u);
        data.push(self.dt);
        Vector::from(data)
    }
}

/// Offsets of each component in the concatenated input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub text_dim: usize,
}

impl FeatureLayout {
    pub fn input_dim(&self) -> usize {
        2 * self.text_dim + USER_DIMS + TIME_DIMS
    }

    pub fn c_real(&self) -> std::ops::Range<usize> {
        0..self.text_dim
    }

    pub fn c_fake(&self) -> std::ops::Range<usize> {
        self.text_dim..2 * self.text_dim
    }

    pub fn user(&self) -> std::ops::Range<usize> {
        2 * self.text_dim..2 * self.text_dim + USER_DIMS
    }

    pub fn time(&self) -> usize {
        2 * self.text_dim + USER_DIMS
    }
}

/// Fitted text embedder, user-feature scaler and layout, persisted with
/// the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub layout: FeatureLayout,
    pub embedder: HashedTfIdfEmbedder,
    pub user_scaler: FeatureScaler,
}

impl FeaturePipeline {
    /// Fits on the given (training) events only.
    pub fn fit(train: &[&EventStream], text_dim: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(NecError::EmptyInput("feature pipeline fit: events"));
        }
        let mut embedder = HashedTfIdfEmbedder::new(text_dim);
        embedder.fit(
            train
                .iter()
                .flat_map(|e| e.messages.iter().map(move |m| (m.text.as_str(), e.label))),
        );
        let rows: Vec<Vec<f64>> = train
            .iter()
            .flat_map(|e| e.messages.iter())
            .map(|m| raw_user_features(&m.user, m.post_time_epoch_s))
            .collect();
        Ok(Self {
            layout: FeatureLayout { text_dim },
            embedder,
            user_scaler: FeatureScaler::fit(&rows)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input_dim()
    }

    /// Features of one message in an event that started at `start`.
    pub fn message_features(&self, message: &RawMessage, start: f64) -> Result<FeatureVector> {
        let (c_real, c_fake) = embed_text(&self.embedder, &message.text)?;
        Ok(FeatureVector {
            c_real,
            c_fake,
            u: user_features(&message.user, message.post_time_epoch_s, &self.user_scaler),
            dt: time_feature(message.post_time_epoch_s, start)?,
        })
    }

    /// One feature vector per message, measured from the first message.
    pub fn build_sequence(&self, messages: &[RawMessage]) -> Result<Vec<FeatureVector>> {
        let Some(first) = messages.first() else {
            return Ok(Vec::new());
        };
        let start = first.post_time_epoch_s;
        let mut prev = start;
        messages
            .iter()
            .enumerate()
            .map(|(i, m)| {
                if m.post_time_epoch_s < prev {
                    return Err(NecError::Ordering {
                        event: String::new(),
                        detail: format!("message {} is earlier than message {}", i + 1, i),
                    });
                }
                prev = m.post_time_epoch_s;
                self.message_features(m, start)
            })
            .collect()
    }

    /// Model inputs for the first `tau` messages of an event.
    pub fn event_inputs(&self, event: &EventStream, tau: usize) -> Result<Vec<Vector>> {
        let seq = self
            .build_sequence(event.truncated(tau))
            .map_err(|e| match e {
                NecError::Ordering { detail, .. } => NecError::Ordering {
                    event: event.event_id.clone(),
                    detail,
                },
                other => other,
            })?;
        Ok(seq.iter().map(FeatureVector::to_vector).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fitted(corpus: &[(&str, Label)], dim: usize) -> HashedTfIdfEmbedder {
        let mut e = HashedTfIdfEmbedder::new(dim);
        e.fit(corpus.iter().copied());
        e
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        let toks: Vec<String> = tokenize("Breaking: FAKE-news, 2day!!").collect();
        assert_eq!(toks, vec!["breaking", "fake", "news", "2day"]);
    }

    #[test]
    fn unfitted_embedder_errors() {
        let e = HashedTfIdfEmbedder::new(8);
        assert!(matches!(embed_text(&e, "hi"), Err(NecError::State(_))));
    }

    #[test]
    fn empty_text_embeds_to_zero() {
        let e = fitted(&[("alpha beta", Label::Real), ("gamma", Label::Fake)], 50);
        let (r, f) = embed_text(&e, "").unwrap();
        assert_eq!(r, vec![0.0; 50]);
        assert_eq!(f, vec![0.0; 50]);
    }

    #[test]
    fn identical_texts_embed_identically() {
        let e = fitted(&[("alpha beta", Label::Real), ("gamma beta", Label::Fake)], 50);
        assert_eq!(embed_text(&e, "beta alpha").unwrap(), embed_text(&e, "beta alpha").unwrap());
    }

    #[test]
    fn fake_only_token_has_larger_fake_norm() {
        assert_ne!(bucket("hoax", 50), bucket("report", 50));
        let e = fitted(&[("hoax", Label::Fake), ("report", Label::Real)], 50);
        let (r, f) = embed_text(&e, "hoax").unwrap();
        assert!(norm(&f) > norm(&r));
        assert_eq!(norm(&r), 0.0);
        assert!((norm(&f) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn verified_flag_changes_only_its_dimension() {
        let a = UserProfile {
            followers_count: 10,
            username: "bob".into(),
            ..Default::default()
        };
        let b = UserProfile {
            verified: true,
            ..a.clone()
        };
        let ra = raw_user_features(&a, 1e6);
        let rb = raw_user_features(&b, 1e6);
        for i in 0..USER_DIMS {
            if i == 1 {
                assert_eq!((ra[i], rb[i]), (0.0, 1.0));
            } else {
                assert_eq!(ra[i], rb[i]);
            }
        }
    }

    #[test]
    fn scaler_centers_training_rows() {
        let rows: Vec<Vec<f64>> = (0..25)
            .map(|i| vec![i as f64, (i * i) as f64 * 0.3, 7.0])
            .collect();
        let s = FeatureScaler::fit(&rows).unwrap();
        assert_eq!(s.std[2], 1.0);
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| s.transform(r)).collect();
        for d in 0..3 {
            let mean = scaled.iter().map(|r| r[d]).sum::<f64>() / 25.0;
            let var = scaled.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / 25.0;
            assert!(mean.abs() < 1e-9);
            if d < 2 {
                assert!((var.sqrt() - 1.0).abs() < 1e-9);
            }
        }
        let at_mean = s.transform(&s.mean);
        assert!(at_mean.iter().all(|x| x.abs() < 1e-12));
        assert!(FeatureScaler::fit(&[]).is_err());
    }

    #[test]
    fn time_feature_examples() {
        assert_eq!(time_feature(100.0, 100.0).unwrap(), 0.0);
        assert!((time_feature(std::f64::consts::E - 1.0, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(time_feature(5.0, 3.0).unwrap() <= time_feature(9.0, 3.0).unwrap());
        assert!(time_feature(2.0, 3.0).is_err());
    }

    #[test]
    fn layout_offsets() {
        let l = FeatureLayout { text_dim: 50 };
        assert_eq!(l.input_dim(), 109);
        assert_eq!(l.c_fake(), 50..100);
        assert_eq!(l.user(), 100..108);
        assert_eq!(l.time(), 108);
    }
}
