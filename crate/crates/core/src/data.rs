//! Event corpora: the line-delimited file format, train/validation/test
//! splitting, and a synthetic stream generator.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{NecError, Result};
use crate::rng::SeedStream;

/// Ground truth of an event. Serialized as `0` (real) or `1` (fake).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Real),
            1 => Some(Label::Fake),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Real => Label::Fake,
            Label::Fake => Label::Real,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Label::from_index(v as usize).ok_or_else(|| format!("label must be 0 or 1, got {v}"))
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.index() as u8
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Profile of the account that posted a message, as it appears in the
/// corpus file. Missing fields default to zero / false / empty.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct UserProfile {
    pub followers_count: u64,
    pub verified: bool,
    pub joined_epoch_s: f64,
    pub geo_enabled: bool,
    pub username: String,
    pub description_length: u64,
    pub following_count: u64,
    pub status_count: u64,
}

impl UserProfile {
    /// Days between joining and `post_time`, floored at zero.
    pub fn account_age_days(&self, post_time: f64) -> f64 {
        ((post_time - self.joined_epoch_s) / 86_400.0).max(0.0)
    }

    pub fn username_length(&self) -> usize {
        self.username.chars().count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMessage {
    pub text: String,
    pub post_time_epoch_s: f64,
    #[serde(default)]
    pub user: UserProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStream {
    pub event_id: String,
    pub label: Label,
    pub messages: Vec<RawMessage>,
}

impl EventStream {
    pub fn validate(&self) -> Result<()> {
        if self.messages.is_empty() {
            return Err(NecError::Ordering {
                event: self.event_id.clone(),
                detail: "event has no messages".into(),
            });
        }
        let mut prev = f64::NEG_INFINITY;
        for (i, m) in self.messages.iter().enumerate() {
            let t = m.post_time_epoch_s;
            if !t.is_finite() || t < 0.0 {
                return Err(NecError::Ordering {
                    event: self.event_id.clone(),
                    detail: format!("message {} has invalid post time {t}", i + 1),
                });
            }
            if t < prev {
                return Err(NecError::Ordering {
                    event: self.event_id.clone(),
                    detail: format!("message {} posted at {t} before previous {prev}", i + 1),
                });
            }
            prev = t;
        }
        Ok(())
    }

    /// The first `min(len, tau)` messages.
    pub fn truncated(&self, tau: usize) -> &[RawMessage] {
        &self.messages[..self.messages.len().min(tau)]
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }
}

/// Parses the one-event-per-line corpus format. Blank lines are skipped.
/// Events are returned sorted by id.
pub fn read_events<R: BufRead>(reader: R) -> Result<Vec<EventStream>> {
    let mut events = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: EventStream = serde_json::from_str(&line).map_err(|e| NecError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        event.validate()?;
        if !seen.insert(event.event_id.clone()) {
            return Err(NecError::Parse {
                line: i + 1,
                message: format!("duplicate event id {}", event.event_id),
            });
        }
        events.push(event);
    }
    events.sort_by(|a, b| a.event_id.cmp(&b.event_id));
    Ok(events)
}

pub fn load_events(path: impl AsRef<Path>) -> Result<Vec<EventStream>> {
    read_events(BufReader::new(File::open(path)?))
}

pub fn write_events<W: Write>(mut writer: W, events: &[EventStream]) -> Result<()> {
    for event in events {
        serde_json::to_writer(&mut writer, event)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_events(path: impl AsRef<Path>, events: &[EventStream]) -> Result<()> {
    write_events(BufWriter::new(File::create(path)?), events)
}

/// One row of the public event index used by the Twitter/Weibo rumor
/// datasets: `eid:<id> label:<0|1> <message id> <message id> ...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelIndexEntry {
    pub event_id: String,
    pub label: Label,
    pub message_ids: Vec<String>,
}

/// Reads an event index file. Message content is not included in such
/// files and has to be fetched separately before building a corpus.
pub fn read_label_index<R: BufRead>(reader: R) -> Result<Vec<LabelIndexEntry>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(first) = fields.next() else { continue };
        let parse_err = |message: String| NecError::Parse { line: i + 1, message };
        let event_id = first
            .strip_prefix("eid:")
            .ok_or_else(|| parse_err(format!("expected eid:<id>, got {first:?}")))?
            .to_string();
        let label_field = fields
            .next()
            .ok_or_else(|| parse_err("missing label field".into()))?;
        let label = label_field
            .strip_prefix("label:")
            .and_then(|v| v.parse::<u8>().ok())
            .and_then(|v| Label::try_from(v).ok())
            .ok_or_else(|| parse_err(format!("expected label:<0|1>, got {label_field:?}")))?;
        out.push(LabelIndexEntry {
            event_id,
            label,
            message_ids: fields.map(str::to_string).collect(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn select<'a>(events: &'a [EventStream], ids: &[String]) -> Vec<&'a EventStream> {
        let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
        events
            .iter()
            .filter(|e| wanted.contains(e.event_id.as_str()))
            .collect()
    }
}

pub const MIN_SPLIT_EVENTS: usize = 10;

/// Split sizes: 10% test, the rest 8:1 train:validation.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let test = ((n as f64) * 0.1).round() as usize;
    let validation = (((n - test) as f64) / 9.0).round() as usize;
    (n - test - validation, validation, test)
}

/// Stratified, seeded split. Each part's fake count is the nearest integer
/// to its share of the overall fake count.
pub fn split(events: &[EventStream], seed: u64) -> Result<DatasetSplit> {
    let n = events.len();
    if n < MIN_SPLIT_EVENTS {
        return Err(NecError::TooFew {
            needed: MIN_SPLIT_EVENTS,
            got: n,
        });
    }
    let mut ids: Vec<&EventStream> = events.iter().collect();
    ids.sort_by(|a, b| a.event_id.cmp(&b.event_id));
    let mut fakes: Vec<String> = Vec::new();
    let mut reals: Vec<String> = Vec::new();
    for e in ids {
        match e.label {
            Label::Fake => fakes.push(e.event_id.clone()),
            Label::Real => reals.push(e.event_id.clone()),
        }
    }
    let seeds = SeedStream::new(seed);
    fakes.shuffle(&mut seeds.derive("split/fake"));
    reals.shuffle(&mut seeds.derive("split/real"));

    let (_, n_val, n_test) = split_sizes(n);
    let fake_frac = fakes.len() as f64 / n as f64;
    let fake_test = ((n_test as f64) * fake_frac).round() as usize;
    let fake_val = ((n_val as f64) * fake_frac).round() as usize;
    let real_test = n_test - fake_test;
    let real_val = n_val - fake_val;

    let mut test: Vec<String> = fakes[..fake_test].to_vec();
    test.extend_from_slice(&reals[..real_test]);
    let mut validation: Vec<String> = fakes[fake_test..fake_test + fake_val].to_vec();
    validation.extend_from_slice(&reals[real_test..real_test + real_val]);
    let mut train: Vec<String> = fakes[fake_test + fake_val..].to_vec();
    train.extend_from_slice(&reals[real_test + real_val..]);
    let mut order = seeds.derive("split/order");
    for part in [&mut train, &mut validation, &mut test] {
        part.shuffle(&mut order);
    }
    Ok(DatasetSplit {
        train,
        validation,
        test,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_events: usize,
    pub min_length: usize,
    pub max_length: usize,
    /// 0: both classes share one vocabulary and profile distribution;
    /// 1: disjoint vocabularies.
    pub class_separation: f64,
    /// Fraction of each stream before class-specific text appears.
    pub signal_onset: f64,
    pub class_vocab_size: usize,
    pub neutral_vocab_size: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Real events' mean gap between messages, in seconds.
    pub mean_gap_s: f64,
    /// Fake events' mean gap is `mean_gap_s / fake_speedup`.
    pub fake_speedup: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_events: 1000,
            min_length: 20,
            max_length: 80,
            class_separation: 0.8,
            signal_onset: 0.2,
            class_vocab_size: 200,
            neutral_vocab_size: 300,
            min_tokens: 5,
            max_tokens: 12,
            mean_gap_s: 600.0,
            fake_speedup: 2.0,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NecError::Domain(format!("synthetic config: {m}")));
        if self.min_length < 2 || self.max_length < self.min_length {
            return bad("need 2 <= min_length <= max_length");
        }
        if !(0.0..=1.0).contains(&self.class_separation) {
            return bad("class_separation must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.signal_onset) {
            return bad("signal_onset must lie in [0, 1]");
        }
        if self.class_vocab_size == 0 || self.neutral_vocab_size == 0 {
            return bad("vocabulary sizes must be positive");
        }
        if self.min_tokens == 0 || self.max_tokens < self.min_tokens {
            return bad("need 1 <= min_tokens <= max_tokens");
        }
        if !(self.fake_speedup >= 1.0) || !(self.mean_gap_s > 0.0) {
            return bad("need fake_speedup >= 1 and mean_gap_s > 0");
        }
        Ok(())
    }

    /// Index of the first class-vocabulary token for `label`. The two
    /// vocabularies overlap in `class_vocab_size - offset` tokens.
    fn vocab_offset(&self, label: Label) -> usize {
        match label {
            Label::Real => 0,
            Label::Fake => (self.class_separation * self.class_vocab_size as f64).round() as usize,
        }
    }
}

/// Generates a label-balanced synthetic corpus, sorted by event id.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Vec<EventStream>> {
    config.validate()?;
    let seeds = SeedStream::new(config.seed);
    let mut labels: Vec<Label> = (0..config.n_events)
        .map(|i| if i < config.n_events / 2 { Label::Fake } else { Label::Real })
        .collect();
    labels.shuffle(&mut seeds.derive("synthetic/labels"));

    let width = config.n_events.max(1).to_string().len().max(5);
    let events = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let mut rng = seeds.derive(&format!("synthetic/event/{i}"));
            EventStream {
                event_id: format!("syn-{i:0width$}"),
                label,
                messages: generate_messages(config, label, &mut rng),
            }
        })
        .collect();
    Ok(events)
}

fn generate_messages<R: Rng>(config: &SyntheticConfig, label: Label, rng: &mut R) -> Vec<RawMessage> {
    let len = rng.random_range(config.min_length..=config.max_length);
    let onset = (config.signal_onset * len as f64).floor() as usize;
    let mean_gap = match label {
        Label::Real => config.mean_gap_s,
        Label::Fake => config.mean_gap_s / config.fake_speedup,
    };
    let gap = Exp::new(1.0 / mean_gap).expect("positive rate");
    let shift = match label {
        Label::Real => 0.0,
        Label::Fake => config.class_separation,
    };
    let offset = config.vocab_offset(label);

    let mut time = 1.5e9 + rng.random_range(0.0..1e7_f64).floor();
    (0..len)
        .map(|k| {
            if k > 0 {
                time += gap.sample(rng);
            }
            let n_tokens = rng.random_range(config.min_tokens..=config.max_tokens);
            let tokens: Vec<String> = (0..n_tokens)
                .map(|_| {
                    if k >= onset {
                        format!("w{}", offset + rng.random_range(0..config.class_vocab_size))
                    } else {
                        format!("n{}", rng.random_range(0..config.neutral_vocab_size))
                    }
                })
                .collect();
            RawMessage {
                text: tokens.join(" "),
                post_time_epoch_s: time,
                user: synthetic_user(shift, time, rng),
            }
        })
        .collect()
}

/// `shift` is zero for real events and the class separation for fake ones.
fn synthetic_user<R: Rng>(shift: f64, post_time: f64, rng: &mut R) -> UserProfile {
    let log_normal = |mu: f64, sigma: f64, rng: &mut R| -> u64 {
        Normal::new(mu, sigma).expect("valid normal").sample(rng).exp().round() as u64
    };
    let followers_count = log_normal(5.5 - 1.2 * shift, 1.5, rng);
    let verified = rng.random_bool(0.25 - 0.2 * shift);
    let age_days = Normal::new(6.0 - 1.0 * shift, 1.0)
        .expect("valid normal")
        .sample(rng)
        .exp();
    let geo_enabled = rng.random_bool(0.3 + 0.3 * shift);
    let name_len = rng.random_range(5..=14) + (3.0 * shift).round() as usize;
    let username: String = (0..name_len)
        .map(|_| char::from(b'a' + rng.random_range(0..26u8)))
        .collect();
    let description_length = (rng.random_range(0.0..160.0) * (1.0 - 0.5 * shift)).round() as u64;
    let following_count = log_normal(5.0 + 0.5 * shift, 1.2, rng);
    let status_count = log_normal(7.0 - 0.5 * shift, 1.5, rng);
    UserProfile {
        followers_count,
        verified,
        joined_epoch_s: (post_time - age_days * 86_400.0).floor(),
        geo_enabled,
        username,
        description_length,
        following_count,
        status_count,
    }
}
