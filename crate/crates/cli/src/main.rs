//! `nec` — generate corpora, train, evaluate and run the early classifier.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nec_core::data::{generate_synthetic, load_events, save_events, split};
use nec_core::evaluation::{
    accuracy_earliness_csv, alpha_sweep, earliness_violations, evaluate, fixed_prefix_baseline,
    sweep_csv,
};
use nec_core::harness::{train, Checkpoint, TrainConfig};
use nec_core::objective::Horizon;
use nec_core::streaming::{classify_stream, open_session, StoppingConfig};
use nec_core::{DatasetSplit, EventStream, RawMessage, SyntheticConfig, WeightingMode};

#[derive(Parser)]
#[command(name = "nec", version, about = "Early classification of streaming news events")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus.
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write report files.
    Evaluate(EvaluateArgs),
    /// Accuracy and earliness over a list of thresholds.
    SweepAlpha(SweepArgs),
    /// Classify events from a corpus file, or one stream from stdin.
    Classify(ClassifyArgs),
    /// Print checkpoint metadata.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    events: usize,
    #[arg(long, default_value_t = 20)]
    min_length: usize,
    #[arg(long, default_value_t = 80)]
    max_length: usize,
    /// Class separation in [0, 1].
    #[arg(long, default_value_t = 0.8)]
    separation: f64,
    /// Fraction of each event before class signal appears.
    #[arg(long, default_value_t = 0.2)]
    onset: f64,
    /// How much faster fake events spread.
    #[arg(long, default_value_t = 2.0)]
    speedup: f64,
    #[arg(long, env = "NEC_SEED", default_value_t = 7)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Weighting {
    Earliness,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum HorizonArg {
    Global,
    PerEvent,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 100)]
    tau: usize,
    #[arg(long, default_value_t = 0.7)]
    alpha: f64,
    #[arg(long, default_value_t = 32)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 50)]
    text_dim: usize,
    #[arg(long, value_enum, default_value_t = Weighting::Earliness)]
    weighting: Weighting,
    #[arg(long, value_enum, default_value_t = HorizonArg::Global)]
    horizon: HorizonArg,
    #[arg(long, default_value_t = 25)]
    patience: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 5.0)]
    clip_norm: f64,
    /// Disable gradient clipping.
    #[arg(long)]
    no_clip: bool,
    #[arg(long, env = "NEC_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Part {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Which part of the checkpoint's split to evaluate.
    #[arg(long, value_enum, default_value_t = Part::Test)]
    split: Part,
    /// Override the checkpoint's threshold.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.6,0.7,0.8,0.9")]
    alphas: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Part::Test)]
    split: Part,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Read one message per line from stdin and print a decision per line.
    #[arg(long, conflicts_with_all = ["input", "out"])]
    stream: bool,
    /// Corpus file to classify in batch.
    #[arg(long, required_unless_present = "stream")]
    input: Option<PathBuf>,
    /// Output file for batch mode (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::SweepAlpha(a) => sweep_cmd(a),
        Command::Classify(a) if a.stream => classify_stdin(&a.checkpoint),
        Command::Classify(a) => classify_batch(a),
        Command::Inspect(a) => inspect(&a.checkpoint),
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let config = SyntheticConfig {
        n_events: a.events,
        min_length: a.min_length,
        max_length: a.max_length,
        class_separation: a.separation,
        signal_onset: a.onset,
        fake_speedup: a.speedup,
        seed: a.seed,
        ..Default::default()
    };
    let events = generate_synthetic(&config)?;
    save_events(&a.out, &events).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("wrote {} events to {}", events.len(), a.out.display());
    Ok(())
}

fn load_corpus(path: &Path) -> Result<Vec<EventStream>> {
    load_events(path).with_context(|| format!("reading corpus {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let parts = split(&corpus, a.seed)?;
    let config = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        tau: a.tau,
        alpha: a.alpha,
        hidden_dim: a.hidden_dim,
        text_dim: a.text_dim,
        seed: a.seed,
        weighting: match a.weighting {
            Weighting::Earliness => WeightingMode::EarlinessWeighted,
            Weighting::Uniform => WeightingMode::Uniform,
        },
        horizon: match a.horizon {
            HorizonArg::Global => Horizon::Global,
            HorizonArg::PerEvent => Horizon::PerEvent,
        },
        patience: a.patience,
        batch_size: a.batch_size,
        clip_norm: (!a.no_clip).then_some(a.clip_norm),
    };
    let ckpt = train(&corpus, &parts, &config)?;
    ckpt.save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    let h = &ckpt.history;
    eprintln!(
        "trained {} epochs (best {}), checkpoint at {}",
        h.epochs.len(),
        h.best_epoch,
        a.out.display()
    );
    Ok(())
}

fn select<'a>(corpus: &'a [EventStream], ckpt: &Checkpoint, part: Part) -> Vec<&'a EventStream> {
    let ids = match part {
        Part::Train => &ckpt.split.train,
        Part::Validation => &ckpt.split.validation,
        Part::Test => &ckpt.split.test,
        Part::All => return corpus.iter().collect(),
    };
    DatasetSplit::select(corpus, ids)
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let corpus = load_corpus(&a.corpus)?;
    let events = select(&corpus, &ckpt, a.split);
    if events.is_empty() {
        bail!("no events of the selected split are present in the corpus");
    }
    let mut stopping = ckpt.stopping();
    if let Some(alpha) = a.alpha {
        stopping = StoppingConfig::new(alpha, stopping.tau)?;
    }
    let sequences = ckpt.prepare(events)?;
    let report = evaluate(&ckpt.params, &stopping, &sequences)?;
    let prefix = (report.mean_stop_time.round() as usize).max(1);
    let at_mean = fixed_prefix_baseline(&ckpt.params, stopping.tau, &sequences, prefix)?;
    let full = fixed_prefix_baseline(&ckpt.params, stopping.tau, &sequences, stopping.tau)?;

    fs::create_dir_all(&a.out_dir)?;
    let write = |name: &str, body: String| -> Result<()> {
        let path = a.out_dir.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
    };
    write("report.json", serde_json::to_string_pretty(&report)? + "\n")?;
    write("report.txt", report.to_table())?;
    write(
        "accuracy_earliness.csv",
        accuracy_earliness_csv(&report, &at_mean, &full),
    )?;
    write("history.csv", ckpt.history.to_csv())?;
    print!("{}", report.to_table());
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let corpus = load_corpus(&a.corpus)?;
    let sequences = ckpt.prepare(select(&corpus, &ckpt, a.split))?;
    let rows = alpha_sweep(&ckpt.params, &ckpt.stopping(), &sequences, &a.alphas)?;
    fs::write(&a.out, sweep_csv(&rows)).with_context(|| format!("writing {}", a.out.display()))?;
    for i in earliness_violations(&rows) {
        eprintln!(
            "warning: earliness decreased between alpha {} and {}",
            rows[i].alpha,
            rows[i + 1].alpha
        );
    }
    Ok(())
}

fn classify_batch(a: ClassifyArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let input = a.input.as_deref().expect("clap requires --input without --stream");
    let corpus = load_corpus(input)?;
    let stopping = ckpt.stopping();
    let mut out = String::new();
    for event in &corpus {
        let xs = ckpt.pipeline.event_inputs(event, stopping.tau)?;
        let o = classify_stream(&ckpt.params, &stopping, &xs)
            .with_context(|| format!("event {}", event.event_id))?;
        let line = serde_json::json!({
            "event_id": event.event_id,
            "label": o.label,
            "stop_time": o.stop_time,
            "probability": o.probability,
            "forced": o.forced,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    match &a.out {
        Some(path) => fs::write(path, out).with_context(|| format!("writing {}", path.display()))?,
        None => io::stdout().write_all(out.as_bytes())?,
    }
    Ok(())
}

/// One message per stdin line; a decision per line on stdout. Stops at the
/// first detection; at end of input without one, emits a forced decision.
fn classify_stdin(checkpoint: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let mut session = open_session(&ckpt.params, ckpt.stopping());
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut start = None;
    for (n, line) in io::stdin().lock().lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let message: RawMessage = serde_json::from_str(&line)
            .with_context(|| format!("line {}: invalid message", n + 1))?;
        let start = *start.get_or_insert(message.post_time_epoch_s);
        let x = ckpt
            .pipeline
            .message_features(&message, start)
            .with_context(|| format!("line {}", n + 1))?
            .to_vector();
        let decision = session.feed(&x)?;
        writeln!(out, "{}", serde_json::to_string(&decision)?)?;
        out.flush()?;
        if decision.is_detect() {
            return Ok(());
        }
    }
    if session.t() == 0 {
        bail!("no messages on standard input");
    }
    let decision = session.finish()?;
    writeln!(out, "{}", serde_json::to_string(&decision)?)?;
    Ok(())
}

fn inspect(path: &Path) -> Result<()> {
    let ckpt = load_checkpoint(path)?;
    let c = &ckpt.config;
    let h = &ckpt.history;
    println!("format_version: {}", ckpt.format_version);
    println!("input_dim: {}", ckpt.params.input_dim);
    println!("d_h: {}", c.hidden_dim);
    println!("d_text: {}", c.text_dim);
    println!("tau: {}", c.tau);
    println!("alpha: {}", c.alpha);
    println!("learning_rate: {}", c.learning_rate);
    println!("weighting: {}", serde_json::to_string(&c.weighting)?.trim_matches('"'));
    println!("horizon: {}", serde_json::to_string(&c.horizon)?.trim_matches('"'));
    println!("seed: {}", c.seed);
    println!("parameters: {}", ckpt.params.num_parameters());
    println!(
        "split: train={} validation={} test={}",
        ckpt.split.train.len(),
        ckpt.split.validation.len(),
        ckpt.split.test.len()
    );
    println!("epochs_run: {}", h.epochs.len());
    println!("best_epoch: {}", h.best_epoch);
    println!("stopped_early: {}", h.stopped_early);
    Ok(())
}
