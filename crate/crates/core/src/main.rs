//! Command-line front end for the activity-recognition pipeline.
//!
//! Every command resolves its settings the same way: built-in defaults,
//! then the `HARCNN_OUTPUT_DIR` environment variable (output root only),
//! then `--config FILE`, then explicit flags. All result files are pure
//! functions of the inputs and the seed; the only nondeterministic output
//! is the `run_info.txt` sidecar, which records wall-clock metadata and is
//! never part of any comparison.
//!
//! Failures map onto distinct exit codes by category: configuration 2,
//! input data 3, numeric 4, I/O 5 (the argument parser also exits 2).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use harcnn::config::Settings;
use harcnn::data::activities::ALL_ACTIVITIES;
use harcnn::data::recording::load_recordings;
use harcnn::data::{ActivityGroup, Dataset, SensorConfig};
use harcnn::error::ErrorCategory;
use harcnn::eval::{self, CrossvalConfig};
use harcnn::gradcheck::{self, Inject};
use harcnn::nn::{checkpoint, NetworkSpec};
use harcnn::synth::{self, CohortSpec};
use harcnn::train::{self, TrainConfig};
use harcnn::{Error, Result};

#[derive(Parser)]
#[command(
    name = "harcnn",
    version,
    about = "IMU activity recognition: synthetic cohorts, CNN training, and \
             subject-partitioned cross-validation",
    propagate_version = true
)]
struct Cli {
    /// Settings file of `key = value` lines; explicit flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic IMU cohort and write it as CSV recordings.
    Synth(SynthArgs),
    /// Train one network on all recordings of a group and save a checkpoint.
    Train(TrainArgs),
    /// Subject-partitioned cross-validation of one group × sensor setup.
    Crossval(CrossvalArgs),
    /// Score a saved checkpoint against a recorded dataset.
    Eval(EvalArgs),
    /// Verify every layer's analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
    /// Collect pooled cross-validation scores into the F-score grid.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Directory to write the recordings into (default: <output_dir>/cohort).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Number of subjects in the cohort.
    #[arg(long)]
    subjects: Option<u32>,
    /// Seconds of signal per activity and subject.
    #[arg(long, value_name = "SECONDS")]
    seconds: Option<f64>,
    /// Root seed; identical seeds reproduce the cohort byte for byte.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (containing manifest.csv) or a manifest file.
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Activity group: walk, walk_balance, stand_balance, or strength.
    #[arg(long)]
    group: String,
    /// Sensor configuration, e.g. LS or RSLSLM.
    #[arg(long, value_name = "CONFIG")]
    sensors: String,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_name = "N")]
    batch_size: Option<usize>,
    #[arg(long, value_name = "RATE")]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for checkpoint.bin and trace.csv (default: <output_dir>/train).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CrossvalArgs {
    /// Dataset directory (containing manifest.csv) or a manifest file.
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Activity group: walk, walk_balance, stand_balance, or strength.
    #[arg(long)]
    group: String,
    /// Sensor configuration, e.g. LS or RSLSLM.
    #[arg(long, value_name = "CONFIG")]
    sensors: String,
    /// Number of folds; subjects are split across them without overlap.
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_name = "N")]
    batch_size: Option<usize>,
    #[arg(long, value_name = "RATE")]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for the per-fold and pooled score CSVs
    /// (default: <output_dir>/crossval).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset directory (containing manifest.csv) or a manifest file.
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Activity group the checkpoint was trained for.
    #[arg(long)]
    group: String,
    /// Sensor configuration the checkpoint was trained for.
    #[arg(long, value_name = "CONFIG")]
    sensors: String,
    #[arg(long, value_name = "N")]
    batch_size: Option<usize>,
    /// Directory for the score CSV (default: <output_dir>/eval).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Corrupt one gradient on purpose to prove the check catches it.
    #[arg(long, hide = true)]
    inject_sign_flip: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding `<group>_<config>_pooled.csv` files from `crossval`.
    #[arg(long, value_name = "DIR")]
    results: PathBuf,
    /// Where to write fscore_matrix.csv and .svg (default: the results dir).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let mut settings = Settings::from_env();
    if let Some(path) = &cli.config {
        settings.apply_file(path)?;
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(settings, a),
        Command::Train(a) => cmd_train(settings, a),
        Command::Crossval(a) => cmd_crossval(settings, a),
        Command::Eval(a) => cmd_eval(settings, a),
        Command::Gradcheck(a) => cmd_gradcheck(settings, a),
        Command::Report(a) => cmd_report(a),
    }
}

/// `--data` accepts either the directory written by `synth` or a manifest
/// file directly.
fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.csv")
    } else {
        data.to_path_buf()
    }
}

fn parse_pair(group: &str, sensors: &str) -> Result<(ActivityGroup, &'static SensorConfig)> {
    let group = ActivityGroup::parse(group)?;
    let config = SensorConfig::lookup(sensors)?;
    // Reject impossible pairings before any data is touched.
    group.accepts(config)?;
    Ok((group, config))
}

/// Wall-clock metadata sidecar. Deliberately the only output that differs
/// between identical runs, so comparisons skip it by name.
fn write_run_info(dir: &Path, command: &str, started: SystemTime, t0: Instant) -> Result<()> {
    let unix = started
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let path = dir.join("run_info.txt");
    let text = format!(
        "command = {command}\nstarted_unix = {unix}\nwall_seconds = {:.1}\n",
        t0.elapsed().as_secs_f64()
    );
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_synth(mut s: Settings, a: &SynthArgs) -> Result<()> {
    if let Some(v) = a.subjects {
        s.subjects = v;
    }
    if let Some(v) = a.seconds {
        s.seconds_per_activity = v;
    }
    if let Some(v) = a.seed {
        s.seed = v;
    }
    let out = a.out.clone().unwrap_or_else(|| s.output_dir.join("cohort"));
    let started = SystemTime::now();
    let t0 = Instant::now();

    let spec = CohortSpec {
        subjects: s.subjects,
        seconds_per_activity: s.seconds_per_activity,
        seed: s.seed,
    };
    let recordings = synth::generate_cohort(&spec, &ALL_ACTIVITIES)?;
    create_dir(&out)?;
    let manifest = synth::write_cohort(&out, &recordings)?;
    s.write_effective(&out)?;
    write_run_info(&out, "synth", started, t0)?;
    println!(
        "wrote {} recordings ({} subjects × {} activities, {:.0} s each) to {}",
        recordings.len(),
        s.subjects,
        ALL_ACTIVITIES.len(),
        s.seconds_per_activity,
        out.display()
    );
    println!("manifest: {}", manifest.display());
    Ok(())
}

fn train_config(s: &Settings) -> TrainConfig {
    let mut tc = TrainConfig::new(s.seed);
    tc.batch_size = s.batch_size;
    tc.epochs = s.epochs;
    tc.learning_rate = s.learning_rate;
    tc
}

fn cmd_train(mut s: Settings, a: &TrainArgs) -> Result<()> {
    if let Some(v) = a.epochs {
        s.epochs = v;
    }
    if let Some(v) = a.batch_size {
        s.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        s.learning_rate = v;
    }
    if let Some(v) = a.seed {
        s.seed = v;
    }
    let (group, config) = parse_pair(&a.group, &a.sensors)?;
    let out = a.out.clone().unwrap_or_else(|| s.output_dir.join("train"));
    let started = SystemTime::now();
    let t0 = Instant::now();

    let recordings = load_recordings(&manifest_path(&a.data))?;
    let dataset = Dataset::build(&recordings, group, config)?;
    drop(recordings);
    println!(
        "training {}/{}: {} windows from {} subjects",
        group.name(),
        config.name,
        dataset.len(),
        dataset.subjects().len()
    );

    let spec = NetworkSpec::standard(config.arity(), group.m());
    let tc = train_config(&s);
    let (state, stats) = train::train(&spec, &dataset, &tc, None)?;

    create_dir(&out)?;
    checkpoint::save(&out.join("checkpoint.bin"), &spec, &state)?;
    train::write_trace(&out.join("trace.csv"), &stats)?;
    s.write_effective(&out)?;
    write_run_info(&out, "train", started, t0)?;

    if let Some(last) = stats.last() {
        println!(
            "epoch {}: loss {:.4}, accuracy {:.4}",
            last.epoch, last.train_loss, last.train_acc
        );
    }
    println!("checkpoint: {}", out.join("checkpoint.bin").display());
    Ok(())
}

fn cmd_crossval(mut s: Settings, a: &CrossvalArgs) -> Result<()> {
    if let Some(v) = a.folds {
        s.folds = v;
    }
    if let Some(v) = a.epochs {
        s.epochs = v;
    }
    if let Some(v) = a.batch_size {
        s.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        s.learning_rate = v;
    }
    if let Some(v) = a.seed {
        s.seed = v;
    }
    let (group, config) = parse_pair(&a.group, &a.sensors)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| s.output_dir.join("crossval"));
    let started = SystemTime::now();
    let t0 = Instant::now();

    let recordings = load_recordings(&manifest_path(&a.data))?;
    let mut cv = CrossvalConfig::new(s.seed);
    cv.folds = s.folds;
    cv.train = train_config(&s);
    println!(
        "cross-validating {}/{}: {} folds, {} epochs, batch {}, seed {}",
        group.name(),
        config.name,
        cv.folds,
        cv.train.epochs,
        cv.train.batch_size,
        cv.train.seed
    );

    let outcome = eval::crossval::run(&recordings, group, config, &cv)?;
    drop(recordings);

    for f in &outcome.folds {
        println!(
            "fold {}: held out {:?}, accuracy {:.4}, macro F {:.4}",
            f.fold,
            f.test_subjects,
            f.report.confusion.accuracy(),
            f.report.confusion.macro_f()
        );
    }
    println!(
        "pooled: accuracy {:.4}, macro F {:.4} over {} windows",
        outcome.pooled.accuracy(),
        outcome.pooled.macro_f(),
        outcome.pooled.total()
    );

    let written = eval::write_outcome_csvs(&out, &outcome)?;
    s.write_effective(&out)?;
    write_run_info(&out, "crossval", started, t0)?;
    println!("wrote {} files to {}", written.len(), out.display());
    Ok(())
}

fn cmd_eval(mut s: Settings, a: &EvalArgs) -> Result<()> {
    if let Some(v) = a.batch_size {
        s.batch_size = v;
    }
    let (group, config) = parse_pair(&a.group, &a.sensors)?;
    let out = a.out.clone().unwrap_or_else(|| s.output_dir.join("eval"));
    let started = SystemTime::now();
    let t0 = Instant::now();

    let (spec, state) = checkpoint::load(&a.checkpoint)?;
    if spec.channels != config.arity() || spec.output_units != group.m() {
        return Err(Error::Checkpoint {
            path: a.checkpoint.clone(),
            reason: format!(
                "trained for {} channels and {} classes, but {}/{} needs {} and {}",
                spec.channels,
                spec.output_units,
                group.name(),
                config.name,
                config.arity(),
                group.m()
            ),
        });
    }

    let recordings = load_recordings(&manifest_path(&a.data))?;
    let dataset = Dataset::build(&recordings, group, config)?;
    drop(recordings);
    let report = eval::evaluate(&spec, &state, &dataset, s.batch_size)?;

    println!(
        "{}/{}: {} windows, accuracy {:.4}, macro F {:.4}, loss {:.4}",
        group.name(),
        config.name,
        dataset.len(),
        report.confusion.accuracy(),
        report.confusion.macro_f(),
        report.loss
    );
    for (k, label) in group.labels().iter().enumerate() {
        let sc = report.confusion.class_scores(k);
        println!(
            "  {:<10} precision {:.4}  recall {:.4}  F {:.4}",
            label.code(),
            sc.precision,
            sc.recall,
            sc.f_score
        );
    }

    create_dir(&out)?;
    let path = out.join(format!("{}_{}_eval.csv", group.name(), config.name));
    eval::report::write_score_csv(&path, group, &report.confusion, report.loss)?;
    write_run_info(&out, "eval", started, t0)?;
    println!("scores: {}", path.display());
    Ok(())
}

fn cmd_gradcheck(s: Settings, a: &GradcheckArgs) -> Result<()> {
    let seed = a.seed.unwrap_or(s.seed);
    let inject = if a.inject_sign_flip {
        Inject::SignFlip
    } else {
        Inject::None
    };
    let checks = gradcheck::check_all(seed, inject)?;

    println!(
        "{:<22} {:>8} {:>13} {:>10}  status",
        "layer", "checked", "max rel err", "tolerance"
    );
    let mut failed = 0;
    for c in &checks {
        println!(
            "{:<22} {:>8} {:>13.3e} {:>10.0e}  {}",
            c.layer,
            c.checked,
            c.max_rel_err,
            c.tolerance,
            if c.passed { "ok" } else { "FAIL" }
        );
        if let Some(note) = &c.note {
            println!("{:<22} {note}", "");
        }
        if !c.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("gradient check failed for {failed} of {} layers", checks.len());
        std::process::exit(ErrorCategory::Numeric.exit_code());
    }
    println!("all {} gradient checks passed (seed {seed})", checks.len());
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let (grid, used) = eval::scan_results_dir(&a.results)?;
    if grid.is_empty() {
        eprintln!(
            "warning: no pooled score files found in {}; writing an empty grid",
            a.results.display()
        );
    }
    let out = a.out.clone().unwrap_or_else(|| a.results.clone());
    create_dir(&out)?;
    let csv = out.join("fscore_matrix.csv");
    let svg = out.join("fscore_matrix.svg");
    grid.write_csv(&csv)?;
    grid.write_svg(&svg)?;
    println!(
        "collected {used} pooled result file(s) into {} and {}",
        csv.display(),
        svg.display()
    );
    Ok(())
}
