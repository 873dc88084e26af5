//! Held-out evaluation and subject-partitioned k-fold cross-validation.
//!
//! Each fold trains a freshly initialized network on every subject outside
//! the fold and scores it on the held-out subjects only, so reported scores
//! measure generalization to people the model has never seen. Fold results
//! pool by summing confusion counts. Everything is driven by one root seed;
//! two runs with equal inputs produce identical numbers.

use crate::data::{ActivityGroup, Dataset, ImuRecording, SensorConfig};
use crate::error::{Error, Result};
use crate::eval::folds::{plan_folds, FoldPlan};
use crate::eval::metrics::ConfusionMatrix;
use crate::nn::{loss, network, NetworkSpec, NetworkState};
use crate::rng::derive_seed;
use crate::train::{self, EpochStats, TrainConfig};

/// Scores of one model on one dataset.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    /// Mean cross-entropy over the dataset.
    pub loss: f64,
}

/// Inference-mode evaluation of `state` over the whole dataset, in batches.
pub fn evaluate(
    spec: &NetworkSpec,
    state: &NetworkState,
    dataset: &Dataset,
    batch_size: usize,
) -> Result<EvalReport> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::EmptyDataset {
            reason: "evaluation set has no windows".into(),
        });
    }
    let mut confusion = ConfusionMatrix::new(dataset.group().m());
    let mut loss_sum = 0.0;
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(batch_size.max(1)) {
        let (batch, labels) = dataset.gather(chunk)?;
        let logits = network::forward_infer(spec, state, &batch)?;
        let out = loss::softmax_cross_entropy(&logits, &labels)?;
        loss_sum += out.loss * chunk.len() as f64;
        for (&t, p) in labels.iter().zip(loss::argmax_rows(&logits)) {
            confusion.record(t, p)?;
        }
    }
    Ok(EvalReport {
        confusion,
        loss: loss_sum / n as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossvalConfig {
    /// Number of folds, each holding out a distinct set of subjects.
    pub folds: usize,
    pub train: TrainConfig,
}

impl CrossvalConfig {
    /// Five folds with the full-scale training defaults.
    pub fn new(seed: u64) -> CrossvalConfig {
        CrossvalConfig {
            folds: 5,
            train: TrainConfig::new(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidTrainConfig {
                reason: "cross-validation needs at least 2 folds".to_string(),
            });
        }
        self.train.validate()
    }
}

/// What one fold produced.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub train_subjects: Vec<u32>,
    pub test_subjects: Vec<u32>,
    pub report: EvalReport,
    pub stats: Vec<EpochStats>,
}

/// A full cross-validation run for one (group, configuration) pair.
#[derive(Debug, Clone)]
pub struct CrossvalOutcome {
    pub group: ActivityGroup,
    pub config: &'static SensorConfig,
    pub plan: FoldPlan,
    pub folds: Vec<FoldOutcome>,
    /// Confusion counts summed over all folds.
    pub pooled: ConfusionMatrix,
}

/// Runs the whole cross-validation. Fold `i` trains with a seed derived
/// from the root seed and `i`, so folds are independent but reproducible.
/// Any failure inside a fold aborts the run wrapped in [`Error::Fold`].
pub fn run(
    recordings: &[ImuRecording],
    group: ActivityGroup,
    config: &'static SensorConfig,
    cv: &CrossvalConfig,
) -> Result<CrossvalOutcome> {
    cv.validate()?;
    crate::mem::tune_allocator();
    let full = Dataset::build(recordings, group, config)?;
    if full.is_empty() {
        return Err(Error::EmptyDataset {
            reason: format!("no recordings of group {} to cross-validate", group.name()),
        });
    }
    let plan = plan_folds(&full.subjects(), cv.folds, cv.train.seed)?;
    let spec = NetworkSpec::standard(config.arity(), group.m());

    let mut folds = Vec::with_capacity(plan.k());
    let mut pooled = ConfusionMatrix::new(group.m());
    for i in 0..plan.k() {
        let wrap = |e: Error| Error::Fold {
            fold: i,
            source: Box::new(e),
        };
        let (train_set, test_set) = full.split_by_subjects(plan.held_out(i)).map_err(wrap)?;
        let train_subjects = train_set.subjects();
        let test_subjects = test_set.subjects();
        // Invariant of the split, not input validation: a subject on both
        // sides would silently inflate every score.
        assert!(
            train_subjects.iter().all(|s| !test_subjects.contains(s)),
            "fold {i} leaks subjects between train and test"
        );

        let mut fold_cfg = cv.train;
        fold_cfg.seed = derive_seed(cv.train.seed, "fold-train", i as u64);
        let (state, stats) = train::train(&spec, &train_set, &fold_cfg, None).map_err(wrap)?;
        let report = evaluate(&spec, &state, &test_set, fold_cfg.batch_size).map_err(wrap)?;
        pooled.merge(&report.confusion).map_err(wrap)?;
        folds.push(FoldOutcome {
            fold: i,
            train_subjects,
            test_subjects,
            report,
            stats,
        });
    }

    Ok(CrossvalOutcome {
        group,
        config,
        plan,
        folds,
        pooled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::activities::Activity;
    use crate::synth::{generate_cohort, CohortSpec};
    use std::collections::BTreeSet;

    /// A cohort just big enough to cross-validate quickly: short recordings,
    /// walk group, one sensor.
    fn tiny_cohort(subjects: u32, seed: u64) -> Vec<ImuRecording> {
        let spec = CohortSpec {
            subjects,
            seconds_per_activity: 3.0,
            seed,
        };
        generate_cohort(&spec, ActivityGroup::Walk.labels()).unwrap()
    }

    fn quick_cv(seed: u64) -> CrossvalConfig {
        let mut cv = CrossvalConfig::new(seed);
        cv.train.batch_size = 32;
        cv.train.epochs = 1;
        cv
    }

    fn ls() -> &'static SensorConfig {
        SensorConfig::lookup("LS").unwrap()
    }

    #[test]
    fn folds_cover_all_subjects_without_leakage() {
        let recs = tiny_cohort(5, 41);
        let out = run(&recs, ActivityGroup::Walk, ls(), &quick_cv(41)).unwrap();

        assert_eq!(out.folds.len(), 5);
        let mut tested = BTreeSet::new();
        let mut total_windows = 0;
        for f in &out.folds {
            for s in &f.test_subjects {
                assert!(tested.insert(*s), "subject {s} tested twice");
                assert!(!f.train_subjects.contains(s));
            }
            total_windows += f.report.confusion.total();
        }
        assert_eq!(tested.len(), 5);
        assert_eq!(out.pooled.total(), total_windows);
        let full = Dataset::build(&recs, ActivityGroup::Walk, ls()).unwrap();
        assert_eq!(out.pooled.total(), full.len() as u64);
    }

    #[test]
    fn identical_runs_produce_identical_counts() {
        let recs = tiny_cohort(5, 42);
        let a = run(&recs, ActivityGroup::Walk, ls(), &quick_cv(42)).unwrap();
        let b = run(&recs, ActivityGroup::Walk, ls(), &quick_cv(42)).unwrap();
        assert_eq!(a.pooled, b.pooled);
        for (fa, fb) in a.folds.iter().zip(&b.folds) {
            assert_eq!(fa.report.confusion, fb.report.confusion);
            assert_eq!(fa.report.loss, fb.report.loss);
            assert_eq!(fa.stats, fb.stats);
        }
    }

    #[test]
    fn failure_inside_a_fold_names_the_fold() {
        // Two subjects, two folds; the fold training on the one-window
        // subject cannot form a batch, and the error says which fold.
        let mut recs = tiny_cohort(5, 43);
        recs.retain(|r| r.subject == 1);
        let one_window = {
            use crate::data::sensors::ALL_SENSORS;
            let donor = &recs[0];
            let streams =
                std::array::from_fn(|si| donor.stream(ALL_SENSORS[si])[..204].to_vec());
            ImuRecording::new(2, Activity::Bawk, streams).unwrap()
        };
        recs.push(one_window);

        let mut cv = quick_cv(44);
        cv.folds = 2;
        let err = run(&recs, ActivityGroup::Walk, ls(), &cv).unwrap_err();
        match err {
            Error::Fold { source, .. } => {
                assert!(matches!(*source, Error::EmptyDataset { .. }));
            }
            other => panic!("expected a fold-wrapped error, got {other}"),
        }
    }

    #[test]
    fn evaluate_agrees_with_plain_scoring() {
        let recs = tiny_cohort(5, 45);
        let ds = Dataset::build(&recs, ActivityGroup::Walk, ls()).unwrap();
        let (train_set, test_set) = ds.split_by_subjects(&[1]).unwrap();
        let spec = NetworkSpec::standard(1, 3);
        let cfg = quick_cv(45).train;
        let (state, _) = train::train(&spec, &train_set, &cfg, None).unwrap();

        let report = evaluate(&spec, &state, &test_set, cfg.batch_size).unwrap();
        let (loss, acc) = train::score(&spec, &state, &test_set, cfg.batch_size).unwrap();
        assert_eq!(report.loss, loss);
        assert_eq!(report.confusion.accuracy(), acc);
        assert_eq!(report.confusion.total(), test_set.len() as u64);
    }

    #[test]
    fn empty_evaluation_set_is_an_error() {
        let recs = tiny_cohort(5, 46);
        let ds = Dataset::build(&recs, ActivityGroup::Walk, ls()).unwrap();
        let (_, empty) = ds.split_by_subjects(&[]).unwrap();
        let spec = NetworkSpec::standard(1, 3);
        let state = NetworkState::init(&spec, 0).unwrap();
        assert!(matches!(
            evaluate(&spec, &state, &empty, 32),
            Err(Error::EmptyDataset { .. })
        ));
    }

    #[test]
    fn strength_with_bilateral_config_is_rejected_up_front() {
        let recs = tiny_cohort(5, 47);
        let rflf = SensorConfig::lookup("RFLF").unwrap();
        assert!(matches!(
            run(&recs, ActivityGroup::Strength, rflf, &quick_cv(47)),
            Err(Error::ConfigNotApplicable { .. })
        ));
    }
}
