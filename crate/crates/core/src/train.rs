//! Adam training loop over a windowed dataset.
//!
//! Hyperparameter defaults follow the experiment this reproduces: batch
//! 1024, learning rate 0.005, β₁ 0.9, β₂ 0.999, ε 1e-8, 200 epochs.
//! Desk-scale runs override batch and epochs; nothing here enforces the
//! full-scale settings.
//!
//! Each epoch visits a fresh seeded shuffle of the dataset in batches. A
//! trailing batch of fewer than two examples is dropped because train-mode
//! batch norm cannot normalize it; every kept example still appears in
//! other epochs since shuffles differ.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::data::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{loss, network, NetworkSpec, NetworkState};
use crate::rng::substream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Full-scale defaults with the given root seed.
    pub fn new(seed: u64) -> Self {
        TrainConfig {
            batch_size: 1024,
            epochs: 200,
            learning_rate: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Error::InvalidTrainConfig { reason: reason.to_string() };
        if self.batch_size < 2 {
            return Err(bad("batch size must be at least 2 (train-mode batch norm)"));
        }
        if self.epochs == 0 {
            return Err(bad("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(bad("learning rate must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(bad("beta1 and beta2 must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(bad("epsilon must be positive"));
        }
        Ok(())
    }
}

/// First and second moment estimates, one pair per parameter tensor, in
/// [`NetworkState::params_mut`] order.
#[derive(Debug, Clone)]
pub struct AdamState {
    /// Completed steps; bias correction uses the post-increment count.
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(state: &mut NetworkState) -> Result<AdamState> {
        let shapes: Vec<Vec<usize>> = state
            .params_mut()
            .iter()
            .map(|(_, t)| t.shape().to_vec())
            .collect();
        let zero = |s: &Vec<usize>| Tensor::zeros(s);
        Ok(AdamState {
            t: 0,
            m: shapes.iter().map(zero).collect::<Result<_>>()?,
            v: shapes.iter().map(zero).collect::<Result<_>>()?,
        })
    }
}

/// One Adam update. Gradients are checked for finiteness first; a bad
/// gradient aborts the step naming the offending parameter tensor.
pub fn adam_step(
    state: &mut NetworkState,
    adam: &mut AdamState,
    grads: &network::Gradients,
    cfg: &TrainConfig,
) -> Result<()> {
    let grad_list = grads.params();
    for (name, g) in &grad_list {
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { layer: name.clone() });
        }
    }
    adam.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(adam.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(adam.t as i32);
    for (pi, (_, param)) in state.params_mut().into_iter().enumerate() {
        let g = grad_list[pi].1.data();
        let m = adam.m[pi].data_mut();
        let v = adam.v[pi].data_mut();
        let p = param.data_mut();
        for i in 0..g.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Per-epoch aggregates; validation fields follow the optional held-out
/// set.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

/// The visit order for one epoch: a seeded shuffle of `0..n`.
fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = substream(seed, "shuffle", epoch as u64);
    order.shuffle(&mut rng);
    order
}

/// Trains a freshly initialized network on `dataset`, optionally scoring a
/// held-out set each epoch. Returns the final state and per-epoch stats.
pub fn train(
    spec: &NetworkSpec,
    dataset: &Dataset,
    cfg: &TrainConfig,
    val: Option<&Dataset>,
) -> Result<(NetworkState, Vec<EpochStats>)> {
    cfg.validate()?;
    spec.validate()?;
    crate::mem::tune_allocator();
    let n = dataset.len();
    if n == 0 {
        return Err(Error::EmptyDataset {
            reason: "training set has no windows".into(),
        });
    }
    let mut state = NetworkState::init(spec, cfg.seed)?;
    let mut adam = AdamState::new(&mut state)?;
    let batches_per_epoch = batch_starts(n, cfg.batch_size).len();
    if batches_per_epoch == 0 {
        return Err(Error::EmptyDataset {
            reason: format!("{n} window(s) cannot form a trainable batch of at least 2"),
        });
    }

    let mut stats = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(n, cfg.seed, epoch);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        let mut seen = 0usize;
        for (b, &start) in batch_starts(n, cfg.batch_size).iter().enumerate() {
            let end = (start + cfg.batch_size).min(n);
            let idx = &order[start..end];
            let (batch, labels) = dataset.gather(idx)?;
            let step = (epoch * batches_per_epoch + b) as u64;
            let (logits, caches) = network::forward_train(spec, &mut state, &batch, step)?;
            let out = loss::softmax_cross_entropy(&logits, &labels)?;
            let grads = network::backward(spec, &state, caches, &out.grad_logits)?;
            adam_step(&mut state, &mut adam, &grads, cfg)?;

            loss_sum += out.loss * idx.len() as f64;
            hits += count_hits(&logits, &labels);
            seen += idx.len();
        }
        let (val_loss, val_acc) = match val {
            Some(v) => {
                let (l, a) = score(spec, &state, v, cfg.batch_size)?;
                (Some(l), Some(a))
            }
            None => (None, None),
        };
        stats.push(EpochStats {
            epoch: epoch + 1,
            train_loss: loss_sum / seen as f64,
            train_acc: hits as f64 / seen as f64,
            val_loss,
            val_acc,
        });
    }
    Ok((state, stats))
}

/// Start offsets of the batches for one epoch: full batches plus a
/// trailing partial one when it still has the two examples batch norm
/// needs.
fn batch_starts(n: usize, batch: usize) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..n / batch).map(|b| b * batch).collect();
    let tail = n % batch;
    if tail >= 2 {
        starts.push(n - tail);
    }
    if starts.is_empty() {
        // dataset smaller than one batch: keep it if it is trainable at all
        if n >= 2 {
            starts.push(0);
        }
    }
    starts
}

fn count_hits(logits: &Tensor, labels: &[usize]) -> usize {
    loss::argmax_rows(logits)
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count()
}

/// Inference-mode loss and accuracy over a dataset, in batches.
pub fn score(
    spec: &NetworkSpec,
    state: &NetworkState,
    dataset: &Dataset,
    batch_size: usize,
) -> Result<(f64, f64)> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::EmptyDataset {
            reason: "scoring set has no windows".into(),
        });
    }
    let mut loss_sum = 0.0;
    let mut hits = 0usize;
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(batch_size.max(1)) {
        let (batch, labels) = dataset.gather(chunk)?;
        let logits = network::forward_infer(spec, state, &batch)?;
        let out = loss::softmax_cross_entropy(&logits, &labels)?;
        loss_sum += out.loss * chunk.len() as f64;
        hits += count_hits(&logits, &labels);
    }
    Ok((loss_sum / n as f64, hits as f64 / n as f64))
}

/// Writes the per-epoch trace as CSV; validation cells are empty when no
/// held-out set was scored.
pub fn write_trace(path: &Path, stats: &[EpochStats]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let go = |w: &mut std::io::BufWriter<std::fs::File>| -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,train_acc,val_loss,val_acc")?;
        for s in stats {
            let fmt = |o: Option<f64>| o.map(|v| format!("{v:.6}")).unwrap_or_default();
            writeln!(
                w,
                "{},{:.6},{:.6},{},{}",
                s.epoch,
                s.train_loss,
                s.train_acc,
                fmt(s.val_loss),
                fmt(s.val_acc)
            )?;
        }
        w.flush()
    };
    go(&mut w).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::activities::{Activity, ActivityGroup};
    use crate::data::sensors::SensorConfig;
    use crate::nn::{ConvLayerSpec, DenseLayerSpec, PoolLayerSpec};
    use crate::synth::{generate_cohort, CohortSpec};

    /// Real input geometry (6×204×1) but skeletal channel/dense widths so
    /// unit tests stay fast.
    fn small_spec() -> NetworkSpec {
        NetworkSpec {
            input_h: 6,
            input_w: 204,
            channels: 1,
            conv: [
                ConvLayerSpec { kernel_h: 3, kernel_w: 5, depth_multiplier: 2 },
                ConvLayerSpec { kernel_h: 2, kernel_w: 4, depth_multiplier: 1 },
                ConvLayerSpec { kernel_h: 2, kernel_w: 2, depth_multiplier: 1 },
            ],
            pool: [
                PoolLayerSpec::square(3, 3),
                PoolLayerSpec::square(2, 2),
                PoolLayerSpec::square(2, 2),
            ],
            dense: [
                DenseLayerSpec { units: 24, keep_prob: 0.5 },
                DenseLayerSpec { units: 16, keep_prob: 0.5 },
                DenseLayerSpec { units: 8, keep_prob: 0.5 },
            ],
            output_units: 3,
        }
    }

    fn walk_dataset(subjects: u32, seconds: f64, seed: u64) -> Dataset {
        let spec = CohortSpec { subjects, seconds_per_activity: seconds, seed };
        let recs = generate_cohort(&spec, ActivityGroup::Walk.labels()).unwrap();
        Dataset::build(&recs, ActivityGroup::Walk, SensorConfig::lookup("LS").unwrap()).unwrap()
    }

    #[test]
    fn defaults_match_the_experiment() {
        let cfg = TrainConfig::new(1);
        assert_eq!(cfg.batch_size, 1024);
        assert_eq!(cfg.epochs, 200);
        assert_eq!(cfg.learning_rate, 0.005);
        assert_eq!((cfg.beta1, cfg.beta2, cfg.epsilon), (0.9, 0.999, 1e-8));
        cfg.validate().unwrap();
    }

    #[test]
    fn validation_rejects_degenerate_settings() {
        for (patch, _why) in [
            (TrainConfig { batch_size: 1, ..TrainConfig::new(1) }, "batch"),
            (TrainConfig { epochs: 0, ..TrainConfig::new(1) }, "epochs"),
            (TrainConfig { learning_rate: 0.0, ..TrainConfig::new(1) }, "lr"),
            (TrainConfig { learning_rate: f64::NAN, ..TrainConfig::new(1) }, "lr"),
            (TrainConfig { beta1: 1.0, ..TrainConfig::new(1) }, "beta"),
            (TrainConfig { epsilon: 0.0, ..TrainConfig::new(1) }, "eps"),
        ] {
            assert!(matches!(
                patch.validate(),
                Err(Error::InvalidTrainConfig { .. })
            ));
        }
    }

    /// At t=1 the bias-corrected update is lr·g/(|g|+ε'), i.e. almost
    /// exactly lr·sign(g) regardless of |g|.
    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let spec = small_spec();
        let mut state = NetworkState::init(&spec, 3).unwrap();
        let mut adam = AdamState::new(&mut state).unwrap();
        let cfg = TrainConfig { batch_size: 4, ..TrainConfig::new(3) };

        // gradient 2.0 on one dense bias entry, 0 elsewhere
        let mut grads = network::Gradients::zeros_like(&spec).unwrap();
        let bias_idx = grads
            .params()
            .iter()
            .position(|(n, _)| n == "dense1.bias")
            .unwrap();
        let before = state.params_mut()[bias_idx].1.data()[0];
        grads.dense[0].1.data_mut()[0] = 2.0;
        adam_step(&mut state, &mut adam, &grads, &cfg).unwrap();
        let after = state.params_mut()[bias_idx].1.data()[0];
        let moved = before - after;
        assert!((moved - cfg.learning_rate).abs() < 1e-6, "moved {moved}");

        // doubling the gradient does not change the first step
        let mut state2 = NetworkState::init(&spec, 3).unwrap();
        let mut adam2 = AdamState::new(&mut state2).unwrap();
        grads.dense[0].1.data_mut()[0] = 4.0;
        adam_step(&mut state2, &mut adam2, &grads, &cfg).unwrap();
        let after2 = state2.params_mut()[bias_idx].1.data()[0];
        assert!((after - after2).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_changes_nothing() {
        let spec = small_spec();
        let mut state = NetworkState::init(&spec, 5).unwrap();
        let reference = NetworkState::init(&spec, 5).unwrap();
        let mut adam = AdamState::new(&mut state).unwrap();
        let grads = network::Gradients::zeros_like(&spec).unwrap();
        adam_step(&mut state, &mut adam, &grads, &TrainConfig::new(5)).unwrap();
        assert_eq!(state, reference);
    }

    #[test]
    fn non_finite_gradient_names_the_layer() {
        let spec = small_spec();
        let mut state = NetworkState::init(&spec, 5).unwrap();
        let mut adam = AdamState::new(&mut state).unwrap();
        let mut grads = network::Gradients::zeros_like(&spec).unwrap();
        grads.conv[1].0.data_mut()[3] = f64::NAN;
        match adam_step(&mut state, &mut adam, &grads, &TrainConfig::new(5)) {
            Err(Error::NonFiniteGradient { layer }) => assert_eq!(layer, "conv2.weights"),
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
    }

    #[test]
    fn epoch_order_is_a_fresh_permutation_each_epoch() {
        let a = epoch_order(100, 7, 0);
        let b = epoch_order(100, 7, 1);
        let again = epoch_order(100, 7, 0);
        assert_eq!(a, again);
        assert_ne!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn batch_starts_keep_trainable_tails_only() {
        assert_eq!(batch_starts(10, 4), vec![0, 4, 8]); // tail of 2 kept
        assert_eq!(batch_starts(9, 4), vec![0, 4]); // tail of 1 dropped
        assert_eq!(batch_starts(8, 4), vec![0, 4]);
        assert_eq!(batch_starts(3, 1024), vec![0]); // dataset smaller than batch
        assert_eq!(batch_starts(1, 1024), Vec::<usize>::new());
    }

    #[test]
    fn loss_decreases_on_separable_data() {
        let ds = walk_dataset(5, 5.0, 11);
        let cfg = TrainConfig {
            batch_size: 64,
            epochs: 6,
            ..TrainConfig::new(11)
        };
        let (_, stats) = train(&small_spec(), &ds, &cfg, None).unwrap();
        assert_eq!(stats.len(), 6);
        assert!(
            stats[5].train_loss < stats[0].train_loss,
            "{} -> {}",
            stats[0].train_loss,
            stats[5].train_loss
        );
        assert!(stats[5].train_acc > 0.5, "acc {}", stats[5].train_acc);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_at_init() {
        let ds = walk_dataset(5, 3.0, 2);
        // validate() forbids lr 0, so build the config directly: the loop
        // must still run and leave every parameter untouched.
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 256,
            epochs: 1,
            ..TrainConfig::new(2)
        };
        let n = ds.len();
        let mut state = NetworkState::init(&small_spec(), cfg.seed).unwrap();
        let mut adam = AdamState::new(&mut state).unwrap();
        let order = epoch_order(n, cfg.seed, 0);
        let (batch, labels) = ds.gather(&order[..64]).unwrap();
        let (logits, caches) =
            network::forward_train(&small_spec(), &mut state, &batch, 0).unwrap();
        let out = loss::softmax_cross_entropy(&logits, &labels).unwrap();
        let grads = network::backward(&small_spec(), &state, caches, &out.grad_logits).unwrap();
        adam_step(&mut state, &mut adam, &grads, &cfg).unwrap();
        let mut fresh = NetworkState::init(&small_spec(), cfg.seed).unwrap();
        for (a, b) in state.params_mut().iter().zip(fresh.params_mut().iter()) {
            assert_eq!(a.1, b.1, "{} changed", a.0);
        }
    }

    #[test]
    fn validation_columns_follow_the_holdout() {
        let ds = walk_dataset(5, 3.0, 4);
        let val = walk_dataset(5, 2.5, 99);
        let cfg = TrainConfig { batch_size: 64, epochs: 1, ..TrainConfig::new(4) };
        let (_, with_val) = train(&small_spec(), &ds, &cfg, Some(&val)).unwrap();
        assert!(with_val[0].val_loss.is_some() && with_val[0].val_acc.is_some());
        let (_, without) = train(&small_spec(), &ds, &cfg, None).unwrap();
        assert!(without[0].val_loss.is_none());
    }

    #[test]
    fn trace_csv_has_one_row_per_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let stats = vec![
            EpochStats { epoch: 1, train_loss: 1.0, train_acc: 0.5, val_loss: None, val_acc: None },
            EpochStats {
                epoch: 2,
                train_loss: 0.9,
                train_acc: 0.625,
                val_loss: Some(0.95),
                val_acc: Some(0.6),
            },
        ];
        write_trace(&path, &stats).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "epoch,train_loss,train_acc,val_loss,val_acc");
        assert_eq!(lines[1], "1,1.000000,0.500000,,");
        assert_eq!(lines[2], "2,0.900000,0.625000,0.950000,0.600000");
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let recs = generate_cohort(
            &CohortSpec { subjects: 5, seconds_per_activity: 2.5, seed: 1 },
            &[Activity::Sts],
        )
        .unwrap();
        let ds = Dataset::build(
            &recs,
            ActivityGroup::Walk,
            SensorConfig::lookup("LS").unwrap(),
        )
        .unwrap();
        assert!(matches!(
            train(&small_spec(), &ds, &TrainConfig::new(1), None),
            Err(Error::EmptyDataset { .. })
        ));
    }

    #[test]
    fn same_seed_trains_identically() {
        let ds = walk_dataset(5, 3.0, 6);
        let cfg = TrainConfig { batch_size: 128, epochs: 1, ..TrainConfig::new(6) };
        let (mut s1, t1) = train(&small_spec(), &ds, &cfg, None).unwrap();
        let (mut s2, t2) = train(&small_spec(), &ds, &cfg, None).unwrap();
        assert_eq!(t1, t2);
        for (a, b) in s1.params_mut().iter().zip(s2.params_mut().iter()) {
            assert_eq!(a.1, b.1);
        }
    }
}
