// temp probe: full train-step phase breakdown at strength shapes
use harcnn::data::activities::ActivityGroup;
use harcnn::data::dataset::Dataset;
use harcnn::data::sensors::SensorConfig;
use harcnn::nn::network::{backward, forward_train, Gradients};
use harcnn::nn::{loss, NetworkSpec, NetworkState};
use harcnn::synth::{generate_cohort, CohortSpec};
use harcnn::train::{adam_step, AdamState, TrainConfig};
use std::time::Instant;

fn main() {
    harcnn::mem::tune_allocator();
    let bs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(128);
    let junk_mb: usize = std::env::args().nth(2).and_then(|a| a.parse().ok()).unwrap_or(0);
    let _junk: Vec<Vec<f64>> = (0..junk_mb).map(|i| vec![i as f64; 131072]).collect();
    let cohort = CohortSpec { subjects: 5, seconds_per_activity: 10.0, seed: 11 };
    let recs = generate_cohort(&cohort, ActivityGroup::Strength.labels()).unwrap();
    let ds = Dataset::build(&recs, ActivityGroup::Strength, SensorConfig::lookup("RSRFLM").unwrap()).unwrap();
    let spec = NetworkSpec::standard(3, 7);
    let mut state = NetworkState::init(&spec, 11).unwrap();
    let mut adam = AdamState::new(&mut state).unwrap();
    let cfg = TrainConfig { batch_size: bs, epochs: 1, ..TrainConfig::new(11) };

    let idx: Vec<usize> = (0..bs).collect();
    let (mut t_gather, mut t_fwd, mut t_loss, mut t_bwd, mut t_adam) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let reps = 10;
    for step in 0..reps {
        let t0 = Instant::now();
        let (batch, labels) = ds.gather(&idx).unwrap();
        let t1 = Instant::now();
        let (logits, caches) = forward_train(&spec, &mut state, &batch, step).unwrap();
        let t2 = Instant::now();
        let out = loss::softmax_cross_entropy(&logits, &labels).unwrap();
        let grad_logits = out.grad_logits;
        let t3 = Instant::now();
        let grads: Gradients = backward(&spec, &state, caches, &grad_logits).unwrap();
        let t4 = Instant::now();
        adam_step(&mut state, &mut adam, &grads, &cfg).unwrap();
        let t5 = Instant::now();
        t_gather += (t1 - t0).as_secs_f64();
        t_fwd += (t2 - t1).as_secs_f64();
        t_loss += (t3 - t2).as_secs_f64();
        t_bwd += (t4 - t3).as_secs_f64();
        t_adam += (t5 - t4).as_secs_f64();
    }
    let r = reps as f64;
    eprintln!("gather {:7.2} ms", t_gather / r * 1e3);
    eprintln!("fwd    {:7.2} ms", t_fwd / r * 1e3);
    eprintln!("loss   {:7.2} ms", t_loss / r * 1e3);
    eprintln!("bwd    {:7.2} ms", t_bwd / r * 1e3);
    eprintln!("adam   {:7.2} ms", t_adam / r * 1e3);
    eprintln!("total  {:7.2} ms/step -> {:.0} ex/s", (t_gather + t_fwd + t_loss + t_bwd + t_adam) / r * 1e3, bs as f64 * r / (t_gather + t_fwd + t_loss + t_bwd + t_adam));
}
