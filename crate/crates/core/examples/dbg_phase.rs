// temp probe: per-layer timing of the training forward/backward at strength shapes
use harcnn::nn::activation::{self, DropoutMode};
use harcnn::nn::batchnorm::{self, Mode};
use harcnn::nn::network::{backward, forward_train};
use harcnn::nn::{conv, dense, loss, pool, NetworkSpec, NetworkState};
use harcnn::rng;
use harcnn::tensor::Tensor;
use rand::Rng;
use std::time::Instant;

fn t<R>(label: &str, reps: usize, mut f: impl FnMut() -> R) -> R {
    let mut out = None;
    let t0 = Instant::now();
    for _ in 0..reps {
        out = Some(f());
    }
    let dt = t0.elapsed().as_secs_f64() / reps as f64;
    eprintln!("{label:<28} {:8.2} ms", dt * 1e3);
    out.unwrap()
}

fn main() {
    harcnn::mem::tune_allocator();
    let b: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(512);
    let spec = NetworkSpec::standard(3, 7);
    let mut state = NetworkState::init(&spec, 11).unwrap();
    let mut rng = rng::substream(11, "phase", 0);
    let batch = Tensor::from_fn(&[b, 6, 204, 3], |_| rng.random_range(-1.5..1.5)).unwrap();
    let reps = 5;

    // conv block 1
    let c1 = t("conv1 fwd", reps, || {
        conv::forward(&batch, &spec.conv[0], &state.conv[0].weights, &state.conv[0].bias).unwrap()
    });
    let (bn1, cache1) = t("bn1 fwd train", reps, || {
        batchnorm::forward(&c1, &mut state.bn[0], Mode::Train).unwrap()
    });
    let mut act1 = bn1.clone();
    t("relu1 in place", reps, || activation::relu_in_place(&mut act1));
    let (p1, pc1) = t("pool1 fwd", reps, || pool::forward(&act1, &spec.pool[0]).unwrap());

    // conv block 2
    let c2 = t("conv2 fwd", reps, || {
        conv::forward(&p1, &spec.conv[1], &state.conv[1].weights, &state.conv[1].bias).unwrap()
    });
    let (bn2, _cache2) = t("bn2 fwd train", reps, || {
        batchnorm::forward(&c2, &mut state.bn[1], Mode::Train).unwrap()
    });
    let mut act2 = bn2.clone();
    activation::relu_in_place(&mut act2);
    let (p2, _pc2) = t("pool2 fwd", reps, || pool::forward(&act2, &spec.pool[1]).unwrap());

    // conv block 3
    let c3 = t("conv3 fwd", reps, || {
        conv::forward(&p2, &spec.conv[2], &state.conv[2].weights, &state.conv[2].bias).unwrap()
    });
    let (bn3, _cache3) = t("bn3 fwd train", reps, || {
        batchnorm::forward(&c3, &mut state.bn[2], Mode::Train).unwrap()
    });
    let mut act3 = bn3.clone();
    activation::relu_in_place(&mut act3);
    let (p3, _pc3) = t("pool3 fwd", reps, || pool::forward(&act3, &spec.pool[2]).unwrap());

    let flat = p3.clone().reshape(&[b, spec.flatten_len()]).unwrap();
    let d1 = t("dense1 fwd", reps, || {
        dense::forward(&flat, &state.dense[0].weights, &state.dense[0].bias).unwrap()
    });
    let mut rd = rng::substream(11, "dropout", 0);
    let (dp1, _m1) = t("dropout1", reps, || {
        activation::dropout(&d1, spec.dense[0].keep_prob, &mut rd, DropoutMode::Train).unwrap()
    });
    let d2 = t("dense2 fwd", reps, || {
        dense::forward(&dp1, &state.dense[1].weights, &state.dense[1].bias).unwrap()
    });
    let _ = &d2;

    // backward pieces at block-1 shapes (the expensive ones)
    let g1 = Tensor::from_fn(p1.shape(), |_| 0.1).unwrap();
    let gu = t("pool1 bwd", reps, || pool::backward(&g1, &pc1).unwrap());
    let mut gm = gu.clone();
    t("relu1 bwd in place", reps, || {
        activation::relu_backward_in_place(&mut gm, &act1).unwrap()
    });
    let cache1 = cache1.unwrap();
    let _ = t("bn1 bwd", reps, || {
        batchnorm::backward(gm.clone(), &state.bn[0], &cache1).unwrap()
    });
    let gbn = gm.clone();
    let _ = t("conv1 bwd (no dX)", reps, || {
        conv::backward(&gbn, &batch, &spec.conv[0], &state.conv[0].weights, false).unwrap()
    });

    // whole-step reference
    let labels: Vec<usize> = (0..b).map(|i| i % 7).collect();
    let t0 = Instant::now();
    let (logits, caches) = forward_train(&spec, &mut state, &batch, 0).unwrap();
    let t1 = Instant::now();
    let out = loss::softmax_cross_entropy(&logits, &labels).unwrap();
    let grads = backward(&spec, &state, &caches, &out.grad_logits).unwrap();
    let t2 = Instant::now();
    let _ = grads;
    eprintln!("whole fwd {:.2} ms, loss+bwd {:.2} ms", (t1 - t0).as_secs_f64() * 1e3, (t2 - t1).as_secs_f64() * 1e3);
}
