// temp probe: conv throughput after lane rewrite
use harcnn::nn::{conv, ConvLayerSpec};
use harcnn::rng::substream;
use harcnn::tensor::Tensor;
use rand::Rng;
use std::time::Instant;

fn randt(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn time<F: FnMut()>(label: &str, mac_per_call: f64, reps: usize, mut f: F) {
    let t0 = Instant::now();
    for _ in 0..reps {
        f();
    }
    let dt = t0.elapsed().as_secs_f64() / reps as f64;
    eprintln!("{label:22} {:8.2} ms  {:6.2} GMAc/s", dt * 1e3, mac_per_call / dt / 1e9);
}

fn main() {
    harcnn::mem::tune_allocator();
    let mut rng = substream(3, "bench", 0);
    let r = &mut rng;
    let spec1 = ConvLayerSpec { kernel_h: 3, kernel_w: 5, depth_multiplier: 8 };
    let x1 = randt(&[128, 6, 204, 3], r);
    let w1 = randt(&[3, 5, 3, 8], r);
    let b1 = randt(&[24], r);
    let go1 = randt(&[128, 6, 204, 24], r);
    let mac1 = 128.0 * 6.0 * 204.0 * 3.0 * 8.0 * 15.0;
    time("conv1 fwd", mac1, 10, || {
        let _ = conv::forward(&x1, &spec1, &w1, &b1).unwrap();
    });
    time("conv1 bwd(no dX)", 2.0 * mac1, 10, || {
        let _ = conv::backward(&go1, &x1, &spec1, &w1, false).unwrap();
    });
    let spec2 = ConvLayerSpec { kernel_h: 2, kernel_w: 4, depth_multiplier: 4 };
    let x2 = randt(&[128, 2, 68, 24], r);
    let w2 = randt(&[2, 4, 24, 4], r);
    let b2 = randt(&[96], r);
    let go2 = randt(&[128, 2, 68, 96], r);
    let mac2 = 128.0 * 2.0 * 68.0 * 24.0 * 4.0 * 8.0;
    time("conv2 fwd", mac2, 20, || {
        let _ = conv::forward(&x2, &spec2, &w2, &b2).unwrap();
    });
    time("conv2 bwd(+dX)", 3.0 * mac2, 20, || {
        let _ = conv::backward(&go2, &x2, &spec2, &w2, true).unwrap();
    });
    let spec3 = ConvLayerSpec { kernel_h: 2, kernel_w: 2, depth_multiplier: 2 };
    let x3 = randt(&[128, 1, 34, 96], r);
    let w3 = randt(&[2, 2, 96, 2], r);
    let b3 = randt(&[192], r);
    let go3 = randt(&[128, 1, 34, 192], r);
    let mac3 = 128.0 * 1.0 * 34.0 * 96.0 * 2.0 * 4.0;
    time("conv3 fwd", mac3, 20, || {
        let _ = conv::forward(&x3, &spec3, &w3, &b3).unwrap();
    });
    time("conv3 bwd(+dX)", 3.0 * mac3, 20, || {
        let _ = conv::backward(&go3, &x3, &spec3, &w3, true).unwrap();
    });
}
