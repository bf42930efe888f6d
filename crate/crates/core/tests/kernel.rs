mod common;

use common::{central_differences, max_rel_err, naive_forward, relu_margin, FD_TOL};
use mishape::baselines::random_encoder;
use mishape::dataset::{IndexBatch, PairBatch, Partner};
use mishape::mi::{critic_grad, dv_embed_grad, dv_estimate, Critic, CriticSpec};
use mishape::rng::seeded;
use mishape::tensor::{logmeanexp, Activation, AdamConfig, AdamState, DenseNet};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Every network shape the crate builds: encoder layers (identity, tanh
/// hidden) and critic layers (relu hidden, scalar head).
const SHAPES: [(&[usize], Activation, Activation); 4] = [
    (&[6, 2], Activation::Identity, Activation::Identity),
    (&[6, 5, 2], Activation::Tanh, Activation::Identity),
    (&[5, 7, 3], Activation::Tanh, Activation::Tanh),
    (&[5, 8, 8, 1], Activation::Relu, Activation::Identity),
];

#[test]
fn backward_matches_central_differences() {
    for (dims, hidden, output) in SHAPES {
        for seed in 0..10 {
            let mut rng = seeded(seed, 0);
            let net = DenseNet::mlp(dims, hidden, output, &mut rng).unwrap();
            // Redraw until no relu sits within reach of its kink.
            let x = loop {
                let x = gaussian(8, dims[0], &mut rng);
                if relu_margin(&net, x.view()) > 1e-3 {
                    break x;
                }
            };
            let up = gaussian(8, *dims.last().unwrap(), &mut rng);
            let loss = |n: &DenseNet, x: &Array2<f64>| (n.forward(x.view()).unwrap() * &up).sum();

            let grads = net.backward(&net.forward_cached(x.view()).unwrap(), up.view()).unwrap();
            let numeric = central_differences(&net.flat_params(), |p| {
                let mut n = net.clone();
                n.set_flat_params(p);
                loss(&n, &x)
            });
            let err = max_rel_err(&grads.flatten(), &numeric);
            assert!(err <= FD_TOL, "{dims:?} seed {seed}: parameter error {err:e}");

            let numeric_x = central_differences(x.as_slice().unwrap(), |p| {
                loss(&net, &Array2::from_shape_vec(x.dim(), p.to_vec()).unwrap())
            });
            let err = max_rel_err(grads.input.as_slice().unwrap(), &numeric_x);
            assert!(err <= FD_TOL, "{dims:?} seed {seed}: input error {err:e}");
        }
    }
}

fn label_batch(seed: u64, b: usize, d: usize) -> PairBatch {
    let mut rng = seeded(seed, 1);
    let embed = gaussian(b, d, &mut rng);
    let labels: Vec<u8> = (0..b).map(|i| u8::from(embed[[i, 0]] > 0.0)).collect();
    let mut perm: Vec<usize> = (0..b).collect();
    perm.shuffle(&mut rng);
    let index = IndexBatch {
        rows: (0..b).collect(),
        perm,
    };
    PairBatch::from_embed(embed, &Partner::Labels(&labels), &index)
}

#[test]
fn critic_gradient_matches_central_differences() {
    for seed in 0..10 {
        let critic = Critic::new(CriticSpec::for_labels(3), &[16], &mut seeded(seed, 2)).unwrap();
        let batch = label_batch(seed, 64, 3);
        let (grads, est) = critic_grad(&critic, &batch, None).unwrap();
        assert_eq!(est, dv_estimate(&critic, &batch).unwrap());
        let numeric = central_differences(&critic.net().flat_params(), |p| {
            let mut c = critic.clone();
            c.net_mut().set_flat_params(p);
            dv_estimate(&c, &batch).unwrap().value
        });
        let err = max_rel_err(&grads.flatten(), &numeric);
        assert!(err <= FD_TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn embedding_gradient_matches_central_differences() {
    for seed in 0..10 {
        let critic = Critic::new(CriticSpec::for_labels(3), &[16], &mut seeded(seed, 3)).unwrap();
        let batch = label_batch(seed, 32, 3);
        let (_, grad) = dv_embed_grad(&critic, &batch).unwrap();
        let numeric = central_differences(batch.embed.as_slice().unwrap(), |p| {
            let mut b = batch.clone();
            b.embed = Array2::from_shape_vec(batch.embed.dim(), p.to_vec()).unwrap();
            dv_estimate(&critic, &b).unwrap().value
        });
        let err = max_rel_err(grad.as_slice().unwrap(), &numeric);
        assert!(err <= FD_TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn forward_matches_naive_matmul() {
    let check = |net: &DenseNet, x: &Array2<f64>| {
        let fast = net.forward(x.view()).unwrap();
        let slow = naive_forward(net, x.view());
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    };
    let mut rng = seeded(5, 0);
    let net = DenseNet::mlp(&[9, 11, 4], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
    check(&net, &gaussian(13, 9, &mut rng));
    let enc = random_encoder(512, 64, 1).unwrap();
    check(enc.net(), &gaussian(20, 512, &mut rng));
}

#[test]
fn logmeanexp_overflow_cases_are_exact() {
    assert_eq!(logmeanexp(&[1000.0, 1000.0]).unwrap(), 1000.0);
    assert_eq!(logmeanexp(&[0.0, 0.0]).unwrap(), 0.0);
    assert_eq!(logmeanexp(&[-3.25; 3]).unwrap(), -3.25);
    assert_eq!(logmeanexp(&[1e308, 1e308]).unwrap(), 1e308);
    assert_eq!(logmeanexp(&[1e308, 0.0]).unwrap(), 1e308);
    assert_eq!(logmeanexp(&[-1e308, -1e308]).unwrap(), -1e308);
    assert!(logmeanexp(&[]).is_err());
}

#[test]
fn adam_runs_are_bit_identical() {
    let run = || {
        let mut rng = seeded(8, 0);
        let mut net = DenseNet::mlp(&[4, 6, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let x = gaussian(16, 4, &mut rng);
        let mut adam = AdamState::new(AdamConfig::with_lr(1e-2));
        for _ in 0..25 {
            let cache = net.forward_cached(x.view()).unwrap();
            let up = cache.output().mapv(|v| 2.0 * (v - 1.0) / 16.0);
            let grads = net.backward(&cache, up.view()).unwrap();
            adam.step(&mut net, &grads).unwrap();
        }
        assert_eq!(adam.steps(), 25);
        net.flat_params()
    };
    let (a, b) = (run(), run());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}
