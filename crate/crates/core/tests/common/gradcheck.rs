//! Central-difference gradient checks in double precision.

use monet::model::{adaptive_loss, MonetConfig, MonetParams, PatchBank, SampleSource, TrainingSample};
use monet::nn::{log_softmax, relu, relu_backward, BatchNorm, Conv3d, Dense, Mode, Padding, Tensor};
use monet::volume::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
/// Gradients smaller than this are compared absolutely.
const FLOOR: f64 = 1e-4;

/// Largest `|a - n| / max(|a|, |n|, FLOOR)` over all entries, where `n` is the
/// central difference of `f` at `x`.
pub fn max_rel_err(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64]) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut worst = 0.0f64;
    let mut p = x.to_vec();
    for i in 0..x.len() {
        p[i] = x[i] + H;
        let up = f(&p);
        p[i] = x[i] - H;
        let dn = f(&p);
        p[i] = x[i];
        let num = (up - dn) / (2.0 * H);
        let a = analytic[i];
        worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(FLOOR));
    }
    worst
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, v.to_vec()).unwrap()
}

/// `sum(r * y)`, the scalar used to probe a layer through a random
/// upstream gradient `r`.
fn probe(r: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    r.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
}

/// Every check for one seed, as `(name, worst relative error)`.
pub fn all_checks(seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    for (pad, name) in [(Padding::Valid, "valid"), (Padding::SameZero, "same")] {
        let conv = Conv3d::<f64>::init(3, 2, 3, &mut rng);
        let x = random(&mut rng, &[2, 2, 4, 3, 5]);
        let y = conv.forward(&x, pad).unwrap();
        let r = random(&mut rng, y.shape());
        let g = conv.backward(&x, &r, pad).unwrap();
        let shape = x.shape().to_vec();
        out.push((
            format!("conv3d {name} input"),
            max_rel_err(|v| probe(&r, &conv.forward(&t(&shape, v), pad).unwrap()), x.data(), g.input.data()),
        ));
        let wshape = conv.weight.shape().to_vec();
        out.push((
            format!("conv3d {name} weight"),
            max_rel_err(
                |v| {
                    let mut c = conv.clone();
                    c.weight = t(&wshape, v);
                    probe(&r, &c.forward(&x, pad).unwrap())
                },
                conv.weight.data(),
                g.weight.data(),
            ),
        ));
        out.push((
            format!("conv3d {name} bias"),
            max_rel_err(
                |v| {
                    let mut c = conv.clone();
                    c.bias = t(&[3], v);
                    probe(&r, &c.forward(&x, pad).unwrap())
                },
                conv.bias.data(),
                g.bias.data(),
            ),
        ));
    }

    let mut bn = BatchNorm::<f64>::new(3);
    bn.gamma = random(&mut rng, &[3]);
    bn.beta = random(&mut rng, &[3]);
    let x = random(&mut rng, &[5, 3, 2, 1, 2]);
    let (y, cache) = bn.forward_batch(&x).unwrap();
    let r = random(&mut rng, y.shape());
    let g = bn.backward(&cache, &r).unwrap();
    let shape = x.shape().to_vec();
    out.push((
        "batchnorm input".into(),
        max_rel_err(|v| probe(&r, &bn.forward_batch(&t(&shape, v)).unwrap().0), x.data(), g.input.data()),
    ));
    out.push((
        "batchnorm gamma".into(),
        max_rel_err(
            |v| {
                let mut b = bn.clone();
                b.gamma = t(&[3], v);
                probe(&r, &b.forward_batch(&x).unwrap().0)
            },
            bn.gamma.data(),
            g.gamma.data(),
        ),
    ));
    out.push((
        "batchnorm beta".into(),
        max_rel_err(
            |v| {
                let mut b = bn.clone();
                b.beta = t(&[3], v);
                probe(&r, &b.forward_batch(&x).unwrap().0)
            },
            bn.beta.data(),
            g.beta.data(),
        ),
    ));

    let dense = Dense::<f64>::init(6, 4, &mut rng);
    let x = random(&mut rng, &[3, 6]);
    let y = dense.forward(&x).unwrap();
    let r = random(&mut rng, y.shape());
    let g = dense.backward(&x, &r).unwrap();
    out.push((
        "dense input".into(),
        max_rel_err(|v| probe(&r, &dense.forward(&t(&[3, 6], v)).unwrap()), x.data(), g.input.data()),
    ));
    out.push((
        "dense weight".into(),
        max_rel_err(
            |v| {
                let mut d = dense.clone();
                d.weight = t(&[4, 6], v);
                probe(&r, &d.forward(&x).unwrap())
            },
            dense.weight.data(),
            g.weight.data(),
        ),
    ));
    out.push((
        "dense bias".into(),
        max_rel_err(
            |v| {
                let mut d = dense.clone();
                d.bias = t(&[4], v);
                probe(&r, &d.forward(&x).unwrap())
            },
            dense.bias.data(),
            g.bias.data(),
        ),
    ));

    // Keep inputs away from the kink so the difference quotient is valid.
    let x = random(&mut rng, &[4, 5]).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let y = relu(&x);
    let r = random(&mut rng, y.shape());
    out.push((
        "relu".into(),
        max_rel_err(|v| probe(&r, &relu(&t(&[4, 5], v))), x.data(), relu_backward(&y, &r).data()),
    ));

    let z = random(&mut rng, &[4, 3]).map(|v| 3.0 * v);
    let r = random(&mut rng, &[4, 3]);
    // d/dz sum(r * log_softmax(z)) = r - softmax(z) * sum_row(r)
    let ls = log_softmax(&z).unwrap();
    let mut analytic = Vec::new();
    for (lrow, rrow) in ls.data().chunks_exact(3).zip(r.data().chunks_exact(3)) {
        let rs: f64 = rrow.iter().sum();
        analytic.extend(lrow.iter().zip(rrow).map(|(l, ri)| ri - l.exp() * rs));
    }
    out.push((
        "log_softmax".into(),
        max_rel_err(|v| probe(&r, &log_softmax(&t(&[4, 3], v)).unwrap()), z.data(), &analytic),
    ));

    let batch = random_samples(&mut rng, 6);
    let z = random(&mut rng, &[6, 2]).map(|v| 2.0 * v);
    let (_, g) = adaptive_loss(&batch, &z).unwrap();
    out.push((
        "adaptive loss".into(),
        max_rel_err(|v| adaptive_loss(&batch, &t(&[6, 2], v)).unwrap().0, z.data(), g.data()),
    ));

    out.push(("network end to end".into(), network_check(&mut rng)));
    out
}

fn random_samples(rng: &mut ChaCha8Rng, n: usize) -> Vec<TrainingSample> {
    (0..n)
        .map(|i| {
            let scribble = rng.random_bool(0.3);
            TrainingSample {
                index: i,
                label: if rng.random_bool(0.5) { Label::Foreground } else { Label::Background },
                source: if scribble { SampleSource::Scribble } else { SampleSource::Segmentation },
                weight: if scribble { 1.0 } else { rng.random_range(0.0..1.0) },
                class_weight: rng.random_range(0.5..4.0),
            }
        })
        .collect()
}

/// Loss gradient with respect to every network parameter, train mode with
/// dropout, on a small `K = 5` network.
fn network_check(rng: &mut ChaCha8Rng) -> f64 {
    let cfg = MonetConfig {
        patch_size: 5,
        scales: vec![1, 3, 5],
        filters_per_scale: 3,
        fc_sizes: vec![6, 4, 2],
        ..MonetConfig::default()
    };
    let mut params = MonetParams::<f64>::init(&cfg, rng).unwrap();
    for s in &mut params.scales {
        s.bn.beta = random(rng, &[3]).map(|v| 0.5 * v);
    }
    let n = 8;
    let patches: Vec<Vec<f64>> = (0..n).map(|_| (0..125).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let bank = PatchBank::from_patches(&patches, 5, &params.scale_sizes()).unwrap();
    let rows: Vec<usize> = (0..n).collect();
    let batch = random_samples(rng, n);
    let mask_seed: u64 = rng.random();

    let loss_of = |p: &MonetParams<f64>| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let (z, cache) = p.forward(bank.gather(&rows), Mode::Train, &mut mask_rng).unwrap();
        (adaptive_loss(&batch, &z).unwrap(), cache)
    };
    let ((_, gz), cache) = loss_of(&params);
    let grads = params.backward(&cache, &gz).unwrap();

    let flat: Vec<f64> = params.parameters().iter().flat_map(|t| t.data().to_vec()).collect();
    let analytic: Vec<f64> = grads.iter().flat_map(|t| t.data().to_vec()).collect();
    let set = |p: &mut MonetParams<f64>, v: &[f64]| {
        let mut off = 0;
        for t in p.parameters_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&v[off..off + n]);
            off += n;
        }
    };
    let mut scratch = params.clone();
    max_rel_err(
        |v| {
            set(&mut scratch, v);
            loss_of(&scratch).0 .0
        },
        &flat,
        &analytic,
    )
}
