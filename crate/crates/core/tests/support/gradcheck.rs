//! Central finite-difference checks for every layer type and a tiny model.

#![allow(dead_code)]

use cutassess::nn::*;
use cutassess::training::sparse_ce_loss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Entries smaller than this are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}

/// Numeric gradient of `f` with respect to `values`, perturbing in place.
pub fn numeric_grad(values: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let orig = values[i];
            values[i] = orig + FD_STEP;
            let up = f(values);
            values[i] = orig - FD_STEP;
            let down = f(values);
            values[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn tensor(rng: &mut ChaCha8Rng, b: usize, n: usize, c: usize) -> Tensor3 {
    Tensor3::from_vec(b, n, c, random_vec(rng, b * n * c)).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A named max relative error.
pub type Check = (String, f64);

/// Conv layer against `L = sum(y * r)` for a fixed random `r`.
pub fn conv_checks(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n, cin, cout) = (3, 9, 4, 5);
    let layer = {
        let mut l = ConvLayer::new(3, cin, cout, &mut rng).unwrap();
        l.bias = random_vec(&mut rng, cout);
        l
    };
    let x = tensor(&mut rng, b, n, cin);
    let r = random_vec(&mut rng, b * n * cout);
    let (_, cache) = layer.forward(&x).unwrap();
    let dy = Tensor3::from_vec(b, n, cout, r.clone()).unwrap();
    let (grads, dx) = layer.backward(&cache, &dy, true).unwrap();
    let dx = dx.unwrap();

    let loss = |l: &ConvLayer, x: &Tensor3| dot(conv1d_forward(x, l).unwrap().data(), &r);
    let mut w = layer.weight.clone();
    let nw = numeric_grad(&mut w, |w| {
        loss(&ConvLayer::from_parts(3, cin, cout, w.to_vec(), layer.bias.clone()).unwrap(), &x)
    });
    let mut bias = layer.bias.clone();
    let nb = numeric_grad(&mut bias, |bv| {
        loss(&ConvLayer::from_parts(3, cin, cout, layer.weight.clone(), bv.to_vec()).unwrap(), &x)
    });
    let mut xs = x.data().to_vec();
    let nx = numeric_grad(&mut xs, |xv| loss(&layer, &Tensor3::from_vec(b, n, cin, xv.to_vec()).unwrap()));
    vec![
        ("conv.kernel".into(), max_rel_err(&grads.weight, &nw)),
        ("conv.bias".into(), max_rel_err(&grads.bias, &nb)),
        ("conv.input".into(), max_rel_err(dx.data(), &nx)),
    ]
}

/// ReLU with inputs kept away from the kink.
pub fn relu_checks(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n, c) = (2, 7, 3);
    let mut xs = random_vec(&mut rng, b * n * c);
    for v in &mut xs {
        if v.abs() < 0.05 {
            *v += 0.1f64.copysign(*v);
        }
    }
    let r = random_vec(&mut rng, b * n * c);
    let x = Tensor3::from_vec(b, n, c, xs.clone()).unwrap();
    let out = relu(&x);
    let dx = relu_backward(&out, &Tensor3::from_vec(b, n, c, r.clone()).unwrap());
    let nx = numeric_grad(&mut xs, |xv| dot(relu(&Tensor3::from_vec(b, n, c, xv.to_vec()).unwrap()).data(), &r));
    vec![("relu.input".into(), max_rel_err(dx.data(), &nx))]
}

/// Training-mode batch norm (batch statistics) against `L = sum(y * r)`.
pub fn batchnorm_checks(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n, c) = (3, 5, 4);
    let mut layer = BatchNormLayer::new(c);
    layer.gamma = random_vec(&mut rng, c).iter().map(|g| g + 1.5).collect();
    layer.beta = random_vec(&mut rng, c);
    let x = tensor(&mut rng, b, n, c);
    let r = random_vec(&mut rng, b * n * c);
    let (_, cache, _, _) = layer.forward_batch_stats(&x).unwrap();
    let (grads, dx) = layer
        .backward(&cache, &Tensor3::from_vec(b, n, c, r.clone()).unwrap())
        .unwrap();

    let loss = |l: &BatchNormLayer, x: &Tensor3| dot(l.forward_batch_stats(x).unwrap().0.data(), &r);
    let mut gamma = layer.gamma.clone();
    let ng = numeric_grad(&mut gamma, |g| {
        let mut l = layer.clone();
        l.gamma = g.to_vec();
        loss(&l, &x)
    });
    let mut beta = layer.beta.clone();
    let nb = numeric_grad(&mut beta, |bv| {
        let mut l = layer.clone();
        l.beta = bv.to_vec();
        loss(&l, &x)
    });
    let mut xs = x.data().to_vec();
    let nx = numeric_grad(&mut xs, |xv| loss(&layer, &Tensor3::from_vec(b, n, c, xv.to_vec()).unwrap()));
    vec![
        ("bn.gamma".into(), max_rel_err(&grads.gamma, &ng)),
        ("bn.beta".into(), max_rel_err(&grads.beta, &nb)),
        ("bn.input".into(), max_rel_err(dx.data(), &nx)),
    ]
}

pub fn pool_checks(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n, c) = (2, 6, 3);
    let x = tensor(&mut rng, b, n, c);
    let r = random_vec(&mut rng, b * c);
    let dx = global_avg_pool_backward(&Matrix::from_vec(b, c, r.clone()).unwrap(), n);
    let mut xs = x.data().to_vec();
    let nx = numeric_grad(&mut xs, |xv| {
        dot(&global_avg_pool(&Tensor3::from_vec(b, n, c, xv.to_vec()).unwrap()).data, &r)
    });
    vec![("gap.input".into(), max_rel_err(dx.data(), &nx))]
}

/// Dense head, softmax and cross-entropy together.
pub fn dense_checks(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, fin, k) = (4, 5, 6);
    let mut head = DenseLayer::new(fin, k, &mut rng);
    head.bias = random_vec(&mut rng, k);
    let h = Matrix::from_vec(b, fin, random_vec(&mut rng, b * fin)).unwrap();
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
    let loss = |head: &DenseLayer, h: &Matrix| sparse_ce_loss(&dense_softmax(h, head).unwrap(), &labels).unwrap().0;
    let (_, dlogits) = sparse_ce_loss(&dense_softmax(&h, &head).unwrap(), &labels).unwrap();
    let (grads, dh) = dense_backward(&h, &head, &dlogits).unwrap();

    let mut w = head.weight.clone();
    let nw = numeric_grad(&mut w, |wv| {
        loss(&DenseLayer::from_parts(fin, k, wv.to_vec(), head.bias.clone()).unwrap(), &h)
    });
    let mut bias = head.bias.clone();
    let nb = numeric_grad(&mut bias, |bv| {
        loss(&DenseLayer::from_parts(fin, k, head.weight.clone(), bv.to_vec()).unwrap(), &h)
    });
    let mut hs = h.data.clone();
    let nh = numeric_grad(&mut hs, |hv| loss(&head, &Matrix::from_vec(b, fin, hv.to_vec()).unwrap()));
    vec![
        ("dense.weight".into(), max_rel_err(&grads.weight, &nw)),
        ("dense.bias".into(), max_rel_err(&grads.bias, &nb)),
        ("dense.input".into(), max_rel_err(&dh.data, &nh)),
    ]
}

pub fn tiny_arch() -> Architecture {
    Architecture {
        input_len: 16,
        input_channels: 3,
        block_channels: [4, 8, 12, 16],
        kernel_size: 3,
        num_classes: 6,
    }
}

/// Tiny model, batch of 4, random non-trivial affine batch-norm parameters.
pub fn tiny_problem(seed: u64) -> (CnnModel, Tensor3, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = CnnModel::new(tiny_arch(), seed).unwrap();
    {
        let (blocks, _) = model.layers_mut();
        for block in blocks {
            let c = block.bn.channels();
            block.bn.gamma = (0..c).map(|_| rng.random_range(0.5..1.5)).collect();
            block.bn.beta = random_vec(&mut rng, c);
            block.conv1.bias = random_vec(&mut rng, block.conv1.bias.len()).iter().map(|v| v * 0.1).collect();
            block.conv2.bias = random_vec(&mut rng, block.conv2.bias.len()).iter().map(|v| v * 0.1).collect();
        }
    }
    let x = tensor(&mut rng, 4, 16, 3);
    let labels = (0..4).map(|_| rng.random_range(0..6)).collect();
    (model, x, labels)
}

/// On/off state of every ReLU in a training-mode pass.
pub fn relu_pattern(model: &CnnModel, x: &Tensor3) -> Vec<bool> {
    let mut m = model.clone();
    let (blocks, _) = m.layers_mut();
    let mut h = x.clone();
    let mut out = Vec::new();
    for b in blocks.iter_mut() {
        let a = conv1d_forward(&h, &b.conv1).unwrap();
        out.extend(a.data().iter().map(|v| *v > 0.0));
        let c = conv1d_forward(&relu(&a), &b.conv2).unwrap();
        out.extend(c.data().iter().map(|v| *v > 0.0));
        h = batchnorm_forward(&relu(&c), &mut b.bn, Mode::Training).unwrap();
    }
    out
}

fn model_loss(model: &CnnModel, x: &Tensor3, labels: &[usize]) -> f64 {
    let mut m = model.clone();
    let (p, _) = m.forward_train(x).unwrap();
    sparse_ce_loss(&p, labels).unwrap().0
}

pub type TensorGrads = Vec<(String, Vec<f64>, Vec<f64>)>;

/// Analytic and numeric gradients of every parameter tensor of `model`.
pub fn model_gradients(model: &CnnModel, x: &Tensor3, labels: &[usize]) -> TensorGrads {
    gradients_inner(model, x, labels, false).unwrap()
}

/// Like [`model_gradients`], but `None` as soon as a `FD_STEP` probe flips
/// a ReLU: central differences across a kink do not estimate the gradient.
pub fn smooth_model_gradients(model: &CnnModel, x: &Tensor3, labels: &[usize]) -> Option<TensorGrads> {
    gradients_inner(model, x, labels, true)
}

fn gradients_inner(model: &CnnModel, x: &Tensor3, labels: &[usize], guard: bool) -> Option<TensorGrads> {
    let mut m = model.clone();
    let (p, cache) = m.forward_train(x).unwrap();
    let (_, dlogits) = sparse_ce_loss(&p, labels).unwrap();
    let analytic = model.backward(&cache, &dlogits).unwrap();
    let base = guard.then(|| relu_pattern(model, x));
    let mut out = Vec::new();
    for (t, info) in model.param_infos().iter().enumerate() {
        let mut probe = model.clone();
        let len = probe.params()[t].len();
        let mut numeric = Vec::with_capacity(len);
        for i in 0..len {
            let orig = probe.params()[t][i];
            let side = |delta: f64, probe: &mut CnnModel| {
                probe.params_mut()[t][i] = orig + delta;
                let flipped = base.as_ref().is_some_and(|b| *b != relu_pattern(probe, x));
                (!flipped).then(|| model_loss(probe, x, labels))
            };
            let up = side(FD_STEP, &mut probe)?;
            let down = side(-FD_STEP, &mut probe)?;
            probe.params_mut()[t][i] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        out.push((info.name.clone(), analytic.tensors[t].clone(), numeric));
    }
    Some(out)
}

/// Smooth gradients of the first `tiny_problem` derived from `seed` where
/// no probe crosses a ReLU kink, plus the number of rejected candidates.
pub fn smooth_problem_gradients(seed: u64) -> (TensorGrads, u64) {
    (0u64..)
        .find_map(|k| {
            let (m, x, l) = tiny_problem(seed.wrapping_mul(1_000_003).wrapping_add(k));
            smooth_model_gradients(&m, &x, &l).map(|g| (g, k))
        })
        .unwrap()
}

pub fn model_checks(seed: u64) -> Vec<Check> {
    smooth_problem_gradients(seed)
        .0
        .into_iter()
        .map(|(name, a, n)| (format!("model.{name}"), max_rel_err(&a, &n)))
        .collect()
}

pub fn all_checks(seed: u64) -> Vec<Check> {
    let mut out = conv_checks(seed);
    out.extend(relu_checks(seed));
    out.extend(batchnorm_checks(seed));
    out.extend(pool_checks(seed));
    out.extend(dense_checks(seed));
    out.extend(model_checks(seed));
    out
}
