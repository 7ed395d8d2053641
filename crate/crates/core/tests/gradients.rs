mod support;

use std::time::Instant;

use support::gradcheck::*;

fn assert_checks(checks: &[Check]) {
    for (name, err) in checks {
        assert!(*err <= TOLERANCE, "{name}: max relative error {err:e}");
    }
}

#[test]
fn conv_gradients() {
    assert_checks(&conv_checks(1));
}

#[test]
fn relu_gradients() {
    assert_checks(&relu_checks(2));
}

#[test]
fn batchnorm_gradients() {
    assert_checks(&batchnorm_checks(3));
}

#[test]
fn pool_gradients() {
    assert_checks(&pool_checks(4));
}

#[test]
fn dense_softmax_ce_gradients() {
    assert_checks(&dense_checks(5));
}

#[test]
fn tiny_model_gradients_every_tensor() {
    let start = Instant::now();
    let checks = model_checks(6);
    assert_eq!(checks.len(), 26);
    assert_checks(&checks);
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn oracle_catches_a_wrong_gradient() {
    let (model, x, labels) = tiny_problem(7);
    let (name, mut analytic, numeric) = model_gradients(&model, &x, &labels).swap_remove(0);
    analytic[0] += 1e-2 * analytic[0].abs().max(1e-3);
    assert!(max_rel_err(&analytic, &numeric) > TOLERANCE, "{name}");
}

#[test]
fn dead_unit_bias_has_zero_gradient() {
    let (mut model, x, labels) = tiny_problem(9);
    {
        let (blocks, _) = model.layers_mut();
        blocks[0].conv1.bias[2] = -100.0;
    }
    let grads = model_gradients(&model, &x, &labels);
    let (_, analytic, numeric) = grads.iter().find(|(n, _, _)| n == "block1.conv1.bias").unwrap();
    assert_eq!(analytic[2], 0.0);
    assert_eq!(numeric[2], 0.0);
    assert!(max_rel_err(analytic, numeric) <= TOLERANCE);
}

#[test]
fn kink_crossing_point_is_rejected() {
    // a ReLU input here sits within reach of a 1e-5 nudge
    let (model, x, labels) = tiny_problem(1);
    assert!(smooth_model_gradients(&model, &x, &labels).is_none());
    let worst = model_gradients(&model, &x, &labels)
        .iter()
        .map(|(_, a, n)| max_rel_err(a, n))
        .fold(0.0, f64::max);
    assert!(worst > TOLERANCE);
}
