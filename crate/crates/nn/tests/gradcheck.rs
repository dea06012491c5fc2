//! Central-difference checks of every backward rule, in f64.

use crabwatch_nn::{ConvGeom, Graph, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Checks d(sum(f(inputs) ⊙ probe))/d(inputs) against finite differences.
fn check(inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<'_, f64>, &[Var]) -> Var, tol: f64) {
    let store = ParamStore::<f64>::new(0);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let eval = |ins: &[Tensor<f64>], probe: Option<&Tensor<f64>>| -> (f64, Option<Vec<Tensor<f64>>>, Tensor<f64>) {
        let mut g = Graph::new(&store);
        let vars: Vec<Var> = ins.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&mut g, &vars);
        let outv = g.value(out).clone();
        let Some(probe) = probe else { return (0.0, None, outv) };
        let p = g.input(probe.clone());
        let prod = g.mul(out, p);
        let loss = g.mean(prod);
        let val = g.value(loss).data()[0];
        let grads = g.backward(loss);
        let gs = vars.iter().map(|&v| grads.of(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape())));
        (val, Some(gs.collect()), outv)
    };
    let (_, _, out0) = eval(&inputs, None);
    let probe = rand_tensor(&mut rng, out0.shape());
    let (_, analytic, _) = eval(&inputs, Some(&probe));
    let analytic = analytic.unwrap();
    let h = 1e-6;
    for (k, inp) in inputs.iter().enumerate() {
        for i in 0..inp.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus, Some(&probe)).0 - eval(&minus, Some(&probe)).0) / (2.0 * h);
            let a = analytic[k].data()[i];
            assert!(
                (a - numeric).abs() <= tol * (1.0 + numeric.abs()),
                "input {k} elem {i}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

#[test]
fn conv2d_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (stride, pad, groups) in [(1, 1, 1), (2, 1, 1), (1, 0, 2), (2, 2, 4)] {
        let x = rand_tensor(&mut rng, &[2, 4, 5, 6]);
        let w = rand_tensor(&mut rng, &[4, 4 / groups, 3, 3]);
        let b = rand_tensor(&mut rng, &[4]);
        let geom = ConvGeom { kernel: 3, stride, pad, groups };
        check(vec![x, w, b], |g, v| g.conv2d(v[0], v[1], Some(v[2]), geom), 1e-6);
    }
}

#[test]
fn pointwise_conv_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, &[2, 3, 4, 4]);
    let w = rand_tensor(&mut rng, &[5, 3, 1, 1]);
    let geom = ConvGeom { kernel: 1, stride: 1, pad: 0, groups: 1 };
    check(vec![x, w], |g, v| g.conv2d(v[0], v[1], None, geom), 1e-6);
}

#[test]
fn conv_transpose_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (k, stride, pad, groups) in [(3, 1, 1, 1), (6, 2, 2, 1), (7, 3, 2, 1), (3, 1, 1, 2)] {
        let x = rand_tensor(&mut rng, &[1, 2, 3, 3]);
        let w = rand_tensor(&mut rng, &[2, 4 / groups, k, k]);
        let b = rand_tensor(&mut rng, &[4]);
        let geom = ConvGeom { kernel: k, stride, pad, groups };
        check(vec![x, w, b], |g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), geom), 1e-6);
    }
}

#[test]
fn transposed_conv_upsamples_exactly() {
    let store = ParamStore::<f64>::new(0);
    for m in 2..=5 {
        let geom = ConvGeom { kernel: m + 4, stride: m, pad: 2, groups: 1 };
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::zeros(&[1, 1, 7, 5]));
        let w = g.input(Tensor::zeros(&[1, 1, m + 4, m + 4]));
        let y = g.conv_transpose2d(x, w, None, geom);
        assert_eq!(g.value(y).dims4(), (1, 1, 7 * m, 5 * m));
    }
}

#[test]
fn elementwise_and_broadcast_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = rand_tensor(&mut rng, &[2, 3, 2, 2]);
    let b = rand_tensor(&mut rng, &[2, 3, 1, 1]);
    let c = rand_tensor(&mut rng, &[1, 3, 2, 2]);
    check(vec![a.clone(), b.clone()], |g, v| g.mul(v[0], v[1]), 1e-6);
    check(vec![a.clone(), c.clone()], |g, v| g.add(v[0], v[1]), 1e-6);
    check(vec![a.clone()], |g, v| g.silu(v[0]), 1e-6);
    check(vec![a.clone()], |g, v| g.sigmoid(v[0]), 1e-6);
    check(vec![a.clone()], |g, v| g.scale(v[0], -0.3), 1e-6);
    check(vec![a], |g, v| g.relu(v[0]), 1e-6);
}

#[test]
fn layout_op_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = rand_tensor(&mut rng, &[2, 8, 3, 2]);
    let b = rand_tensor(&mut rng, &[2, 3, 3, 2]);
    check(vec![a.clone(), b], |g, v| g.concat(&[v[0], v[1]]), 1e-6);
    check(vec![a.clone()], |g, v| g.pixel_shuffle(v[0], 2), 1e-6);
    check(vec![a.clone()], |g, v| g.upsample_nearest(v[0], 2), 1e-6);
    check(vec![a.clone()], |g, v| g.global_avg_pool(v[0]), 1e-6);
    check(vec![a.clone()], |g, v| g.channel_permute(v[0], &[1, 3, 5, 7, 0, 2, 4, 6]), 1e-6);
    check(vec![a.clone()], |g, v| g.channel_slice(v[0], 2, 5), 1e-6);
    check(vec![a.clone()], |g, v| g.max_pool2d(v[0], 3, 1, 1), 1e-6);
    check(vec![a], |g, v| g.group_norm(v[0], 2, 1e-5), 1e-5);
}

#[test]
fn channel_conv1d_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, &[2, 6, 1, 1]);
    let w = rand_tensor(&mut rng, &[1, 1, 3]);
    check(vec![x, w], |g, v| g.channel_conv1d(v[0], v[1]), 1e-6);
}

#[test]
fn l1_loss_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = rand_tensor(&mut rng, &[1, 2, 3, 3]);
    let t = rand_tensor(&mut rng, &[1, 2, 3, 3]);
    check(vec![a], move |g, v| g.l1_loss(v[0], t.clone()), 1e-6);
}

#[test]
fn shared_parameter_accumulates() {
    let mut store = ParamStore::<f64>::new(0);
    let id = store.add("w", Tensor::new(&[1], vec![3.0]));
    let mut g = Graph::new(&store);
    let w1 = g.param(id);
    let w2 = g.param(id);
    assert_eq!(w1, w2);
    let y = g.mul(w1, w2);
    let loss = g.mean(y);
    let grads = g.backward(loss);
    assert_eq!(grads.param(id).unwrap().data(), &[6.0]);
    grads.accumulate_into(&mut store);
    assert_eq!(store.get(id).grad.data(), &[6.0]);
}
