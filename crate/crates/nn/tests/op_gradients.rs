//! Every differentiable op is checked against central finite differences on
//! f64 leaves.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wristgest_nn::{numel, Graph, Mode, ParamStore, Tensor, Var};

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = numel(shape);
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces any output to a scalar with fixed random weights so every output
/// entry contributes a distinct sensitivity.
fn weighted_sum(g: &mut Graph<'_, f64>, y: Var) -> Var {
    let shape = g.shape(y).to_vec();
    let w = g.input(random(&shape, 999));
    let p = g.mul(y, w).unwrap();
    g.sum(p)
}

fn check<F>(inputs: Vec<Tensor<f64>>, build: F)
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Var,
{
    let store = ParamStore::<f64>::new();
    let loss_of = |vals: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new(&store, Mode::Eval);
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone())).collect();
        let y = build(&mut g, &vars);
        let l = weighted_sum(&mut g, y);
        g.value(l).item()
    };
    let mut g = Graph::new(&store, Mode::Eval);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let y = build(&mut g, &vars);
    let l = weighted_sum(&mut g, y);
    let grads = g.backward(l).unwrap();
    let h = 1e-6;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= h;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let err = (numeric - analytic[j]).abs() / numeric.abs().max(analytic[j].abs()).max(1e-3);
            assert!(err < 1e-5, "input {i} entry {j}: analytic {} numeric {numeric}", analytic[j]);
        }
    }
}

#[test]
fn matmul() {
    check(vec![random(&[3, 4], 1), random(&[4, 2], 2)], |g, v| g.matmul(v[0], v[1]).unwrap());
}

#[test]
fn linear_with_bias() {
    check(
        vec![random(&[2, 3, 4], 1), random(&[4, 5], 2), random(&[5], 3)],
        |g, v| g.linear(v[0], v[1], Some(v[2])).unwrap(),
    );
}

#[test]
fn add_mul_scale() {
    check(vec![random(&[3, 2], 1), random(&[3, 2], 2)], |g, v| {
        let a = g.add(v[0], v[1]).unwrap();
        let m = g.mul(a, v[1]).unwrap();
        g.scale(m, -0.7)
    });
}

#[test]
fn add_broadcast() {
    check(vec![random(&[2, 3, 4], 1), random(&[3, 4], 2)], |g, v| g.add_broadcast(v[0], v[1]).unwrap());
}

#[test]
fn reshape_and_concat() {
    check(vec![random(&[2, 3, 2], 1), random(&[2, 1, 2], 2)], |g, v| {
        let c = g.concat(&[v[0], v[1], v[0]], 1).unwrap();
        g.reshape(c, vec![4, 7]).unwrap()
    });
}

#[test]
fn conv1d_strided_padded() {
    check(
        vec![random(&[2, 3, 9], 1), random(&[4, 3, 5], 2), random(&[4], 3)],
        |g, v| g.conv1d(v[0], v[1], Some(v[2]), 2, 2).unwrap(),
    );
}

#[test]
fn conv1d_pointwise() {
    check(vec![random(&[2, 3, 6], 1), random(&[2, 3, 1], 2)], |g, v| g.conv1d(v[0], v[1], None, 1, 0).unwrap());
}

#[test]
fn layer_norm() {
    check(
        vec![random(&[3, 6], 1), random(&[6], 2), random(&[6], 3)],
        |g, v| g.layer_norm(v[0], v[1], v[2]).unwrap(),
    );
}

#[test]
fn gelu() {
    check(vec![random(&[10], 1)], |g, v| g.gelu(v[0]));
}

#[test]
fn softmax() {
    check(vec![random(&[3, 5], 1)], |g, v| g.softmax(v[0]).unwrap());
}

#[test]
fn mean_pool_and_expand() {
    check(vec![random(&[2, 3, 4], 1)], |g, v| {
        let p = g.mean_pool_time(v[0]).unwrap();
        g.expand(p, 3)
    });
}

#[test]
fn attention_separate_inputs() {
    check(
        vec![random(&[2, 3, 4], 1), random(&[2, 5, 4], 2), random(&[2, 5, 6], 3)],
        |g, v| g.sdpa(v[0], v[1], v[2], 2).unwrap(),
    );
}

#[test]
fn attention_with_shared_key_and_value() {
    check(vec![random(&[1, 1, 4], 1), random(&[2, 4, 4], 2)], |g, v| {
        let q = g.expand(v[0], 1);
        let q = g.reshape(q, vec![1, 1, 4]).unwrap();
        let q = g.concat(&[q, q], 0).unwrap();
        g.sdpa(q, v[1], v[1], 1).unwrap()
    });
}

#[test]
fn weighted_cross_entropy() {
    check(vec![random(&[4, 3], 1)], |g, v| {
        g.cross_entropy(v[0], &[0, 2, 2, 1], Some(&[0.5, 1.0, 2.0])).unwrap()
    });
}

#[test]
fn mixture() {
    check(vec![random(&[2, 3], 1), random(&[2, 3], 2), random(&[3], 3)], |g, v| {
        let pi = g.softmax(v[2]).unwrap();
        g.mix(&[v[0], v[1], v[0]], pi).unwrap()
    });
}

#[test]
fn cross_entropy_value_matches_closed_form() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store, Mode::Eval);
    let z = g.input(Tensor::new(vec![2, 2], vec![0.0, 0.0, 1.0, 0.0]).unwrap());
    let l = g.cross_entropy(z, &[0, 1], Some(&[1.0, 3.0])).unwrap();
    let expect = (2f64.ln() + 3.0 * (1.0 + 1f64.exp()).ln()) / 2.0;
    assert!((g.value(l).item() - expect).abs() < 1e-12);
}
