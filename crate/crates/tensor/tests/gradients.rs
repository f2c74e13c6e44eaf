//! Finite-difference checks of every differentiable op.

mod common;

use aevit_tensor::gradcheck::check_inputs;
use aevit_tensor::{Graph, Result, Tensor, Var};
use common::{randn, rng};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const H: f64 = 1e-6;
const TOL: f64 = 1e-5;

/// Contract `y` against a fixed random tensor so every output element matters.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut r = rng(seed ^ 0xABCD);
    let w = g.input(randn(&mut r, g.shape(y)));
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn check<F>(name: &str, shapes: &[&[usize]], f: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    for seed in SEEDS {
        let mut r = rng(seed);
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| randn(&mut r, s)).collect();
        let report = check_inputs(
            &inputs,
            |g, v| {
                let y = f(g, v)?;
                project(g, y, seed)
            },
            H,
        )
        .unwrap();
        assert!(
            report.passes(TOL),
            "{name} seed {seed}: worst {:?}",
            report.worst()
        );
    }
}

#[test]
fn elementwise_binary_with_broadcast() {
    check("add", &[&[2, 3, 4], &[3, 1]], |g, v| g.add(v[0], v[1]));
    check("sub", &[&[2, 1, 4], &[3, 4]], |g, v| g.sub(v[0], v[1]));
    check("mul", &[&[2, 3, 4], &[1, 3, 1]], |g, v| g.mul(v[0], v[1]));
}

#[test]
fn scalar_ops() {
    check("scale", &[&[3, 5]], |g, v| g.scale(v[0], -1.7));
    check("add_scalar", &[&[3, 5]], |g, v| g.add_scalar(v[0], 0.3));
}

#[test]
fn activations() {
    check("silu", &[&[4, 6]], |g, v| g.silu(v[0]));
    check("gelu", &[&[4, 6]], |g, v| g.gelu(v[0]));
    check("tanh", &[&[4, 6]], |g, v| g.tanh(v[0]));
}

#[test]
fn reductions() {
    check("sum", &[&[3, 4]], |g, v| {
        let s = g.sum(v[0])?;
        g.mul(s, s)
    });
    check("mean", &[&[3, 4]], |g, v| {
        let m = g.mean(v[0])?;
        g.tanh(m)
    });
    check("mse", &[&[2, 3, 3], &[2, 3, 3]], |g, v| g.mse(v[0], v[1]));
}

#[test]
fn matmuls() {
    check("matmul 2d", &[&[3, 4], &[4, 5]], |g, v| g.matmul(v[0], v[1]));
    check("matmul batched", &[&[2, 3, 4], &[2, 4, 2]], |g, v| g.matmul(v[0], v[1]));
    check("matmul shared rhs", &[&[2, 3, 4], &[4, 2]], |g, v| g.matmul(v[0], v[1]));
    check("matmul a b^T", &[&[2, 3, 4], &[2, 5, 4]], |g, v| {
        g.matmul_t(v[0], v[1], false, true)
    });
    check("matmul a^T b", &[&[4, 3], &[4, 2]], |g, v| g.matmul_t(v[0], v[1], true, false));
}

#[test]
fn conv2d_all_arguments() {
    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        check(
            "conv2d",
            &[&[2, 2, 5, 5], &[3, 2, 3, 3], &[3]],
            |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad),
        );
    }
    check("conv2d 1x1", &[&[1, 3, 4, 4], &[2, 3, 1, 1]], |g, v| {
        g.conv2d(v[0], v[1], None, 1, 0)
    });
}

#[test]
fn conv_transpose2d_all_arguments() {
    for (stride, pad, op) in [(1, 1, 0), (2, 1, 1), (2, 0, 0)] {
        check(
            "conv_transpose2d",
            &[&[2, 3, 3, 3], &[3, 2, 3, 3], &[2]],
            |g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), stride, pad, op),
        );
    }
}

#[test]
fn normalizations() {
    check("group_norm", &[&[2, 4, 3, 3]], |g, v| g.group_norm(v[0], 2, 1e-5));
    check("group_norm per-channel", &[&[1, 3, 2, 2]], |g, v| {
        g.group_norm(v[0], 3, 1e-5)
    });
    check("layer_norm", &[&[3, 2, 6]], |g, v| g.layer_norm(v[0], 1e-5));
    check("softmax", &[&[2, 3, 5]], |g, v| g.softmax(v[0]));
}

#[test]
fn layout_ops() {
    check("reshape", &[&[2, 6]], |g, v| {
        let r = g.reshape(v[0], &[3, 4])?;
        g.tanh(r)
    });
    check("permute", &[&[2, 3, 4]], |g, v| g.permute(v[0], &[1, 2, 0]));
    check("concat", &[&[2, 2, 3], &[2, 1, 3]], |g, v| g.concat(&[v[0], v[1]], 1));
    check("slice", &[&[4, 5]], |g, v| g.slice(v[0], 1, 1, 3));
}

#[test]
fn composite_attention_block() {
    check("attention", &[&[2, 4, 6], &[6, 6], &[6, 6]], |g, v| {
        let q = g.matmul(v[0], v[1])?;
        let k = g.matmul(v[0], v[2])?;
        let s = g.matmul_t(q, k, false, true)?;
        let s = g.scale(s, 1.0 / 6f64.sqrt())?;
        let a = g.softmax(s)?;
        let o = g.matmul(a, v[0])?;
        g.layer_norm(o, 1e-5)
    });
}

#[test]
fn reused_variable_accumulates() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap());
    let sq = g.mul(x, x).unwrap();
    let y = g.add(sq, x).unwrap();
    let l = g.sum(y).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[3.0, -3.0, 2.0]);
}

#[test]
fn backward_of_sum_is_ones() {
    let mut r = rng(3);
    let mut g = Graph::<f64>::new();
    let x = g.leaf(randn(&mut r, &[2, 3]));
    let l = g.sum(x).unwrap();
    let grads = g.backward(l).unwrap();
    assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 1.0));

    let sq = g.mul(x, x).unwrap();
    let l2 = g.sum(sq).unwrap();
    let grads = g.backward(l2).unwrap();
    let expect = g.value(x).map(|v| 2.0 * v);
    assert_eq!(grads.get(x).unwrap(), &expect);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::zeros([2]));
    assert!(g.backward(x).is_err());
}

#[test]
fn inputs_receive_no_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::ones([2]));
    let w = g.leaf(Tensor::ones([2]));
    let y = g.mul(x, w).unwrap();
    let l = g.sum(y).unwrap();
    let grads = g.backward(l).unwrap();
    assert!(grads.get(x).is_none());
    assert!(grads.get(w).is_some());
}
