#![allow(dead_code)]

pub mod oracles;

use dest_core::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

/// Value and analytic gradients of a scalar function of `inputs`.
pub fn analytic(inputs: &[Tensor], f: &dyn Fn(&mut Tape, &[Var]) -> Var) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(&t.clone().with_grad())).collect();
    let out = f(&mut tape, &vars);
    tape.backward(out).unwrap();
    let grads = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or(vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();
    (tape.scalar(out), grads)
}

fn value(inputs: &[Tensor], f: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&mut tape, &vars);
    tape.scalar(out)
}

/// Largest relative error between analytic and central-difference gradients.
pub fn max_rel_err(inputs: &[Tensor], eps: f64, f: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let (_, grads) = analytic(inputs, f);
    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        for e in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[e] += eps;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[e] -= eps;
            let num = (value(&plus, f) - value(&minus, f)) / (2.0 * eps);
            let a = grads[i][e];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-4);
            worst = worst.max(rel);
        }
    }
    worst
}
