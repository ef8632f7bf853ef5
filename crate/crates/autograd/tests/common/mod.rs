#![allow(dead_code)]

use mabn_autograd::gradcheck::{central_differences, max_relative_error};
use mabn_autograd::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-8;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Builds a scalar loss from `inputs` on a fresh tape, returning the value.
fn evaluate(build: &dyn Fn(&mut Tape, &[Var]) -> Var, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = build(&mut tape, &vars);
    tape.value(out).item()
}

/// Worst relative error between autodiff and central differences across
/// all inputs.
pub fn gradient_error(build: &dyn Fn(&mut Tape, &[Var]) -> Var, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = build(&mut tape, &vars);
    tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (k, var) in vars.iter().enumerate() {
        let analytic = tape.grad(*var).unwrap();
        let mut perturbed = inputs.to_vec();
        let mut x = perturbed[k].data().to_vec();
        let numeric = central_differences(&mut x, FD_STEP, |xs| {
            perturbed[k] = Tensor::new(inputs[k].shape().to_vec(), xs.to_vec()).unwrap();
            evaluate(build, &perturbed)
        });
        worst = worst.max(max_relative_error(analytic.data(), &numeric, FD_FLOOR));
    }
    worst
}
