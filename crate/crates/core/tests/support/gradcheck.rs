//! Central finite differences, independent of the tape's backward rules.
//! Only forward evaluation of the op under test is used.

use cornvit::tensor::{GradTape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-scale..scale))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Builds a scalar from the inputs: `f(tape, vars) -> loss`.
pub trait ScalarFn: Fn(&GradTape<f64>, &[Var<f64>]) -> Var<f64> {}
impl<F: Fn(&GradTape<f64>, &[Var<f64>]) -> Var<f64>> ScalarFn for F {}

fn eval(f: &impl ScalarFn, inputs: &[Tensor<f64>]) -> f64 {
    let tape = GradTape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    f(&tape, &vars).value().item().expect("scalar output")
}

/// Analytic gradients of `f` w.r.t. every input.
pub fn analytic(f: &impl ScalarFn, inputs: &[Tensor<f64>]) -> Vec<Tensor<f64>> {
    let tape = GradTape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&tape, &vars);
    let grads = tape.backward(&loss).expect("backward");
    vars.iter().map(|v| grads.get_or_zeros(v)).collect()
}

/// Numerical gradients by central differences with step `STEP`.
pub fn numeric(f: &impl ScalarFn, inputs: &[Tensor<f64>]) -> Vec<Tensor<f64>> {
    (0..inputs.len())
        .map(|which| {
            let base = inputs[which].to_vec();
            let shape = inputs[which].shape().to_vec();
            let grad = (0..base.len())
                .map(|i| {
                    let probe = |delta: f64| {
                        let mut data = base.clone();
                        data[i] += delta;
                        let mut perturbed = inputs.to_vec();
                        perturbed[which] = Tensor::new(shape.clone(), data).unwrap();
                        eval(f, &perturbed)
                    };
                    (probe(STEP) - probe(-STEP)) / (2.0 * STEP)
                })
                .collect();
            Tensor::new(shape, grad).unwrap()
        })
        .collect()
}

/// Largest relative error over all entries, `|a − n| / max(|a|, |n|, 1e-3)`.
///
/// The floor keeps entries whose true gradient is near zero from
/// turning round-off into a huge ratio.
pub fn max_relative_error(f: &impl ScalarFn, inputs: &[Tensor<f64>]) -> f64 {
    let a = analytic(f, inputs);
    let n = numeric(f, inputs);
    a.iter()
        .zip(&n)
        .flat_map(|(ta, tn)| {
            ta.data()
                .iter()
                .zip(tn.data())
                .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-3))
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

/// Random projection weights so a tensor-valued op reduces to a scalar
/// whose gradient exercises every output entry differently.
pub fn projected(tape: &GradTape<f64>, out: &Var<f64>, seed: u64) -> Var<f64> {
    let mut r = rng(seed ^ 0x5eed);
    let w = tape.constant(random_tensor(&mut r, out.shape(), 1.0));
    let prod = tape.mul(out, &w).unwrap();
    tape.sum(&prod).unwrap()
}
