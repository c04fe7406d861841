//! The closed set of differentiable primitives, each paired with a
//! finite-difference test case. The `gradcheck` CLI subcommand and the test
//! suites iterate this registry.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{concat, finite_difference_check, Tape, Tensor, Var};
use crate::error::Result;

pub type CaseFn = for<'t> fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>;
pub type InputFn = fn(&mut ChaCha8Rng) -> Vec<Tensor>;

pub struct Primitive {
    pub name: &'static str,
    pub inputs: InputFn,
    pub apply: CaseFn,
}

impl Primitive {
    /// Gradcheck this primitive on inputs drawn from `seed`.
    pub fn check(&self, seed: u64, eps: f64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        finite_difference_check(self.apply, &(self.inputs)(&mut rng), eps)
    }
}

fn positive(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let t = Tensor::randn(shape, rng);
    Tensor::from_fn(shape, |i| 0.5 + t.data()[i].abs())
}

/// Normal samples pushed away from zero so kinked functions are probed on
/// one side of the kink.
fn off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let t = Tensor::randn(shape, rng);
    Tensor::from_fn(shape, |i| {
        let v = t.data()[i];
        v + 0.1 * v.signum()
    })
}

const FILL_MASK: [bool; 6] = [false, true, false, false, false, true];

pub fn primitives() -> Vec<Primitive> {
    vec![
        Primitive {
            name: "matmul",
            inputs: |r| vec![Tensor::randn(&[3, 4], r), Tensor::randn(&[4, 2], r)],
            apply: |_, v| v[0].matmul(v[1]),
        },
        Primitive {
            name: "batched_matmul",
            inputs: |r| vec![Tensor::randn(&[2, 3, 4], r), Tensor::randn(&[2, 4, 5], r)],
            apply: |_, v| v[0].bmm(v[1]),
        },
        Primitive {
            name: "transpose",
            inputs: |r| vec![Tensor::randn(&[2, 3, 4], r)],
            apply: |_, v| v[0].transpose(0, 2),
        },
        Primitive {
            name: "add",
            inputs: |r| vec![Tensor::randn(&[2, 3], r), Tensor::randn(&[3], r)],
            apply: |_, v| v[0].add(v[1]),
        },
        Primitive {
            name: "sub",
            inputs: |r| vec![Tensor::randn(&[2, 3], r), Tensor::randn(&[2, 1], r)],
            apply: |_, v| v[0].sub(v[1]),
        },
        Primitive {
            name: "mul",
            inputs: |r| vec![Tensor::randn(&[2, 3, 4], r), Tensor::randn(&[3, 1], r)],
            apply: |_, v| v[0].mul(v[1]),
        },
        Primitive {
            name: "div",
            inputs: |r| vec![Tensor::randn(&[2, 3], r), positive(&[2, 3], r)],
            apply: |_, v| v[0].div(v[1]),
        },
        Primitive {
            name: "broadcast",
            inputs: |r| vec![Tensor::randn(&[3, 1], r)],
            apply: |_, v| v[0].broadcast_to(&[2, 3, 4]),
        },
        Primitive {
            name: "scale",
            inputs: |r| vec![Tensor::randn(&[4], r)],
            apply: |_, v| v[0].scale(1.7),
        },
        Primitive {
            name: "exp",
            inputs: |r| vec![Tensor::randn(&[5], r)],
            apply: |_, v| v[0].exp(),
        },
        Primitive {
            name: "log",
            inputs: |r| vec![positive(&[5], r)],
            apply: |_, v| v[0].log(),
        },
        Primitive {
            name: "elu",
            inputs: |r| vec![off_zero(&[6], r)],
            apply: |_, v| v[0].elu(),
        },
        Primitive {
            name: "sigmoid",
            inputs: |r| vec![Tensor::randn(&[5], r)],
            apply: |_, v| v[0].sigmoid(),
        },
        Primitive {
            name: "tanh",
            inputs: |r| vec![Tensor::randn(&[5], r)],
            apply: |_, v| v[0].tanh(),
        },
        Primitive {
            name: "softmax",
            inputs: |r| vec![Tensor::randn(&[3, 5], r)],
            apply: |_, v| v[0].softmax(),
        },
        Primitive {
            name: "layer_norm",
            inputs: |r| vec![Tensor::randn(&[3, 5], r)],
            apply: |_, v| v[0].layer_norm(),
        },
        Primitive {
            name: "concat",
            inputs: |r| vec![Tensor::randn(&[2, 3], r), Tensor::randn(&[2, 2], r)],
            apply: |_, v| concat(&[v[0], v[1]], 1),
        },
        Primitive {
            name: "reshape",
            inputs: |r| vec![Tensor::randn(&[2, 6], r)],
            apply: |_, v| v[0].reshape(&[3, 4]),
        },
        Primitive {
            name: "sum",
            inputs: |r| vec![Tensor::randn(&[2, 3, 4], r)],
            apply: |_, v| v[0].sum(1),
        },
        Primitive {
            name: "mean",
            inputs: |r| vec![Tensor::randn(&[2, 3, 4], r)],
            apply: |_, v| v[0].mean(0),
        },
        Primitive {
            name: "masked_fill",
            inputs: |r| vec![Tensor::randn(&[2, 6], r)],
            apply: |_, v| v[0].masked_fill(&FILL_MASK, &[6], 0.3),
        },
        Primitive {
            name: "masked_softmax",
            inputs: |r| vec![Tensor::randn(&[2, 6], r)],
            apply: |_, v| v[0].masked_fill(&FILL_MASK, &[6], f64::NEG_INFINITY)?.softmax(),
        },
        Primitive {
            name: "relu",
            inputs: |r| vec![off_zero(&[6], r)],
            apply: |_, v| v[0].relu(),
        },
    ]
}
