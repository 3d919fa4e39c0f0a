//! Central finite differences, used to validate analytic gradients.
//!
//! [`op_cases`] lists every differentiable op with an input generator; each
//! case is checked by projecting the op output onto a fixed random tensor
//! and comparing the analytic gradient of that scalar with central
//! differences.

use crate::tensor::Tensor;

/// Central-difference gradient of `f` at `x` with the given step.
pub fn numeric_gradient(f: impl Fn(&Tensor<f64>) -> f64, x: &Tensor<f64>, step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..probe.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&Tensor::new(x.shape(), probe.clone()).expect("same shape"));
            probe[i] = orig - step;
            let down = f(&Tensor::new(x.shape(), probe.clone()).expect("same shape"));
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞, floor)`; the floor keeps all-zero
/// gradients from dividing by zero.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|v| v.abs()).fold(floor, f64::max);
    diff / scale
}

/// splitmix64 stream; keeps this module free of an RNG dependency.
struct Stream(u64);

impl Stream {
    fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + (hi - lo) * u
    }
}

/// Value range an input is drawn from.
#[derive(Debug, Clone, Copy)]
pub enum Domain {
    /// U[-1, 1], nudged at least 1e-3 away from 0 so kinks are never probed.
    Signed,
    /// U[0.5, 2].
    Positive,
    /// Lower-triangular factor with diagonal in [1.5, 2.5].
    LowerFactor,
}

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<(Vec<usize>, Domain)>,
    pub forward: fn(&[Tensor<f64>]) -> Tensor<f64>,
}

fn sample(shape: &[usize], domain: Domain, s: &mut Stream) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = match domain {
        Domain::Signed => (0..n)
            .map(|_| {
                let v = s.uniform(-1.0, 1.0);
                if v.abs() < 1e-3 {
                    v.signum() * 1e-3 + v
                } else {
                    v
                }
            })
            .collect(),
        Domain::Positive => (0..n).map(|_| s.uniform(0.5, 2.0)).collect(),
        Domain::LowerFactor => (0..n).map(|_| s.uniform(-0.5, 0.5)).collect(),
    };
    if let Domain::LowerFactor = domain {
        let k = shape[0];
        for i in 0..k {
            data[i * k + i] = s.uniform(1.5, 2.5);
        }
    }
    Tensor::new(shape, data).expect("valid shape")
}

/// Largest relative error over all inputs of `case` at one seed.
pub fn check_case(case: &OpCase, seed: u64, step: f64) -> f64 {
    let mut s = Stream(seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ 0xA076_1D64_78BD_642F);
    let inputs: Vec<Tensor<f64>> = case
        .inputs
        .iter()
        .map(|(shape, domain)| sample(shape, *domain, &mut s))
        .collect();
    let out_shape = (case.forward)(&inputs).shape().to_vec();
    let proj = sample(&out_shape, Domain::Signed, &mut s);
    // rank-0 outputs broadcast against the rank-0 projection
    let project = |out: &Tensor<f64>| -> Tensor<f64> { out.mul(&proj).expect("same shape").sum() };

    let tracked: Vec<Tensor<f64>> = inputs.iter().map(Tensor::requires_grad).collect();
    let grads = project(&(case.forward)(&tracked)).backward().expect("scalar");

    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(&tracked[k]).to_vec();
        let numeric = numeric_gradient(
            |probe| {
                let mut args = inputs.clone();
                args[k] = probe.clone();
                project(&(case.forward)(&args)).item()
            },
            input,
            step,
        );
        worst = worst.max(relative_error(&analytic, &numeric, 1e-6));
    }
    worst
}

fn signed(shape: &[usize]) -> (Vec<usize>, Domain) {
    (shape.to_vec(), Domain::Signed)
}

fn positive(shape: &[usize]) -> (Vec<usize>, Domain) {
    (shape.to_vec(), Domain::Positive)
}

/// Every differentiable op, each wrapped so its inputs come from the domain
/// the op is defined on.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "add",
            inputs: vec![signed(&[2, 3]), signed(&[2, 3])],
            forward: |x| x[0].add(&x[1]).unwrap(),
        },
        OpCase {
            name: "sub_scalar_broadcast",
            inputs: vec![signed(&[]), signed(&[2, 3])],
            forward: |x| x[0].sub(&x[1]).unwrap(),
        },
        OpCase {
            name: "mul",
            inputs: vec![signed(&[2, 3]), signed(&[2, 3])],
            forward: |x| x[0].mul(&x[1]).unwrap(),
        },
        OpCase {
            name: "div",
            inputs: vec![signed(&[2, 3]), positive(&[2, 3])],
            forward: |x| x[0].div(&x[1]).unwrap(),
        },
        OpCase {
            name: "neg",
            inputs: vec![signed(&[4])],
            forward: |x| x[0].neg(),
        },
        OpCase {
            name: "relu",
            inputs: vec![signed(&[3, 4])],
            forward: |x| x[0].relu(),
        },
        OpCase {
            name: "exp",
            inputs: vec![signed(&[3, 4])],
            forward: |x| x[0].exp(),
        },
        OpCase {
            name: "log",
            inputs: vec![positive(&[3, 4])],
            forward: |x| x[0].log().unwrap(),
        },
        OpCase {
            name: "sqrt",
            inputs: vec![positive(&[3, 4])],
            forward: |x| x[0].sqrt().unwrap(),
        },
        OpCase {
            name: "abs",
            inputs: vec![signed(&[3, 4])],
            forward: |x| x[0].abs(),
        },
        OpCase {
            name: "sum_axes",
            inputs: vec![signed(&[2, 3, 4])],
            forward: |x| x[0].sum_axes(&[0, 2]).unwrap(),
        },
        OpCase {
            name: "mean_axes",
            inputs: vec![signed(&[2, 3, 4])],
            forward: |x| x[0].mean_axes(&[1]).unwrap(),
        },
        OpCase {
            name: "l1norm",
            inputs: vec![signed(&[3, 4])],
            forward: |x| x[0].l1norm(Some(&[1])).unwrap(),
        },
        OpCase {
            name: "l2norm_sq",
            inputs: vec![signed(&[3, 4])],
            forward: |x| x[0].l2norm_sq(None).unwrap(),
        },
        OpCase {
            name: "matmul",
            inputs: vec![signed(&[2, 3, 4]), signed(&[4, 2])],
            forward: |x| x[0].matmul(&x[1]).unwrap(),
        },
        OpCase {
            name: "transpose",
            inputs: vec![signed(&[3, 5])],
            forward: |x| x[0].t().unwrap(),
        },
        OpCase {
            name: "conv2d",
            inputs: vec![signed(&[2, 2, 5, 6]), signed(&[3, 2, 3, 3])],
            forward: |x| x[0].conv2d(&x[1], 2, 1).unwrap(),
        },
        OpCase {
            name: "conv2d_unpadded",
            inputs: vec![signed(&[1, 3, 4, 4]), signed(&[2, 3, 2, 2])],
            forward: |x| x[0].conv2d(&x[1], 1, 0).unwrap(),
        },
        OpCase {
            name: "add_channel_bias",
            inputs: vec![signed(&[2, 3, 2, 2]), signed(&[3])],
            forward: |x| x[0].add_channel_bias(&x[1]).unwrap(),
        },
        OpCase {
            name: "upsample_nearest2",
            inputs: vec![signed(&[1, 2, 3, 2])],
            forward: |x| x[0].upsample_nearest2().unwrap(),
        },
        OpCase {
            name: "reshape",
            inputs: vec![signed(&[2, 6])],
            forward: |x| x[0].reshape(&[3, 4]).unwrap().square(),
        },
        OpCase {
            name: "concat_rows",
            inputs: vec![signed(&[2, 3]), signed(&[1, 3])],
            forward: |x| Tensor::concat_rows(&[&x[0], &x[1], &x[0]]).unwrap(),
        },
        OpCase {
            name: "select_rows",
            inputs: vec![signed(&[4, 3])],
            forward: |x| x[0].select_rows(&[3, 0, 3, 1]).unwrap(),
        },
        OpCase {
            name: "repeat_rows",
            inputs: vec![signed(&[3])],
            forward: |x| x[0].repeat_rows(4).unwrap(),
        },
        OpCase {
            name: "repeat_cols",
            inputs: vec![signed(&[3])],
            forward: |x| x[0].repeat_cols(2).unwrap(),
        },
        OpCase {
            name: "weighted_logsumexp_rows",
            inputs: vec![signed(&[3, 4])],
            forward: |x| {
                let w = [1.0, 0.0, 2.0, 0.5, 0.3, 1.0, 1.0, 0.0, 0.0, 0.0, 4.0, 1.0];
                x[0].weighted_logsumexp_rows(&w).unwrap()
            },
        },
        OpCase {
            name: "cholesky",
            inputs: vec![signed(&[4, 4])],
            forward: |x| {
                let spd = x[0]
                    .matmul(&x[0].t().unwrap())
                    .unwrap()
                    .add(&Tensor::eye(4))
                    .unwrap();
                spd.cholesky().unwrap()
            },
        },
        OpCase {
            name: "solve_lower_transposed",
            inputs: vec![signed(&[5, 3]), (vec![3, 3], Domain::LowerFactor)],
            forward: |x| x[0].solve_lower_transposed(&x[1]).unwrap(),
        },
        OpCase {
            name: "composite_conv_relu_mean",
            inputs: vec![signed(&[2, 2, 6, 6]), signed(&[3, 2, 3, 3]), signed(&[3])],
            forward: |x| {
                x[0].conv2d(&x[1], 1, 1)
                    .unwrap()
                    .add_channel_bias(&x[2])
                    .unwrap()
                    .relu()
                    .mean()
            },
        },
    ]
}
