//! Straight-line reference implementations and gradient checks shared by the
//! integration tests and the acceptance runner.
#![allow(dead_code)]

use demoscore::numcore::{Head, Mlp, RngStream};
use demoscore::policy::{decode, mdn_nll, nll_and_grad, output_width};

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so parameters with a vanishing
/// gradient are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Forward pass written out with plain loops over the raw parameters.
pub fn oracle_forward(mlp: &Mlp<f64>, x: &[f64]) -> Vec<f64> {
    let layers = mlp.layers();
    let mut a = x.to_vec();
    for (li, l) in layers.iter().enumerate() {
        let mut z = Vec::new();
        for o in 0..l.outputs() {
            let mut acc = l.bias[o];
            for i in 0..l.inputs() {
                acc += l.weight.get(o, i) * a[i];
            }
            z.push(acc);
        }
        a = if li + 1 < layers.len() {
            z.iter().map(|v| v.tanh()).collect()
        } else if mlp.head() == Head::Sigmoid {
            z.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect()
        } else {
            z
        };
    }
    a
}

pub fn oracle_bce(q: f64, y: f64) -> f64 {
    -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
}

pub fn oracle_step_loss(probs: &[f64], y: f64) -> f64 {
    let mut s = 0.0;
    for &q in probs {
        s += oracle_bce(q, y);
    }
    s / probs.len() as f64
}

/// Pools every state of every trajectory.
pub fn oracle_threshold(probs: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    let mut n = 0.0;
    for t in probs {
        for &q in t {
            s += q;
            n += 1.0;
        }
    }
    s / n
}

pub fn oracle_wilson(k: f64, n: f64, z: f64) -> (f64, f64) {
    let p = k / n;
    let a = p + z * z / (2.0 * n);
    let b = z * ((p * (1.0 - p) + z * z / (4.0 * n)) / n).sqrt();
    let c = 1.0 + z * z / n;
    (((a - b) / c).max(0.0), ((a + b) / c).min(1.0))
}

pub fn oracle_loss_weights(losses: &[f64]) -> Vec<f64> {
    let mut lo = f64::INFINITY;
    for &l in losses {
        lo = lo.min(l);
    }
    let inv: Vec<f64> = if lo <= 0.0 {
        losses.iter().map(|l| 1.0 / (l - lo + 1.0)).collect()
    } else {
        losses.iter().map(|l| 1.0 / l).collect()
    };
    let n = inv.len() as f64;
    let mean: f64 = inv.iter().sum::<f64>() / n;
    let mut var = 0.0;
    for w in &inv {
        var += (w - mean) * (w - mean);
    }
    let sd = (var / n).sqrt();
    let wmin = inv.iter().cloned().fold(f64::INFINITY, f64::min);
    if sd == 0.0 {
        return vec![1.0; inv.len()];
    }
    inv.iter().map(|w| (w - wmin) / sd).collect()
}

fn random_sizes(rng: &mut RngStream, input: usize, output: usize) -> Vec<usize> {
    let depth = 1 + rng.below(3);
    let mut sizes = vec![input];
    for _ in 0..depth {
        sizes.push(2 + rng.below(7));
    }
    sizes.push(output);
    sizes
}

/// Largest relative error between the backpropagated and central-difference
/// gradient of `loss` over every parameter.
fn max_param_error(
    mlp: &Mlp<f64>,
    analytic: &[f64],
    loss: impl Fn(&Mlp<f64>) -> f64,
) -> f64 {
    let base = mlp.flat();
    let mut probe = mlp.clone();
    let mut worst = 0.0f64;
    for (i, &g) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[i] = base[i] + FD_STEP;
        probe.set_flat(&p).unwrap();
        let up = loss(&probe);
        p[i] = base[i] - FD_STEP;
        probe.set_flat(&p).unwrap();
        let down = loss(&probe);
        worst = worst.max(rel_err(g, (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

/// Gradient check of binary cross-entropy through a random sigmoid MLP,
/// with a fixed dropout mask on odd cases.
pub fn mlp_bce_case(case: u64) -> f64 {
    let mut rng = RngStream::new(case).derive("mlp-bce");
    let inputs = 1 + rng.below(4);
    let sizes = random_sizes(&mut rng, inputs, 1);
    let mlp = Mlp::<f64>::new(&sizes, Head::Sigmoid, &mut rng).unwrap();
    let x: Vec<f64> = (0..inputs).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
    let y = (rng.below(2)) as f64;
    let dropout = if case % 2 == 1 { 0.3 } else { 0.0 };
    let mask_seed = rng.next_u64();
    let run = |m: &Mlp<f64>| m.forward(&x, dropout, &mut RngStream::new(mask_seed), true).unwrap();
    let (q, cache) = run(&mlp);
    let dq = -y / q[0] + (1.0 - y) / (1.0 - q[0]);
    let grads = mlp.backward(&cache, &[dq]).unwrap();
    max_param_error(&mlp, &grads.flat(), |m| oracle_bce(run(m).0[0], y))
}

/// Gradient check of the mixture-density NLL through a random linear MLP.
pub fn mdn_nll_case(case: u64) -> f64 {
    let mut rng = RngStream::new(case).derive("mdn-nll");
    let k = 1 + rng.below(4);
    let cap = 0.05;
    let sizes = random_sizes(&mut rng, 3, output_width(k));
    let mlp = Mlp::<f64>::new(&sizes, Head::Linear, &mut rng).unwrap();
    let x: Vec<f64> = (0..3).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let a = [rng.uniform_in(-cap, cap), rng.uniform_in(-cap, cap)];
    let (raw, cache) = mlp.forward(&x, 0.0, &mut RngStream::new(0), false).unwrap();
    let (_, g_raw) = nll_and_grad(&raw, k, cap, a);
    let grads = mlp.backward(&cache, &g_raw).unwrap();
    max_param_error(&mlp, &grads.flat(), |m| {
        mdn_nll(&decode(&m.predict(&x).unwrap(), k, cap), a).unwrap()
    })
}
