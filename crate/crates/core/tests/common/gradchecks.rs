//! Finite-difference scenarios shared by the tensor suite and the
//! acceptance run. Each takes a seed and reports one result per checked
//! input.

use mriqa::nrnet::{nres_block, Mode, NRNet, NRNetConfig, NResVars};
use mriqa::tensor::{finite_diff_check, finite_diff_check_with_floor, Tape, Tensor, Var};
use mriqa::Result;
use rand::Rng;

use super::{away_from_zero, rng, uniform};

pub const SEEDS: u64 = 20;
const STEP: f64 = 1e-5;
const NET_STEP: f64 = 1e-6;
/// Below this magnitude a gradient is compared by absolute error.
const GRAD_FLOOR: f64 = 1e-6;
const TOL: f64 = 1e-4;
const TOL_BN: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Every layer scenario, then the whole network with the focal loss.
pub const SCENARIOS: [(&str, fn(u64) -> Vec<Check>); 8] = [
    ("conv2d", conv2d_gradients),
    ("depthwise+pointwise", depthwise_and_pointwise_gradients),
    ("batchnorm", batchnorm_gradients),
    ("elementwise", elementwise_pooling_and_bias_gradients),
    ("matmul+softmax", matmul_transpose_softmax_gradients),
    ("focal", focal_loss_gradient_through_softmax),
    ("nonlocal", nonlocal_block_gradients),
    ("tiny+focal", tiny_network_with_focal_loss_gradients),
];

/// `sum((y + offset)^2)`: a scalar whose gradient reaches every element of
/// `y` with a different weight.
fn probe(tape: &mut Tape<f64>, y: Var, offset: &Tensor<f64>) -> Result<Var> {
    let o = tape.leaf(offset.clone());
    let s = tape.add(y, o)?;
    Ok(tape.sum_squares(s))
}

fn check<F>(name: &str, at: &Tensor<f64>, tol: f64, f: F) -> Check
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let r = finite_diff_check(f, at, STEP).unwrap();
    Check {
        name: name.to_string(),
        max_rel_error: r.max_rel_error,
        tolerance: tol,
    }
}

fn check_with_step<F>(name: &str, at: &Tensor<f64>, tol: f64, step: f64, f: F) -> Check
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let r = finite_diff_check_with_floor(f, at, step, GRAD_FLOOR).unwrap();
    Check {
        name: name.to_string(),
        max_rel_error: r.max_rel_error,
        tolerance: tol,
    }
}

pub fn conv2d_gradients(seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    let mut g = rng(seed);
    let (n, c, co, h, w) = (
        2,
        g.random_range(1..4),
        g.random_range(1..4),
        g.random_range(3..7),
        g.random_range(3..7),
    );
    let stride = 1 + (seed as usize % 2);
    let x = uniform(&[n, c, h, w], -1.0, 1.0, &mut g);
    let k = uniform(&[co, c, 3, 3], -1.0, 1.0, &mut g);
    let mut t = Tape::new();
    let (xv, kv) = (t.leaf(x.clone()), t.leaf(k.clone()));
    let y = t.conv2d(xv, kv, stride, 1).unwrap();
    let shape = t.shape(y).to_vec();
    let off = uniform(&shape, -1.0, 1.0, &mut g);
    out.push(check("conv2d/x", &x, TOL, |t, v| {
        let kv = t.leaf(k.clone());
        let y = t.conv2d(v, kv, stride, 1)?;
        probe(t, y, &off)
    }));
    out.push(check("conv2d/k", &k, TOL, |t, v| {
        let xv = t.leaf(x.clone());
        let y = t.conv2d(xv, v, stride, 1)?;
        probe(t, y, &off)
    }));
    out
}

pub fn depthwise_and_pointwise_gradients(seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    let mut g = rng(100 + seed);
    let (n, c, co, h, w) = (
        2,
        g.random_range(1..5),
        g.random_range(1..5),
        g.random_range(3..7),
        g.random_range(3..7),
    );
    let stride = 1 + (seed as usize % 2);
    let x = uniform(&[n, c, h, w], -1.0, 1.0, &mut g);
    let dk = uniform(&[c, 3, 3], -1.0, 1.0, &mut g);
    let pk = uniform(&[co, c], -1.0, 1.0, &mut g);
    let mut t = Tape::new();
    let (xv, dv) = (t.leaf(x.clone()), t.leaf(dk.clone()));
    let y = t.depthwise_conv2d(xv, dv, stride, 1).unwrap();
    let dshape = t.shape(y).to_vec();
    let doff = uniform(&dshape, -1.0, 1.0, &mut g);
    let poff = uniform(&[n, co, h, w], -1.0, 1.0, &mut g);
    out.push(check("depthwise/x", &x, TOL, |t, v| {
        let k = t.leaf(dk.clone());
        let y = t.depthwise_conv2d(v, k, stride, 1)?;
        probe(t, y, &doff)
    }));
    out.push(check("depthwise/k", &dk, TOL, |t, v| {
        let xv = t.leaf(x.clone());
        let y = t.depthwise_conv2d(xv, v, stride, 1)?;
        probe(t, y, &doff)
    }));
    out.push(check("pointwise/x", &x, TOL, |t, v| {
        let k = t.leaf(pk.clone());
        let y = t.pointwise_conv2d(v, k)?;
        probe(t, y, &poff)
    }));
    out.push(check("pointwise/k", &pk, TOL, |t, v| {
        let xv = t.leaf(x.clone());
        let y = t.pointwise_conv2d(xv, v)?;
        probe(t, y, &poff)
    }));
    out
}

pub fn batchnorm_gradients(seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    let mut g = rng(200 + seed);
    let (n, c, h, w) = (
        3,
        g.random_range(1..4),
        g.random_range(2..5),
        g.random_range(2..5),
    );
    let x = uniform(&[n, c, h, w], -2.0, 2.0, &mut g);
    let gamma = uniform(&[c], 0.5, 1.5, &mut g);
    let beta = uniform(&[c], -0.5, 0.5, &mut g);
    let off = uniform(&[n, c, h, w], -1.0, 1.0, &mut g);
    let mean: Vec<f64> = (0..c).map(|_| g.random_range(-0.5..0.5)).collect();
    let var: Vec<f64> = (0..c).map(|_| g.random_range(0.5..2.0)).collect();
    let bn = |t: &mut Tape<f64>, x: Var, gm: Var, bt: Var| -> Result<Var> {
        Ok(t.batchnorm_train(x, gm, bt, 1e-5)?.0)
    };
    out.push(check("bn_train/x", &x, TOL_BN, |t, v| {
        let (gm, bt) = (t.leaf(gamma.clone()), t.leaf(beta.clone()));
        let y = bn(t, v, gm, bt)?;
        probe(t, y, &off)
    }));
    out.push(check("bn_train/gamma", &gamma, TOL_BN, |t, v| {
        let (xv, bt) = (t.leaf(x.clone()), t.leaf(beta.clone()));
        let y = bn(t, xv, v, bt)?;
        probe(t, y, &off)
    }));
    out.push(check("bn_train/beta", &beta, TOL_BN, |t, v| {
        let (xv, gm) = (t.leaf(x.clone()), t.leaf(gamma.clone()));
        let y = bn(t, xv, gm, v)?;
        probe(t, y, &off)
    }));
    out.push(check("bn_infer/x", &x, TOL, |t, v| {
        let (gm, bt) = (t.leaf(gamma.clone()), t.leaf(beta.clone()));
        let y = t.batchnorm_infer(v, gm, bt, &mean, &var, 1e-5)?;
        probe(t, y, &off)
    }));
    out
}

pub fn elementwise_pooling_and_bias_gradients(seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    let mut g = rng(300 + seed);
    let (n, c, h, w) = (
        2,
        g.random_range(1..4),
        g.random_range(2..5),
        g.random_range(2..5),
    );
    let x = away_from_zero(&[n, c, h, w], &mut g);
    let other = uniform(&[n, c, h, w], -1.0, 1.0, &mut g);
    let b = uniform(&[c], -1.0, 1.0, &mut g);
    let off = uniform(&[n, c, h, w], -1.0, 1.0, &mut g);
    let pooled_off = uniform(&[n, c], -1.0, 1.0, &mut g);
    out.push(check("relu", &x, TOL, |t, v| {
        let y = t.relu(v);
        probe(t, y, &off)
    }));
    out.push(check("add", &x, TOL, |t, v| {
        let o = t.leaf(other.clone());
        let y = t.add(v, o)?;
        probe(t, y, &off)
    }));
    out.push(check("scale", &x, TOL, |t, v| {
        let y = t.scale(v, -1.7);
        probe(t, y, &off)
    }));
    out.push(check("channel_bias", &b, TOL, |t, v| {
        let xv = t.leaf(x.clone());
        let y = t.channel_bias(xv, v)?;
        probe(t, y, &off)
    }));
    out.push(check("global_avg_pool", &x, TOL, |t, v| {
        let y = t.global_avg_pool(v)?;
        probe(t, y, &pooled_off)
    }));
    out.push(check("reshape+sum", &x, TOL, |t, v| {
        let y = t.reshape(v, &[n * c, h * w])?;
        let y = t.relu(y);
        Ok(t.sum(y))
    }));
    out
}

pub fn matmul_transpose_softmax_gradients(seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    let mut g = rng(400 + seed);
    let (b, m, p, q) = (
        2,
        g.random_range(1..5),
        g.random_range(1..5),
        g.random_range(2..5),
    );
    let a = uniform(&[b, m, p], -1.0, 1.0, &mut g);
    let bb = uniform(&[b, p, q], -1.0, 1.0, &mut g);
    let off = uniform(&[b, m, q], -1.0, 1.0, &mut g);
    let toff = uniform(&[b, q, m], -1.0, 1.0, &mut g);
    out.push(check("matmul/a", &a, TOL, |t, v| {
        let r = t.leaf(bb.clone());
        let y = t.matmul(v, r)?;
        probe(t, y, &off)
    }));
    out.push(check("matmul/b", &bb, TOL, |t, v| {
        let l = t.leaf(a.clone());
        let y = t.matmul(l, v)?;
        probe(t, y, &off)
    }));
    out.push(check("transpose", &a, TOL, |t, v| {
        let r = t.leaf(bb.clone());
        let y = t.matmul(v, r)?;
        let y = t.transpose(y)?;
        probe(t, y, &toff)
    }));
    out.push(check("softmax", &a, TOL, |t, v| {
        let r = t.leaf(bb.clone());
        let y = t.matmul(v, r)?;
        let y = t.softmax(y)?;
        probe(t, y, &off)
    }));
    out
}

pub fn focal_loss_gradient_through_softmax(seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    let mut g = rng(500 + seed);
    let n = g.random_range(1..6);
    let logits = uniform(&[n, 3], -2.0, 2.0, &mut g);
    let targets: Vec<usize> = (0..n).map(|_| g.random_range(0..3)).collect();
    let alpha: Vec<f64> = (0..3).map(|_| g.random_range(0.5..2.0)).collect();
    let kappa = [0.0, 0.5, 1.0, 2.0, 3.5][seed as usize % 5];
    out.push(check("focal", &logits, TOL, |t, v| {
        let p = t.softmax(v)?;
        t.focal_loss(p, &targets, &alpha, kappa)
    }));
    out
}

pub fn nonlocal_block_gradients(seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    let mut g = rng(600 + seed);
    let (c, ce, h, w) = (
        g.random_range(2..5),
        g.random_range(1..4),
        g.random_range(2..4),
        g.random_range(2..4),
    );
    let x = uniform(&[2, c, h, w], -1.0, 1.0, &mut g);
    let ps: Vec<Tensor<f64>> = [[ce, c], [ce, c], [ce, c], [c, ce]]
        .iter()
        .map(|s| uniform(s, -0.8, 0.8, &mut g))
        .collect();
    let off = uniform(&[2, c, h, w], -1.0, 1.0, &mut g);
    let run = |t: &mut Tape<f64>, xv: Var, vars: [Var; 4]| -> Result<Var> {
        let p = NResVars {
            phi: vars[0],
            psi: vars[1],
            g: vars[2],
            out: vars[3],
        };
        let y = nres_block(t, xv, p)?.output;
        probe(t, y, &off)
    };
    out.push(check("nres/x", &x, TOL, |t, v| {
        let vars = [0, 1, 2, 3].map(|i| t.leaf(ps[i].clone()));
        run(t, v, vars)
    }));
    for which in 0..4 {
        out.push(check(
            &format!("nres/param{which}"),
            &ps[which],
            TOL,
            |t, v| {
                let xv = t.leaf(x.clone());
                let vars = [0, 1, 2, 3].map(|i| if i == which { v } else { t.leaf(ps[i].clone()) });
                run(t, xv, vars)
            },
        ));
    }
    out
}

/// The whole desk network in training mode, composed with the focal loss,
/// differentiated with respect to the input batch and every parameter. Deep
/// relu stacks put some pre-activations within 1e-5 of a kink, so this check
/// uses a smaller step, and judges gradients under `GRAD_FLOOR` by absolute
/// error since rounding in the loss dominates them at that step.
pub fn tiny_network_with_focal_loss_gradients(seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    let mut g = rng(700 + seed);
    let net = NRNet::<f64>::new(NRNetConfig::tiny(16), seed).unwrap();
    let x = uniform(&[2, 1, 16, 16], 0.0, 1.0, &mut g);
    let targets = vec![g.random_range(0..3), g.random_range(0..3)];
    let alpha = [1.0, 1.3, 0.8];
    let loss = |t: &mut Tape<f64>, input: Var, replace: Option<(usize, Var)>| -> Result<Var> {
        let mut vars = net.bind(t);
        if let Some((i, v)) = replace {
            vars[i] = v;
        }
        let out = net.forward(t, input, &vars, Mode::Train)?;
        t.focal_loss(out.probs, &targets, &alpha, 2.0)
    };
    out.push(check_with_step(
        "tiny/input",
        &x,
        TOL_BN,
        NET_STEP,
        |t, v| loss(t, v, None),
    ));
    for (i, p) in net.params().iter().enumerate() {
        out.push(check_with_step(
            &format!("tiny/{}", p.name),
            &p.tensor,
            TOL_BN,
            NET_STEP,
            |t, v| {
                let input = t.leaf(x.clone());
                loss(t, input, Some((i, v)))
            },
        ));
    }
    out
}
