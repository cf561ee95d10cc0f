//! Independent reference implementations shared by the module suites and
//! the acceptance run.

use mriqa::forest::{DecisionTree, Node, TreeParams};
use mriqa::nrnet::{nres_forward, NResBlockConfig, NResParams};
use mriqa::tensor::Tensor;
use rand::Rng;

use super::{max_abs_diff, rng, uniform};

/// Direct evaluation of `y_i = x_i + W_out sum_j softmax_j(phi_i . psi_j) g_j`
/// with `phi_i = W_phi x_i` and likewise for `psi` and `g`.
fn brute_force(x: &Tensor<f64>, p: &NResParams<f64>) -> (Vec<f64>, Vec<f64>) {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let ce = p.phi.shape()[0];
    let hw = h * w;
    let at = |i: usize| -> Vec<f64> { (0..c).map(|k| x.data()[k * hw + i]).collect() };
    let project = |m: &Tensor<f64>, v: &[f64]| -> Vec<f64> {
        let cols = v.len();
        (0..m.shape()[0])
            .map(|r| (0..cols).map(|k| m.data()[r * cols + k] * v[k]).sum())
            .collect()
    };
    let phi: Vec<Vec<f64>> = (0..hw).map(|i| project(&p.phi, &at(i))).collect();
    let psi: Vec<Vec<f64>> = (0..hw).map(|i| project(&p.psi, &at(i))).collect();
    let g: Vec<Vec<f64>> = (0..hw).map(|i| project(&p.g, &at(i))).collect();
    let mut out = x.data().to_vec();
    let mut attention = vec![0.0; hw * hw];
    for i in 0..hw {
        let logits: Vec<f64> = (0..hw)
            .map(|j| (0..ce).map(|k| phi[i][k] * psi[j][k]).sum())
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let mut agg = vec![0.0; ce];
        for j in 0..hw {
            attention[i * hw + j] = e[j] / z;
            for k in 0..ce {
                agg[k] += e[j] / z * g[j][k];
            }
        }
        let y = project(&p.out, &agg);
        for k in 0..c {
            out[k * hw + i] += y[k];
        }
    }
    (out, attention)
}

/// Weighted entropy in bits, written out independently of the library.
fn oracle_entropy(ys: &[usize], w: &[f64; 3]) -> f64 {
    let mass: Vec<f64> = (0..3)
        .map(|t| ys.iter().filter(|&&y| y == t).count() as f64 * w[t])
        .collect();
    let total: f64 = mass.iter().sum();
    mass.iter()
        .filter(|&&m| m > 0.0)
        .map(|&m| {
            let q = m / total;
            -q * q.ln() / std::f64::consts::LN_2
        })
        .sum()
}

fn mass(ys: &[usize], w: &[f64; 3]) -> f64 {
    ys.iter().map(|&y| w[y]).sum()
}

#[derive(Debug)]
enum OracleNode {
    Split(usize, f64, Box<OracleNode>, Box<OracleNode>),
    Leaf([f64; 3]),
}

/// Tries every feature and every cut between consecutive distinct values,
/// keeping the largest gain; near-ties go to the lower feature, then the
/// lower cut.
fn oracle_tree(
    x: &[Vec<f64>],
    y: &[usize],
    rows: &[usize],
    w: &[f64; 3],
    depth: usize,
    max_depth: Option<usize>,
) -> OracleNode {
    let ys: Vec<usize> = rows.iter().map(|&r| y[r]).collect();
    let leaf = || {
        let m = mass(&ys, w);
        OracleNode::Leaf(std::array::from_fn(|t| {
            ys.iter().filter(|&&v| v == t).count() as f64 * w[t] / m
        }))
    };
    let pure = ys.iter().all(|&v| v == ys[0]);
    if pure || max_depth.is_some_and(|d| depth >= d) || rows.len() < 2 {
        return leaf();
    }
    let parent = oracle_entropy(&ys, w);
    let total = mass(&ys, w);
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..x[0].len() {
        let mut values: Vec<f64> = rows.iter().map(|&r| x[r][f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for pair in values.windows(2) {
            let cut = (pair[0] + pair[1]) / 2.0;
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][f] <= cut);
            let ly: Vec<usize> = l.iter().map(|&i| y[i]).collect();
            let ry: Vec<usize> = r.iter().map(|&i| y[i]).collect();
            let gain = parent
                - mass(&ly, w) / total * oracle_entropy(&ly, w)
                - mass(&ry, w) / total * oracle_entropy(&ry, w);
            if best.is_none_or(|(g, _, _)| gain > g + 1e-12) {
                best = Some((gain, f, cut));
            }
        }
    }
    let Some((_, f, cut)) = best else {
        return leaf();
    };
    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][f] <= cut);
    OracleNode::Split(
        f,
        cut,
        Box::new(oracle_tree(x, y, &l, w, depth + 1, max_depth)),
        Box::new(oracle_tree(x, y, &r, w, depth + 1, max_depth)),
    )
}

/// Whether the preorder node list equals the oracle tree: same splits,
/// same links, leaf distributions within 1e-12. Returns the index after the
/// compared subtree.
fn same_tree(nodes: &[Node], i: usize, o: &OracleNode) -> Option<usize> {
    match (nodes.get(i)?, o) {
        (Node::Leaf { distribution }, OracleNode::Leaf(d)) => (0..3)
            .all(|t| (distribution[t] - d[t]).abs() < 1e-12)
            .then_some(i + 1),
        (
            Node::Split {
                feature,
                threshold,
                right,
            },
            OracleNode::Split(f, cut, l, r),
        ) => {
            if (*feature, *threshold) != (*f, *cut) || same_tree(nodes, i + 1, l)? != *right {
                return None;
            }
            same_tree(nodes, *right, r)
        }
        _ => None,
    }
}

/// One random instance of at most 8 samples and 3 features: whether an
/// unbootstrapped tree over all features equals the exhaustive oracle.
pub fn tree_matches_oracle(seed: u64) -> bool {
    let mut g = rng(seed);
    let n = g.random_range(2..=8);
    let nf = g.random_range(1..=3);
    // Small integer grids force repeated values and tied gains.
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..nf).map(|_| g.random_range(0..4) as f64).collect())
        .collect();
    let y: Vec<usize> = (0..n).map(|_| g.random_range(0..3)).collect();
    let w = if g.random_bool(0.5) {
        [1.0; 3]
    } else {
        std::array::from_fn(|_| g.random_range(0.5..3.0))
    };
    let max_depth = [None, Some(1), Some(2)][g.random_range(0..3)];
    let params = TreeParams {
        max_depth,
        min_samples_leaf: 1,
        max_features: nf,
    };
    let rows: Vec<usize> = (0..n).collect();
    let tree = DecisionTree::fit(&x, &y, &rows, &w, &params, &mut g);
    let oracle = oracle_tree(&x, &y, &rows, &w, 0, max_depth);
    same_tree(&tree.nodes, 0, &oracle) == Some(tree.nodes.len())
}

/// Largest deviations of `nres_forward` from the brute force on one random
/// input of at most 8x8x8: (output, attention, attention row sum from 1).
pub fn nonlocal_errors(seed: u64) -> (f64, f64, f64) {
    let mut g = rng(seed);
    let (c, h, w) = (
        g.random_range(1..=8),
        g.random_range(1..=8),
        g.random_range(1..=8),
    );
    let cfg = NResBlockConfig {
        channels: c,
        embed_channels: g.random_range(1..=c.max(2)),
    };
    let params = NResParams::<f64>::random(cfg, seed);
    let x = uniform(&[c, h, w], -2.0, 2.0, &mut g);
    let got = nres_forward(&x, &params).unwrap();
    let (want, attention) = brute_force(&x, &params);
    let rows = got
        .attention
        .data()
        .chunks(h * w)
        .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    (
        max_abs_diff(got.output.data(), &want),
        max_abs_diff(got.attention.data(), &attention),
        rows,
    )
}
