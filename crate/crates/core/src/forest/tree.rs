use rand::seq::index::sample;
use rand::Rng;

use crate::domain::NUM_CLASSES;

pub type Counts = [usize; NUM_CLASSES];

/// Entropy in bits of the weighted class proportions `q_t ∝ alpha_t n_t`.
pub fn entropy(counts: &Counts, weights: &[f64; NUM_CLASSES]) -> f64 {
    let mass: Vec<f64> = counts
        .iter()
        .zip(weights)
        .map(|(&n, &a)| n as f64 * a)
        .collect();
    let total: f64 = mass.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    mass.iter()
        .filter(|&&m| m > 0.0)
        .map(|&m| {
            let q = m / total;
            -q * q.log2()
        })
        .sum()
}

fn weighted_total(counts: &Counts, weights: &[f64; NUM_CLASSES]) -> f64 {
    counts
        .iter()
        .zip(weights)
        .map(|(&n, &a)| n as f64 * a)
        .sum()
}

/// Information gain of splitting `parent` into `left` and the remainder.
pub fn information_gain(parent: &Counts, left: &Counts, weights: &[f64; NUM_CLASSES]) -> f64 {
    let right: Counts = std::array::from_fn(|t| parent[t] - left[t]);
    let w = weighted_total(parent, weights);
    let (wl, wr) = (
        weighted_total(left, weights),
        weighted_total(&right, weights),
    );
    entropy(parent, weights)
        - (wl / w) * entropy(left, weights)
        - (wr / w) * entropy(&right, weights)
}

pub fn class_counts(labels: impl IntoIterator<Item = usize>) -> Counts {
    let mut c = [0; NUM_CLASSES];
    labels.into_iter().for_each(|l| c[l] += 1);
    c
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    /// Samples with `x[feature] <= threshold` go left.
    pub threshold: f64,
    pub gain: f64,
}

/// Midpoint of two adjacent distinct values, kept strictly below `hi`.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m < hi {
        m
    } else {
        lo
    }
}

/// Gains closer than this are ties; rounding otherwise decides between
/// mathematically equal splits.
const GAIN_TIE: f64 = 1e-12;

/// Highest-gain split over `features` among the samples `rows` (indices into
/// `x`/`y`, repeats allowed). Candidates are midpoints of sorted distinct
/// values; ties go to the lowest feature index, then the lowest threshold.
/// `None` when the node is pure or every candidate feature is constant.
pub fn best_split(
    x: &[Vec<f64>],
    y: &[usize],
    rows: &[usize],
    features: &[usize],
    weights: &[f64; NUM_CLASSES],
) -> Option<Split> {
    let parent = class_counts(rows.iter().map(|&r| y[r]));
    if parent.iter().filter(|&&n| n > 0).count() < 2 {
        return None;
    }
    let mut sorted_features = features.to_vec();
    sorted_features.sort_unstable();
    sorted_features.dedup();
    let mut best: Option<Split> = None;
    let mut order = rows.to_vec();
    for &f in &sorted_features {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        let mut left = [0; NUM_CLASSES];
        for i in 0..order.len() - 1 {
            left[y[order[i]]] += 1;
            let (lo, hi) = (x[order[i]][f], x[order[i + 1]][f]);
            if lo == hi {
                continue;
            }
            let gain = information_gain(&parent, &left, weights);
            if best.is_none_or(|b| gain > b.gain + GAIN_TIE) {
                best = Some(Split {
                    feature: f,
                    threshold: midpoint(lo, hi),
                    gain,
                });
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        /// Index of the right child; the left child follows immediately.
        right: usize,
    },
    Leaf {
        distribution: [f64; NUM_CLASSES],
    },
}

/// A binary tree stored in preorder.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features examined per node; all when `>=` the feature count.
    pub max_features: usize,
}

fn leaf_distribution(counts: &Counts, weights: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let total = weighted_total(counts, weights);
    std::array::from_fn(|t| counts[t] as f64 * weights[t] / total)
}

impl DecisionTree {
    pub fn fit<R: Rng + ?Sized>(
        x: &[Vec<f64>],
        y: &[usize],
        rows: &[usize],
        weights: &[f64; NUM_CLASSES],
        params: &TreeParams,
        rng: &mut R,
    ) -> Self {
        let mut tree = DecisionTree { nodes: Vec::new() };
        let n_features = x.first().map_or(0, Vec::len);
        tree.grow(x, y, rows.to_vec(), 0, n_features, weights, params, rng);
        tree
    }

    #[allow(clippy::too_many_arguments)]
    fn grow<R: Rng + ?Sized>(
        &mut self,
        x: &[Vec<f64>],
        y: &[usize],
        rows: Vec<usize>,
        depth: usize,
        n_features: usize,
        weights: &[f64; NUM_CLASSES],
        params: &TreeParams,
        rng: &mut R,
    ) {
        let counts = class_counts(rows.iter().map(|&r| y[r]));
        let at_limit = params.max_depth.is_some_and(|d| depth >= d)
            || rows.len() < 2 * params.min_samples_leaf;
        let split = if at_limit {
            None
        } else {
            let features: Vec<usize> = if params.max_features >= n_features {
                (0..n_features).collect()
            } else {
                sample(rng, n_features, params.max_features).into_vec()
            };
            best_split(x, y, &rows, &features, weights)
        };
        let split = split.and_then(|s| {
            let left_n = rows
                .iter()
                .filter(|&&r| x[r][s.feature] <= s.threshold)
                .count();
            let ok =
                left_n >= params.min_samples_leaf && rows.len() - left_n >= params.min_samples_leaf;
            ok.then_some(s)
        });
        let Some(s) = split else {
            self.nodes.push(Node::Leaf {
                distribution: leaf_distribution(&counts, weights),
            });
            return;
        };
        let me = self.nodes.len();
        self.nodes.push(Node::Split {
            feature: s.feature,
            threshold: s.threshold,
            right: 0,
        });
        let (left, right): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| x[r][s.feature] <= s.threshold);
        self.grow(x, y, left, depth + 1, n_features, weights, params, rng);
        let right_index = self.nodes.len();
        if let Node::Split { right: r, .. } = &mut self.nodes[me] {
            *r = right_index;
        }
        self.grow(x, y, right, depth + 1, n_features, weights, params, rng);
    }

    pub fn predict(&self, features: &[f64]) -> [f64; NUM_CLASSES] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { distribution } => return *distribution,
                Node::Split {
                    feature,
                    threshold,
                    right,
                } => {
                    i = if features[*feature] <= *threshold {
                        i + 1
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { right, .. } => 1 + walk(nodes, i + 1).max(walk(nodes, *right)),
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            walk(&self.nodes, 0)
        }
    }
}
