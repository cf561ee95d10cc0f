//! Volume-level classifier: an entropy random forest over per-volume
//! summaries of the slice ratings.

mod features;
mod tree;

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{QualityLabel, SlicePrediction, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::training::present_class_weights;

pub use features::{volume_features, VolumeFeatures, NUM_FEATURES};
pub use tree::{
    best_split, class_counts, entropy, information_gain, midpoint, Counts, DecisionTree, Node,
    Split, TreeParams,
};

pub const FORMAT_VERSION: u32 = 1;
const TREE_STREAM: u64 = 0xF0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or unsplittable.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features per node; `None` means `floor(sqrt(F))`, at least 1.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    /// Inverse-frequency class weights from the training labels.
    pub balanced: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 50,
            max_depth: None,
            min_samples_leaf: 1,
            max_features: None,
            bootstrap: true,
            balanced: true,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.min_samples_leaf == 0 || self.max_features == Some(0) {
            return Err(Error::Config(
                "n_trees, min_samples_leaf and max_features must be positive".into(),
            ));
        }
        Ok(())
    }

    fn features_per_node(&self, n_features: usize) -> usize {
        self.max_features
            .unwrap_or_else(|| ((n_features as f64).sqrt().floor() as usize).max(1))
            .min(n_features)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<DecisionTree>,
    pub class_weights: [f64; NUM_CLASSES],
    pub n_features: usize,
    pub seed: u64,
    /// Seed of each tree's sampling stream, by tree index.
    pub tree_seeds: Vec<u64>,
}

fn check_rows(x: &[Vec<f64>], labels: &[QualityLabel]) -> Result<usize> {
    if x.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} feature rows but {} labels",
            x.len(),
            labels.len()
        )));
    }
    let f = x.first().map_or(0, Vec::len);
    if f == 0 || x.iter().any(|r| r.len() != f) {
        return Err(Error::shape(
            "feature rows must be non-empty and equally long",
        ));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("features must be finite"));
    }
    Ok(f)
}

/// Fits `config.n_trees` entropy trees. Each tree draws its bootstrap sample
/// and per-node feature subsets from its own seed derived from `seed`.
pub fn fit_forest(
    x: &[Vec<f64>],
    labels: &[QualityLabel],
    config: &ForestConfig,
    seed: u64,
) -> Result<Forest> {
    config.validate()?;
    let n_features = check_rows(x, labels)?;
    let y: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    let counts = class_counts(y.iter().copied());
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::DegenerateClass(format!(
            "forest needs at least two classes, label counts are {counts:?}"
        )));
    }
    let class_weights = if config.balanced {
        present_class_weights(counts)?
    } else {
        [1.0; NUM_CLASSES]
    };
    let params = TreeParams {
        max_depth: config.max_depth,
        min_samples_leaf: config.min_samples_leaf,
        max_features: config.features_per_node(n_features),
    };
    let tree_seeds: Vec<u64> = (0..config.n_trees as u64)
        .map(|i| crate::seed::derive(seed, TREE_STREAM, i))
        .collect();
    let n = x.len();
    let fit_one = |s: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let rows: Vec<usize> = if config.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        DecisionTree::fit(x, &y, &rows, &class_weights, &params, &mut rng)
    };
    let workers = std::thread::available_parallelism()
        .map_or(1, |p| p.get())
        .min(tree_seeds.len());
    let chunk = tree_seeds.len().div_ceil(workers);
    let trees = std::thread::scope(|scope| {
        let handles: Vec<_> = tree_seeds
            .chunks(chunk)
            .map(|seeds| scope.spawn(move || seeds.iter().map(|&s| fit_one(s)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("tree fitting thread panicked"))
            .collect()
    });
    Ok(Forest {
        trees,
        class_weights,
        n_features,
        seed,
        tree_seeds,
    })
}

impl Forest {
    /// Mean of the tree leaf distributions.
    pub fn distribution(&self, features: &[f64]) -> Result<[f64; NUM_CLASSES]> {
        if features.len() != self.n_features {
            return Err(Error::shape(format!(
                "forest expects {} features, got {}",
                self.n_features,
                features.len()
            )));
        }
        let mut acc = [0.0; NUM_CLASSES];
        for t in &self.trees {
            for (a, p) in acc.iter_mut().zip(t.predict(features)) {
                *a += p;
            }
        }
        Ok(acc.map(|a| a / self.trees.len() as f64))
    }

    pub fn predict(&self, features: &[f64]) -> Result<SlicePrediction> {
        let d = self.distribution(features)?;
        let s: f64 = d.iter().sum();
        SlicePrediction::new(d.map(|v| v / s))
    }

    pub fn predict_volume(&self, features: &VolumeFeatures) -> Result<SlicePrediction> {
        self.predict(features.as_slice())
    }

    /// Versioned text form: a header, then each tree's nodes in preorder as
    /// `split <feature> <threshold>` or `leaf <p_pass> <p_ques> <p_fail>`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mriqa-forest {FORMAT_VERSION}");
        let _ = writeln!(s, "features {}", self.n_features);
        let _ = writeln!(s, "seed {}", self.seed);
        let w = self.class_weights;
        let _ = writeln!(s, "class_weights {:?} {:?} {:?}", w[0], w[1], w[2]);
        let _ = writeln!(s, "trees {}", self.trees.len());
        for (tree, seed) in self.trees.iter().zip(&self.tree_seeds) {
            let _ = writeln!(s, "tree {} {}", seed, tree.nodes.len());
            for node in &tree.nodes {
                match node {
                    Node::Split {
                        feature, threshold, ..
                    } => {
                        let _ = writeln!(s, "split {feature} {threshold:?}");
                    }
                    Node::Leaf { distribution: d } => {
                        let _ = writeln!(s, "leaf {:?} {:?} {:?}", d[0], d[1], d[2]);
                    }
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let mut next = |what: &str| -> Result<(usize, Vec<&str>)> {
            let (no, line) = lines.next().ok_or_else(|| {
                Error::format(0, format!("unexpected end of forest text, expected {what}"))
            })?;
            Ok((no, line.split_whitespace().collect()))
        };
        fn num<V: std::str::FromStr>(no: usize, tok: Option<&&str>) -> Result<V> {
            tok.and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::format(no, format!("bad number {:?}", tok)))
        }
        fn expect(no: usize, toks: &[&str], key: &str, arity: usize) -> Result<()> {
            if toks.first() != Some(&key) || toks.len() != arity + 1 {
                return Err(Error::format(
                    no,
                    format!("expected `{key}` with {arity} values"),
                ));
            }
            Ok(())
        }
        let (no, t) = next("header")?;
        expect(no, &t, "mriqa-forest", 1)?;
        let version: u32 = num(no, t.get(1))?;
        if version != FORMAT_VERSION {
            return Err(Error::format(
                no,
                format!("unsupported forest format version {version}"),
            ));
        }
        let (no, t) = next("features")?;
        expect(no, &t, "features", 1)?;
        let n_features: usize = num(no, t.get(1))?;
        let (no, t) = next("seed")?;
        expect(no, &t, "seed", 1)?;
        let seed: u64 = num(no, t.get(1))?;
        let (no, t) = next("class_weights")?;
        expect(no, &t, "class_weights", 3)?;
        let class_weights = [num(no, t.get(1))?, num(no, t.get(2))?, num(no, t.get(3))?];
        let (no, t) = next("trees")?;
        expect(no, &t, "trees", 1)?;
        let n_trees: usize = num(no, t.get(1))?;
        let mut trees = Vec::with_capacity(n_trees);
        let mut tree_seeds = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let (no, t) = next("tree")?;
            expect(no, &t, "tree", 2)?;
            tree_seeds.push(num(no, t.get(1))?);
            let count: usize = num(no, t.get(2))?;
            let mut raw = Vec::with_capacity(count);
            for _ in 0..count {
                let (no, t) = next("node")?;
                let node = match t.first() {
                    Some(&"split") => {
                        expect(no, &t, "split", 2)?;
                        let feature: usize = num(no, t.get(1))?;
                        if feature >= n_features {
                            return Err(Error::format(
                                no,
                                format!("feature {feature} out of range"),
                            ));
                        }
                        Node::Split {
                            feature,
                            threshold: num(no, t.get(2))?,
                            right: 0,
                        }
                    }
                    Some(&"leaf") => {
                        expect(no, &t, "leaf", 3)?;
                        Node::Leaf {
                            distribution: [
                                num(no, t.get(1))?,
                                num(no, t.get(2))?,
                                num(no, t.get(3))?,
                            ],
                        }
                    }
                    _ => return Err(Error::format(no, "expected `split` or `leaf`")),
                };
                raw.push((no, node));
            }
            trees.push(link_preorder(raw)?);
        }
        if let Some((no, _)) = lines.next() {
            return Err(Error::format(no, "trailing content after last tree"));
        }
        Ok(Forest {
            trees,
            class_weights,
            n_features,
            seed,
            tree_seeds,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_text(&text)
    }
}

/// Recomputes right-child links of a preorder node list and checks that it
/// forms exactly one tree.
fn link_preorder(raw: Vec<(usize, Node)>) -> Result<DecisionTree> {
    fn walk(nodes: &mut [Node], i: usize, lines: &[usize]) -> Result<usize> {
        let line = *lines.last().unwrap_or(&0);
        if i >= nodes.len() {
            return Err(Error::format(line, "tree node list ends inside a subtree"));
        }
        if matches!(nodes[i], Node::Leaf { .. }) {
            return Ok(i + 1);
        }
        let right = walk(nodes, i + 1, lines)?;
        if let Node::Split { right: r, .. } = &mut nodes[i] {
            *r = right;
        }
        walk(nodes, right, lines)
    }
    let lines: Vec<usize> = raw.iter().map(|(l, _)| *l).collect();
    let mut nodes: Vec<Node> = raw.into_iter().map(|(_, n)| n).collect();
    let end = walk(&mut nodes, 0, &lines)?;
    if end != nodes.len() {
        return Err(Error::format(
            lines[end],
            "tree has nodes beyond its last leaf",
        ));
    }
    Ok(DecisionTree { nodes })
}

/// Labels of a forest's predictions over many volumes.
pub fn predict_labels(forest: &Forest, x: &[Vec<f64>]) -> Result<Vec<QualityLabel>> {
    x.iter()
        .map(|r| forest.predict(r).map(|p| p.label()))
        .collect()
}
