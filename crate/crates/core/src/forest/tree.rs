use rand::seq::SliceRandom;

use crate::seed::{derive_seed, rng_from_seed};

use super::ForestConfig;

/// A tree node. Nodes live in a flat arena in pre-order, so a split's left
/// child is always the next node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    /// `x[feature] <= threshold` routes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Mean of the training labels routed here and how many there were
    /// (bootstrap duplicates included).
    Leaf { value: f64, count: usize },
}

/// A CART regression tree.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    rng_seed: u64,
    n_features: usize,
}

/// Column-major view of a feature matrix.
pub(crate) struct Columns {
    cols: Vec<Vec<f64>>,
}

impl Columns {
    pub(crate) fn from_rows(rows: &[Vec<f64>]) -> Self {
        let width = rows.first().map_or(0, Vec::len);
        let cols = (0..width).map(|f| rows.iter().map(|r| r[f]).collect()).collect();
        Columns { cols }
    }

    pub(crate) fn n_features(&self) -> usize {
        self.cols.len()
    }
}

struct Task {
    samples: Vec<usize>,
    depth: usize,
    parent: Option<usize>,
}

#[derive(Clone, Copy)]
struct Candidate {
    score: f64,
    feature: usize,
    threshold: f64,
}

impl RegressionTree {
    /// Assembles a tree from pre-order nodes. Child indices are validated.
    pub fn from_nodes(nodes: Vec<Node>, rng_seed: u64, n_features: usize) -> crate::Result<Self> {
        if nodes.is_empty() {
            return Err(crate::Error::Format("tree has no nodes".into()));
        }
        for (i, node) in nodes.iter().enumerate() {
            if let Node::Split {
                feature, left, right, threshold,
            } = *node
            {
                if feature >= n_features || left <= i || right <= i || left >= nodes.len() || right >= nodes.len() {
                    return Err(crate::Error::Format(format!("node {i}: invalid split")));
                }
                if !threshold.is_finite() {
                    return Err(crate::Error::Format(format!("node {i}: non-finite threshold")));
                }
            }
        }
        Ok(RegressionTree {
            nodes,
            rng_seed,
            n_features,
        })
    }

    /// Trains on the full row set (no resampling).
    pub fn fit(rows: &[Vec<f64>], labels: &[f64], cfg: &ForestConfig, seed: u64) -> Self {
        let columns = Columns::from_rows(rows);
        Self::fit_samples(&columns, labels, (0..labels.len()).collect(), cfg, seed)
    }

    /// Grows a tree on `samples` (indices into `labels`, duplicates allowed).
    ///
    /// At every node, features are visited in an order shuffled by the node's
    /// sub-seed until `feature_subset` non-constant ones have been examined.
    /// The split minimizing the summed squared deviation of the two children
    /// wins; near-ties go to the lowest (feature, threshold).
    pub(crate) fn fit_samples(
        columns: &Columns,
        labels: &[f64],
        samples: Vec<usize>,
        cfg: &ForestConfig,
        seed: u64,
    ) -> Self {
        assert!(!samples.is_empty(), "cannot grow a tree on zero samples");
        let n_features = columns.n_features();
        let mut nodes: Vec<Node> = Vec::new();
        let mut stack = vec![Task {
            samples,
            depth: 0,
            parent: None,
        }];

        while let Some(task) = stack.pop() {
            let index = nodes.len();
            if let Some(parent) = task.parent {
                match &mut nodes[parent] {
                    Node::Split { left, right, .. } => {
                        if *left == usize::MAX {
                            *left = index;
                        } else {
                            *right = index;
                        }
                    }
                    Node::Leaf { .. } => unreachable!("leaf cannot have children"),
                }
            }

            let split = if task.depth_allows(cfg) {
                best_split(columns, labels, &task.samples, cfg, derive_seed(seed, index as u64))
            } else {
                None
            };

            match split {
                None => {
                    let n = task.samples.len();
                    let sum: f64 = task.samples.iter().map(|&i| labels[i]).sum();
                    nodes.push(Node::Leaf {
                        value: sum / n as f64,
                        count: n,
                    });
                }
                Some(c) => {
                    let col = &columns.cols[c.feature];
                    let (left, right): (Vec<usize>, Vec<usize>) =
                        task.samples.iter().partition(|&&i| col[i] <= c.threshold);
                    nodes.push(Node::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left: usize::MAX,
                        right: usize::MAX,
                    });
                    stack.push(Task {
                        samples: right,
                        depth: task.depth + 1,
                        parent: Some(index),
                    });
                    stack.push(Task {
                        samples: left,
                        depth: task.depth + 1,
                        parent: Some(index),
                    });
                }
            }
        }

        RegressionTree {
            nodes,
            rng_seed: seed,
            n_features,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        let mut max = 0;
        for (i, node) in self.nodes.iter().enumerate() {
            max = max.max(depth[i]);
            if let Node::Split { left, right, .. } = *node {
                depth[left] = depth[i] + 1;
                depth[right] = depth[i] + 1;
            }
        }
        max
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    feature, threshold, left, right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Mean-decrease-impurity contributions of this tree, unnormalized.
    ///
    /// Node sizes and means are recovered bottom-up from leaf counts and
    /// values, so persisted trees keep their importances. A split's
    /// contribution is `(n_node / N) * (var_node - n_l/n_node var_l - n_r/n_node var_r)`,
    /// which equals `n_l n_r (mean_l - mean_r)^2 / (N n_node)`.
    pub fn impurity_decrease(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_features];
        let mut agg = vec![(0.0f64, 0.0f64); self.nodes.len()];
        for i in (0..self.nodes.len()).rev() {
            agg[i] = match self.nodes[i] {
                Node::Leaf { value, count } => (count as f64, value * count as f64),
                Node::Split { left, right, .. } => (agg[left].0 + agg[right].0, agg[left].1 + agg[right].1),
            };
        }
        let total = agg[0].0;
        for (i, node) in self.nodes.iter().enumerate() {
            if let Node::Split {
                feature, left, right, ..
            } = *node
            {
                let (nl, sl) = agg[left];
                let (nr, sr) = agg[right];
                let diff = sl / nl - sr / nr;
                out[feature] += nl * nr * diff * diff / (total * agg[i].0);
            }
        }
        out
    }
}

impl Task {
    fn depth_allows(&self, cfg: &ForestConfig) -> bool {
        cfg.max_depth.is_none_or(|d| self.depth < d)
    }
}

fn best_split(
    columns: &Columns,
    labels: &[f64],
    samples: &[usize],
    cfg: &ForestConfig,
    node_seed: u64,
) -> Option<Candidate> {
    let n = samples.len();
    if n < 2 * cfg.min_leaf {
        return None;
    }
    let mean = samples.iter().map(|&i| labels[i]).sum::<f64>() / n as f64;
    let node_ss: f64 = samples.iter().map(|&i| (labels[i] - mean).powi(2)).sum();
    let first = labels[samples[0]];
    if samples.iter().all(|&i| labels[i] == first) {
        return None;
    }
    let tol = 1e-12 * node_ss.max(f64::MIN_POSITIVE);

    let mut order: Vec<usize> = (0..columns.n_features()).collect();
    order.shuffle(&mut rng_from_seed(node_seed));

    let mut best: Option<Candidate> = None;
    let mut visited = 0;
    let mut sorted: Vec<(f64, f64)> = Vec::with_capacity(n);
    for feature in order {
        if visited == cfg.feature_subset {
            break;
        }
        let col = &columns.cols[feature];
        sorted.clear();
        sorted.extend(samples.iter().map(|&i| (col[i], labels[i] - mean)));
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        if sorted[0].0 == sorted[n - 1].0 {
            continue;
        }
        visited += 1;

        // Centered labels: total sum is ~0, so the between-group sum of
        // squares is sum_l^2/n_l + sum_r^2/n_r.
        let total: f64 = sorted.iter().map(|p| p.1).sum();
        let mut left_sum = 0.0;
        for pos in 0..n - 1 {
            left_sum += sorted[pos].1;
            let (a, b) = (sorted[pos].0, sorted[pos + 1].0);
            let n_left = pos + 1;
            if a == b || n_left < cfg.min_leaf || n - n_left < cfg.min_leaf {
                continue;
            }
            let right_sum = total - left_sum;
            let score = left_sum * left_sum / n_left as f64 + right_sum * right_sum / (n - n_left) as f64;
            let mut threshold = (a + b) / 2.0;
            if threshold >= b {
                threshold = a;
            }
            let cand = Candidate {
                score,
                feature,
                threshold,
            };
            best = match best {
                None => Some(cand),
                Some(cur) if is_better(&cand, &cur, tol) => Some(cand),
                keep => keep,
            };
        }
    }
    best
}

fn is_better(cand: &Candidate, cur: &Candidate, tol: f64) -> bool {
    if cand.score > cur.score + tol {
        return true;
    }
    if cand.score < cur.score - tol {
        return false;
    }
    (cand.feature, cand.threshold) < (cur.feature, cur.threshold)
}
