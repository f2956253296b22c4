//! Line-oriented forest files.
//!
//! ```text
//! FOREST <n_trees> <seed>
//! TREE 0
//! S <feature_index> <threshold>
//! L <value> <count>
//! ...
//! TREE 1
//! ...
//! ```
//!
//! Nodes are written in pre-order. Numbers use shortest round-trip
//! formatting so a reloaded forest predicts bit-identically.

use std::fmt::Write as _;
use std::path::Path;

use super::{ForestConfig, Node, RandomForest, RegressionTree};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::trace::FEATURE_COUNT;

impl RandomForest {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "FOREST {} {}", self.trees.len(), self.config.seed).unwrap();
        for (i, tree) in self.trees.iter().enumerate() {
            writeln!(out, "TREE {i}").unwrap();
            for node in tree.nodes() {
                match node {
                    Node::Split {
                        feature, threshold, ..
                    } => writeln!(out, "S {feature} {threshold}").unwrap(),
                    Node::Leaf { value, count } => writeln!(out, "L {value} {count}").unwrap(),
                }
            }
        }
        out
    }

    /// Parses a forest file. Trees are taken to have the ten dataset features.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());

        let (line_no, header) = lines.next().ok_or_else(|| parse_err(1, "empty forest file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (n_trees, seed) = match fields.as_slice() {
            ["FOREST", n, seed] => (parse_num::<usize>(line_no, n)?, parse_num::<u64>(line_no, seed)?),
            _ => return Err(parse_err(line_no, "expected `FOREST <n_trees> <seed>`")),
        };

        let mut trees = Vec::with_capacity(n_trees);
        let mut current: Option<Vec<Node>> = None;
        for (line_no, line) in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["TREE", i] => {
                    let i: usize = parse_num(line_no, i)?;
                    if i != trees.len() + current.is_some() as usize {
                        return Err(parse_err(line_no, format!("tree index {i} out of sequence")));
                    }
                    if let Some(nodes) = current.take() {
                        trees.push(link_tree(nodes, seed, trees.len(), line_no)?);
                    }
                    current = Some(Vec::new());
                }
                ["S", feature, threshold] => {
                    let nodes = current.as_mut().ok_or_else(|| parse_err(line_no, "node before TREE"))?;
                    nodes.push(Node::Split {
                        feature: parse_num(line_no, feature)?,
                        threshold: parse_num(line_no, threshold)?,
                        left: usize::MAX,
                        right: usize::MAX,
                    });
                }
                ["L", value, count] => {
                    let nodes = current.as_mut().ok_or_else(|| parse_err(line_no, "node before TREE"))?;
                    nodes.push(Node::Leaf {
                        value: parse_num(line_no, value)?,
                        count: parse_num(line_no, count)?,
                    });
                }
                _ => return Err(parse_err(line_no, format!("unrecognized line `{line}`"))),
            }
        }
        if let Some(nodes) = current.take() {
            let last = text.lines().count();
            trees.push(link_tree(nodes, seed, trees.len(), last)?);
        }
        if trees.len() != n_trees {
            return Err(Error::Format(format!("header declares {n_trees} trees, found {}", trees.len())));
        }
        RandomForest::from_trees(
            trees,
            ForestConfig {
                seed,
                ..ForestConfig::default()
            },
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Fills child indices of a pre-order node list.
fn link_tree(mut nodes: Vec<Node>, seed: u64, index: usize, line_no: usize) -> Result<RegressionTree> {
    let mut open: Vec<usize> = Vec::new();
    for i in 0..nodes.len() {
        if i > 0 {
            let parent = *open
                .last()
                .ok_or_else(|| parse_err(line_no, format!("tree {index}: trailing nodes after complete tree")))?;
            if let Node::Split { left, right, .. } = &mut nodes[parent] {
                if *left == usize::MAX {
                    *left = i;
                } else {
                    *right = i;
                    open.pop();
                }
            }
        }
        if matches!(nodes[i], Node::Split { .. }) {
            open.push(i);
        }
    }
    if !open.is_empty() {
        return Err(parse_err(line_no, format!("tree {index}: incomplete tree")));
    }
    RegressionTree::from_nodes(nodes, derive_seed(seed, index as u64), FEATURE_COUNT)
}

fn parse_num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| parse_err(line, format!("invalid number `{s}`")))
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_forest() -> RandomForest {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| (0..FEATURE_COUNT).map(|f| ((i * (f + 3)) % 11) as f64 * 0.3).collect())
            .collect();
        let labels: Vec<f64> = (0..40).map(|i| (i as f64 * 0.7).cos() * 5.0 + 6.0).collect();
        let cfg = ForestConfig {
            n_trees: 4,
            seed: 21,
            ..ForestConfig::default()
        };
        RandomForest::fit(&rows, &labels, &cfg).unwrap()
    }

    #[test]
    fn text_round_trip() {
        let f = small_forest();
        let back = RandomForest::from_text(&f.to_text()).unwrap();
        assert_eq!(back.trees().len(), 4);
        for (a, b) in f.trees().iter().zip(back.trees()) {
            assert_eq!(a.nodes(), b.nodes());
            assert_eq!(a.rng_seed(), b.rng_seed());
        }
        assert_eq!(back.to_text(), f.to_text());
    }

    #[test]
    fn malformed_files() {
        assert!(RandomForest::from_text("").is_err());
        assert!(RandomForest::from_text("FOREST 1 0\nTREE 0\nS 0 1.5\nL 1 1\n").is_err());
        assert!(RandomForest::from_text("FOREST 2 0\nTREE 0\nL 1 1\n").is_err());
        assert!(RandomForest::from_text("FOREST 1 0\nTREE 0\nL 1 1\nL 2 1\n").is_err());
        assert!(RandomForest::from_text("FOREST 1 0\nTREE 0\nS 12 1.5\nL 1 1\nL 2 1\n").is_err());
        assert!(RandomForest::from_text("FOREST 1 0\nTREE 0\nX 1\n").is_err());
        let ok = RandomForest::from_text("FOREST 1 0\nTREE 0\nS 2 1.5\nL 1 1\nL 2 1\n").unwrap();
        let mut x = [0.0; FEATURE_COUNT];
        x[2] = 1.5;
        assert_eq!(ok.predict_row(&x), 1.0);
        x[2] = 1.6;
        assert_eq!(ok.predict_row(&x), 2.0);
    }
}
