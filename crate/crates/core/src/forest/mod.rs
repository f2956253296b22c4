//! Random-forest data-rate prediction.
//!
//! Trees are plain CART regressors grown to purity by default; the forest
//! averages them. Each tree's randomness comes from `derive_seed(seed, i)`,
//! so training is order-independent and runs in parallel with identical
//! results.

mod export;
mod persist;
mod tree;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::r_squared;
use crate::seed::{derive_seed, rng_from_seed};
use crate::trace::{fold_assignment, Dataset, FeatureVector, FEATURE_COUNT};

pub use export::{eval_exported, export_conditional_code, random_inputs, verify_export, ExportedModel};
pub use tree::{Node, RegressionTree};

use tree::Columns;

const BOOTSTRAP_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features examined per split.
    pub feature_subset: usize,
    pub min_leaf: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            // floor(log2(10)) + 1
            feature_subset: 4,
            min_leaf: 1,
            max_depth: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("forest.n_trees must be >= 1".into()));
        }
        if self.feature_subset == 0 || self.feature_subset > n_features {
            return Err(Error::Config(format!(
                "forest.feature_subset must lie in [1, {n_features}], got {}",
                self.feature_subset
            )));
        }
        if self.min_leaf == 0 {
            return Err(Error::Config("forest.min_leaf must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    trees: Vec<RegressionTree>,
    config: ForestConfig,
}

/// Trains a single tree on all records of `d`.
pub fn train_tree(d: &Dataset, cfg: &ForestConfig, seed: u64) -> Result<RegressionTree> {
    cfg.validate(FEATURE_COUNT)?;
    Ok(RegressionTree::fit(&d.feature_rows(), &d.labels(), cfg, seed))
}

pub fn train_forest(d: &Dataset, cfg: &ForestConfig) -> Result<RandomForest> {
    RandomForest::fit(&d.feature_rows(), &d.labels(), cfg)
}

/// k-fold cross-validation result.
#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    /// R² over all out-of-fold predictions pooled together.
    pub pooled_r2: f64,
    /// R² per fold (`NaN` when a fold's labels are constant).
    pub fold_r2: Vec<f64>,
    /// Out-of-fold prediction for every record, in dataset order.
    pub predictions: Vec<f64>,
}

/// Trains one forest per fold of [`fold_assignment`] and scores it on the
/// held-out records.
pub fn cross_validate(d: &Dataset, cfg: &ForestConfig, k: usize, seed: u64) -> Result<CvReport> {
    let fold = fold_assignment(d.len(), k, seed)?;
    let rows = d.feature_rows();
    let labels = d.labels();
    let mut predictions = vec![0.0; d.len()];
    let mut fold_r2 = Vec::with_capacity(k);
    for f in 0..k {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..d.len()).partition(|&i| fold[i] == f);
        let train_rows: Vec<Vec<f64>> = train.iter().map(|&i| rows[i].clone()).collect();
        let train_labels: Vec<f64> = train.iter().map(|&i| labels[i]).collect();
        let forest = RandomForest::fit(&train_rows, &train_labels, cfg)?;
        let measured: Vec<f64> = test.iter().map(|&i| labels[i]).collect();
        let predicted: Vec<f64> = test.iter().map(|&i| forest.predict_row(&rows[i])).collect();
        for (&i, &p) in test.iter().zip(&predicted) {
            predictions[i] = p;
        }
        fold_r2.push(r_squared(&measured, &predicted).unwrap_or(f64::NAN));
    }
    Ok(CvReport {
        pooled_r2: r_squared(&labels, &predictions)?,
        fold_r2,
        predictions,
    })
}

impl RandomForest {
    pub fn fit(rows: &[Vec<f64>], labels: &[f64], cfg: &ForestConfig) -> Result<Self> {
        Ok(Self::fit_tracking_bags(rows, labels, cfg)?.0)
    }

    /// Also returns out-of-bag predictions: for each row, the mean over trees
    /// whose bootstrap sample missed it. Rows that every tree saw (always the
    /// case without bootstrap) fall back to the full-forest prediction.
    pub fn fit_with_oob(rows: &[Vec<f64>], labels: &[f64], cfg: &ForestConfig) -> Result<(Self, Vec<f64>)> {
        let (forest, in_bag) = Self::fit_tracking_bags(rows, labels, cfg)?;
        let oob = rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let (sum, n) = forest
                    .trees
                    .iter()
                    .zip(&in_bag)
                    .filter(|(_, bag)| !bag[i])
                    .fold((0.0, 0usize), |(s, n), (t, _)| (s + t.predict(row), n + 1));
                if n == 0 {
                    forest.predict_row(row)
                } else {
                    sum / n as f64
                }
            })
            .collect();
        Ok((forest, oob))
    }

    fn fit_tracking_bags(rows: &[Vec<f64>], labels: &[f64], cfg: &ForestConfig) -> Result<(Self, Vec<Vec<bool>>)> {
        if rows.is_empty() || rows.len() != labels.len() {
            return Err(Error::Argument(format!(
                "need matching non-empty rows and labels, got {} and {}",
                rows.len(),
                labels.len()
            )));
        }
        let width = rows[0].len();
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Argument("rows have differing widths".into()));
        }
        cfg.validate(width)?;
        let columns = Columns::from_rows(rows);
        let n = labels.len();

        let (trees, bags): (Vec<_>, Vec<_>) = (0..cfg.n_trees)
            .into_par_iter()
            .map(|i| {
                let tree_seed = derive_seed(cfg.seed, i as u64);
                let samples: Vec<usize> = if cfg.bootstrap {
                    let mut rng = rng_from_seed(derive_seed(tree_seed, BOOTSTRAP_STREAM));
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                let mut bag = vec![false; n];
                for &s in &samples {
                    bag[s] = true;
                }
                (RegressionTree::fit_samples(&columns, labels, samples, cfg, tree_seed), bag)
            })
            .unzip();

        Ok((
            RandomForest {
                trees,
                config: cfg.clone(),
            },
            bags,
        ))
    }

    /// Builds a forest from existing trees (e.g. loaded or hand-made).
    pub fn from_trees(trees: Vec<RegressionTree>, config: ForestConfig) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::Argument("forest needs at least one tree".into()));
        }
        let width = trees[0].n_features();
        if trees.iter().any(|t| t.n_features() != width) {
            return Err(Error::Argument("trees disagree on feature count".into()));
        }
        let config = ForestConfig {
            n_trees: trees.len(),
            ..config
        };
        Ok(RandomForest { trees, config })
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn n_features(&self) -> usize {
        self.trees[0].n_features()
    }

    pub fn leaf_count(&self) -> usize {
        self.trees.iter().map(RegressionTree::leaf_count).sum()
    }

    pub fn predict(&self, x: &FeatureVector) -> f64 {
        self.predict_row(&x.to_array())
    }

    /// Mean of the per-tree predictions, summed in tree order.
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let sum = self.trees.iter().fold(0.0, |acc, t| acc + t.predict(x));
        sum / self.trees.len() as f64
    }

    /// MDI importance per feature, averaged over trees and normalized to sum
    /// to one. All zeros if no tree has a split.
    pub fn feature_importance(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.n_features()];
        for tree in &self.trees {
            for (acc, v) in total.iter_mut().zip(tree.impurity_decrease()) {
                *acc += v;
            }
        }
        let n = self.trees.len() as f64;
        total.iter_mut().for_each(|v| *v /= n);
        let sum: f64 = total.iter().sum();
        if sum > 0.0 {
            total.iter_mut().for_each(|v| *v /= sum);
        } else {
            total.iter_mut().for_each(|v| *v = 0.0);
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TransmissionRecord;

    fn dataset(n: usize) -> Dataset {
        let records = (0..n)
            .map(|i| {
                let x = i as f64;
                let mut f = [1.0 + x, -90.0, -10.0, (x * 1.7) % 23.0, 5.0, 40.0, 1.0, 1800.0, (i % 3) as f64, 10.0];
                f[1] -= (x * 3.1) % 17.0;
                TransmissionRecord {
                    features: FeatureVector::from_array(f),
                    datarate: 0.5 * f[3] + (x * 0.37).sin() * 2.0 + 3.0,
                }
            })
            .collect();
        Dataset::new(records).unwrap()
    }

    #[test]
    fn single_unbootstrapped_tree_equals_train_tree() {
        let d = dataset(60);
        let cfg = ForestConfig {
            n_trees: 1,
            bootstrap: false,
            seed: 11,
            ..ForestConfig::default()
        };
        let forest = train_forest(&d, &cfg).unwrap();
        let tree = train_tree(&d, &cfg, derive_seed(11, 0)).unwrap();
        assert_eq!(forest.trees()[0], tree);
        for r in d.records() {
            assert_eq!(forest.predict(&r.features), tree.predict(&r.features.to_array()));
        }
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let d = dataset(120);
        let cfg = ForestConfig {
            n_trees: 16,
            seed: 3,
            ..ForestConfig::default()
        };
        let a = train_forest(&d, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| train_forest(&d, &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn full_feature_trees_without_bootstrap_are_identical() {
        let d = dataset(40);
        let cfg = ForestConfig {
            n_trees: 5,
            feature_subset: FEATURE_COUNT,
            bootstrap: false,
            ..ForestConfig::default()
        };
        let f = train_forest(&d, &cfg).unwrap();
        assert!(f.trees().windows(2).all(|w| w[0].nodes() == w[1].nodes()));
    }

    #[test]
    fn mean_of_two_trees() {
        let leaf = |v| RegressionTree::from_nodes(vec![Node::Leaf { value: v, count: 1 }], 0, 1).unwrap();
        let f = RandomForest::from_trees(vec![leaf(4.0), leaf(6.0)], ForestConfig::default()).unwrap();
        assert_eq!(f.predict_row(&[0.0]), 5.0);
        assert_eq!(f.feature_importance(), vec![0.0]);
    }

    #[test]
    fn stump_forest_predicts_mean() {
        let d = dataset(25);
        let cfg = ForestConfig {
            n_trees: 3,
            max_depth: Some(0),
            bootstrap: false,
            ..ForestConfig::default()
        };
        let f = train_forest(&d, &cfg).unwrap();
        let mean = d.labels().iter().sum::<f64>() / 25.0;
        for r in d.records() {
            assert!((f.predict(&r.features) - mean).abs() < 1e-12);
        }
        assert_eq!(f.feature_importance(), vec![0.0; FEATURE_COUNT]);
    }

    #[test]
    fn single_split_importance() {
        let split = Node::Split {
            feature: 3,
            threshold: 0.5,
            left: 1,
            right: 2,
        };
        let tree = RegressionTree::from_nodes(
            vec![split, Node::Leaf { value: 1.0, count: 2 }, Node::Leaf { value: 3.0, count: 1 }],
            0,
            FEATURE_COUNT,
        )
        .unwrap();
        let f = RandomForest::from_trees(vec![tree], ForestConfig::default()).unwrap();
        let mut expected = vec![0.0; FEATURE_COUNT];
        expected[3] = 1.0;
        assert_eq!(f.feature_importance(), expected);
    }

    #[test]
    fn two_split_importance_matches_direct_variance_sums() {
        // Root splits on feature 0, the right child on feature 1; the left
        // child is pure.
        let rows = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
        ];
        let labels = [1.0, 1.0, 4.0, 6.0, 10.0, 12.0];
        let cfg = ForestConfig {
            n_trees: 1,
            feature_subset: 2,
            bootstrap: false,
            ..ForestConfig::default()
        };
        let f = RandomForest::fit(&rows, &labels, &cfg).unwrap();

        fn var(v: &[f64]) -> f64 {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
        }
        let all = labels.to_vec();
        let (l, r) = (vec![1.0, 1.0], vec![4.0, 6.0, 10.0, 12.0]);
        let root = var(&all) - (2.0 / 6.0) * var(&l) - (4.0 / 6.0) * var(&r);
        let (rl, rr) = (vec![4.0, 6.0], vec![10.0, 12.0]);
        let child = (4.0 / 6.0) * (var(&r) - 0.5 * var(&rl) - 0.5 * var(&rr));
        let sum = root + child;

        let imp = f.feature_importance();
        assert!((imp[0] - root / sum).abs() < 1e-12, "{imp:?}");
        assert!((imp[1] - child / sum).abs() < 1e-12, "{imp:?}");
    }

    #[test]
    fn oob_predictions_cover_all_rows() {
        let d = dataset(50);
        let cfg = ForestConfig {
            n_trees: 20,
            ..ForestConfig::default()
        };
        let (f, oob) = RandomForest::fit_with_oob(&d.feature_rows(), &d.labels(), &cfg).unwrap();
        assert_eq!(oob.len(), 50);
        assert_eq!(f, train_forest(&d, &cfg).unwrap());
        assert!(oob.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cross_validation_scores_learnable_data() {
        let d = dataset(120);
        let cfg = ForestConfig {
            n_trees: 20,
            ..ForestConfig::default()
        };
        let cv = cross_validate(&d, &cfg, 5, 8).unwrap();
        assert_eq!(cv.fold_r2.len(), 5);
        assert!(cv.pooled_r2 > 0.5, "{}", cv.pooled_r2);
        assert_eq!(cv, cross_validate(&d, &cfg, 5, 8).unwrap());
        assert!(cross_validate(&d, &cfg, 1, 8).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = ForestConfig {
            feature_subset: 11,
            ..ForestConfig::default()
        };
        assert!(bad.validate(FEATURE_COUNT).is_err());
        assert!(ForestConfig { n_trees: 0, ..ForestConfig::default() }.validate(10).is_err());
        assert!(ForestConfig { min_leaf: 0, ..ForestConfig::default() }.validate(10).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn forest_is_mean_of_trees_and_mdi_is_normalized(
                data in prop::collection::vec((prop::array::uniform3(0u8..6), 0.0f64..20.0), 2..40),
                seed in any::<u64>(),
            ) {
                let rows: Vec<Vec<f64>> = data.iter().map(|(r, _)| r.iter().map(|&v| v as f64).collect()).collect();
                let labels: Vec<f64> = data.iter().map(|(_, y)| *y).collect();
                let cfg = ForestConfig { n_trees: 7, feature_subset: 2, seed, ..ForestConfig::default() };
                let f = RandomForest::fit(&rows, &labels, &cfg).unwrap();
                for r in &rows {
                    let direct = f.trees().iter().map(|t| t.predict(r)).sum::<f64>() / 7.0;
                    let p = f.predict_row(r);
                    prop_assert!((p - direct).abs() <= 1e-12 * direct.abs().max(1.0));
                }
                let imp = f.feature_importance();
                prop_assert!(imp.iter().all(|&w| w >= 0.0));
                let s: f64 = imp.iter().sum();
                prop_assert!(s == 0.0 || (s - 1.0).abs() < 1e-9);
                for (feat, w) in imp.iter().enumerate() {
                    let used = f.trees().iter().any(|t| t.nodes().iter().any(|n| matches!(n, Node::Split { feature, .. } if *feature == feat)));
                    if !used {
                        prop_assert_eq!(*w, 0.0);
                    }
                }
            }
        }
    }
}
