//! Gradient-boosted propensity scores.
//!
//! A small from-scratch binary gradient-boosting machine: shallow regression
//! trees fit to logistic residuals with variance-reduction splits and
//! Newton-step leaf values, stagewise-shrunk onto a log-odds base score.
//! Defaults (500 trees of depth 2, shrinkage 0.05, 50 % row subsampling,
//! minimum 10 rows per leaf) favor calibration over sharpness, which is what
//! propensity weighting needs.
//!
//! Predictions are `sigmoid(clamp(score, ±30))` and therefore always lie
//! strictly inside (0, 1): downstream score distances never meet a
//! degenerate 0 or 1. Fitting draws bagging indices from a single seeded
//! `ChaCha20` sequence, so a configuration reproduces its model exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Fraction of rows bagged (without replacement) per tree, in (0, 1].
    pub subsample: f64,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for GbmConfig {
    fn default() -> Self {
        GbmConfig {
            n_trees: 500,
            max_depth: 2,
            learning_rate: 0.05,
            subsample: 0.5,
            min_leaf: 10,
            seed: 0,
        }
    }
}

impl GbmConfig {
    fn validate(&self) -> Result<(), GbmError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(GbmError::InvalidConfig("learning_rate must be positive"));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(GbmError::InvalidConfig("subsample must lie in (0, 1]"));
        }
        if self.min_leaf == 0 {
            return Err(GbmError::InvalidConfig("min_leaf must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GbmError {
    #[error("no training rows")]
    Empty,
    #[error("labels are all {0}: propensity is undefined with a single class")]
    SingleClass(bool),
    #[error("row {row} has {got} features, expected {expected}")]
    RaggedRows { row: usize, got: usize, expected: usize },
    #[error("{0} rows but {1} labels")]
    LengthMismatch(usize, usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        // Children are pushed before their parent: the root is the last node.
        let mut at = self.nodes.len() - 1;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[feature] < threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub n_features: usize,
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z.clamp(-30.0, 30.0)).exp())
}

/// Mean negative log likelihood of binary labels under probabilities `p`.
pub fn log_loss(p: &[f64], labels: &[bool]) -> f64 {
    let n = p.len();
    let mut sum = 0.0;
    for (&pi, &yi) in p.iter().zip(labels) {
        sum -= if yi { pi.ln() } else { (1.0 - pi).ln() };
    }
    sum / n as f64
}

/// Per-feature lists of row indices, each sorted by that feature's value.
fn presort(x: &[f64], n: usize, m: usize) -> Vec<Vec<u32>> {
    (0..m)
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| x[a as usize * m + f].total_cmp(&x[b as usize * m + f]));
            idx
        })
        .collect()
}

struct TreeBuilder<'a> {
    x: &'a [f64],
    m: usize,
    grad: &'a [f64],
    hess: &'a [f64],
    cfg: &'a GbmConfig,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    /// Grows a node over `lists` (per-feature sorted index lists of this
    /// node's rows) and returns its index in `nodes`.
    fn grow(&mut self, lists: Vec<Vec<u32>>, depth: usize) -> usize {
        let items = &lists[0];
        let n = items.len();
        let g_total: f64 = items.iter().map(|&i| self.grad[i as usize]).sum();

        let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
        if depth < self.cfg.max_depth && n >= 2 * self.cfg.min_leaf {
            let parent_score = g_total * g_total / n as f64;
            for (f, list) in lists.iter().enumerate() {
                let mut g_left = 0.0;
                for k in 1..n {
                    g_left += self.grad[list[k - 1] as usize];
                    if k < self.cfg.min_leaf || n - k < self.cfg.min_leaf {
                        continue;
                    }
                    let lo = self.x[list[k - 1] as usize * self.m + f];
                    let hi = self.x[list[k] as usize * self.m + f];
                    if lo >= hi {
                        continue;
                    }
                    let mid = 0.5 * (lo + hi);
                    if !(lo < mid && mid <= hi) {
                        continue;
                    }
                    let g_right = g_total - g_left;
                    let gain = g_left * g_left / k as f64
                        + g_right * g_right / (n - k) as f64
                        - parent_score;
                    if gain > 1e-12 && best.is_none_or(|(bg, _, _)| gain > bg) {
                        best = Some((gain, f, mid));
                    }
                }
            }
        }

        match best {
            None => {
                let h_total: f64 = items.iter().map(|&i| self.hess[i as usize]).sum();
                self.nodes.push(Node::Leaf { value: g_total / (h_total + 1e-12) });
                self.nodes.len() - 1
            }
            Some((_, feature, threshold)) => {
                // Stable partition keeps every per-feature list sorted.
                let mut left_lists = Vec::with_capacity(self.m);
                let mut right_lists = Vec::with_capacity(self.m);
                for list in &lists {
                    let (mut l, mut r) = (Vec::new(), Vec::new());
                    for &i in list {
                        if self.x[i as usize * self.m + feature] < threshold {
                            l.push(i);
                        } else {
                            r.push(i);
                        }
                    }
                    left_lists.push(l);
                    right_lists.push(r);
                }
                drop(lists);
                let left = self.grow(left_lists, depth + 1);
                let right = self.grow(right_lists, depth + 1);
                self.nodes.push(Node::Split { feature, threshold, left, right });
                self.nodes.len() - 1
            }
        }
    }
}

fn check_data(rows: &[Vec<f64>], labels: &[bool]) -> Result<usize, GbmError> {
    if rows.is_empty() {
        return Err(GbmError::Empty);
    }
    if rows.len() != labels.len() {
        return Err(GbmError::LengthMismatch(rows.len(), labels.len()));
    }
    let m = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != m {
            return Err(GbmError::RaggedRows { row: i, got: r.len(), expected: m });
        }
    }
    Ok(m)
}

/// Fits the boosted propensity model.
pub fn fit(cfg: &GbmConfig, rows: &[Vec<f64>], labels: &[bool]) -> Result<GbmModel, GbmError> {
    cfg.validate()?;
    let m = check_data(rows, labels)?;
    let n = rows.len();
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 || positives == n {
        return Err(GbmError::SingleClass(positives != 0));
    }

    let x: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    let sorted = presort(&x, n, m);

    let rate = positives as f64 / n as f64;
    let base_score = (rate / (1.0 - rate)).ln();
    let mut score = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let bag_size = ((cfg.subsample * n as f64).floor() as usize).clamp(1, n);

    let mut trees = Vec::with_capacity(cfg.n_trees);
    for _ in 0..cfg.n_trees {
        for i in 0..n {
            let p = sigmoid(score[i]);
            grad[i] = f64::from(u8::from(labels[i])) - p;
            hess[i] = p * (1.0 - p);
        }

        let mut in_bag = vec![false; n];
        for i in rand::seq::index::sample(&mut rng, n, bag_size) {
            in_bag[i] = true;
        }
        let lists: Vec<Vec<u32>> = sorted
            .iter()
            .map(|list| list.iter().copied().filter(|&i| in_bag[i as usize]).collect())
            .collect();

        let mut builder =
            TreeBuilder { x: &x, m, grad: &grad, hess: &hess, cfg, nodes: Vec::new() };
        let root = builder.grow(lists, 0);
        debug_assert_eq!(root, builder.nodes.len() - 1);
        let tree = Tree { nodes: builder.nodes };

        for (i, s) in score.iter_mut().enumerate() {
            *s += cfg.learning_rate * tree.predict(&x[i * m..(i + 1) * m]);
        }
        trees.push(tree);
    }

    Ok(GbmModel { n_features: m, base_score, learning_rate: cfg.learning_rate, trees })
}

impl GbmModel {
    /// Probability that one row is treated; always strictly inside (0, 1).
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let raw: f64 =
            self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(row)).sum::<f64>();
        sigmoid(raw)
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|r| self.predict_row(r)).collect()
    }

    /// Log loss after 0, 1, ..., `n_trees` boosting stages — a fitting
    /// health check (on training data this should be non-increasing).
    pub fn staged_log_loss(
        &self,
        rows: &[Vec<f64>],
        labels: &[bool],
    ) -> Result<Vec<f64>, GbmError> {
        let m = check_data(rows, labels)?;
        if m != self.n_features {
            return Err(GbmError::RaggedRows { row: 0, got: m, expected: self.n_features });
        }
        let n = rows.len();
        let mut score = vec![self.base_score; n];
        let mut out = Vec::with_capacity(self.trees.len() + 1);
        let stage_loss = |score: &[f64]| {
            let p: Vec<f64> = score.iter().map(|&s| sigmoid(s)).collect();
            log_loss(&p, labels)
        };
        out.push(stage_loss(&score));
        for tree in &self.trees {
            for (s, row) in score.iter_mut().zip(rows) {
                *s += self.learning_rate * tree.predict(row);
            }
            out.push(stage_loss(&score));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    /// Area under the ROC curve via the rank statistic.
    fn auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        let (mut rank_sum, mut n_pos, mut n_neg) = (0.0f64, 0usize, 0usize);
        let mut k = 0;
        while k < order.len() {
            let mut j = k;
            while j < order.len() && scores[order[j]] == scores[order[k]] {
                j += 1;
            }
            let mean_rank = (k + 1 + j) as f64 / 2.0;
            for &i in &order[k..j] {
                if labels[i] {
                    rank_sum += mean_rank;
                    n_pos += 1;
                } else {
                    n_neg += 1;
                }
            }
            k = j;
        }
        (rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos as f64 * n_neg as f64)
    }

    fn separable(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut r = rng(seed);
        (0..n)
            .map(|_| {
                let x0: f64 = r.gen_range(-1.0..1.0);
                let x1: f64 = r.gen_range(-1.0..1.0);
                (vec![x0, x1], x0 > 0.0)
            })
            .unzip()
    }

    #[test]
    fn zero_trees_predict_the_base_rate() {
        let (rows, labels) = separable(400, 1);
        let rate = labels.iter().filter(|&&y| y).count() as f64 / labels.len() as f64;
        let cfg = GbmConfig { n_trees: 0, ..GbmConfig::default() };
        let model = fit(&cfg, &rows, &labels).unwrap();
        for p in model.predict(&rows) {
            assert!((p - rate).abs() < 1e-12, "{p} vs {rate}");
        }
    }

    #[test]
    fn separable_data_is_ranked_almost_perfectly() {
        let (rows, labels) = separable(1000, 2);
        let model = fit(&GbmConfig { seed: 3, ..GbmConfig::default() }, &rows, &labels).unwrap();
        let scores = model.predict(&rows);
        assert!(auc(&scores, &labels) >= 0.99);
        assert!(scores.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn independent_labels_stay_near_the_base_rate() {
        let mut r = rng(4);
        let rows: Vec<Vec<f64>> =
            (0..2000).map(|_| vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]).collect();
        let labels: Vec<bool> = (0..2000).map(|_| r.gen::<f64>() < 0.3).collect();
        let rate = labels.iter().filter(|&&y| y).count() as f64 / labels.len() as f64;
        let model = fit(&GbmConfig { seed: 5, ..GbmConfig::default() }, &rows, &labels).unwrap();
        let scores = model.predict(&rows);
        let mean_abs_dev =
            scores.iter().map(|p| (p - rate).abs()).sum::<f64>() / 2000.0;
        // Noise fitting drifts a little but must not become confident.
        assert!(mean_abs_dev < 0.1, "mean |p - rate| = {mean_abs_dev}");
        assert!(scores.iter().all(|&p| p > 0.02 && p < 0.8));
    }

    #[test]
    fn depth_two_beats_a_single_stump_on_interactions() {
        // XOR labels: no single split helps much, two levels capture it.
        let mut r = rng(6);
        let (rows, labels): (Vec<Vec<f64>>, Vec<bool>) = (0..1500)
            .map(|_| {
                let x0: f64 = r.gen_range(-1.0..1.0);
                let x1: f64 = r.gen_range(-1.0..1.0);
                (vec![x0, x1], (x0 > 0.0) != (x1 > 0.0))
            })
            .unzip();
        let stump_cfg =
            GbmConfig { n_trees: 1, max_depth: 1, subsample: 1.0, ..GbmConfig::default() };
        let boosted_cfg = GbmConfig { subsample: 1.0, ..GbmConfig::default() };
        let stump = fit(&stump_cfg, &rows, &labels).unwrap();
        let boosted = fit(&boosted_cfg, &rows, &labels).unwrap();
        let l_stump = *stump.staged_log_loss(&rows, &labels).unwrap().last().unwrap();
        let l_boost = *boosted.staged_log_loss(&rows, &labels).unwrap().last().unwrap();
        assert!(l_boost < 0.99 * l_stump, "boosted {l_boost} vs stump {l_stump}");
    }

    #[test]
    fn training_loss_decreases_stage_by_stage() {
        let (rows, labels) = separable(600, 7);
        let cfg = GbmConfig { n_trees: 120, subsample: 1.0, ..GbmConfig::default() };
        let model = fit(&cfg, &rows, &labels).unwrap();
        let losses = model.staged_log_loss(&rows, &labels).unwrap();
        assert_eq!(losses.len(), 121);
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "loss rose: {} -> {}", w[0], w[1]);
        }
        assert!(losses.last().unwrap() < &(0.5 * losses[0]));
    }

    #[test]
    fn same_seed_same_model_different_seed_different_model() {
        let (rows, labels) = separable(500, 8);
        let cfg = GbmConfig { n_trees: 40, seed: 11, ..GbmConfig::default() };
        let a = fit(&cfg, &rows, &labels).unwrap();
        let b = fit(&cfg, &rows, &labels).unwrap();
        assert_eq!(a, b);
        let c = fit(&GbmConfig { seed: 12, ..cfg }, &rows, &labels).unwrap();
        assert_ne!(a.predict(&rows), c.predict(&rows));
    }

    #[test]
    fn min_leaf_blocks_splits_on_tiny_nodes() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![f64::from(i)]).collect();
        let labels: Vec<bool> = (0..12).map(|i| i >= 6).collect();
        let cfg =
            GbmConfig { n_trees: 1, min_leaf: 10, subsample: 1.0, ..GbmConfig::default() };
        let model = fit(&cfg, &rows, &labels).unwrap();
        // 12 rows cannot produce two leaves of 10: the tree is a lone leaf.
        assert_eq!(model.trees[0].nodes.len(), 1);
    }

    #[test]
    fn degenerate_inputs_error() {
        assert_eq!(fit(&GbmConfig::default(), &[], &[]), Err(GbmError::Empty));
        let rows = vec![vec![0.0], vec![1.0]];
        assert_eq!(
            fit(&GbmConfig::default(), &rows, &[true, true]),
            Err(GbmError::SingleClass(true))
        );
        assert_eq!(
            fit(&GbmConfig::default(), &rows, &[true]),
            Err(GbmError::LengthMismatch(2, 1))
        );
        let ragged = vec![vec![0.0], vec![1.0, 2.0]];
        assert!(matches!(
            fit(&GbmConfig::default(), &ragged, &[true, false]),
            Err(GbmError::RaggedRows { row: 1, .. })
        ));
    }

    #[test]
    fn model_serializes_and_round_trips() {
        let (rows, labels) = separable(200, 9);
        let cfg = GbmConfig { n_trees: 10, ..GbmConfig::default() };
        let model = fit(&cfg, &rows, &labels).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: GbmModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
    }
}
