//! Gradient-boosted regression trees on squared error.
//!
//! Each round fits a depth-limited tree to the current residuals by exact
//! greedy variance-reduction splits; leaves hold the mean residual and the
//! ensemble adds `learning_rate * leaf` per tree on top of `base_score`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub max_depth: usize,
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    /// Fraction of rows drawn (without replacement) for each tree.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            max_depth: 4,
            n_rounds: 200,
            learning_rate: 0.1,
            min_leaf: 5,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("gbt_learning_rate must be > 0".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::Config("gbt_min_leaf must be >= 1".into()));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::Config("gbt_subsample must be in (0,1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    pub base_score: f64,
    pub max_depth: usize,
    pub n_rounds: usize,
    pub min_leaf: usize,
    pub subsample: f64,
    pub seed: u64,
    pub n_features: usize,
}

impl GbtModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }
}

struct Builder<'a> {
    rows: &'a [Vec<f64>],
    residual: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    go_left: Vec<bool>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    fn leaf(&self, idx: &[usize], nodes: &mut Vec<Node>) -> usize {
        let mean = if idx.is_empty() {
            0.0
        } else {
            idx.iter().map(|&i| self.residual[i]).sum::<f64>() / idx.len() as f64
        };
        nodes.push(Node::Leaf { value: mean });
        nodes.len() - 1
    }

    /// `sorted[f]` lists the node's rows ordered by feature `f`.
    fn build(&mut self, sorted: Vec<Vec<usize>>, depth: usize, nodes: &mut Vec<Node>) -> usize {
        let n = sorted[0].len();
        if depth >= self.max_depth || n < 2 * self.min_leaf {
            return self.leaf(&sorted[0], nodes);
        }
        let Some(best) = self.best_split(&sorted) else {
            return self.leaf(&sorted[0], nodes);
        };

        for &i in &sorted[0] {
            self.go_left[i] = self.rows[i][best.feature] <= best.threshold;
        }
        let (mut left, mut right) = (Vec::with_capacity(sorted.len()), Vec::with_capacity(sorted.len()));
        for list in sorted {
            let (l, r): (Vec<usize>, Vec<usize>) = list.into_iter().partition(|&i| self.go_left[i]);
            left.push(l);
            right.push(r);
        }

        let at = nodes.len();
        nodes.push(Node::Leaf { value: 0.0 });
        let l = self.build(left, depth + 1, nodes);
        let r = self.build(right, depth + 1, nodes);
        nodes[at] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: l,
            right: r,
        };
        at
    }

    /// Highest squared-error reduction; ties keep the lowest feature, then the lowest threshold.
    fn best_split(&self, sorted: &[Vec<usize>]) -> Option<BestSplit> {
        let n = sorted[0].len();
        let total: f64 = sorted[0].iter().map(|&i| self.residual[i]).sum();
        let total_ss: f64 = sorted[0].iter().map(|&i| self.residual[i].powi(2)).sum();
        let parent = total * total / n as f64;
        let min_gain = 1e-12 * total_ss;
        let mut best: Option<BestSplit> = None;

        for (f, list) in sorted.iter().enumerate() {
            let mut left_sum = 0.0;
            for pos in 0..n - 1 {
                let i = list[pos];
                left_sum += self.residual[i];
                let n_left = pos + 1;
                if n_left < self.min_leaf || n - n_left < self.min_leaf {
                    continue;
                }
                let (a, b) = (self.rows[i][f], self.rows[list[pos + 1]][f]);
                if a == b {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / (n - n_left) as f64
                    - parent;
                if gain > min_gain && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mid = a + (b - a) / 2.0;
                    let threshold = if mid >= a && mid < b { mid } else { a };
                    best = Some(BestSplit { feature: f, threshold, gain });
                }
            }
        }
        best
    }
}

/// Boosted ensemble plus the training mean squared error after each round
/// (entry 0 is the base score alone).
pub fn fit_gbt(rows: &[Vec<f64>], targets: &[f64], params: &GbtParams) -> Result<(GbtModel, Vec<f64>)> {
    params.validate()?;
    if rows.is_empty() {
        return Err(Error::InvalidInput("no training rows".into()));
    }
    if rows.len() != targets.len() {
        return Err(Error::InvalidInput(format!(
            "{} feature rows but {} targets",
            rows.len(),
            targets.len()
        )));
    }
    let n_features = rows[0].len();
    if rows.iter().any(|r| r.len() != n_features) {
        return Err(Error::InvalidInput("ragged feature rows".into()));
    }
    if rows.iter().flatten().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("NaN or infinite value in training data".into()));
    }

    let n = rows.len();
    let base_score = targets.iter().sum::<f64>() / n as f64;
    let mut model = GbtModel {
        trees: Vec::new(),
        learning_rate: params.learning_rate,
        base_score,
        max_depth: params.max_depth,
        n_rounds: params.n_rounds,
        min_leaf: params.min_leaf,
        subsample: params.subsample,
        seed: params.seed,
        n_features,
    };
    let mse = |pred: &[f64]| pred.iter().zip(targets).map(|(p, y)| (y - p).powi(2)).sum::<f64>() / n as f64;
    let mut pred = vec![base_score; n];
    let mut history = vec![mse(&pred)];
    if n < 2 {
        model.n_rounds = 0;
        return Ok((model, history));
    }

    // rows presorted by each feature; ties by row index
    let presorted: Vec<Vec<usize>> = (0..n_features)
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| rows[a][f].total_cmp(&rows[b][f]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let n_sample = ((params.subsample * n as f64).round() as usize).clamp(1, n);

    let mut residual = vec![0.0; n];
    for round in 0..params.n_rounds {
        for i in 0..n {
            residual[i] = targets[i] - pred[i];
        }
        let sorted: Vec<Vec<usize>> = if n_sample < n {
            let mut pick: Vec<usize> = (0..n).collect();
            pick.shuffle(&mut seed::rng(seed::derive_seed(params.seed, "gbt", &round.to_string())));
            let mut chosen = vec![false; n];
            for &i in &pick[..n_sample] {
                chosen[i] = true;
            }
            presorted
                .iter()
                .map(|l| l.iter().copied().filter(|&i| chosen[i]).collect())
                .collect()
        } else if n_features == 0 {
            vec![(0..n).collect()]
        } else {
            presorted.clone()
        };

        let mut builder = Builder {
            rows,
            residual: &residual,
            max_depth: params.max_depth,
            min_leaf: params.min_leaf,
            go_left: vec![false; n],
        };
        let mut nodes = Vec::new();
        builder.build(sorted, 0, &mut nodes);
        let tree = Tree { nodes };
        for (p, r) in pred.iter_mut().zip(rows) {
            *p += params.learning_rate * tree.predict(r);
        }
        model.trees.push(tree);
        history.push(mse(&pred));
    }
    Ok((model, history))
}
