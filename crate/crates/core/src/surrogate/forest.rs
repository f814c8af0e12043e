//! Regression forest of bootstrapped CART trees with out-of-bag importance.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Design;
use crate::stochastic::{self, Purpose, Stream};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub trees: usize,
    /// Nodes with at most this many samples become leaves.
    pub min_leaf: usize,
    /// Features tried per split; `None` means `⌈d/3⌉`.
    pub mtry: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: 500,
            min_leaf: 5,
            mtry: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    /// Training rows left out of this tree's bootstrap sample.
    pub oob: Vec<usize>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub config: ForestConfig,
    pub dim: usize,
    pub trees: Vec<Tree>,
    /// Out-of-bag prediction per training row (`None` if never out of bag).
    pub oob_predictions: Vec<Option<f64>>,
    pub oob_mse: f64,
    /// Mean increase in out-of-bag MSE when a feature is permuted.
    pub permutation_importance: Vec<f64>,
    /// Standard error of that mean across trees.
    pub importance_se: Vec<f64>,
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    min_leaf: usize,
    mtry: usize,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn grow(&mut self, idx: &mut [usize], rng: &mut Stream) -> usize {
        let id = self.nodes.len();
        let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64;
        self.nodes.push(Node::Leaf(mean));
        if idx.len() <= self.min_leaf {
            return id;
        }
        let d = self.x[0].len();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(rng);
        let mut best: Option<(f64, usize, f64)> = None;
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let n = idx.len() as f64;
        for &f in features.iter().take(self.mtry) {
            idx.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let mut left = 0.0;
            for k in 0..idx.len() - 1 {
                left += self.y[idx[k]];
                let (a, b) = (self.x[idx[k]][f], self.x[idx[k + 1]][f]);
                if a == b {
                    continue;
                }
                let nl = (k + 1) as f64;
                let nr = n - nl;
                let right = total - left;
                // maximizing this is minimizing the children's SSE
                let gain = left * left / nl + right * right / nr;
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, 0.5 * (a + b)));
                }
            }
        }
        let Some((gain, feature, threshold)) = best else {
            return id;
        };
        if gain <= total * total / n * (1.0 + 1e-12) {
            return id;
        }
        idx.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]));
        let cut = idx.partition_point(|&i| self.x[i][feature] <= threshold);
        let (l, r) = idx.split_at_mut(cut);
        let left = self.grow(l, rng);
        let right = self.grow(r, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

struct TreeFit {
    tree: Tree,
    /// (oob mse, per-feature permuted mse); `None` when there is no oob row.
    perm: Option<(f64, Vec<f64>)>,
}

fn fit_tree(design: &Design, cfg: &ForestConfig, mtry: usize, seed: u64, t: usize) -> TreeFit {
    let n = design.len();
    let d = design.dim();
    let mut rng = stochastic::stream(seed, Purpose::ForestFit, t as u64, 0);
    let mut in_bag = vec![false; n];
    let mut sample: Vec<usize> = (0..n)
        .map(|_| {
            let i = rng.random_range(0..n);
            in_bag[i] = true;
            i
        })
        .collect();
    let mut g = Grower {
        x: &design.x,
        y: &design.y,
        min_leaf: cfg.min_leaf.max(1),
        mtry,
        nodes: Vec::new(),
    };
    g.grow(&mut sample, &mut rng);
    let oob: Vec<usize> = (0..n).filter(|&i| !in_bag[i]).collect();
    let tree = Tree { nodes: g.nodes, oob };
    let perm = (!tree.oob.is_empty()).then(|| {
        let mse = |rows: &mut dyn Iterator<Item = (Vec<f64>, f64)>| {
            let (s, c) = rows.fold((0.0, 0usize), |(s, c), (x, y)| {
                let e = tree.predict(&x) - y;
                (s + e * e, c + 1)
            });
            s / c as f64
        };
        let base = mse(&mut tree.oob.iter().map(|&i| (design.x[i].clone(), design.y[i])));
        let permuted = (0..d)
            .map(|f| {
                let mut vals: Vec<f64> = tree.oob.iter().map(|&i| design.x[i][f]).collect();
                vals.shuffle(&mut rng);
                mse(&mut tree.oob.iter().zip(&vals).map(|(&i, &v)| {
                    let mut x = design.x[i].clone();
                    x[f] = v;
                    (x, design.y[i])
                }))
            })
            .collect();
        (base, permuted)
    });
    TreeFit { tree, perm }
}

pub fn fit_forest(design: &Design, cfg: &ForestConfig, seed: u64) -> Result<ForestModel> {
    design.check()?;
    if cfg.trees == 0 {
        return Err(crate::Error::Config("forest needs at least one tree".into()));
    }
    let n = design.len();
    let d = design.dim();
    let mtry = cfg.mtry.unwrap_or(d.div_ceil(3)).clamp(1, d.max(1));
    let fits: Vec<TreeFit> = (0..cfg.trees)
        .into_par_iter()
        .map(|t| fit_tree(design, cfg, mtry, seed, t))
        .collect();

    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for f in &fits {
        for &i in &f.tree.oob {
            sums[i] += f.tree.predict(&design.x[i]);
            counts[i] += 1;
        }
    }
    let oob_predictions: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    let (se, cnt) = oob_predictions
        .iter()
        .zip(&design.y)
        .filter_map(|(p, y)| p.map(|p| (p - y) * (p - y)))
        .fold((0.0, 0usize), |(s, c), e| (s + e, c + 1));
    let oob_mse = if cnt > 0 { se / cnt as f64 } else { f64::NAN };

    let diffs: Vec<Vec<f64>> = fits
        .iter()
        .filter_map(|f| f.perm.as_ref())
        .map(|(base, p)| p.iter().map(|v| v - base).collect())
        .collect();
    let m = diffs.len();
    let mut importance = vec![0.0; d];
    let mut importance_se = vec![0.0; d];
    if m > 0 {
        for j in 0..d {
            let mean = diffs.iter().map(|r| r[j]).sum::<f64>() / m as f64;
            importance[j] = mean;
            if m > 1 {
                let var = diffs.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
                importance_se[j] = (var / m as f64).sqrt();
            }
        }
    }
    Ok(ForestModel {
        config: *cfg,
        dim: d,
        trees: fits.into_iter().map(|f| f.tree).collect(),
        oob_predictions,
        oob_mse,
        permutation_importance: importance,
        importance_se,
    })
}

impl ForestModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn importance(&self) -> Vec<f64> {
        self.permutation_importance.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_design(n: usize, d: usize, seed: u64, f: impl Fn(&[f64]) -> f64) -> Design {
        let mut rng = stochastic::stream(seed, Purpose::Design, 0, 0);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
        let y = x.iter().map(|r| f(r)).collect();
        Design::new(x, y).unwrap()
    }

    fn small() -> ForestConfig {
        ForestConfig {
            trees: 100,
            ..Default::default()
        }
    }

    #[test]
    fn single_point_is_constant() {
        let d = Design::new(vec![vec![0.3, 0.6]], vec![2.5]).unwrap();
        let m = fit_forest(&d, &small(), 1).unwrap();
        for x in [[0.0, 0.0], [1.0, 0.2], [0.3, 0.6]] {
            assert_eq!(m.predict(&x), 2.5);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let d = random_design(60, 3, 2, |x| x[0] + x[1] * x[2]);
        let a = fit_forest(&d, &small(), 7).unwrap();
        let b = fit_forest(&d, &small(), 7).unwrap();
        for i in 0..=10 {
            let p = [i as f64 / 10.0, 0.5, 1.0 - i as f64 / 10.0];
            assert_eq!(a.predict(&p), b.predict(&p));
        }
        assert_eq!(a, b);
    }

    #[test]
    fn step_function_oob_error_small() {
        let d = random_design(200, 3, 3, |x| if x[0] > 0.5 { 1.0 } else { 0.0 });
        let m = fit_forest(&d, &ForestConfig::default(), 3).unwrap();
        let mean = d.y.iter().sum::<f64>() / 200.0;
        let var = d.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 200.0;
        assert!(m.oob_mse < 0.5 * var, "oob {} var {var}", m.oob_mse);
        let imp = m.importance();
        assert!(imp[0] > imp[1] && imp[0] > imp[2]);
    }

    #[test]
    fn null_feature_importance_near_zero() {
        let mut means = Vec::new();
        let mut ses = Vec::new();
        for s in 0..20u64 {
            let d = random_design(80, 3, 100 + s, |x| (4.0 * x[0]).sin() + x[1]);
            let m = fit_forest(&d, &small(), s).unwrap();
            means.push(m.permutation_importance[2]);
            ses.push(m.importance_se[2]);
        }
        let mean = means.iter().sum::<f64>() / 20.0;
        let se = ses.iter().sum::<f64>() / 20.0;
        assert!(mean.abs() < se, "mean {mean} se {se}");
    }

    #[test]
    fn prediction_is_tree_mean() {
        let d = random_design(30, 2, 5, |x| x[0] * 3.0);
        let m = fit_forest(&d, &small(), 1).unwrap();
        let p = [0.4, 0.4];
        let mean = m.trees.iter().map(|t| t.predict(&p)).sum::<f64>() / m.trees.len() as f64;
        assert!((m.predict(&p) - mean).abs() < 1e-12);
    }
}
