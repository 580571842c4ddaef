//! Independent reference implementations used by the integration tests.
//! Each one is written for clarity and brute force, never sharing code with
//! the library routine it checks.
#![allow(dead_code)]

use std::path::PathBuf;

use cnn_inte::forest::{DecisionTree, TreeNode};
use cnn_inte::meta::MetaDataset;

/// MNIST location: `CNNINTE_MNIST_DIR`, else `data/mnist` at the workspace root.
pub fn mnist_dir() -> PathBuf {
    std::env::var_os("CNNINTE_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

pub fn mnist_available() -> bool {
    let dir = mnist_dir();
    ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
        .iter()
        .all(|f| dir.join(f).is_file())
}

/// Root-to-leaf conditions `(feature, threshold, went_left)` for `row`.
pub fn walk_tree(tree: &DecisionTree, row: &[f64]) -> (usize, Vec<(usize, f64, bool)>) {
    let mut conditions = Vec::new();
    let mut node = &tree.nodes[0];
    loop {
        match node {
            TreeNode::Leaf { class, .. } => return (*class, conditions),
            TreeNode::Internal { feature, threshold, left, right } => {
                let go_left = row[*feature] <= *threshold;
                conditions.push((*feature, *threshold, go_left));
                node = &tree.nodes[if go_left { *left } else { *right }];
            }
        }
    }
}

/// Every training row with label `class` that satisfies all `conditions`.
pub fn full_scan(meta: &MetaDataset, conditions: &[(usize, f64, bool)], class: usize) -> Vec<usize> {
    let mut out = Vec::new();
    'rows: for i in 0..meta.instances {
        if meta.labels[i] != class {
            continue;
        }
        for &(f, t, left) in conditions {
            let v = meta.features[i * meta.factors + f] as f64;
            if (v <= t) != left {
                continue 'rows;
            }
        }
        out.push(i);
    }
    out
}

/// Brute-force greedy CART node. Candidate thresholds are midpoints between
/// consecutive distinct values of the feature over the full dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleNode {
    Leaf(usize),
    Split { feature: usize, threshold: f64, left: Box<OracleNode>, right: Box<OracleNode> },
}

fn counts(labels: &[usize], rows: &[usize], classes: usize) -> Vec<i128> {
    let mut c = vec![0i128; classes];
    for &r in rows {
        c[labels[r]] += 1;
    }
    c
}

fn sq(c: &[i128]) -> i128 {
    c.iter().map(|x| x * x).sum()
}

pub fn oracle_tree(data: &[f64], cols: usize, labels: &[usize], classes: usize, max_depth: usize) -> OracleNode {
    let n = labels.len();
    let mut grid: Vec<Vec<f64>> = Vec::new();
    for f in 0..cols {
        let mut v: Vec<f64> = (0..n).map(|i| data[i * cols + f]).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        grid.push(v.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect());
    }
    fn build(
        rows: Vec<usize>,
        depth: usize,
        ctx: (&[f64], usize, &[usize], usize, usize, &[Vec<f64>]),
    ) -> OracleNode {
        let (data, cols, labels, classes, max_depth, grid) = ctx;
        let parent = counts(labels, &rows, classes);
        let mut majority = 0;
        for c in 0..classes {
            if parent[c] > parent[majority] {
                majority = c;
            }
        }
        if depth >= max_depth || rows.len() < 2 {
            return OracleNode::Leaf(majority);
        }
        let n = rows.len() as i128;
        // Best so far as the rational score SL/nL + SR/nR = num/den.
        let mut best: Option<(i128, i128, usize, f64)> = None;
        for f in 0..cols {
            for &t in &grid[f] {
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| data[i * cols + f] <= t);
                if l.is_empty() || r.is_empty() {
                    continue;
                }
                let (nl, nr) = (l.len() as i128, r.len() as i128);
                let num = sq(&counts(labels, &l, classes)) * nr + sq(&counts(labels, &r, classes)) * nl;
                let den = nl * nr;
                // Must beat the parent's SP/n strictly.
                if num * n <= sq(&parent) * den {
                    continue;
                }
                if best.is_none_or(|(bn, bd, _, _)| num * bd > bn * den) {
                    best = Some((num, den, f, t));
                }
            }
        }
        match best {
            None => OracleNode::Leaf(majority),
            Some((_, _, feature, threshold)) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&i| data[i * cols + feature] <= threshold);
                OracleNode::Split {
                    feature,
                    threshold,
                    left: Box::new(build(l, depth + 1, ctx)),
                    right: Box::new(build(r, depth + 1, ctx)),
                }
            }
        }
    }
    build((0..n).collect(), 0, (data, cols, labels, classes, max_depth, &grid))
}

/// Converts a library tree into the oracle's shape for comparison.
pub fn as_oracle(tree: &DecisionTree) -> OracleNode {
    fn go(t: &DecisionTree, at: usize) -> OracleNode {
        match &t.nodes[at] {
            TreeNode::Leaf { class, .. } => OracleNode::Leaf(*class),
            TreeNode::Internal { feature, threshold, left, right } => OracleNode::Split {
                feature: *feature,
                threshold: *threshold,
                left: Box::new(go(t, *left)),
                right: Box::new(go(t, *right)),
            },
        }
    }
    go(tree, 0)
}

/// Minimum within-cluster sum of squares over every partition of the
/// points into exactly `k` non-empty groups.
pub fn brute_force_inertia(points: &[f64], dim: usize, k: usize) -> f64 {
    let n = points.len() / dim;
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut used = vec![false; k];
        labels.iter().for_each(|&l| used[l] = true);
        if used.iter().all(|&u| u) {
            let mut total = 0.0;
            for c in 0..k {
                let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
                for d in 0..dim {
                    let mean = members.iter().map(|&i| points[i * dim + d]).sum::<f64>() / members.len() as f64;
                    total += members.iter().map(|&i| (points[i * dim + d] - mean).powi(2)).sum::<f64>();
                }
            }
            best = best.min(total);
        }
        // Odometer increment; fixing point 0 in group 0 removes relabelings.
        let mut pos = n - 1;
        loop {
            if pos == 0 {
                return best;
            }
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
            pos -= 1;
        }
    }
}

/// Training accuracy of the best depth-2 tree over every choice of root
/// and child splits drawn from the midpoint grid.
pub fn best_depth2_accuracy(data: &[f64], cols: usize, labels: &[usize], classes: usize) -> usize {
    let n = labels.len();
    let mut grid = Vec::new();
    for f in 0..cols {
        let mut v: Vec<f64> = (0..n).map(|i| data[i * cols + f]).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        for w in v.windows(2) {
            grid.push((f, (w[0] + w[1]) / 2.0));
        }
    }
    let majority_hits = |rows: &[usize]| {
        let mut c = vec![0; classes];
        rows.iter().for_each(|&r| c[labels[r]] += 1);
        c.into_iter().max().unwrap_or(0)
    };
    // Best depth <= 1 subtree on `rows`.
    let stump = |rows: &[usize]| {
        let mut best = majority_hits(rows);
        for &(f, t) in &grid {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| data[i * cols + f] <= t);
            best = best.max(majority_hits(&l) + majority_hits(&r));
        }
        best
    };
    let all: Vec<usize> = (0..n).collect();
    let mut best = stump(&all);
    for &(f, t) in &grid {
        let (l, r): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| data[i * cols + f] <= t);
        best = best.max(stump(&l) + stump(&r));
    }
    best
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix (row-major).
/// Returns eigenvalues and column eigenvectors.
pub fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| a[i * n + j].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

/// Small deterministic generator so oracles do not share the library's RNG plumbing.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut z = self.0;
        z = (z ^ (z >> 33)).wrapping_mul(0xff51afd7ed558ccd);
        z ^ (z >> 33)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_u64() % (hi - lo) as u64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        let (u, v) = (self.uniform().max(1e-300), self.uniform());
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    }
}
