//! CART classification trees (Gini) and random forests.
//!
//! Both are grown by the same best-first procedure. Features are ranked once
//! up front, so split search at a node is a counting pass over the ranks of
//! its samples. Impurity arithmetic is exact (integer class counts compared
//! as rationals), which makes tie-breaking deterministic: the largest
//! decrease wins, then the lowest feature index, then the lowest threshold.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed;

/// Row-major feature grid borrowed from the caller.
#[derive(Debug, Clone, Copy)]
pub struct Features<'a> {
    pub data: &'a [f64],
    pub cols: usize,
}

impl<'a> Features<'a> {
    pub fn new(data: &'a [f64], cols: usize) -> Result<Self> {
        if cols == 0 || data.len() % cols != 0 {
            return Err(Error::ShapeMismatch(format!("{} values do not form rows of width {cols}", data.len())));
        }
        Ok(Self { data, cols })
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Per-feature sorted distinct values and each sample's rank among them.
#[derive(Debug, Clone)]
pub struct FeatureIndex {
    rows: usize,
    cols: usize,
    /// Column-major ranks.
    ranks: Vec<u32>,
    distinct: Vec<Vec<f64>>,
}

impl FeatureIndex {
    pub fn new(features: Features<'_>) -> Self {
        let (rows, cols) = (features.rows(), features.cols);
        let mut ranks = vec![0u32; rows * cols];
        let mut distinct = Vec::with_capacity(cols);
        let mut column = Vec::with_capacity(rows);
        for f in 0..cols {
            column.clear();
            column.extend((0..rows).map(|i| features.data[i * cols + f]));
            let mut values = column.clone();
            values.sort_by(f64::total_cmp);
            values.dedup();
            for (i, v) in column.iter().enumerate() {
                ranks[f * rows + i] = values.partition_point(|x| x.total_cmp(v) == Ordering::Less) as u32;
            }
            distinct.push(values);
        }
        Self { rows, cols, ranks, distinct }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn rank(&self, feature: usize, sample: u32) -> u32 {
        self.ranks[feature * self.rows + sample as usize]
    }
}

/// Exact weighted-Gini decrease `num / den` in sample-count units.
#[derive(Debug, Clone, Copy)]
struct Gain {
    num: u128,
    den: u128,
}

impl PartialEq for Gain {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Gain {}

impl PartialOrd for Gain {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Gain {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

impl Gain {
    fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn sum_squares(counts: &[u64]) -> u128 {
    counts.iter().map(|&c| u128::from(c) * u128::from(c)).sum()
}

/// Gini impurity of a class histogram.
pub fn gini(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    1.0 - sum_squares(counts) as f64 / (n as f64 * n as f64)
}

/// Histogram argmax; ties go to the lowest class.
pub fn majority(counts: &[u64]) -> usize {
    counts.iter().enumerate().fold(0, |best, (c, &n)| if n > counts[best] { c } else { best })
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Internal { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { histogram: Vec<u64>, class: usize },
}

/// One decision along a root-to-leaf path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathStep {
    pub feature: usize,
    pub threshold: f64,
    pub went_left: bool,
}

impl PathStep {
    /// Whether `value` satisfies this step's condition.
    pub fn admits(&self, value: f64) -> bool {
        (value <= self.threshold) == self.went_left
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    /// Arena; the root is node 0.
    pub nodes: Vec<TreeNode>,
    pub max_depth: Option<usize>,
    pub feature_count: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub max_nodes: usize,
    pub min_samples_split: usize,
    /// Features drawn at each node; `None` considers all.
    pub features_per_split: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: None, max_nodes: usize::MAX, min_samples_split: 2, features_per_split: None }
    }
}

impl TreeParams {
    pub fn with_max_depth(max_depth: usize) -> Self {
        Self { max_depth: Some(max_depth), ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    last_left_rank: u32,
    threshold: f64,
    gain: Gain,
}

struct Pending {
    node: usize,
    samples: Vec<u32>,
    depth: usize,
    split: Candidate,
}

struct Grower<'a> {
    index: &'a FeatureIndex,
    labels: &'a [usize],
    classes: usize,
    params: TreeParams,
    rng: Option<ChaCha8Rng>,
    counts: Vec<u64>,
    rank_totals: Vec<u64>,
    touched: Vec<u32>,
}

impl<'a> Grower<'a> {
    fn histogram(&self, samples: &[u32]) -> Vec<u64> {
        let mut h = vec![0u64; self.classes];
        for &s in samples {
            h[self.labels[s as usize]] += 1;
        }
        h
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let d = self.index.cols();
        match (self.params.features_per_split, self.rng.as_mut()) {
            (Some(m), Some(rng)) if m < d => {
                let mut picked = sample(rng, d, m).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..d).collect(),
        }
    }

    fn best_split(&mut self, samples: &[u32], hist: &[u64], depth: usize) -> Option<Candidate> {
        let n = samples.len() as u64;
        let pure = hist.iter().filter(|&&c| c > 0).count() <= 1;
        if pure
            || (n as usize) < self.params.min_samples_split
            || self.params.max_depth.is_some_and(|d| depth >= d)
        {
            return None;
        }
        let parent_sq = sum_squares(hist);
        let features = self.candidate_features();
        let c = self.classes;
        let mut best: Option<Candidate> = None;
        for f in features {
            let distinct = &self.index.distinct[f];
            if self.counts.len() < distinct.len() * c {
                self.counts.resize(distinct.len() * c, 0);
                self.rank_totals.resize(distinct.len(), 0);
            }
            self.touched.clear();
            for &s in samples {
                let r = self.index.rank(f, s);
                let slot = r as usize * c + self.labels[s as usize];
                if self.rank_totals[r as usize] == 0 {
                    self.touched.push(r);
                }
                self.rank_totals[r as usize] += 1;
                self.counts[slot] += 1;
            }
            self.touched.sort_unstable();
            let mut left = vec![0u64; c];
            let mut left_sq: u128 = 0;
            let mut right_sq = parent_sq;
            let mut n_left = 0u64;
            for w in 0..self.touched.len() {
                let r = self.touched[w] as usize;
                for class in 0..c {
                    let x = self.counts[r * c + class];
                    if x == 0 {
                        continue;
                    }
                    let (l, rt) = (u128::from(left[class]), u128::from(hist[class] - left[class]));
                    let x = u128::from(x);
                    left_sq = left_sq + (l + x) * (l + x) - l * l;
                    right_sq = right_sq + (rt - x) * (rt - x) - rt * rt;
                    left[class] += x as u64;
                    n_left += x as u64;
                }
                if w + 1 == self.touched.len() {
                    break;
                }
                let (nl, nr, nn) = (u128::from(n_left), u128::from(n - n_left), u128::from(n));
                // SL/nL + SR/nR - SP/n over the common denominator nL*nR*n.
                let score = (left_sq * nr + right_sq * nl) * nn;
                let base = parent_sq * nl * nr;
                if score <= base {
                    continue;
                }
                let gain = Gain { num: score - base, den: nl * nr * nn };
                if best.map_or(true, |b| gain > b.gain) {
                    // Midpoint to the next value seen anywhere in training,
                    // so integer features always split at half-integers.
                    best = Some(Candidate {
                        feature: f,
                        last_left_rank: r as u32,
                        threshold: 0.5 * (distinct[r] + distinct[r + 1]),
                        gain,
                    });
                }
            }
            for &r in &self.touched {
                self.counts[r as usize * c..(r as usize + 1) * c].fill(0);
                self.rank_totals[r as usize] = 0;
            }
        }
        best
    }

    fn grow(mut self, samples: Vec<u32>) -> DecisionTree {
        let hist = self.histogram(&samples);
        let class = majority(&hist);
        let mut nodes = vec![TreeNode::Leaf { histogram: hist.clone(), class }];
        let mut pending: Vec<Option<Pending>> = Vec::new();
        let mut heap: BinaryHeap<(Gain, std::cmp::Reverse<usize>)> = BinaryHeap::new();
        if let Some(split) = self.best_split(&samples, &hist, 0) {
            heap.push((split.gain, std::cmp::Reverse(0)));
            pending.push(Some(Pending { node: 0, samples, depth: 0, split }));
        }
        while let Some((_, std::cmp::Reverse(slot))) = heap.pop() {
            if nodes.len() + 2 > self.params.max_nodes {
                break;
            }
            let Pending { node, samples, depth, split } = pending[slot].take().expect("pending split");
            debug_assert!(split.gain.num > 0);
            let (left_samples, right_samples): (Vec<u32>, Vec<u32>) = samples
                .iter()
                .partition(|&&s| self.index.rank(split.feature, s) <= split.last_left_rank);
            drop(samples);
            let left = nodes.len();
            let right = left + 1;
            nodes[node] = TreeNode::Internal { feature: split.feature, threshold: split.threshold, left, right };
            for (child, child_samples) in [(left, left_samples), (right, right_samples)] {
                let hist = self.histogram(&child_samples);
                nodes.push(TreeNode::Leaf { class: majority(&hist), histogram: hist.clone() });
                if let Some(split) = self.best_split(&child_samples, &hist, depth + 1) {
                    heap.push((split.gain, std::cmp::Reverse(pending.len())));
                    pending.push(Some(Pending { node: child, samples: child_samples, depth: depth + 1, split }));
                }
            }
        }
        DecisionTree {
            nodes,
            max_depth: self.params.max_depth,
            feature_count: self.index.cols(),
            classes: self.classes,
        }
        .canonical()
    }
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if rows == 0 {
        return Err(Error::EmptyDataset);
    }
    if labels.len() != rows {
        return Err(Error::ShapeMismatch(format!("{} labels for {rows} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::ShapeMismatch(format!("label {bad} outside 0..{classes}")));
    }
    Ok(())
}

/// Grows a tree on pre-ranked features over the given sample multiset.
pub fn tree_fit_indexed(
    index: &FeatureIndex,
    labels: &[usize],
    classes: usize,
    samples: Vec<u32>,
    params: TreeParams,
    rng: Option<ChaCha8Rng>,
) -> Result<DecisionTree> {
    check_labels(labels, index.rows(), classes)?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let grower = Grower { index, labels, classes, params, rng, counts: Vec::new(), rank_totals: Vec::new(), touched: Vec::new() };
    Ok(grower.grow(samples))
}

/// Fits a single CART tree on every row.
pub fn tree_fit(features: Features<'_>, labels: &[usize], classes: usize, params: TreeParams) -> Result<DecisionTree> {
    let index = FeatureIndex::new(features);
    let samples = (0..index.rows() as u32).collect();
    tree_fit_indexed(&index, labels, classes, samples, params, None)
}

impl DecisionTree {
    /// Renumbers the arena in pre-order.
    fn canonical(self) -> Self {
        let mut nodes = Vec::with_capacity(self.nodes.len());
        fn visit(src: &[TreeNode], at: usize, out: &mut Vec<TreeNode>) -> usize {
            let id = out.len();
            match &src[at] {
                TreeNode::Leaf { .. } => out.push(src[at].clone()),
                &TreeNode::Internal { feature, threshold, left, right } => {
                    out.push(TreeNode::Internal { feature, threshold, left: 0, right: 0 });
                    let l = visit(src, left, out);
                    let r = visit(src, right, out);
                    out[id] = TreeNode::Internal { feature, threshold, left: l, right: r };
                }
            }
            id
        }
        visit(&self.nodes, 0, &mut nodes);
        Self { nodes, ..self }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Number of internal nodes on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], at: usize) -> usize {
            match nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Internal { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn thresholds(&self) -> Vec<(usize, f64)> {
        self.nodes
            .iter()
            .filter_map(|n| match *n {
                TreeNode::Internal { feature, threshold, .. } => Some((feature, threshold)),
                TreeNode::Leaf { .. } => None,
            })
            .collect()
    }

    /// Routes `instance` to a leaf, recording every decision on the way.
    pub fn predict_with_path(&self, instance: &[f64]) -> (usize, Vec<PathStep>) {
        let mut path = Vec::new();
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { class, .. } => return (*class, path),
                &TreeNode::Internal { feature, threshold, left, right } => {
                    let went_left = instance[feature] <= threshold;
                    path.push(PathStep { feature, threshold, went_left });
                    at = if went_left { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, instance: &[f64]) -> usize {
        self.predict_with_path(instance).0
    }

    /// Pre-order text form, one node per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "decision-tree v1").unwrap();
        writeln!(out, "features {}", self.feature_count).unwrap();
        writeln!(out, "classes {}", self.classes).unwrap();
        match self.max_depth {
            Some(d) => writeln!(out, "max_depth {d}").unwrap(),
            None => writeln!(out, "max_depth none").unwrap(),
        }
        writeln!(out, "nodes {}", self.nodes.len()).unwrap();
        for node in &self.canonical_ref().nodes {
            match node {
                TreeNode::Internal { feature, threshold, .. } => {
                    writeln!(out, "split {feature} {threshold:?}").unwrap()
                }
                TreeNode::Leaf { histogram, class } => {
                    let h: Vec<String> = histogram.iter().map(u64::to_string).collect();
                    writeln!(out, "leaf {class} {}", h.join(",")).unwrap()
                }
            }
        }
        out
    }

    fn canonical_ref(&self) -> std::borrow::Cow<'_, DecisionTree> {
        std::borrow::Cow::Owned(self.clone().canonical())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Artifact(format!("decision tree text: {msg}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        if lines.next().map(str::trim) != Some("decision-tree v1") {
            return Err(bad("missing header"));
        }
        let mut field = |name: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            line.strip_prefix(name)
                .map(|v| v.trim().to_string())
                .ok_or_else(|| bad(&format!("expected `{name}`")))
        };
        let parse = |s: String| s.parse::<usize>().map_err(|_| bad("bad integer"));
        let feature_count = parse(field("features")?)?;
        let classes = parse(field("classes")?)?;
        let max_depth = match field("max_depth")?.as_str() {
            "none" => None,
            d => Some(d.parse().map_err(|_| bad("bad max_depth"))?),
        };
        let count = parse(field("nodes")?)?;
        let body: Vec<&str> = lines.collect();
        if body.len() != count {
            return Err(bad(&format!("{} node lines, header says {count}", body.len())));
        }
        let mut nodes = Vec::with_capacity(count);
        let mut cursor = 0;
        fn read(body: &[&str], cursor: &mut usize, nodes: &mut Vec<TreeNode>, fc: usize, classes: usize) -> Result<usize> {
            let bad = |msg: String| Error::Artifact(format!("decision tree text: {msg}"));
            let line = body.get(*cursor).ok_or_else(|| bad("missing child".into()))?;
            *cursor += 1;
            let parts: Vec<&str> = line.split_whitespace().collect();
            let id = nodes.len();
            match parts.as_slice() {
                ["split", f, t] => {
                    let feature: usize = f.parse().map_err(|_| bad(format!("bad feature in `{line}`")))?;
                    let threshold: f64 = t.parse().map_err(|_| bad(format!("bad threshold in `{line}`")))?;
                    if feature >= fc {
                        return Err(bad(format!("feature {feature} out of range")));
                    }
                    nodes.push(TreeNode::Internal { feature, threshold, left: 0, right: 0 });
                    let left = read(body, cursor, nodes, fc, classes)?;
                    let right = read(body, cursor, nodes, fc, classes)?;
                    nodes[id] = TreeNode::Internal { feature, threshold, left, right };
                }
                ["leaf", c, h] => {
                    let class: usize = c.parse().map_err(|_| bad(format!("bad class in `{line}`")))?;
                    let histogram = h
                        .split(',')
                        .map(|x| x.parse::<u64>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|_| bad(format!("bad histogram in `{line}`")))?;
                    if histogram.len() != classes || class >= classes {
                        return Err(bad(format!("leaf does not match {classes} classes")));
                    }
                    nodes.push(TreeNode::Leaf { histogram, class });
                }
                _ => return Err(bad(format!("unrecognized line `{line}`"))),
            }
            Ok(id)
        }
        read(&body, &mut cursor, &mut nodes, feature_count, classes)?;
        if cursor != body.len() {
            return Err(bad("trailing nodes"));
        }
        Ok(Self { nodes, max_depth, feature_count, classes })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_nodes: usize,
    /// `None` means `ceil(sqrt(d))`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 20, max_nodes: 2000, features_per_split: None, bootstrap: true, seed: 0 }
    }
}

impl ForestConfig {
    pub fn features_per_split_for(&self, d: usize) -> usize {
        self.features_per_split.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize).clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub tree_seeds: Vec<u64>,
    pub config: ForestConfig,
    pub classes: usize,
    pub feature_count: usize,
    pub training_rows: usize,
}

fn bootstrap_sample(rng: &mut ChaCha8Rng, rows: usize, bootstrap: bool) -> Vec<u32> {
    if bootstrap {
        (0..rows).map(|_| rng.random_range(0..rows) as u32).collect()
    } else {
        (0..rows as u32).collect()
    }
}

/// Trains a forest over pre-ranked features, so several forests on the same
/// inputs can share one index.
pub fn forest_fit_indexed(
    index: &FeatureIndex,
    labels: &[usize],
    classes: usize,
    config: &ForestConfig,
) -> Result<RandomForest> {
    check_labels(labels, index.rows(), classes)?;
    if config.n_trees == 0 || config.max_nodes == 0 {
        return Err(Error::Config("forest needs at least one tree and one node".into()));
    }
    let params = TreeParams {
        max_depth: None,
        max_nodes: config.max_nodes,
        min_samples_split: 2,
        features_per_split: Some(config.features_per_split_for(index.cols())),
    };
    let tree_seeds: Vec<u64> = (0..config.n_trees as u64).map(|t| seed::mix(config.seed, t)).collect();
    let trees = tree_seeds
        .iter()
        .map(|&s| {
            let mut rng = seed::rng(s);
            let samples = bootstrap_sample(&mut rng, index.rows(), config.bootstrap);
            tree_fit_indexed(index, labels, classes, samples, params, Some(rng))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RandomForest {
        trees,
        tree_seeds,
        config: *config,
        classes,
        feature_count: index.cols(),
        training_rows: index.rows(),
    })
}

pub fn forest_fit(features: Features<'_>, labels: &[usize], classes: usize, config: &ForestConfig) -> Result<RandomForest> {
    forest_fit_indexed(&FeatureIndex::new(features), labels, classes, config)
}

impl RandomForest {
    fn vote(&self, votes: &[usize]) -> usize {
        let mut counts = vec![0u64; self.classes];
        for &v in votes {
            counts[v] += 1;
        }
        majority(&counts)
    }

    /// Plurality vote over trees; ties go to the lowest class.
    pub fn predict(&self, instance: &[f64]) -> usize {
        let votes: Vec<usize> = self.trees.iter().map(|t| t.predict(instance)).collect();
        self.vote(&votes)
    }

    pub fn predict_batch(&self, features: Features<'_>) -> Vec<usize> {
        (0..features.rows()).map(|i| self.predict(features.row(i))).collect()
    }

    /// Bootstrap multiset that tree `t` was trained on.
    pub fn bootstrap_indices(&self, t: usize) -> Vec<u32> {
        bootstrap_sample(&mut seed::rng(self.tree_seeds[t]), self.training_rows, self.config.bootstrap)
    }

    /// Accuracy of votes from trees that did not see each row; rows seen by
    /// every tree are skipped. `None` when no row is out of bag.
    pub fn oob_accuracy(&self, features: Features<'_>, labels: &[usize]) -> Option<f64> {
        let rows = features.rows();
        let mut in_bag = vec![vec![false; rows]; self.trees.len()];
        for (t, bag) in in_bag.iter_mut().enumerate() {
            for s in self.bootstrap_indices(t) {
                bag[s as usize] = true;
            }
        }
        let (mut hits, mut total) = (0usize, 0usize);
        for i in 0..rows {
            let votes: Vec<usize> = (0..self.trees.len())
                .filter(|&t| !in_bag[t][i])
                .map(|t| self.trees[t].predict(features.row(i)))
                .collect();
            if votes.is_empty() {
                continue;
            }
            total += 1;
            hits += usize::from(self.vote(&votes) == labels[i]);
        }
        (total > 0).then(|| hits as f64 / total as f64)
    }
}

/// Total weighted-Gini decrease of a split, for diagnostics.
pub fn split_gain(parent: &[u64], left: &[u64]) -> f64 {
    let right: Vec<u64> = parent.iter().zip(left).map(|(p, l)| p - l).collect();
    let (nl, nr, n) = (left.iter().sum::<u64>(), right.iter().sum::<u64>(), parent.iter().sum::<u64>());
    if nl == 0 || nr == 0 {
        return 0.0;
    }
    let (nl, nr, n) = (u128::from(nl), u128::from(nr), u128::from(n));
    let score = (sum_squares(left) * nr + sum_squares(&right) * nl) * n;
    let base = sum_squares(parent) * nl * nr;
    if score <= base {
        return 0.0;
    }
    Gain { num: score - base, den: nl * nr * n }.as_f64()
}
