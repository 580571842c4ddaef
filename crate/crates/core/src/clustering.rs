//! k-means (k-means++ seeding, Lloyd iterations) and the two-level
//! factorization of a hidden layer's activations.
//!
//! Level one treats every neuron as a point in instance space and groups the
//! neurons into factors. Level two clusters the instances inside each
//! factor's neuron subspace; the resulting cluster IDs become meta-features.

use rand::Rng;

use crate::cnn::ActivationMatrix;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub max_iter: usize,
    /// Convergence threshold on the largest centroid displacement.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self { max_iter: 300, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    pub k: usize,
    pub dim: usize,
    /// `k x dim`, row-major.
    pub centroids: Vec<f64>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment pass, ending with the final one.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansModel {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// Nearest centroid and squared distance; ties go to the lowest index.
    pub fn nearest(&self, point: &[f64]) -> (usize, f64) {
        nearest(point, &self.centroids, self.dim)
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim.max(1)).enumerate() {
        let d = if dim == 0 { 0.0 } else { squared_distance(point, centroid) };
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init<R: Rng>(points: &[f64], m: usize, dim: usize, k: usize, rng: &mut R) -> Vec<f64> {
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..m);
    centroids.extend_from_slice(row(first));
    let mut d2: Vec<f64> = (0..m).map(|i| squared_distance(row(i), row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = m - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // Every point coincides with a chosen centroid.
            rng.random_range(0..m)
        };
        centroids.extend_from_slice(row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_distance(row(i), row(pick)));
        }
    }
    centroids
}

struct Assignment {
    labels: Vec<usize>,
    dist: Vec<f64>,
}

impl Assignment {
    fn compute(points: &[f64], m: usize, dim: usize, centroids: &[f64]) -> Self {
        let (labels, dist) = (0..m).map(|i| nearest(&points[i * dim..(i + 1) * dim], centroids, dim)).unzip();
        Self { labels, dist }
    }

    fn inertia(&self) -> f64 {
        self.dist.iter().sum()
    }

    /// Gives every empty cluster the point farthest from its own centroid,
    /// drawn from clusters that can spare one.
    fn repair_empty(&mut self, points: &[f64], dim: usize, k: usize, centroids: &mut [f64]) -> Result<bool> {
        let mut sizes = vec![0usize; k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        let mut repaired = false;
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let donor = (0..self.labels.len())
                .filter(|&i| sizes[self.labels[i]] > 1)
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if self.dist[b] >= self.dist[i] => Some(b),
                    _ => Some(i),
                });
            let Some(p) = donor.filter(|&p| self.dist[p] > 0.0) else {
                return Err(Error::TooFewPoints { points: distinct_lower_bound(&sizes), k });
            };
            centroids[c * dim..(c + 1) * dim].copy_from_slice(&points[p * dim..(p + 1) * dim]);
            sizes[self.labels[p]] -= 1;
            sizes[c] = 1;
            self.labels[p] = c;
            self.dist[p] = 0.0;
            repaired = true;
        }
        Ok(repaired)
    }
}

fn distinct_lower_bound(sizes: &[usize]) -> usize {
    sizes.iter().filter(|&&s| s > 0).count()
}

fn means(points: &[f64], dim: usize, k: usize, labels: &[usize], previous: &[f64]) -> Vec<f64> {
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, &x) in sums[l * dim..(l + 1) * dim].iter_mut().zip(&points[i * dim..(i + 1) * dim]) {
            *s += x;
        }
    }
    for c in 0..k {
        let block = &mut sums[c * dim..(c + 1) * dim];
        if counts[c] == 0 {
            block.copy_from_slice(&previous[c * dim..(c + 1) * dim]);
        } else {
            block.iter_mut().for_each(|s| *s /= counts[c] as f64);
        }
    }
    sums
}

/// Lloyd's algorithm over `points` (`m x dim`, row-major) with k-means++
/// seeding drawn from `seed`.
pub fn kmeans(points: &[f64], dim: usize, k: usize, seed: u64, params: &KMeansParams) -> Result<KMeansModel> {
    let m = if dim == 0 { 0 } else { points.len() / dim };
    if dim == 0 || points.len() != m * dim {
        return Err(Error::ShapeMismatch(format!("{} values do not form rows of width {dim}", points.len())));
    }
    if k == 0 || m < k {
        return Err(Error::TooFewPoints { points: m, k });
    }
    let mut rng = seed::rng(seed);
    let mut centroids = plus_plus_init(points, m, dim, k, &mut rng);
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < params.max_iter {
        iterations += 1;
        let mut assign = Assignment::compute(points, m, dim, &centroids);
        history.push(assign.inertia());
        assign.repair_empty(points, dim, k, &mut centroids)?;
        let updated = means(points, dim, k, &assign.labels, &centroids);
        let shift = centroids
            .chunks_exact(dim)
            .zip(updated.chunks_exact(dim))
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        if shift < params.tol {
            break;
        }
    }
    let mut assign = Assignment::compute(points, m, dim, &centroids);
    while assign.repair_empty(points, dim, k, &mut centroids)? {
        assign = Assignment::compute(points, m, dim, &centroids);
    }
    let inertia = assign.inertia();
    history.push(inertia);
    Ok(KMeansModel {
        k,
        dim,
        centroids,
        assignment: assign.labels,
        inertia,
        inertia_history: history,
        iterations,
    })
}

/// Maps raw cluster indices to canonical IDs: clusters sorted by ascending
/// centroid norm, ties broken by the lowest member index.
pub fn canonical_relabel(model: &KMeansModel) -> Vec<usize> {
    let mut first_member = vec![usize::MAX; model.k];
    for (i, &a) in model.assignment.iter().enumerate() {
        first_member[a] = first_member[a].min(i);
    }
    let norm = |c: usize| model.centroid(c).iter().map(|x| x * x).sum::<f64>();
    let mut order: Vec<usize> = (0..model.k).collect();
    order.sort_by(|&a, &b| norm(a).total_cmp(&norm(b)).then(first_member[a].cmp(&first_member[b])));
    let mut relabel = vec![0; model.k];
    for (canonical, &raw) in order.iter().enumerate() {
        relabel[raw] = canonical;
    }
    relabel
}

/// Instance clustering inside one factor's neuron subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    /// Member neurons, ascending.
    pub neurons: Vec<usize>,
    pub clustering: KMeansModel,
    /// Raw k-means label to canonical ID.
    pub canonical_relabel: Vec<usize>,
}

impl Factor {
    pub fn id_of(&self, point: &[f64]) -> usize {
        self.canonical_relabel[self.clustering.nearest(point).0]
    }

    /// Canonical IDs of the instances the factor was fitted on.
    pub fn training_ids(&self) -> Vec<usize> {
        self.clustering.assignment.iter().map(|&a| self.canonical_relabel[a]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub neurons: usize,
    pub clusters: usize,
    pub factor_of_neuron: Vec<usize>,
    pub factors: Vec<Factor>,
}

/// Row-major `instances x factors` grid of canonical cluster IDs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMatrix {
    pub instances: usize,
    pub factors: usize,
    pub ids: Vec<usize>,
}

impl IdMatrix {
    pub fn row(&self, i: usize) -> &[usize] {
        &self.ids[i * self.factors..(i + 1) * self.factors]
    }

    pub fn column(&self, k: usize) -> Vec<usize> {
        (0..self.instances).map(|i| self.ids[i * self.factors + k]).collect()
    }
}

fn gather_subspace(activations: &ActivationMatrix, neurons: &[usize]) -> Vec<f64> {
    let n = activations.instances();
    let d = neurons.len();
    let mut out = vec![0.0; n * d];
    for (j, &h) in neurons.iter().enumerate() {
        for (i, &v) in activations.neuron(h).iter().enumerate() {
            out[i * d + j] = v;
        }
    }
    out
}

impl FactorModel {
    pub fn factor_count(&self) -> usize {
        self.factors.len()
    }

    /// Builds a model from fixed neuron groups and fixed instance IDs,
    /// bypassing k-means. Centroids are the member means and the given IDs
    /// are taken as canonical.
    pub fn from_memberships(
        activations: &ActivationMatrix,
        factor_of_neuron: Vec<usize>,
        ids: &[Vec<usize>],
        clusters: usize,
    ) -> Result<Self> {
        let h = activations.neurons();
        if factor_of_neuron.len() != h {
            return Err(Error::ShapeMismatch(format!("{} factor entries for {h} neurons", factor_of_neuron.len())));
        }
        let k = ids.len();
        let mut factors = Vec::with_capacity(k);
        for (f, assignment) in ids.iter().enumerate() {
            let neurons: Vec<usize> = (0..h).filter(|&n| factor_of_neuron[n] == f).collect();
            if neurons.is_empty() || assignment.len() != activations.instances() {
                return Err(Error::ShapeMismatch(format!("factor {f} has no neurons or wrong ID count")));
            }
            if assignment.iter().any(|&a| a >= clusters) {
                return Err(Error::ShapeMismatch(format!("factor {f} has an ID outside 0..{clusters}")));
            }
            let points = gather_subspace(activations, &neurons);
            let dim = neurons.len();
            let centroids = means(&points, dim, clusters, assignment, &vec![0.0; clusters * dim]);
            let inertia = assignment
                .iter()
                .enumerate()
                .map(|(i, &a)| squared_distance(&points[i * dim..(i + 1) * dim], &centroids[a * dim..(a + 1) * dim]))
                .sum();
            let clustering = KMeansModel {
                k: clusters,
                dim,
                centroids,
                assignment: assignment.clone(),
                inertia,
                inertia_history: vec![inertia],
                iterations: 0,
            };
            factors.push(Factor { neurons, clustering, canonical_relabel: (0..clusters).collect() });
        }
        Ok(Self { neurons: h, clusters, factor_of_neuron, factors })
    }

    /// Canonical IDs of the instances the model was fitted on.
    pub fn training_ids(&self) -> IdMatrix {
        let cols: Vec<Vec<usize>> = self.factors.iter().map(Factor::training_ids).collect();
        let instances = cols.first().map_or(0, Vec::len);
        let factors = cols.len();
        let mut ids = vec![0; instances * factors];
        for (k, col) in cols.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                ids[i * factors + k] = v;
            }
        }
        IdMatrix { instances, factors, ids }
    }
}

/// Two-level clustering: `factors` neuron groups, then `clusters` instance
/// groups inside each.
pub fn factorize(
    activations: &ActivationMatrix,
    factors: usize,
    clusters: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<FactorModel> {
    let h = activations.neurons();
    let n = activations.instances();
    if factors == 0 || factors > h {
        return Err(Error::TooFewPoints { points: h, k: factors });
    }
    if clusters == 0 || clusters > n {
        return Err(Error::TooFewPoints { points: n, k: clusters });
    }
    let level1 = kmeans(activations.values(), n, factors, seed::mix(seed, 0), params)?;
    // Factor order: by smallest member neuron.
    let mut first_neuron = vec![usize::MAX; factors];
    for (neuron, &raw) in level1.assignment.iter().enumerate() {
        first_neuron[raw] = first_neuron[raw].min(neuron);
    }
    let mut order: Vec<usize> = (0..factors).collect();
    order.sort_by_key(|&raw| first_neuron[raw]);
    let mut factor_id = vec![0; factors];
    for (id, &raw) in order.iter().enumerate() {
        factor_id[raw] = id;
    }
    let factor_of_neuron: Vec<usize> = level1.assignment.iter().map(|&raw| factor_id[raw]).collect();

    let mut out = Vec::with_capacity(factors);
    for f in 0..factors {
        let neurons: Vec<usize> = (0..h).filter(|&x| factor_of_neuron[x] == f).collect();
        let points = gather_subspace(activations, &neurons);
        let clustering = kmeans(&points, neurons.len(), clusters, seed::mix(seed, 1 + f as u64), params)?;
        let canonical_relabel = canonical_relabel(&clustering);
        out.push(Factor { neurons, clustering, canonical_relabel });
    }
    Ok(FactorModel { neurons: h, clusters, factor_of_neuron, factors: out })
}

/// Nearest-centroid IDs for any activation matrix with the model's width,
/// including held-out instances.
pub fn assign_ids(model: &FactorModel, activations: &ActivationMatrix) -> Result<IdMatrix> {
    if activations.neurons() != model.neurons {
        return Err(Error::ShapeMismatch(format!(
            "activations have {} neurons, factor model expects {}",
            activations.neurons(),
            model.neurons
        )));
    }
    let instances = activations.instances();
    let k = model.factor_count();
    let mut ids = vec![0; instances * k];
    for (f, factor) in model.factors.iter().enumerate() {
        let points = gather_subspace(activations, &factor.neurons);
        let dim = factor.neurons.len();
        for i in 0..instances {
            ids[i * k + f] = factor.id_of(&points[i * dim..(i + 1) * dim]);
        }
    }
    Ok(IdMatrix { instances, factors: k, ids })
}
