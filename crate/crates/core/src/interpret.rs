//! Per-instance explanations read off the meta tree.
//!
//! The instance's root-to-leaf path gives a sequence of conditions on
//! cluster IDs. Applying them cumulatively to the meta training rows leaves
//! shrinking sets of training instances; for every other class we record
//! whether its set empties out while the true class still has members.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::cnn::ActivationMatrix;
use crate::error::{Error, Result};
use crate::forest::PathStep;
use crate::meta::{Ensemble, MetaDataset};

/// Most points drawn per class and step; larger sets are stride-sampled.
pub const MAX_PLOT_POINTS: usize = 300;

/// Eigenvalues at or below this fraction of the data scale count as zero.
const DEGENERATE_TOLERANCE: f64 = 1e-12;

/// Rank-2 principal-component projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca2 {
    pub mean: Vec<f64>,
    pub axes: [Vec<f64>; 2],
    /// All points coincided; everything maps to the origin.
    pub degenerate: bool,
}

impl Pca2 {
    /// Fits on row-major `points` of width `dim`.
    pub fn fit(points: &[f64], dim: usize) -> Self {
        let n = if dim == 0 { 0 } else { points.len() / dim };
        let zero = Self { mean: vec![0.0; dim], axes: [vec![0.0; dim], vec![0.0; dim]], degenerate: true };
        if n == 0 {
            return zero;
        }
        let mut mean = vec![0.0; dim];
        for row in points.chunks_exact(dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        let mut centered = vec![0.0; dim];
        for row in points.chunks_exact(dim) {
            for j in 0..dim {
                centered[j] = row[j] - mean[j];
            }
            for a in 0..dim {
                for b in a..dim {
                    cov[(a, b)] += centered[a] * centered[b];
                }
            }
        }
        for a in 0..dim {
            for b in a..dim {
                let v = cov[(a, b)] / n as f64;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        let scale = cov.diagonal().iter().cloned().fold(0.0, f64::max);
        let eigen = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]).then(a.cmp(&b)));
        let top = order.first().map_or(0.0, |&i| eigen.eigenvalues[i]);
        if !(top > DEGENERATE_TOLERANCE * scale.max(1.0)) {
            return Self { mean, ..zero };
        }
        let axis = |rank: usize| -> Vec<f64> {
            match order.get(rank) {
                Some(&i) if eigen.eigenvalues[i] > DEGENERATE_TOLERANCE * scale.max(1.0) => {
                    let mut v: Vec<f64> = eigen.eigenvectors.column(i).iter().copied().collect();
                    // Sign convention: largest-magnitude component positive.
                    let pivot = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
                    if pivot < 0.0 {
                        v.iter_mut().for_each(|x| *x = -*x);
                    }
                    v
                }
                _ => vec![0.0; dim],
            }
        };
        Self { axes: [axis(0), axis(1)], mean, degenerate: false }
    }

    pub fn project(&self, point: &[f64]) -> [f64; 2] {
        if self.degenerate {
            return [0.0, 0.0];
        }
        let mut out = [0.0; 2];
        for (o, axis) in out.iter_mut().zip(&self.axes) {
            *o = point.iter().zip(&self.mean).zip(axis).map(|((p, m), a)| (p - m) * a).sum();
        }
        out
    }
}

fn gather(activations: &ActivationMatrix, neurons: &[usize], instances: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(neurons.len() * instances.len());
    for &i in instances {
        out.extend(neurons.iter().map(|&h| activations.get(h, i)));
    }
    out
}

/// 2-D coordinates of `instances` in the subspace of one factor's neurons.
pub fn project_2d(
    activations: &ActivationMatrix,
    neurons: &[usize],
    instances: &[usize],
) -> Result<(Vec<[f64; 2]>, Pca2)> {
    if instances.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(&i) = instances.iter().find(|&&i| i >= activations.instances()) {
        return Err(Error::IndexOutOfRange { index: i, len: activations.instances() });
    }
    let points = gather(activations, neurons, instances);
    let pca = Pca2::fit(&points, neurons.len());
    let coords = points.chunks_exact(neurons.len().max(1)).map(|p| pca.project(p)).collect();
    Ok((coords, pca))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// The hypothesis class ran out of survivors at this depth.
    Separated { depth: usize },
    Overlapping,
}

impl Verdict {
    pub fn is_separated(self) -> bool {
        matches!(self, Verdict::Separated { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotPoint {
    pub instance: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    /// 1-based depth on the path.
    pub depth: usize,
    pub condition: PathStep,
    pub true_count: usize,
    pub hypo_count: usize,
    /// Full survivor sets; left empty when a trace is read back from text.
    pub surviving_true: Vec<usize>,
    pub surviving_hypo: Vec<usize>,
    pub true_points: Vec<PlotPoint>,
    pub hypo_points: Vec<PlotPoint>,
    pub degenerate: bool,
}

impl TraceStep {
    pub fn factor(&self) -> usize {
        self.condition.feature
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisColumn {
    pub hypothesis: usize,
    pub steps: Vec<TraceStep>,
    pub verdict: Verdict,
    /// The true class itself ran out of survivors.
    pub true_exhausted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpretationTrace {
    pub instance_index: usize,
    pub true_class: usize,
    pub predicted_class: usize,
    pub meta_row: Vec<usize>,
    pub path: Vec<PathStep>,
    pub columns: Vec<HypothesisColumn>,
}

impl InterpretationTrace {
    pub fn separated_count(&self) -> usize {
        self.columns.iter().filter(|c| c.verdict.is_separated()).count()
    }

    pub fn is_correct(&self) -> bool {
        self.true_class == self.predicted_class
    }
}

/// Training rows satisfying every condition in `conditions`.
pub fn filter_rows(meta_train: &MetaDataset, conditions: &[PathStep]) -> Vec<usize> {
    (0..meta_train.instances)
        .filter(|&i| conditions.iter().all(|c| c.admits(meta_train.get(i, c.feature) as f64)))
        .collect()
}

fn plot_sample(instances: &[usize]) -> Vec<usize> {
    let stride = instances.len().div_ceil(MAX_PLOT_POINTS).max(1);
    instances.iter().step_by(stride).copied().collect()
}

/// Explains the meta-tree decision for test row `index`.
pub fn trace(
    ensemble: &Ensemble,
    meta_test: &MetaDataset,
    meta_train: &MetaDataset,
    activations: &ActivationMatrix,
    index: usize,
) -> Result<InterpretationTrace> {
    if index >= meta_test.instances {
        return Err(Error::IndexOutOfRange { index, len: meta_test.instances });
    }
    let k = ensemble.factor_model.factor_count();
    if meta_test.factors != k || meta_train.factors != k {
        return Err(Error::InconsistentEnsemble(format!(
            "meta rows have {} / {} features for {k} factors",
            meta_test.factors, meta_train.factors
        )));
    }
    if activations.instances() != meta_train.instances || activations.neurons() != ensemble.factor_model.neurons {
        return Err(Error::InconsistentEnsemble("activations do not match the meta training set".into()));
    }
    let classes = ensemble.meta_learner.classes;
    let true_class = meta_test.labels[index];
    if true_class >= classes {
        return Err(Error::LabelOutOfRange { index, value: true_class as u8 });
    }
    let meta_row = meta_test.row(index).to_vec();
    let (predicted_class, path) = ensemble.predict_meta(&meta_row);

    // alive[d] holds rows passing the first d + 1 conditions.
    let mut alive: Vec<Vec<usize>> = Vec::with_capacity(path.len());
    let mut current: Vec<usize> = (0..meta_train.instances).collect();
    for cond in &path {
        current.retain(|&i| cond.admits(meta_train.get(i, cond.feature) as f64));
        alive.push(current.clone());
    }
    let of_class = |rows: &[usize], c: usize| -> Vec<usize> {
        rows.iter().copied().filter(|&i| meta_train.labels[i] == c).collect()
    };

    let mut columns = Vec::with_capacity(classes - 1);
    for hypothesis in (0..classes).filter(|&h| h != true_class) {
        let mut steps = Vec::new();
        let mut verdict = Verdict::Overlapping;
        let mut true_exhausted = false;
        let mut projections: Vec<(usize, Pca2)> = Vec::new();
        for (d, cond) in path.iter().enumerate() {
            let surviving_true = of_class(&alive[d], true_class);
            let surviving_hypo = of_class(&alive[d], hypothesis);
            let neurons = &ensemble.factor_model.factors[cond.feature].neurons;
            let pca = match projections.iter().find(|(f, _)| *f == cond.feature) {
                Some((_, p)) => p.clone(),
                None => {
                    let union: Vec<usize> = surviving_true.iter().chain(&surviving_hypo).copied().collect();
                    let p = Pca2::fit(&gather(activations, neurons, &union), neurons.len());
                    projections.push((cond.feature, p.clone()));
                    p
                }
            };
            let points = |set: &[usize]| -> Vec<PlotPoint> {
                plot_sample(set)
                    .into_iter()
                    .map(|i| {
                        let [x, y] = pca.project(&activations.project(i, neurons));
                        PlotPoint { instance: i, x, y }
                    })
                    .collect()
            };
            let step = TraceStep {
                depth: d + 1,
                condition: *cond,
                true_count: surviving_true.len(),
                hypo_count: surviving_hypo.len(),
                true_points: points(&surviving_true),
                hypo_points: points(&surviving_hypo),
                surviving_true,
                surviving_hypo,
                degenerate: pca.degenerate,
            };
            let (t_empty, h_empty) = (step.true_count == 0, step.hypo_count == 0);
            steps.push(step);
            if t_empty {
                true_exhausted = true;
                break;
            }
            if h_empty {
                verdict = Verdict::Separated { depth: d + 1 };
                break;
            }
        }
        columns.push(HypothesisColumn { hypothesis, steps, verdict, true_exhausted });
    }
    Ok(InterpretationTrace { instance_index: index, true_class, predicted_class, meta_row, path, columns })
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn direction(went_left: bool) -> &'static str {
    if went_left {
        "le"
    } else {
        "gt"
    }
}

impl InterpretationTrace {
    /// Line-oriented text form. Survivor sets are stored as counts only.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "interpretation-trace v1").unwrap();
        writeln!(out, "instance {}", self.instance_index).unwrap();
        writeln!(out, "true_class {}", self.true_class).unwrap();
        writeln!(out, "predicted_class {}", self.predicted_class).unwrap();
        writeln!(out, "meta_row {}", join(&self.meta_row)).unwrap();
        let path: Vec<String> = self
            .path
            .iter()
            .map(|p| format!("{}:{}:{:?}", p.feature, direction(p.went_left), p.threshold))
            .collect();
        writeln!(out, "path {}", path.join(" ")).unwrap();
        for col in &self.columns {
            let verdict = match col.verdict {
                Verdict::Separated { depth } => format!("separated:{depth}"),
                Verdict::Overlapping => "overlapping".to_string(),
            };
            writeln!(
                out,
                "column {} {} true_exhausted={} steps={}",
                col.hypothesis,
                verdict,
                col.true_exhausted,
                col.steps.len()
            )
            .unwrap();
            for s in &col.steps {
                writeln!(
                    out,
                    "step {} {}:{}:{:?} true={} hypo={} degenerate={} points={},{}",
                    s.depth,
                    s.condition.feature,
                    direction(s.condition.went_left),
                    s.condition.threshold,
                    s.true_count,
                    s.hypo_count,
                    s.degenerate,
                    s.true_points.len(),
                    s.hypo_points.len()
                )
                .unwrap();
                for (tag, pts) in [("t", &s.true_points), ("h", &s.hypo_points)] {
                    for p in pts {
                        writeln!(out, "{tag} {} {:?} {:?}", p.instance, p.x, p.y).unwrap();
                    }
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        TraceParser { lines: text.lines().filter(|l| !l.trim().is_empty()).collect(), at: 0 }.parse()
    }
}

struct TraceParser<'a> {
    lines: Vec<&'a str>,
    at: usize,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Artifact(format!("trace text: {}", msg.into()))
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| bad(format!("bad number `{s}`")))
}

fn condition(s: &str) -> Result<PathStep> {
    let mut parts = s.splitn(3, ':');
    let (f, d, t) = (parts.next(), parts.next(), parts.next());
    let (Some(f), Some(d), Some(t)) = (f, d, t) else {
        return Err(bad(format!("bad condition `{s}`")));
    };
    let went_left = match d {
        "le" => true,
        "gt" => false,
        _ => return Err(bad(format!("bad direction `{d}`"))),
    };
    Ok(PathStep { feature: num(f)?, threshold: num(t)?, went_left })
}

impl<'a> TraceParser<'a> {
    fn next(&mut self) -> Result<&'a str> {
        let line = self.lines.get(self.at).ok_or_else(|| bad("unexpected end"))?;
        self.at += 1;
        Ok(line)
    }

    fn field(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next()?;
        let rest = line.strip_prefix(key).ok_or_else(|| bad(format!("expected `{key}`, got `{line}`")))?;
        Ok(rest.strip_prefix(' ').unwrap_or(rest))
    }

    fn list(s: &str) -> Result<Vec<usize>> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(num).collect()
    }

    fn kv<'b>(token: &'b str, key: &str) -> Result<&'b str> {
        token
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .ok_or_else(|| bad(format!("expected `{key}=`, got `{token}`")))
    }

    fn points(&mut self, tag: &str, count: usize) -> Result<Vec<PlotPoint>> {
        (0..count)
            .map(|_| {
                let line = self.next()?;
                let parts: Vec<&str> = line.split(' ').collect();
                match parts.as_slice() {
                    [t, i, x, y] if *t == tag => Ok(PlotPoint { instance: num(i)?, x: num(x)?, y: num(y)? }),
                    _ => Err(bad(format!("bad point line `{line}`"))),
                }
            })
            .collect()
    }

    fn parse(mut self) -> Result<InterpretationTrace> {
        if self.next()? != "interpretation-trace v1" {
            return Err(bad("missing header"));
        }
        let instance_index = num(self.field("instance")?)?;
        let true_class = num(self.field("true_class")?)?;
        let predicted_class = num(self.field("predicted_class")?)?;
        let meta_row = Self::list(self.field("meta_row")?)?;
        let path_text = self.field("path")?;
        let path = path_text.split_whitespace().map(condition).collect::<Result<Vec<_>>>()?;
        let mut columns = Vec::new();
        while self.at < self.lines.len() {
            let line = self.field("column")?;
            let parts: Vec<&str> = line.split(' ').collect();
            let [h, v, ex, n] = parts.as_slice() else {
                return Err(bad(format!("bad column line `{line}`")));
            };
            let verdict = match v.strip_prefix("separated:") {
                Some(d) => Verdict::Separated { depth: num(d)? },
                None if *v == "overlapping" => Verdict::Overlapping,
                None => return Err(bad(format!("bad verdict `{v}`"))),
            };
            let true_exhausted = num(Self::kv(ex, "true_exhausted")?)?;
            let n: usize = num(Self::kv(n, "steps")?)?;
            let mut steps = Vec::with_capacity(n);
            for _ in 0..n {
                let line = self.field("step")?;
                let parts: Vec<&str> = line.split(' ').collect();
                let [depth, cond, t, hy, dg, pts] = parts.as_slice() else {
                    return Err(bad(format!("bad step line `{line}`")));
                };
                let (tn, hn) = Self::kv(pts, "points")?
                    .split_once(',')
                    .ok_or_else(|| bad(format!("bad point counts in `{line}`")))?;
                let true_points = self.points("t", num(tn)?)?;
                let hypo_points = self.points("h", num(hn)?)?;
                steps.push(TraceStep {
                    depth: num(depth)?,
                    condition: condition(cond)?,
                    true_count: num(Self::kv(t, "true")?)?,
                    hypo_count: num(Self::kv(hy, "hypo")?)?,
                    surviving_true: Vec::new(),
                    surviving_hypo: Vec::new(),
                    true_points,
                    hypo_points,
                    degenerate: num(Self::kv(dg, "degenerate")?)?,
                });
            }
            columns.push(HypothesisColumn { hypothesis: num(h)?, steps, verdict, true_exhausted });
        }
        Ok(InterpretationTrace { instance_index, true_class, predicted_class, meta_row, path, columns })
    }
}
