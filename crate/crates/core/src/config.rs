//! Run configuration and its line-oriented `key = value` file format.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cnn::CnnConfig;
use crate::dataset::{MnistFiles, TRAIN_PREFIX};
use crate::error::{Error, Result};
use crate::meta::EnsembleConfig;

pub const SEED_ENV: &str = "CNNINTE_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Leading training examples used; the rest of the file is ignored.
    pub train_limit: usize,
    /// Leading test examples used; `0` means all.
    pub test_limit: usize,
    pub steps: u64,
    pub batch_size: usize,
    pub keep_probability: f64,
    pub fc1_neurons: usize,
    pub learning_rate: f64,
    pub factors: usize,
    pub clusters: usize,
    pub tree_depth: usize,
    pub forest_trees: usize,
    pub forest_max_nodes: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let files = MnistFiles::in_dir("data/mnist");
        Self {
            train_images: files.train_images,
            train_labels: files.train_labels,
            test_images: files.test_images,
            test_labels: files.test_labels,
            train_limit: TRAIN_PREFIX,
            test_limit: 0,
            steps: 1000,
            batch_size: 50,
            keep_probability: 0.5,
            fc1_neurons: 128,
            learning_rate: 1e-4,
            factors: 8,
            clusters: 10,
            tree_depth: 5,
            forest_trees: 20,
            forest_max_nodes: 2000,
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl RunConfig {
    pub fn set_data_dir(&mut self, dir: impl AsRef<Path>) {
        let files = MnistFiles::in_dir(dir);
        self.train_images = files.train_images;
        self.train_labels = files.train_labels;
        self.test_images = files.test_images;
        self.test_labels = files.test_labels;
    }

    pub fn files(&self) -> MnistFiles {
        MnistFiles {
            train_images: self.train_images.clone(),
            train_labels: self.train_labels.clone(),
            test_images: self.test_images.clone(),
            test_labels: self.test_labels.clone(),
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data_dir" => self.set_data_dir(value),
            "train_images" => self.train_images = value.into(),
            "train_labels" => self.train_labels = value.into(),
            "test_images" => self.test_images = value.into(),
            "test_labels" => self.test_labels = value.into(),
            "train_limit" => self.train_limit = parse(key, value)?,
            "test_limit" => self.test_limit = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "keep_probability" => self.keep_probability = parse(key, value)?,
            "fc1_neurons" => self.fc1_neurons = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "factors" => self.factors = parse(key, value)?,
            "clusters" => self.clusters = parse(key, value)?,
            "tree_depth" => self.tree_depth = parse(key, value)?,
            "forest_trees" => self.forest_trees = parse(key, value)?,
            "forest_max_nodes" => self.forest_max_nodes = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "output_dir" => self.output_dir = value.into(),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies every setting in a config document on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    /// Overrides the seed from the environment value, if set.
    pub fn apply_seed_env(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.seed = parse(SEED_ENV, v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("train_limit", self.train_limit),
            ("batch_size", self.batch_size),
            ("fc1_neurons", self.fc1_neurons),
            ("factors", self.factors),
            ("clusters", self.clusters),
            ("tree_depth", self.tree_depth),
            ("forest_trees", self.forest_trees),
            ("forest_max_nodes", self.forest_max_nodes),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{name}` must be positive")));
        }
        if !(self.keep_probability > 0.0 && self.keep_probability <= 1.0) {
            return Err(Error::Config("`keep_probability` must lie in (0, 1]".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("`learning_rate` must be positive".into()));
        }
        Ok(())
    }

    pub fn cnn_config(&self) -> CnnConfig {
        CnnConfig {
            fc1_neurons: self.fc1_neurons,
            keep_probability: self.keep_probability,
            steps: self.steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            ..CnnConfig::default()
        }
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig {
            factors: self.factors,
            clusters: self.clusters,
            tree_depth: self.tree_depth,
            forest_trees: self.forest_trees,
            forest_max_nodes: self.forest_max_nodes,
            seed: self.seed,
            ..EnsembleConfig::default()
        }
    }

    /// The resolved configuration in the same format `apply_text` reads.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        line("train_images", self.train_images.display().to_string());
        line("train_labels", self.train_labels.display().to_string());
        line("test_images", self.test_images.display().to_string());
        line("test_labels", self.test_labels.display().to_string());
        line("train_limit", self.train_limit.to_string());
        line("test_limit", self.test_limit.to_string());
        line("steps", self.steps.to_string());
        line("batch_size", self.batch_size.to_string());
        line("keep_probability", format!("{:?}", self.keep_probability));
        line("fc1_neurons", self.fc1_neurons.to_string());
        line("learning_rate", format!("{:?}", self.learning_rate));
        line("factors", self.factors.to_string());
        line("clusters", self.clusters.to_string());
        line("tree_depth", self.tree_depth.to_string());
        line("forest_trees", self.forest_trees.to_string());
        line("forest_max_nodes", self.forest_max_nodes.to_string());
        line("seed", self.seed.to_string());
        line("output_dir", self.output_dir.display().to_string());
        out
    }
}

/// Ensemble snapshot stored next to the ensemble's model files.
pub fn ensemble_config_text(c: &EnsembleConfig) -> String {
    format!(
        "factors = {}\nclusters = {}\ntree_depth = {}\nforest_trees = {}\nforest_max_nodes = {}\nkmeans_max_iter = {}\nkmeans_tol = {:?}\nseed = {}\n",
        c.factors, c.clusters, c.tree_depth, c.forest_trees, c.forest_max_nodes, c.kmeans.max_iter, c.kmeans.tol, c.seed
    )
}

pub fn parse_ensemble_config(text: &str) -> Result<EnsembleConfig> {
    let mut c = EnsembleConfig::default();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("bad line `{line}`")))?;
        let (k, v) = (k.trim(), v.trim());
        match k {
            "factors" => c.factors = parse(k, v)?,
            "clusters" => c.clusters = parse(k, v)?,
            "tree_depth" => c.tree_depth = parse(k, v)?,
            "forest_trees" => c.forest_trees = parse(k, v)?,
            "forest_max_nodes" => c.forest_max_nodes = parse(k, v)?,
            "kmeans_max_iter" => c.kmeans.max_iter = parse(k, v)?,
            "kmeans_tol" => c.kmeans.tol = parse(k, v)?,
            "seed" => c.seed = parse(k, v)?,
            _ => return Err(Error::Config(format!("unknown ensemble key `{k}`"))),
        }
    }
    Ok(c)
}
