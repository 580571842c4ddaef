//! Meta-level ensemble: cluster-ID features, the surrogate decision tree
//! over them, and one pixel-space forest per factor that predicts those IDs
//! for unseen images.

use crate::clustering::{assign_ids, factorize, FactorModel, KMeansParams};
use crate::cnn::ActivationMatrix;
use crate::dataset::{Dataset, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::forest::{
    forest_fit_indexed, tree_fit, DecisionTree, FeatureIndex, Features, ForestConfig, PathStep, RandomForest,
    TreeParams,
};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
        }
    }
}

/// `instances x factors` grid of cluster IDs plus the original labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaDataset {
    pub instances: usize,
    pub factors: usize,
    pub clusters: usize,
    /// Row-major IDs.
    pub features: Vec<usize>,
    pub labels: Vec<usize>,
    pub role: Role,
}

impl MetaDataset {
    pub fn new(factors: usize, clusters: usize, features: Vec<usize>, labels: Vec<usize>, role: Role) -> Result<Self> {
        let instances = labels.len();
        if features.len() != instances * factors {
            return Err(Error::ShapeMismatch(format!(
                "{} meta features for {instances} x {factors}",
                features.len()
            )));
        }
        if let Some(bad) = features.iter().find(|&&v| v >= clusters) {
            return Err(Error::ShapeMismatch(format!("cluster ID {bad} outside 0..{clusters}")));
        }
        Ok(Self { instances, factors, clusters, features, labels, role })
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.features[i * self.factors..(i + 1) * self.factors]
    }

    pub fn get(&self, i: usize, k: usize) -> usize {
        self.features[i * self.factors + k]
    }

    pub fn column(&self, k: usize) -> Vec<usize> {
        (0..self.instances).map(|i| self.get(i, k)).collect()
    }

    /// IDs as floats, the form the decision tree consumes.
    pub fn features_f64(&self) -> Vec<f64> {
        self.features.iter().map(|&v| v as f64).collect()
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| v as f64).collect()
    }
}

/// Meta training rows: each instance's canonical ID in every factor.
pub fn build_meta_train(model: &FactorModel, activations: &ActivationMatrix, labels: &[u8]) -> Result<MetaDataset> {
    if labels.len() != activations.instances() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} activation rows",
            labels.len(),
            activations.instances()
        )));
    }
    let ids = assign_ids(model, activations)?;
    MetaDataset::new(
        model.factor_count(),
        model.clusters,
        ids.ids,
        labels.iter().map(|&l| usize::from(l)).collect(),
        Role::Train,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub factors: usize,
    pub clusters: usize,
    pub tree_depth: usize,
    pub forest_trees: usize,
    pub forest_max_nodes: usize,
    pub kmeans: KMeansParams,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            factors: 8,
            clusters: 10,
            tree_depth: 5,
            forest_trees: 20,
            forest_max_nodes: 2000,
            kmeans: KMeansParams::default(),
            seed: 0,
        }
    }
}

impl EnsembleConfig {
    pub fn forest_config(&self, factor: usize) -> ForestConfig {
        ForestConfig {
            n_trees: self.forest_trees,
            max_nodes: self.forest_max_nodes,
            features_per_split: None,
            bootstrap: true,
            seed: seed::mix(seed::mix(self.seed, seed::STREAM_FOREST), factor as u64),
        }
    }

    pub fn factor_seed(&self) -> u64 {
        seed::mix(self.seed, seed::STREAM_FACTORS)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub meta_learner: DecisionTree,
    pub base_models: Vec<RandomForest>,
    pub factor_model: FactorModel,
    pub config: EnsembleConfig,
}

impl Ensemble {
    pub fn validate(&self) -> Result<()> {
        let k = self.factor_model.factor_count();
        if self.base_models.len() != k {
            return Err(Error::InconsistentEnsemble(format!(
                "{} base models for {k} factors",
                self.base_models.len()
            )));
        }
        if self.meta_learner.feature_count != k {
            return Err(Error::InconsistentEnsemble(format!(
                "meta tree reads {} features, ensemble has {k} factors",
                self.meta_learner.feature_count
            )));
        }
        if let Some(f) = self.base_models.iter().find(|f| f.classes != self.factor_model.clusters) {
            return Err(Error::InconsistentEnsemble(format!(
                "base model predicts {} IDs, factors have {} clusters",
                f.classes, self.factor_model.clusters
            )));
        }
        Ok(())
    }

    /// Meta-tree class and decision path for one ID row.
    pub fn predict_meta(&self, row: &[usize]) -> (usize, Vec<PathStep>) {
        let x: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        self.meta_learner.predict_with_path(&x)
    }

    /// End-to-end prediction for one image.
    pub fn predict_image(&self, pixels: &[f64]) -> usize {
        let row: Vec<usize> = self.base_models.iter().map(|f| f.predict(pixels)).collect();
        self.predict_meta(&row).0
    }
}

/// Fits the full ensemble and returns it with its meta training set.
///
/// `activations` must be the hidden-layer outputs of `train_data` in order.
pub fn train_ensemble(
    activations: &ActivationMatrix,
    train_data: &Dataset,
    config: &EnsembleConfig,
) -> Result<(Ensemble, MetaDataset)> {
    if activations.instances() != train_data.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} activation rows for {} training images",
            activations.instances(),
            train_data.len()
        )));
    }
    if config.tree_depth == 0 {
        return Err(Error::Config("meta tree depth must be positive".into()));
    }
    let factor_model = factorize(activations, config.factors, config.clusters, config.factor_seed(), &config.kmeans)?;
    log::info!("factorized {} neurons into {} factors", factor_model.neurons, factor_model.factor_count());
    let meta_train = build_meta_train(&factor_model, activations, train_data.labels())?;

    let meta_learner = tree_fit(
        Features::new(&meta_train.features_f64(), meta_train.factors)?,
        &meta_train.labels,
        NUM_CLASSES,
        TreeParams::with_max_depth(config.tree_depth),
    )?;
    log::info!("meta tree: {} nodes, depth {}", meta_learner.node_count(), meta_learner.depth());

    let index = FeatureIndex::new(Features::new(train_data.pixels(), train_data.pixels_per_image())?);
    let mut base_models = Vec::with_capacity(factor_model.factor_count());
    for k in 0..factor_model.factor_count() {
        let forest = forest_fit_indexed(&index, &meta_train.column(k), config.clusters, &config.forest_config(k))?;
        log::info!("base model {k}: {} trees", forest.trees.len());
        base_models.push(forest);
    }
    let ensemble = Ensemble { meta_learner, base_models, factor_model, config: *config };
    ensemble.validate()?;
    Ok((ensemble, meta_train))
}

/// Meta test rows: each base model's predicted ID for each image.
pub fn build_meta_test(ensemble: &Ensemble, test_data: &Dataset) -> Result<MetaDataset> {
    ensemble.validate()?;
    let k = ensemble.base_models.len();
    let width = test_data.pixels_per_image();
    if let Some(f) = ensemble.base_models.iter().find(|f| f.feature_count != width) {
        return Err(Error::ShapeMismatch(format!(
            "base model expects {} pixels, images have {width}",
            f.feature_count
        )));
    }
    let mut features = vec![0; test_data.len() * k];
    for i in 0..test_data.len() {
        let image = test_data.image(i);
        for (f, forest) in ensemble.base_models.iter().enumerate() {
            features[i * k + f] = forest.predict(image);
        }
    }
    MetaDataset::new(
        k,
        ensemble.factor_model.clusters,
        features,
        test_data.labels().iter().map(|&l| usize::from(l)).collect(),
        Role::Test,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    /// `confusion[label][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

pub fn evaluate_ensemble(ensemble: &Ensemble, meta: &MetaDataset) -> Result<Evaluation> {
    if meta.factors != ensemble.meta_learner.feature_count {
        return Err(Error::ShapeMismatch(format!(
            "meta rows have {} features, tree expects {}",
            meta.factors, ensemble.meta_learner.feature_count
        )));
    }
    let classes = ensemble.meta_learner.classes;
    let mut confusion = vec![vec![0u64; classes]; classes];
    let mut predictions = Vec::with_capacity(meta.instances);
    let mut hits = 0usize;
    for i in 0..meta.instances {
        let (p, _) = ensemble.predict_meta(meta.row(i));
        let label = meta.labels[i];
        if label >= classes {
            return Err(Error::LabelOutOfRange { index: i, value: label as u8 });
        }
        confusion[label][p] += 1;
        hits += usize::from(p == label);
        predictions.push(p);
    }
    let accuracy = if meta.instances == 0 { 0.0 } else { hits as f64 / meta.instances as f64 };
    Ok(Evaluation { accuracy, predictions, confusion })
}
