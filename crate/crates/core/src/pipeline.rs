//! Staged end-to-end run with persisted intermediates:
//! model, then activations and ensemble, then traces and SVG reports.

use std::fs;
use std::path::{Path, PathBuf};

use crate::artifact;
use crate::cnn::{self, extract_activations, ActivationMatrix, CnnModel, EVAL_BATCH};
use crate::config::{ensemble_config_text, parse_ensemble_config, RunConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::forest::DecisionTree;
use crate::interpret::{trace, InterpretationTrace};
use crate::meta::{
    build_meta_test, build_meta_train, evaluate_ensemble, train_ensemble, Ensemble, EnsembleConfig, Evaluation,
    MetaDataset,
};
use crate::report::{file_name, render_svg, ReportSpec};

pub const MODEL_FILE: &str = "model.bin";
pub const ENSEMBLE_DIR: &str = "ensemble";
pub const INTERP_DIR: &str = "interp";
pub const CONFIG_FILE: &str = "config.txt";

pub fn model_path(config: &RunConfig) -> PathBuf {
    config.output_dir.join(MODEL_FILE)
}

pub fn ensemble_path(config: &RunConfig) -> PathBuf {
    config.output_dir.join(ENSEMBLE_DIR)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the resolved configuration into the output directory.
pub fn echo_config(config: &RunConfig) -> Result<()> {
    create_dir(&config.output_dir)?;
    artifact::write_file(&config.output_dir.join(CONFIG_FILE), config.to_text().as_bytes())
}

pub fn load_train(config: &RunConfig) -> Result<Dataset> {
    config.files().load_train(config.train_limit)
}

pub fn load_test(config: &RunConfig) -> Result<Dataset> {
    let test = config.files().load_test()?;
    Ok(if config.test_limit > 0 { test.prefix(config.test_limit) } else { test })
}

pub struct CnnRun {
    pub model: CnnModel,
    pub test_accuracy: f64,
    pub test_predictions: Vec<usize>,
}

pub fn train_cnn_stage(config: &RunConfig, train: &Dataset, test: &Dataset) -> Result<CnnRun> {
    let model = cnn::train(config.cnn_config(), train)?;
    let logits = model.predict_logits(test, EVAL_BATCH)?;
    Ok(CnnRun {
        test_accuracy: cnn::accuracy_from_logits(&logits, test.labels()),
        test_predictions: cnn::argmax_rows(&logits),
        model,
    })
}

pub fn save_model(path: &Path, model: &CnnModel) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    artifact::write_file(path, &artifact::encode_model(model))
}

pub fn load_model(path: &Path) -> Result<CnnModel> {
    artifact::load(path, artifact::decode_model)
}

/// Everything derived from a trained CNN that interpretation needs.
pub struct MetaRun {
    pub ensemble: Ensemble,
    pub activations: ActivationMatrix,
    pub meta_train: MetaDataset,
    pub meta_test: MetaDataset,
    pub evaluation: Evaluation,
}

pub fn build_meta_stage(
    model: &CnnModel,
    ensemble_config: &EnsembleConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<MetaRun> {
    let activations = extract_activations(model, train, EVAL_BATCH)?;
    let (ensemble, meta_train) = train_ensemble(&activations, train, ensemble_config)?;
    let meta_test = build_meta_test(&ensemble, test)?;
    let evaluation = evaluate_ensemble(&ensemble, &meta_test)?;
    Ok(MetaRun { ensemble, activations, meta_train, meta_test, evaluation })
}

fn forest_file(k: usize) -> String {
    format!("forest_{k:02}.bin")
}

/// Persists an ensemble and the training activations it was built from.
pub fn save_ensemble(dir: &Path, ensemble: &Ensemble, activations: &ActivationMatrix) -> Result<()> {
    create_dir(dir)?;
    artifact::write_file(&dir.join(CONFIG_FILE), ensemble_config_text(&ensemble.config).as_bytes())?;
    artifact::write_file(&dir.join("factor.bin"), &artifact::encode_factor_model(&ensemble.factor_model))?;
    artifact::write_file(&dir.join("meta_tree.txt"), ensemble.meta_learner.to_text().as_bytes())?;
    for (k, forest) in ensemble.base_models.iter().enumerate() {
        artifact::write_file(&dir.join(forest_file(k)), &artifact::encode_forest(forest))?;
    }
    artifact::write_file(&dir.join("activations.bin"), &artifact::encode_activations(activations))
}

pub fn load_ensemble(dir: &Path) -> Result<(Ensemble, ActivationMatrix)> {
    let config_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let config = parse_ensemble_config(&text).map_err(|e| e.in_file(&config_path))?;
    let factor_model = artifact::load(&dir.join("factor.bin"), artifact::decode_factor_model)?;
    let tree_path = dir.join("meta_tree.txt");
    let tree_text = fs::read_to_string(&tree_path).map_err(|e| Error::io(&tree_path, e))?;
    let meta_learner = DecisionTree::from_text(&tree_text).map_err(|e| e.in_file(&tree_path))?;
    let base_models = (0..factor_model.factor_count())
        .map(|k| artifact::load(&dir.join(forest_file(k)), artifact::decode_forest))
        .collect::<Result<Vec<_>>>()?;
    let activations = artifact::load(&dir.join("activations.bin"), artifact::decode_activations)?;
    let ensemble = Ensemble { meta_learner, base_models, factor_model, config };
    ensemble.validate()?;
    Ok((ensemble, activations))
}

/// Rebuilds the meta datasets for a loaded ensemble.
pub fn meta_datasets(
    ensemble: &Ensemble,
    activations: &ActivationMatrix,
    test: &Dataset,
) -> Result<(MetaDataset, MetaDataset)> {
    let meta_train = build_meta_train(&ensemble.factor_model, activations, activations.labels())?;
    let meta_test = build_meta_test(ensemble, test)?;
    Ok((meta_train, meta_test))
}

/// Default instances to explain: the first two correct predictions and the
/// first wrong one.
pub fn default_indices(evaluation: &Evaluation, labels: &[usize]) -> Vec<usize> {
    let hits: Vec<usize> = (0..labels.len()).filter(|&i| evaluation.predictions[i] == labels[i]).take(2).collect();
    let miss = (0..labels.len()).find(|&i| evaluation.predictions[i] != labels[i]);
    hits.into_iter().chain(miss).collect()
}

pub fn misclassified(evaluation: &Evaluation, labels: &[usize]) -> Vec<usize> {
    (0..labels.len()).filter(|&i| evaluation.predictions[i] != labels[i]).collect()
}

/// Traces each index and writes `interp_*.svg` plus a matching `.txt`.
pub fn interpret_stage(
    dir: &Path,
    ensemble: &Ensemble,
    meta_train: &MetaDataset,
    meta_test: &MetaDataset,
    activations: &ActivationMatrix,
    indices: &[usize],
) -> Result<Vec<(InterpretationTrace, PathBuf)>> {
    create_dir(dir)?;
    let spec = ReportSpec::default();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let t = trace(ensemble, meta_test, meta_train, activations, i)?;
        let svg_path = dir.join(file_name(&t));
        artifact::write_file(&svg_path, render_svg(&t, &spec).as_bytes())?;
        artifact::write_file(&svg_path.with_extension("txt"), t.to_text().as_bytes())?;
        out.push((t, svg_path));
    }
    Ok(out)
}
