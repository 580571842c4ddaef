//! Command-line front end. `run` is the whole program minus process setup,
//! so tests can drive it in-process.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::pipeline::{self, MetaRun};

#[derive(Debug, Parser)]
#[command(name = "cnn-inte", version, about = "Interpret a CNN's hidden layer through a meta-level decision tree")]
pub struct Cli {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides for [`RunConfig`] fields.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory holding the four MNIST IDX files.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub train_images: Option<PathBuf>,
    #[arg(long, global = true)]
    pub train_labels: Option<PathBuf>,
    #[arg(long, global = true)]
    pub test_images: Option<PathBuf>,
    #[arg(long, global = true)]
    pub test_labels: Option<PathBuf>,
    #[arg(long, global = true)]
    pub train_limit: Option<usize>,
    /// Leading test examples used; 0 for all.
    #[arg(long, global = true)]
    pub test_limit: Option<usize>,
    #[arg(long, global = true)]
    pub steps: Option<u64>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub keep_probability: Option<f64>,
    #[arg(long, global = true)]
    pub fc1_neurons: Option<usize>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    /// Neuron factors; `build-meta` accepts a comma-separated sweep.
    #[arg(long, global = true, value_delimiter = ',')]
    pub factors: Vec<usize>,
    #[arg(long, global = true)]
    pub clusters: Option<usize>,
    #[arg(long, global = true)]
    pub tree_depth: Option<usize>,
    #[arg(long, global = true)]
    pub forest_trees: Option<usize>,
    #[arg(long, global = true)]
    pub forest_max_nodes: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long = "out", global = true)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the CNN and report its test accuracy.
    TrainCnn,
    /// Build the meta-level ensemble from a trained model.
    BuildMeta {
        /// Model file; defaults to `<out>/model.bin`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Report CNN and ensemble test accuracy from saved artifacts.
    Evaluate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        ensemble: Option<PathBuf>,
    },
    /// Explain individual test predictions as traces and SVG grids.
    Interpret {
        #[arg(long)]
        ensemble: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        index: Vec<usize>,
        #[arg(long)]
        all_misclassified: bool,
    },
    /// Run every stage.
    Pipeline {
        /// Test indices to explain; defaults to two correct and one wrong.
        #[arg(long, value_delimiter = ',')]
        index: Vec<usize>,
    },
}

impl RunArgs {
    /// Defaults, then the config file, then the seed variable, then flags.
    pub fn resolve(&self, env_seed: Option<&str>) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        c.apply_seed_env(env_seed)?;
        if let Some(d) = &self.data_dir {
            c.set_data_dir(d);
        }
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    c.$field = v;
                }
            )*};
        }
        take!(
            train_images,
            train_labels,
            test_images,
            test_labels,
            train_limit,
            test_limit,
            steps,
            batch_size,
            keep_probability,
            fc1_neurons,
            learning_rate,
            clusters,
            tree_depth,
            forest_trees,
            forest_max_nodes,
            seed,
            output_dir
        );
        if let Some(&k) = self.factors.first() {
            c.factors = k;
        }
        c.validate()?;
        Ok(c)
    }
}

/// 1 for usage problems, 2 for bad input data, 3 for broken invariants.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Config(_) => 1,
        e if e.is_data_error() => 2,
        _ => 3,
    }
}

/// Parses `args` (program name first) and runs the command, writing metric
/// lines to `out`. Returns the process exit code.
pub fn run<I, T>(args: I, env_seed: Option<&str>, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = write!(out, "{e}");
            return 0;
        }
        Err(e) => {
            eprint!("{e}");
            return 1;
        }
    };
    match execute(&cli, env_seed, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn line(out: &mut dyn Write, text: String) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn report_meta(out: &mut dyn Write, run: &MetaRun) -> Result<()> {
    line(out, format!("meta_test_accuracy={}", run.evaluation.accuracy))
}

pub fn execute(cli: &Cli, env_seed: Option<&str>, out: &mut dyn Write) -> Result<()> {
    let config = cli.run.resolve(env_seed)?;
    if cli.run.factors.len() > 1 && !matches!(cli.command, Command::BuildMeta { .. }) {
        return Err(Error::Config("a factor sweep is only supported by build-meta".into()));
    }
    pipeline::echo_config(&config)?;
    match &cli.command {
        Command::TrainCnn => {
            let train = pipeline::load_train(&config)?;
            let test = pipeline::load_test(&config)?;
            let run = pipeline::train_cnn_stage(&config, &train, &test)?;
            pipeline::save_model(&pipeline::model_path(&config), &run.model)?;
            line(out, format!("cnn_test_accuracy={}", run.test_accuracy))?;
        }
        Command::BuildMeta { model } => {
            let model_path = model.clone().unwrap_or_else(|| pipeline::model_path(&config));
            let model = pipeline::load_model(&model_path)?;
            let train = pipeline::load_train(&config)?;
            let test = pipeline::load_test(&config)?;
            let sweep = cli.run.factors.len() > 1;
            let factors = if sweep { cli.run.factors.clone() } else { vec![config.factors] };
            let mut best: Option<(usize, f64)> = None;
            for k in factors {
                let ensemble_config = RunConfig { factors: k, ..config.clone() }.ensemble_config();
                let run = pipeline::build_meta_stage(&model, &ensemble_config, &train, &test)?;
                let dir = if sweep {
                    config.output_dir.join(format!("{}_k{k}", pipeline::ENSEMBLE_DIR))
                } else {
                    pipeline::ensemble_path(&config)
                };
                pipeline::save_ensemble(&dir, &run.ensemble, &run.activations)?;
                if sweep {
                    line(out, format!("factors={k} meta_test_accuracy={}", run.evaluation.accuracy))?;
                } else {
                    report_meta(out, &run)?;
                }
                if best.is_none_or(|(_, a)| run.evaluation.accuracy > a) {
                    best = Some((k, run.evaluation.accuracy));
                }
            }
            if let (true, Some((k, _))) = (sweep, best) {
                line(out, format!("best_factors={k}"))?;
            }
        }
        Command::Evaluate { model, ensemble } => {
            let test = pipeline::load_test(&config)?;
            let model = pipeline::load_model(&model.clone().unwrap_or_else(|| pipeline::model_path(&config)))?;
            line(out, format!("cnn_test_accuracy={}", crate::cnn::evaluate(&model, &test)?))?;
            let dir = ensemble.clone().unwrap_or_else(|| pipeline::ensemble_path(&config));
            let (ensemble, _) = pipeline::load_ensemble(&dir)?;
            let meta_test = crate::meta::build_meta_test(&ensemble, &test)?;
            let eval = crate::meta::evaluate_ensemble(&ensemble, &meta_test)?;
            line(out, format!("meta_test_accuracy={}", eval.accuracy))?;
        }
        Command::Interpret { ensemble, index, all_misclassified } => {
            let test = pipeline::load_test(&config)?;
            let dir = ensemble.clone().unwrap_or_else(|| pipeline::ensemble_path(&config));
            let (ensemble, activations) = pipeline::load_ensemble(&dir)?;
            let (meta_train, meta_test) = pipeline::meta_datasets(&ensemble, &activations, &test)?;
            let mut indices = index.clone();
            if *all_misclassified {
                let eval = crate::meta::evaluate_ensemble(&ensemble, &meta_test)?;
                indices.extend(pipeline::misclassified(&eval, &meta_test.labels));
            }
            if indices.is_empty() {
                return Err(Error::Config("pass --index or --all-misclassified".into()));
            }
            let interp_dir = config.output_dir.join(pipeline::INTERP_DIR);
            let written =
                pipeline::interpret_stage(&interp_dir, &ensemble, &meta_train, &meta_test, &activations, &indices)?;
            for (t, path) in written {
                line(out, format!("interpreted index={} separated={} file={}", t.instance_index, t.separated_count(), path.display()))?;
            }
        }
        Command::Pipeline { index } => {
            let train = pipeline::load_train(&config)?;
            let test = pipeline::load_test(&config)?;
            let cnn_run = pipeline::train_cnn_stage(&config, &train, &test)?;
            pipeline::save_model(&pipeline::model_path(&config), &cnn_run.model)?;
            line(out, format!("cnn_test_accuracy={}", cnn_run.test_accuracy))?;
            line(out, format!("cnn_model_checksum={:08x}", cnn_run.model.checksum()))?;
            let run = pipeline::build_meta_stage(&cnn_run.model, &config.ensemble_config(), &train, &test)?;
            pipeline::save_ensemble(&pipeline::ensemble_path(&config), &run.ensemble, &run.activations)?;
            report_meta(out, &run)?;
            let indices = if index.is_empty() {
                pipeline::default_indices(&run.evaluation, &run.meta_test.labels)
            } else {
                index.clone()
            };
            let interp_dir = config.output_dir.join(pipeline::INTERP_DIR);
            let written = pipeline::interpret_stage(
                &interp_dir,
                &run.ensemble,
                &run.meta_train,
                &run.meta_test,
                &run.activations,
                &indices,
            )?;
            for (t, path) in written {
                line(out, format!("interpreted index={} separated={} file={}", t.instance_index, t.separated_count(), path.display()))?;
            }
        }
    }
    Ok(())
}
