//! Trace one test instance through the meta tree, hypothesis by hypothesis.
//!
//! With arguments it reads a finished pipeline run:
//! `cargo run --release --example interpret_instance -- out data/mnist 42`
//! Without them it builds a small synthetic ensemble first.

use std::path::Path;

use cnn_inte::cnn::ActivationMatrix;
use cnn_inte::config::RunConfig;
use cnn_inte::dataset::{Dataset, ImageTensor};
use cnn_inte::interpret::{trace, Verdict};
use cnn_inte::meta::{build_meta_test, train_ensemble, EnsembleConfig};
use cnn_inte::pipeline;
use rand::Rng;

/// Images whose bright row encodes the label, and activations that echo it.
fn synthetic(count: usize, seed: u64) -> (Dataset, ActivationMatrix) {
    let mut rng = cnn_inte::seed::rng(seed);
    let side = 10;
    let labels: Vec<u8> = (0..count).map(|_| rng.random_range(0..10)).collect();
    let mut values = vec![0.0; count * side * side];
    let mut acts = Vec::with_capacity(count * 12);
    for (i, &l) in labels.iter().enumerate() {
        for x in 0..side {
            values[i * side * side + l as usize * side + x] = rng.random_range(0.6..1.0);
        }
        for h in 0..12 {
            let on = (l as usize + h) % 4 == 0;
            acts.push(if on { 3.0 + rng.random::<f64>() } else { rng.random::<f64>() * 0.5 });
        }
    }
    let data = Dataset::new(ImageTensor { count, rows: side, cols: side, values }, labels.clone()).unwrap();
    (data, ActivationMatrix::from_instance_major(12, &acts, labels).unwrap())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (ensemble, acts, test, index) = if let [out, data, index] = args.as_slice() {
        let mut config = RunConfig::default();
        config.set_data_dir(data);
        let (ensemble, acts) = pipeline::load_ensemble(&Path::new(out).join(pipeline::ENSEMBLE_DIR))?;
        (ensemble, acts, pipeline::load_test(&config)?, index.parse()?)
    } else {
        let (train, acts) = synthetic(400, 1);
        let config = EnsembleConfig { factors: 3, clusters: 4, forest_trees: 5, ..EnsembleConfig::default() };
        let (ensemble, _) = train_ensemble(&acts, &train, &config)?;
        (ensemble, acts, synthetic(50, 2).0, 0)
    };
    let (meta_train, meta_test) = pipeline::meta_datasets(&ensemble, &acts, &test)?;
    debug_assert_eq!(meta_test, build_meta_test(&ensemble, &test)?);

    let t = trace(&ensemble, &meta_test, &meta_train, &acts, index)?;
    println!("instance {index}: true {} predicted {}", t.true_class, t.predicted_class);
    println!("meta features {:?}", t.meta_row);
    for column in &t.columns {
        let counts: Vec<String> = column.steps.iter().map(|s| format!("{}/{}", s.true_count, s.hypo_count)).collect();
        let verdict = match column.verdict {
            Verdict::Separated { depth } => format!("separated at depth {depth}"),
            Verdict::Overlapping => "overlapping".to_string(),
        };
        println!("hypothesis {}: survivors {} -> {verdict}", column.hypothesis, counts.join(" "));
    }
    println!("{} of {} hypotheses separated", t.separated_count(), t.columns.len());
    Ok(())
}
