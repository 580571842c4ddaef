//! Fit a depth-limited tree and a small forest on integer features, then
//! print the tree's text form and one prediction path.

use cnn_inte::forest::{forest_fit, tree_fit, Features, ForestConfig, TreeParams};
use rand::Rng;

fn main() {
    let mut rng = cnn_inte::seed::rng(1);
    let (rows, cols) = (600, 4);
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0..10) as f64).collect();
    // Class depends on two of the four features.
    let labels: Vec<usize> = (0..rows)
        .map(|i| match (data[i * cols] < 5.0, data[i * cols + 2] < 3.0) {
            (true, true) => 0,
            (true, false) => 1,
            (false, _) => 2,
        })
        .collect();
    let features = Features::new(&data, cols).unwrap();

    let tree = tree_fit(features, &labels, 3, TreeParams::with_max_depth(3)).unwrap();
    println!("{}", tree.to_text());
    let probe = [7.0, 1.0, 2.0, 9.0];
    let (class, path) = tree.predict_with_path(&probe);
    for step in &path {
        let op = if step.went_left { "<=" } else { ">" };
        println!("f{} {op} {}", step.feature, step.threshold);
    }
    println!("predicted class {class}");

    let forest = forest_fit(features, &labels, 3, &ForestConfig { n_trees: 10, seed: 4, ..ForestConfig::default() }).unwrap();
    let sizes: Vec<usize> = forest.trees.iter().map(|t| t.node_count()).collect();
    println!("forest node counts {sizes:?}");
    println!("out-of-bag accuracy {:.3}", forest.oob_accuracy(features, &labels).unwrap_or(f64::NAN));
    println!("forest prediction for {probe:?}: {}", forest.predict(&probe));
}
