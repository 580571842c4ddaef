//! The five-neuron, six-instance toy: pinned factor memberships and
//! clusterings turn into the meta-level training matrix.

use cnn_inte::clustering::FactorModel;
use cnn_inte::cnn::ActivationMatrix;
use cnn_inte::meta::build_meta_train;

fn main() {
    let ids = vec![vec![0, 0, 1, 1, 2, 2], vec![0, 0, 0, 1, 1, 2], vec![0, 1, 1, 1, 2, 2]];
    let factor_of_neuron = vec![0, 0, 1, 1, 2];
    // Activations placed so each instance sits on its pinned cluster.
    let mut rows = Vec::new();
    for i in 0..6 {
        for &f in &factor_of_neuron {
            rows.push(10.0 * ids[f][i] as f64 + 0.1 * i as f64);
        }
    }
    let labels = vec![0, 1, 2, 3, 4, 5];
    let acts = ActivationMatrix::from_instance_major(5, &rows, labels).unwrap();
    let model = FactorModel::from_memberships(&acts, factor_of_neuron, &ids, 3).unwrap();
    let meta = build_meta_train(&model, &acts, acts.labels()).unwrap();
    for k in 0..meta.factors {
        println!("factor {}: {:?}", k + 1, meta.column(k));
    }
    println!("labels:   {:?}", meta.labels);
}
