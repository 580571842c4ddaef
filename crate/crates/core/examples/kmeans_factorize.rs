//! Two-level clustering of a synthetic activation matrix: neurons into
//! factors, then instances into IDs inside each factor.

use cnn_inte::clustering::{assign_ids, factorize, kmeans, KMeansParams};
use cnn_inte::cnn::ActivationMatrix;
use rand::Rng;

fn main() {
    let mut rng = cnn_inte::seed::rng(3);
    let params = KMeansParams::default();

    // Plain k-means on three planar blobs.
    let centers = [(0.0, 0.0), (5.0, 5.0), (-5.0, 4.0)];
    let points: Vec<f64> = (0..90)
        .flat_map(|i| {
            let (cx, cy) = centers[i % 3];
            [cx + rng.random_range(-0.5..0.5), cy + rng.random_range(-0.5..0.5)]
        })
        .collect();
    let model = kmeans(&points, 2, 3, 11, &params).unwrap();
    println!("k-means: {} iterations, inertia {:.3}, sizes {:?}", model.iterations, model.inertia, model.cluster_sizes());
    println!("inertia per pass {:?}", model.inertia_history.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>());

    // Twelve neurons in three correlated groups, 200 instances.
    let (neurons, instances) = (12, 200);
    let mut rows = Vec::with_capacity(neurons * instances);
    for _ in 0..instances {
        let drivers: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        for h in 0..neurons {
            rows.push((drivers[h % 3] * 4.0 + rng.random_range(-0.2..0.2)).max(0.0));
        }
    }
    let acts = ActivationMatrix::from_instance_major(neurons, &rows, vec![0; instances]).unwrap();
    let factors = factorize(&acts, 3, 4, 5, &params).unwrap();
    for (k, f) in factors.factors.iter().enumerate() {
        println!("factor {k}: neurons {:?}, ID sizes {:?}", f.neurons, f.clustering.cluster_sizes());
    }
    let ids = assign_ids(&factors, &acts).unwrap();
    for i in 0..5 {
        println!("instance {i}: IDs {:?}", ids.row(i));
    }
}
