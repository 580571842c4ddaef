//! Train the CNN on a slice of MNIST and report test accuracy.
//!
//! `cargo run --release --example train_cnn -- data/mnist 10000 400`

use std::time::Instant;

use cnn_inte::cnn::{self, CnnConfig};
use cnn_inte::dataset::MnistFiles;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "data/mnist".into());
    let train_limit: usize = args.next().map_or(Ok(10_000), |s| s.parse())?;
    let steps: u64 = args.next().map_or(Ok(400), |s| s.parse())?;

    let files = MnistFiles::in_dir(&dir);
    let train = files.load_train(train_limit)?;
    let test = files.load_test()?;
    println!("training on {} images for {steps} steps", train.len());

    let start = Instant::now();
    let config = CnnConfig { steps, ..CnnConfig::default() };
    let model = cnn::train_with(config, &train, |step, loss| {
        if (step + 1) % 50 == 0 {
            println!("step {:>5}  loss {loss:.4}", step + 1);
        }
    })?;
    println!("trained in {:.1}s", start.elapsed().as_secs_f64());
    println!("test accuracy {:.4}", cnn::evaluate(&model, &test)?);
    println!("model checksum {:08x}", model.checksum());
    Ok(())
}
