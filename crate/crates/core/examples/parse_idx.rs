//! Decode MNIST IDX files, or a small in-memory file when none are given.
//!
//! `cargo run --example parse_idx -- data/mnist/t10k-images-idx3-ubyte data/mnist/t10k-labels-idx1-ubyte`

use cnn_inte::dataset::{parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels, ImageTensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (image_bytes, label_bytes) = match args.as_slice() {
        [images, labels] => (std::fs::read(images)?, std::fs::read(labels)?),
        _ => {
            let values = (0..2 * 4 * 4).map(|i| (i % 16) as f64 / 15.0).collect();
            let t = ImageTensor { count: 2, rows: 4, cols: 4, values };
            (write_idx_images(&t), write_idx_labels(&[3, 8]))
        }
    };
    let images = parse_idx_images(&image_bytes)?;
    let labels = parse_idx_labels(&label_bytes)?;
    println!("{} images of {}x{}, {} labels", images.count, images.rows, images.cols, labels.len());

    let mut histogram = [0usize; 10];
    labels.iter().for_each(|&l| histogram[l as usize] += 1);
    println!("label counts {histogram:?}");

    // Coarse ASCII view of the first image.
    let first = images.image(0);
    for y in 0..images.rows {
        let row: String = (0..images.cols)
            .map(|x| match first[y * images.cols + x] {
                v if v > 0.66 => '#',
                v if v > 0.33 => '+',
                v if v > 0.0 => '.',
                _ => ' ',
            })
            .collect();
        println!("|{row}|");
    }
    println!("label {}", labels[0]);
    Ok(())
}
