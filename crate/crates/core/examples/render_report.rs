//! Render a hand-made trace to SVG.
//!
//! `cargo run --example render_report -- report.svg`

use cnn_inte::forest::PathStep;
use cnn_inte::interpret::{HypothesisColumn, InterpretationTrace, PlotPoint, TraceStep, Verdict};
use cnn_inte::report::{file_name, render_svg, ReportSpec};
use rand::Rng;
use rand_distr::StandardNormal;

fn cloud(rng: &mut impl Rng, n: usize, cx: f64, cy: f64) -> Vec<PlotPoint> {
    (0..n)
        .map(|instance| PlotPoint {
            instance,
            x: cx + rng.sample::<f64, _>(StandardNormal),
            y: cy + rng.sample::<f64, _>(StandardNormal),
        })
        .collect()
}

fn main() -> std::io::Result<()> {
    let mut rng = cnn_inte::seed::rng(9);
    let path = vec![
        PathStep { feature: 5, threshold: 4.5, went_left: true },
        PathStep { feature: 5, threshold: 2.5, went_left: false },
        PathStep { feature: 0, threshold: 0.5, went_left: true },
    ];
    let true_class = 3;
    let columns = (0..10)
        .filter(|&h| h != true_class)
        .map(|hypothesis| {
            // Hypotheses far from the true class drop out early.
            let depth = 1 + hypothesis % 3;
            let steps = (0..depth)
                .map(|d| TraceStep {
                    depth: d + 1,
                    condition: path[d],
                    true_count: 400 / (d + 1),
                    hypo_count: 90 / (d + 1),
                    surviving_true: Vec::new(),
                    surviving_hypo: Vec::new(),
                    true_points: cloud(&mut rng, 60, 0.0, 0.0),
                    hypo_points: cloud(&mut rng, 25, 1.5 + d as f64, 0.5),
                    degenerate: false,
                })
                .collect();
            let verdict = if depth < 3 { Verdict::Separated { depth } } else { Verdict::Overlapping };
            HypothesisColumn { hypothesis, steps, verdict, true_exhausted: false }
        })
        .collect();
    let trace = InterpretationTrace {
        instance_index: 17,
        true_class,
        predicted_class: true_class,
        meta_row: vec![0, 4, 2, 9, 1, 3, 7, 5],
        path,
        columns,
    };
    let target = std::env::args().nth(1).unwrap_or_else(|| file_name(&trace));
    std::fs::write(&target, render_svg(&trace, &ReportSpec::default()))?;
    println!("wrote {target}");
    Ok(())
}
