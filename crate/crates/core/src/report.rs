//! SVG rendering of interpretation traces: one column per hypothesis, one
//! scatter cell per path step.

use std::fmt::Write as _;

use crate::interpret::{InterpretationTrace, PlotPoint, Verdict};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSpec {
    pub cell_width: f64,
    pub cell_height: f64,
    /// Blank space between cells and around the grid.
    pub gap: f64,
    /// Plot inset inside each cell, leaving room for the condition label.
    pub inset: f64,
    pub point_radius: f64,
    pub true_color: String,
    pub hypothesis_color: String,
    pub separated_color: String,
    pub overlapping_color: String,
}

impl Default for ReportSpec {
    fn default() -> Self {
        Self {
            cell_width: 150.0,
            cell_height: 150.0,
            gap: 12.0,
            inset: 18.0,
            point_radius: 1.5,
            true_color: "red".into(),
            hypothesis_color: "blue".into(),
            separated_color: "green".into(),
            overlapping_color: "red".into(),
        }
    }
}

const HEADER: f64 = 40.0;
const COLUMN_TITLE: f64 = 20.0;

/// `interp_<index>_<true>_<pred>.svg`
pub fn file_name(trace: &InterpretationTrace) -> String {
    format!("interp_{}_{}_{}.svg", trace.instance_index, trace.true_class, trace.predicted_class)
}

/// Maps a cell's points into `[lo, hi]` boxes, preserving aspect per axis.
struct CellScale {
    min: [f64; 2],
    span: [f64; 2],
    origin: [f64; 2],
    size: [f64; 2],
}

impl CellScale {
    fn new(points: &[&PlotPoint], origin: [f64; 2], size: [f64; 2]) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            for (a, v) in [p.x, p.y].into_iter().enumerate() {
                min[a] = min[a].min(v);
                max[a] = max[a].max(v);
            }
        }
        let span = [0, 1].map(|a| if max[a] > min[a] { max[a] - min[a] } else { 0.0 });
        Self { min, span, origin, size }
    }

    fn map(&self, p: &PlotPoint) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (a, v) in [p.x, p.y].into_iter().enumerate() {
            let t = if self.span[a] > 0.0 { ((v - self.min[a]) / self.span[a]).clamp(0.0, 1.0) } else { 0.5 };
            // SVG y grows downward.
            let t = if a == 1 { 1.0 - t } else { t };
            out[a] = self.origin[a] + t * self.size[a];
        }
        out
    }
}

fn f6(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

/// Renders `trace` as a standalone SVG document.
pub fn render_svg(trace: &InterpretationTrace, spec: &ReportSpec) -> String {
    let columns = trace.columns.len();
    let rows = trace.columns.iter().map(|c| c.steps.len()).max().unwrap_or(0).max(1);
    let width = spec.gap + columns as f64 * (spec.cell_width + spec.gap);
    let height = HEADER + COLUMN_TITLE + spec.gap + rows as f64 * (spec.cell_height + spec.gap);
    let mut out = String::new();
    writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        f6(width),
        f6(height),
        f6(width),
        f6(height)
    )
    .unwrap();
    writeln!(out, r#"<rect x="0" y="0" width="{}" height="{}" fill="white"/>"#, f6(width), f6(height)).unwrap();
    writeln!(
        out,
        r#"<text class="title" x="{}" y="24" font-family="sans-serif" font-size="16">instance {} | true label {} | predicted {}</text>"#,
        f6(spec.gap),
        trace.instance_index,
        trace.true_class,
        trace.predicted_class
    )
    .unwrap();

    for (c, column) in trace.columns.iter().enumerate() {
        let x0 = spec.gap + c as f64 * (spec.cell_width + spec.gap);
        writeln!(
            out,
            r#"<text class="column-title" x="{}" y="{}" font-family="sans-serif" font-size="12">Hypothesis: {}</text>"#,
            f6(x0),
            f6(HEADER + 12.0),
            column.hypothesis
        )
        .unwrap();
        let last = column.steps.len().saturating_sub(1);
        for (r, step) in column.steps.iter().enumerate() {
            let y0 = HEADER + COLUMN_TITLE + spec.gap + r as f64 * (spec.cell_height + spec.gap);
            let (class, stroke, stroke_width) = if r == last {
                match column.verdict {
                    Verdict::Separated { .. } => ("cell verdict separated", spec.separated_color.as_str(), 3.0),
                    Verdict::Overlapping => ("cell verdict overlapping", spec.overlapping_color.as_str(), 3.0),
                }
            } else {
                ("cell", "#999999", 1.0)
            };
            writeln!(
                out,
                r#"<g class="{class}" data-hypothesis="{}" data-depth="{}" data-x="{}" data-y="{}" data-width="{}" data-height="{}">"#,
                column.hypothesis,
                step.depth,
                f6(x0),
                f6(y0),
                f6(spec.cell_width),
                f6(spec.cell_height)
            )
            .unwrap();
            writeln!(
                out,
                r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="{stroke}" stroke-width="{stroke_width}"/>"#,
                f6(x0),
                f6(y0),
                f6(spec.cell_width),
                f6(spec.cell_height)
            )
            .unwrap();
            let op = if step.condition.went_left { "&lt;=" } else { "&gt;" };
            writeln!(
                out,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10">f{} {op} {} ({} vs {})</text>"#,
                f6(x0 + 4.0),
                f6(y0 + 12.0),
                step.condition.feature,
                step.condition.threshold,
                step.true_count,
                step.hypo_count
            )
            .unwrap();
            let pad = spec.point_radius + 2.0;
            let origin = [x0 + pad, y0 + spec.inset];
            let size = [spec.cell_width - 2.0 * pad, spec.cell_height - spec.inset - pad];
            let all: Vec<&PlotPoint> = step.true_points.iter().chain(&step.hypo_points).collect();
            let scale = CellScale::new(&all, origin, size);
            for (points, color, kind) in [
                (&step.true_points, &spec.true_color, "true"),
                (&step.hypo_points, &spec.hypothesis_color, "hypothesis"),
            ] {
                for p in points {
                    let [x, y] = scale.map(p);
                    writeln!(
                        out,
                        r#"<circle class="{kind}" cx="{}" cy="{}" r="{}" fill="{color}"/>"#,
                        f6(x),
                        f6(y),
                        f6(spec.point_radius)
                    )
                    .unwrap();
                }
            }
            writeln!(out, "</g>").unwrap();
        }
    }
    writeln!(out, "</svg>").unwrap();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::PathStep;
    use crate::interpret::{HypothesisColumn, TraceStep};

    fn step(depth: usize, hypo: usize) -> TraceStep {
        TraceStep {
            depth,
            condition: PathStep { feature: 2, threshold: 3.5, went_left: true },
            true_count: 2,
            hypo_count: hypo,
            surviving_true: vec![],
            surviving_hypo: vec![],
            true_points: vec![PlotPoint { instance: 0, x: -1.0, y: 2.0 }, PlotPoint { instance: 1, x: 3.0, y: -0.5 }],
            hypo_points: (0..hypo).map(|i| PlotPoint { instance: 10 + i, x: i as f64, y: 0.0 }).collect(),
            degenerate: false,
        }
    }

    fn separated_everywhere() -> InterpretationTrace {
        InterpretationTrace {
            instance_index: 7,
            true_class: 3,
            predicted_class: 3,
            meta_row: vec![0; 8],
            path: vec![PathStep { feature: 2, threshold: 3.5, went_left: true }],
            columns: (0..10)
                .filter(|&h| h != 3)
                .map(|h| HypothesisColumn {
                    hypothesis: h,
                    steps: vec![step(1, 0)],
                    verdict: Verdict::Separated { depth: 1 },
                    true_exhausted: false,
                })
                .collect(),
        }
    }

    #[test]
    fn minimal_grid_has_nine_green_cells() {
        let svg = render_svg(&separated_everywhere(), &ReportSpec::default());
        assert_eq!(svg.matches("<g class=\"cell").count(), 9);
        assert_eq!(svg.matches("verdict separated").count(), 9);
        assert_eq!(svg.matches("stroke=\"green\"").count(), 9);
        assert!(svg.contains("instance 7 | true label 3 | predicted 3"));
    }

    #[test]
    fn output_is_deterministic() {
        let t = separated_everywhere();
        assert_eq!(render_svg(&t, &ReportSpec::default()), render_svg(&t, &ReportSpec::default()));
        assert_eq!(file_name(&t), "interp_7_3_3.svg");
    }

    #[test]
    fn single_point_is_centered() {
        let p = PlotPoint { instance: 0, x: 5.0, y: 5.0 };
        let scale = CellScale::new(&[&p], [10.0, 20.0], [100.0, 50.0]);
        assert_eq!(scale.map(&p), [60.0, 45.0]);
    }
}
