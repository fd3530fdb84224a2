//! Text-free PNG figures; the matching CSV files carry the numbers.

use std::path::Path;

use anyhow::{anyhow, Result};
use plotters::prelude::*;

const PALETTE: [RGBColor; 4] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
];

fn plot_err<E: std::fmt::Debug>(path: &Path) -> impl FnOnce(E) -> anyhow::Error + '_ {
    move |e| anyhow!("drawing {}: {e:?}", path.display())
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad, hi + pad)
}

/// One polyline per series, colours in series order.
pub fn line_chart(path: &Path, series: &[Vec<(f64, f64)>]) -> Result<()> {
    let root = BitMapBackend::new(path, (640, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err(path))?;
    let (x0, x1) = bounds(series.iter().flatten().map(|p| p.0));
    let (y0, y1) = bounds(series.iter().flatten().map(|p| p.1));
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err(path))?;
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<(f64, f64)> = s.iter().copied().filter(|p| p.1.is_finite()).collect();
        chart
            .draw_series(LineSeries::new(
                pts,
                PALETTE[i % PALETTE.len()].stroke_width(2),
            ))
            .map_err(plot_err(path))?;
    }
    root.present().map_err(plot_err(path))
}

/// Vertical bars of `values` at consecutive integer positions.
pub fn bar_chart(path: &Path, values: &[f64], marks: &[usize]) -> Result<()> {
    let root = BitMapBackend::new(path, (768, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err(path))?;
    let top = values.iter().cloned().fold(0.0, f64::max).max(1e-9) * 1.05;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .build_cartesian_2d(0f64..values.len() as f64, 0f64..top)
        .map_err(plot_err(path))?;
    chart
        .draw_series(values.iter().enumerate().map(|(i, &v)| {
            Rectangle::new([(i as f64, 0.0), (i as f64 + 0.9, v)], PALETTE[0].filled())
        }))
        .map_err(plot_err(path))?;
    chart
        .draw_series(marks.iter().map(|&m| {
            PathElement::new(
                vec![(m as f64 + 0.45, 0.0), (m as f64 + 0.45, top)],
                PALETTE[3].stroke_width(1),
            )
        }))
        .map_err(plot_err(path))?;
    root.present().map_err(plot_err(path))
}

/// Confusion matrix as a grid of cells shaded by their share of each row.
pub fn confusion(path: &Path, matrix: &[[usize; 2]; 2]) -> Result<()> {
    let root = BitMapBackend::new(path, (320, 320)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err(path))?;
    let cells = root.margin(10, 10, 10, 10).split_evenly((2, 2));
    for (idx, cell) in cells.iter().enumerate() {
        let (r, c) = (idx / 2, idx % 2);
        let total = matrix[r].iter().sum::<usize>().max(1) as f64;
        let share = matrix[r][c] as f64 / total;
        let shade = (255.0 * (1.0 - share)) as u8;
        cell.fill(&RGBColor(shade, shade, 255))
            .map_err(plot_err(path))?;
    }
    root.present().map_err(plot_err(path))
}
