//! Static SVG of the λ sweep: DSC and HD95 against the setting.

use std::path::Path;

use plotters::prelude::*;
use wsseg::{Error, Result};

use crate::pipeline::SweepRow;
use wsseg::config::LambdaMode;

fn label(r: &SweepRow) -> String {
    match r.mode {
        LambdaMode::Constant => format!("{}", r.lambda),
        LambdaMode::GaussianWarmup => format!("warmup({})", r.lambda),
    }
}

fn draw_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Format(format!("plot: {e}"))
}

/// Two panels side by side, one point per sweep row in row order, with
/// mean ± std error bars.
pub fn sweep_plot(path: &Path, rows: &[SweepRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let root = SVGBackend::new(path, (960, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let panels = root.split_evenly((1, 2));
    let names: Vec<String> = rows.iter().map(label).collect();
    let n = rows.len();
    type Getter = fn(&SweepRow) -> (f64, f64);
    let series: [(&str, Getter, RGBColor); 2] = [
        ("DSC (%)", |r| (r.summary.dsc_mean, r.summary.dsc_std), BLUE),
        ("HD95 (px)", |r| (r.summary.hd95_mean, r.summary.hd95_std), RED),
    ];
    for (area, (title, get, color)) in panels.iter().zip(series) {
        let pts: Vec<(f64, f64)> = rows.iter().map(get).collect();
        let lo = pts.iter().map(|(m, s)| m - s).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|(m, s)| m + s).fold(f64::NEG_INFINITY, f64::max);
        let pad = ((hi - lo) * 0.1).max(1.0);
        let (lo, hi) = if lo.is_finite() { (lo - pad, hi + pad) } else { (0.0, 1.0) };
        let mut chart = ChartBuilder::on(area)
            .caption(format!("{title} vs lambda"), ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(48)
            .build_cartesian_2d(-0.5f64..(n as f64 - 0.5), lo..hi)
            .map_err(draw_err)?;
        let names = names.clone();
        chart
            .configure_mesh()
            .x_labels(n)
            .x_label_formatter(&move |x| {
                let i = x.round();
                if (x - i).abs() < 1e-6 && i >= 0.0 {
                    names.get(i as usize).cloned().unwrap_or_default()
                } else {
                    String::new()
                }
            })
            .y_desc(title)
            .draw()
            .map_err(draw_err)?;
        chart
            .draw_series(LineSeries::new(
                pts.iter().enumerate().map(|(i, p)| (i as f64, p.0)),
                color,
            ))
            .map_err(draw_err)?;
        chart
            .draw_series(pts.iter().enumerate().map(|(i, &(m, s))| {
                ErrorBar::new_vertical(i as f64, m - s, m, m + s, color.filled(), 8)
            }))
            .map_err(draw_err)?;
        chart
            .draw_series(
                pts.iter()
                    .enumerate()
                    .map(|(i, p)| Circle::new((i as f64, p.0), 4, color.filled())),
            )
            .map_err(draw_err)?;
    }
    root.present().map_err(draw_err)
}
