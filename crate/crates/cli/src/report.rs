//! CSV tables and SVG figures from a `report.json`.

use std::path::Path;

use crowdspeak::evaluation::{BinCurve, Method, MethodRow, Report, SweepPoint};
use plotters::prelude::*;
use serde::Serialize;

use crate::artifacts::write_atomic;
use crate::error::{CliError, Result};

#[derive(Debug, Serialize)]
struct TableRow<'a> {
    table: &'a str,
    method: &'a str,
    mean_auc: Option<f64>,
    std_auc: Option<f64>,
    n_examples: usize,
    trajectories_mean: Option<f64>,
    trajectories_std: Option<f64>,
    fold_auc: String,
}

#[derive(Debug, Serialize)]
struct CurveRow<'a> {
    method: &'a str,
    variable: &'a str,
    bin: usize,
    lo: f64,
    hi: f64,
    n: usize,
    n_positive: usize,
    median: f64,
    auc: Option<f64>,
    note: Option<&'a str>,
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| CliError::Validation(e.to_string()))?;
    }
    w.into_inner()
        .map_err(|e| CliError::Validation(e.to_string()))
}

/// Which result table a method row belongs to: trajectory selection,
/// body-part ablation, or modality comparison.
pub fn tables_of(m: Method, fusion_video: Option<Method>) -> Vec<&'static str> {
    let mut t = Vec::new();
    if m.is_video() {
        t.push("selection");
    }
    if matches!(m, Method::FvUpperBody | Method::FvHandsAndHead) {
        t.push("body_parts");
    }
    if matches!(m, Method::Cnn | Method::Multimodal) || Some(m) == fusion_video {
        t.push("modalities");
    }
    t
}

pub fn tables_csv(report: &Report, fusion_video: Option<Method>) -> Result<Vec<u8>> {
    let rows = report.methods.iter().flat_map(|r| {
        tables_of(r.method, fusion_video)
            .into_iter()
            .map(move |table| TableRow {
                table,
                method: r.method.name(),
                mean_auc: r.mean_auc,
                std_auc: r.std_auc,
                n_examples: r.n_examples,
                trajectories_mean: r.trajectories_mean,
                trajectories_std: r.trajectories_std,
                fold_auc: r
                    .fold_auc
                    .iter()
                    .map(|a| a.map_or(String::new(), |v| format!("{v:.6}")))
                    .collect::<Vec<_>>()
                    .join(";"),
            })
    });
    csv_bytes(rows)
}

pub fn curves_csv(curves: &[&BinCurve]) -> Result<Vec<u8>> {
    let rows = curves.iter().flat_map(|c| {
        c.bins.iter().enumerate().map(move |(i, b)| CurveRow {
            method: &c.method,
            variable: &c.variable,
            bin: i,
            lo: b.lo,
            hi: b.hi,
            n: b.n,
            n_positive: b.n_positive,
            median: b.median,
            auc: b.auc,
            note: b.note.as_deref(),
        })
    });
    csv_bytes(rows)
}

pub fn sweep_csv(points: &[SweepPoint]) -> Result<Vec<u8>> {
    csv_bytes(
        points
            .iter()
            .map(|p| (p.components, p.method.name(), p.mean_auc, p.std_auc)),
    )
    .map(|b| [b"components,method,mean_auc,std_auc\n".as_slice(), &b].concat())
}

fn plot_err<E: std::error::Error + Send + Sync>(e: DrawingAreaErrorKind<E>) -> CliError {
    CliError::Validation(format!("plot failed: {e}"))
}

fn save_svg(path: &Path, svg: String) -> Result<()> {
    write_atomic(path, svg.as_bytes())
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

/// Mean AUC per method with ±1 sd whiskers.
pub fn auc_bars(path: &Path, title: &str, rows: &[&MethodRow]) -> Result<()> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (720, 420)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let lo = rows
            .iter()
            .filter_map(|r| r.mean_auc.map(|m| m - r.std_auc.unwrap_or(0.0)))
            .fold(0.5f64, f64::min)
            .max(0.0);
        let n = rows.len().max(1) as u32;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(50)
            .build_cartesian_2d((0u32..n).into_segmented(), (lo - 0.02)..1.0f64)
            .map_err(plot_err)?;
        let names: Vec<&str> = rows.iter().map(|r| r.method.name()).collect();
        chart
            .configure_mesh()
            .disable_x_mesh()
            .y_desc("AUC")
            .x_label_formatter(&|v| match v {
                SegmentValue::CenterOf(i) => names
                    .get(*i as usize)
                    .map_or(String::new(), |s| s.to_string()),
                _ => String::new(),
            })
            .draw()
            .map_err(plot_err)?;
        for (i, r) in rows.iter().enumerate() {
            let Some(m) = r.mean_auc else { continue };
            let i = i as u32;
            let color = PALETTE[i as usize % PALETTE.len()];
            chart
                .draw_series(std::iter::once(Rectangle::new(
                    [
                        (SegmentValue::Exact(i), lo - 0.02),
                        (SegmentValue::Exact(i + 1), m),
                    ],
                    color.mix(0.8).filled(),
                )))
                .map_err(plot_err)?;
            if let Some(s) = r.std_auc {
                chart
                    .draw_series(std::iter::once(PathElement::new(
                        vec![
                            (SegmentValue::CenterOf(i), m - s),
                            (SegmentValue::CenterOf(i), m + s),
                        ],
                        BLACK.stroke_width(2),
                    )))
                    .map_err(plot_err)?;
            }
        }
        root.present().map_err(plot_err)?;
    }
    save_svg(path, svg)
}

/// AUC per quantile bin against the bin median, one line per method.
pub fn curve_plot(path: &Path, title: &str, x_desc: &str, curves: &[&BinCurve]) -> Result<()> {
    let pts: Vec<Vec<(f64, f64)>> = curves
        .iter()
        .map(|c| {
            c.bins
                .iter()
                .filter_map(|b| b.auc.map(|a| (b.median, a)))
                .collect()
        })
        .collect();
    line_plot(
        path,
        title,
        x_desc,
        &curves.iter().map(|c| c.method.clone()).collect::<Vec<_>>(),
        &pts,
    )
}

/// Mean AUC against GMM size (log2 axis), one line per method.
pub fn sweep_plot(path: &Path, points: &[SweepPoint]) -> Result<()> {
    let mut methods: Vec<Method> = points.iter().map(|p| p.method).collect();
    methods.sort();
    methods.dedup();
    let pts: Vec<Vec<(f64, f64)>> = methods
        .iter()
        .map(|&m| {
            points
                .iter()
                .filter(|p| p.method == m)
                .filter_map(|p| p.mean_auc.map(|a| ((p.components as f64).log2(), a)))
                .collect()
        })
        .collect();
    let names: Vec<String> = methods.iter().map(|m| m.name().to_string()).collect();
    line_plot(path, "AUC vs GMM size", "log2(components)", &names, &pts)
}

fn line_plot(
    path: &Path,
    title: &str,
    x_desc: &str,
    names: &[String],
    series: &[Vec<(f64, f64)>],
) -> Result<()> {
    let all: Vec<&(f64, f64)> = series.iter().flatten().collect();
    let (mut x0, mut x1) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| {
        (a.0.min(p.0), a.1.max(p.0))
    });
    let (mut y0, mut y1) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| {
        (a.0.min(p.1), a.1.max(p.1))
    });
    if all.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.5, 1.0);
    }
    if x1 - x0 < 1e-9 {
        (x0, x1) = (x0 - 0.5, x1 + 0.5);
    }
    let pad = ((y1 - y0) * 0.1).max(0.02);
    (y0, y1) = ((y0 - pad).max(0.0), (y1 + pad).min(1.0));
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (720, 420)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(50)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc(x_desc)
            .y_desc("AUC")
            .draw()
            .map_err(plot_err)?;
        for (i, (name, pts)) in names.iter().zip(series).enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(name.as_str())
                .legend(move |(x, y)| {
                    PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2))
                });
            chart
                .draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))
                .map_err(plot_err)?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    save_svg(path, svg)
}

/// Every table, curve CSV and figure for one report under `dir`.
pub fn write_all(dir: &Path, report: &Report, fusion_video: Option<Method>) -> Result<Vec<String>> {
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<()> {
        write_atomic(&dir.join(name), &bytes)?;
        written.push(name.to_string());
        Ok(())
    };
    put("tables.csv", tables_csv(report, fusion_video)?)?;
    let curves: Vec<&BinCurve> = report
        .contamination_curves
        .iter()
        .chain(&report.trajectory_curves)
        .collect();
    put("curves.csv", curves_csv(&curves)?)?;
    if !report.gmm_sweep.is_empty() {
        put("gmm_sweep.csv", sweep_csv(&report.gmm_sweep)?)?;
    }
    let plots = dir.join("plots");
    for (table, title) in [
        ("selection", "Trajectory selection"),
        ("body_parts", "Body-part filters"),
        ("modalities", "Modalities"),
    ] {
        let rows: Vec<&MethodRow> = report
            .methods
            .iter()
            .filter(|r| tables_of(r.method, fusion_video).contains(&table))
            .collect();
        if !rows.is_empty() {
            auc_bars(&plots.join(format!("{table}.svg")), title, &rows)?;
            written.push(format!("plots/{table}.svg"));
        }
    }
    let video: Vec<&BinCurve> = report
        .contamination_curves
        .iter()
        .filter(|c| c.bins.iter().any(|b| b.auc.is_some()))
        .collect();
    curve_plot(
        &plots.join("contamination.svg"),
        "AUC vs cross-contamination",
        "contamination (bin median)",
        &video,
    )?;
    written.push("plots/contamination.svg".into());
    let traj: Vec<&BinCurve> = report.trajectory_curves.iter().collect();
    curve_plot(
        &plots.join("trajectories.svg"),
        "AUC vs trajectories per example",
        "trajectories (bin median)",
        &traj,
    )?;
    written.push("plots/trajectories.svg".into());
    if !report.gmm_sweep.is_empty() {
        sweep_plot(&plots.join("gmm_sweep.svg"), &report.gmm_sweep)?;
        written.push("plots/gmm_sweep.svg".into());
    }
    Ok(written)
}
