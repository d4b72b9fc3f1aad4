use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::evaluate::{EvalReport, Summary};
use crate::error::{Error, IoContext, Result};

pub const GRID_METRICS: [&str; 3] = ["dsc", "hd95_mm", "vr"];

/// One `mean ± sd` entry of the regime × architecture table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub regime: String,
    pub architecture: String,
    pub metric: String,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportGrid {
    pub config_hash: String,
    pub regimes: Vec<String>,
    pub architectures: Vec<String>,
    pub cells: Vec<GridCell>,
    /// Checkpoint hash per `architecture/regime`.
    pub checkpoints: Vec<(String, String)>,
}

impl ReportGrid {
    /// Cells for every listed regime and architecture, in that order; models
    /// missing from the evaluation yield empty cells.
    pub fn from_eval(eval: &EvalReport, regimes: &[String], architectures: &[String]) -> Self {
        let mut cells = Vec::new();
        let mut checkpoints = Vec::new();
        for regime in regimes {
            for arch in architectures {
                let m = eval.models.iter().find(|m| &m.regime == regime && &m.architecture == arch);
                if let Some(m) = m {
                    checkpoints.push((format!("{arch}/{regime}"), m.checkpoint.clone()));
                }
                for metric in GRID_METRICS {
                    let s: Option<Summary> = m.and_then(|m| match metric {
                        "dsc" => Some(m.dsc),
                        "hd95_mm" => m.hd95_mm,
                        _ => Some(m.vr),
                    });
                    cells.push(GridCell {
                        regime: regime.clone(),
                        architecture: arch.clone(),
                        metric: metric.to_string(),
                        mean: s.map(|s| s.mean),
                        sd: s.map(|s| s.sd),
                        n: s.map_or(0, |s| s.n),
                    });
                }
            }
        }
        Self {
            config_hash: eval.config_hash.clone(),
            regimes: regimes.to_vec(),
            architectures: architectures.to_vec(),
            cells,
            checkpoints,
        }
    }

    pub fn cell(&self, regime: &str, architecture: &str, metric: &str) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.regime == regime && c.architecture == architecture && c.metric == metric)
    }

    /// Plain-text table in `mean ± sd` form.
    pub fn to_text(&self) -> String {
        let mut out = format!("config {}\n", self.config_hash);
        for metric in GRID_METRICS {
            out.push_str(&format!("\n{metric}\n{:<18}", "regime"));
            for a in &self.architectures {
                out.push_str(&format!("{a:>18}"));
            }
            out.push('\n');
            for r in &self.regimes {
                out.push_str(&format!("{r:<18}"));
                for a in &self.architectures {
                    let txt = match self.cell(r, a, metric) {
                        Some(GridCell {
                            mean: Some(m),
                            sd: Some(s),
                            ..
                        }) => format!("{m:.3} ± {s:.3}"),
                        _ => "n/a".into(),
                    };
                    out.push_str(&format!("{txt:>18}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

pub fn write_grid_csv(path: &Path, cells: &[GridCell]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for c in cells {
        w.serialize(c)?;
    }
    w.flush().at(path)
}

pub fn read_grid_csv(path: &Path) -> Result<Vec<GridCell>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| Ok(row?)).collect()
}

/// Writes `grid.csv`, `grid.json`, `grid.txt` and one bar chart per metric
/// into `dir`; returns the written paths.
pub fn emit_report(grid: &ReportGrid, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).at(dir)?;
    let mut written = Vec::new();
    let csv_path = dir.join("grid.csv");
    write_grid_csv(&csv_path, &grid.cells)?;
    written.push(csv_path);
    let json = dir.join("grid.json");
    fs::write(&json, serde_json::to_string_pretty(grid)? + "\n").at(&json)?;
    written.push(json);
    let txt = dir.join("grid.txt");
    fs::write(&txt, grid.to_text()).at(&txt)?;
    written.push(txt);
    for metric in GRID_METRICS {
        let p = dir.join(format!("{metric}.svg"));
        bar_chart(grid, metric, &p)?;
        written.push(p);
    }
    Ok(written)
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("plot rendering failed: {e}"))
}

const PALETTE: [RGBColor; 4] = [
    RGBColor(0x4c, 0x72, 0xb0),
    RGBColor(0xdd, 0x84, 0x52),
    RGBColor(0x55, 0xa8, 0x68),
    RGBColor(0xc4, 0x4e, 0x52),
];

// Grouped bars: one group per architecture, one bar per regime, sd whiskers.
fn bar_chart(grid: &ReportGrid, metric: &str, path: &Path) -> Result<()> {
    let n_reg = grid.regimes.len().max(1);
    let n_arch = grid.architectures.len().max(1);
    let top = grid
        .cells
        .iter()
        .filter(|c| c.metric == metric)
        .filter_map(|c| Some(c.mean? + c.sd?))
        .fold(0.0f64, f64::max)
        .max(if metric == "dsc" { 1.0 } else { 1e-6 })
        * 1.1;
    let root = SVGBackend::new(path, (160 * n_arch as u32 + 220, 360)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(metric, ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..n_arch as f64, 0.0..top)
        .map_err(plot_err)?;
    let archs = grid.architectures.clone();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n_arch * 2 + 1)
        .x_label_formatter(&|x| {
            let i = x.floor() as usize;
            if (x - i as f64 - 0.5).abs() < 1e-6 {
                archs.get(i).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .draw()
        .map_err(plot_err)?;
    let width = 0.8 / n_reg as f64;
    for (ri, regime) in grid.regimes.iter().enumerate() {
        let color = PALETTE[ri % PALETTE.len()];
        let bars: Vec<(f64, f64, f64)> = grid
            .architectures
            .iter()
            .enumerate()
            .filter_map(|(ai, a)| {
                let c = grid.cell(regime, a, metric)?;
                Some((ai as f64 + 0.1 + width * ri as f64, c.mean?, c.sd.unwrap_or(0.0)))
            })
            .collect();
        chart
            .draw_series(bars.iter().map(|&(x, m, _)| Rectangle::new([(x, 0.0), (x + width * 0.9, m)], color.filled())))
            .map_err(plot_err)?
            .label(regime.as_str())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
        chart
            .draw_series(bars.iter().map(|&(x, m, s)| {
                let xc = x + width * 0.45;
                PathElement::new(vec![(xc, (m - s).max(0.0)), (xc, m + s)], BLACK)
            }))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::UpperRight)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::evaluate::SampleMetrics;

    fn eval() -> EvalReport {
        let mut rows = Vec::new();
        for (i, (a, r)) in [("unet", "real"), ("unet", "real+pmr"), ("resfcn", "real")].iter().enumerate() {
            for k in 0..3 {
                rows.push(SampleMetrics {
                    architecture: a.to_string(),
                    regime: r.to_string(),
                    sample_id: format!("s{k}"),
                    subject_id: format!("S{k}"),
                    week: Some(0),
                    dsc: 0.5 + 0.1 * i as f64 + 0.01 * k as f64,
                    hd95_mm: if k == 0 { None } else { Some(3.0 + k as f64) },
                    vr: 0.1,
                    v_pred_cc: 1.0,
                    v_gt_cc: 1.1,
                    checkpoint: "ck".into(),
                });
            }
        }
        EvalReport::new("cfg", rows, None).unwrap()
    }

    #[test]
    fn grid_shape_and_files() {
        let regimes = vec!["real".to_string(), "real+pmr".to_string()];
        let archs = vec!["unet".to_string(), "resfcn".to_string()];
        let g = ReportGrid::from_eval(&eval(), &regimes, &archs);
        assert_eq!(g.cells.len(), 2 * 2 * 3);
        assert_eq!(g.cell("real+pmr", "resfcn", "dsc").unwrap().mean, None);
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&g, dir.path()).unwrap();
        assert!(files.iter().all(|p| p.is_file()));
        assert_eq!(read_grid_csv(&dir.path().join("grid.csv")).unwrap(), g.cells);
        assert!(g.to_text().contains("±"));
    }
}
