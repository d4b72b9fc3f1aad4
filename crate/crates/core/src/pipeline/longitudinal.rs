use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::metrics::{growth_rate_ttest, theil_sen_growth, LongitudinalSeries, SeriesSource, TTestResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectGrowth {
    pub subject_id: String,
    pub slope_algorithm: f64,
    pub slope_expert: f64,
    pub abs_difference: f64,
    pub algorithm: Vec<(f64, f64)>,
    pub expert: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalReport {
    pub config_hash: String,
    /// Which model produced the algorithm series, and its checkpoint hash.
    pub model: String,
    pub checkpoint: String,
    pub subjects: Vec<SubjectGrowth>,
    /// Always "paired": both raters measure the same subjects.
    pub ttest_kind: String,
    /// Test on per-subject slopes; absent with fewer than two subjects.
    pub ttest: Option<TTestResult>,
    pub plots: Vec<String>,
}

/// Per-subject Theil-Sen slopes of both sources, their differences and the
/// paired t-test. With `plot_dir`, writes one volume-vs-week SVG per subject.
pub fn longitudinal_report(
    pred: &[LongitudinalSeries],
    expert: &[LongitudinalSeries],
    plot_dir: Option<&Path>,
) -> Result<LongitudinalReport> {
    let by_id = |s: &[LongitudinalSeries]| -> Result<BTreeMap<String, LongitudinalSeries>> {
        let mut m = BTreeMap::new();
        for x in s {
            if m.insert(x.subject_id.clone(), x.clone()).is_some() {
                return Err(Error::InvalidInput(format!("subject {} listed twice", x.subject_id)));
            }
        }
        Ok(m)
    };
    let (p, e) = (by_id(pred)?, by_id(expert)?);
    if !p.keys().eq(e.keys()) {
        return Err(Error::InvalidInput("algorithm and expert series cover different subjects".into()));
    }
    if !p.values().any(|s| s.points.len() >= 3) || !e.values().any(|s| s.points.len() >= 3) {
        return Err(Error::InvalidInput("at least one subject needs three or more timepoints".into()));
    }
    let mut subjects = Vec::new();
    for (id, ps) in &p {
        let es = &e[id];
        let (sa, se) = (theil_sen_growth(ps)?, theil_sen_growth(es)?);
        subjects.push(SubjectGrowth {
            subject_id: id.clone(),
            slope_algorithm: sa,
            slope_expert: se,
            abs_difference: (sa - se).abs(),
            algorithm: ps.points.clone(),
            expert: es.points.clone(),
        });
    }
    let ttest = if subjects.len() >= 2 {
        let a: Vec<f64> = subjects.iter().map(|s| s.slope_algorithm).collect();
        let x: Vec<f64> = subjects.iter().map(|s| s.slope_expert).collect();
        Some(growth_rate_ttest(&a, &x)?)
    } else {
        None
    };
    let mut plots = Vec::new();
    if let Some(dir) = plot_dir {
        fs::create_dir_all(dir).at(dir)?;
        for s in &subjects {
            let path = dir.join(format!("{}.svg", s.subject_id));
            plot_subject(&path, s)?;
            plots.push(path.file_name().expect("file").to_string_lossy().into_owned());
        }
    }
    Ok(LongitudinalReport {
        config_hash: String::new(),
        model: String::new(),
        checkpoint: String::new(),
        subjects,
        ttest_kind: "paired".into(),
        ttest,
        plots,
    })
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("plot rendering failed: {e}"))
}

fn plot_subject(path: &PathBuf, s: &SubjectGrowth) -> Result<()> {
    let all = s.algorithm.iter().chain(&s.expert);
    let (t_lo, t_hi) = all.clone().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let v_hi = all.fold(0.0f64, |m, p| m.max(p.1)) * 1.15 + 1e-6;
    let root = SVGBackend::new(path, (480, 320)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{}: tumor volume", s.subject_id), ("sans-serif", 16))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(50)
        .build_cartesian_2d(t_lo - 0.25..t_hi + 0.25, 0.0..v_hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("week")
        .y_desc("volume (cc)")
        .draw()
        .map_err(plot_err)?;
    for (pts, color, label) in [(&s.expert, BLUE, "expert"), (&s.algorithm, RED, "algorithm")] {
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
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
    Ok(())
}

/// Series of `(week, volume)` for one subject from a single source.
pub fn series_from_volumes(
    subject_id: &str,
    source: SeriesSource,
    mut points: Vec<(f64, f64)>,
) -> Result<LongitudinalSeries> {
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    LongitudinalSeries::new(subject_id, source, points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(id: &str, source: SeriesSource, slope: f64) -> LongitudinalSeries {
        LongitudinalSeries::new(id, source, (0..4).map(|w| (w as f64, 10.0 + slope * w as f64)).collect()).unwrap()
    }

    #[test]
    fn identical_inputs_give_zero_difference() {
        let e: Vec<_> = [2.0, 4.0, 8.0]
            .iter()
            .enumerate()
            .map(|(i, &s)| linear(&format!("S{i}"), SeriesSource::Expert, s))
            .collect();
        let r = longitudinal_report(&e, &e, None).unwrap();
        assert!(r.subjects.iter().all(|s| s.abs_difference == 0.0));
        let t = r.ttest.unwrap();
        assert_eq!((t.t, t.p), (0.0, 1.0));
    }

    #[test]
    fn plots_one_file_per_subject() {
        let dir = tempfile::tempdir().unwrap();
        let e = vec![linear("S0", SeriesSource::Expert, 2.0), linear("S1", SeriesSource::Expert, 4.0)];
        let a = vec![linear("S0", SeriesSource::Algorithm, 2.5), linear("S1", SeriesSource::Algorithm, 3.0)];
        let r = longitudinal_report(&a, &e, Some(dir.path())).unwrap();
        assert_eq!(r.plots.len(), 2);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
    }

    #[test]
    fn mismatched_subjects_rejected() {
        let e = vec![linear("S0", SeriesSource::Expert, 2.0)];
        let a = vec![linear("S1", SeriesSource::Algorithm, 2.0)];
        assert!(longitudinal_report(&a, &e, None).is_err());
    }
}
