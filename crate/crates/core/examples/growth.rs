//! Growth-rate comparison of two raters on synthetic weekly volumes, with
//! one SVG plot per subject.

use xmodseg::metrics::SeriesSource;
use xmodseg::pipeline::{longitudinal_report, series_from_volumes};

fn main() -> xmodseg::Result<()> {
    let dir = std::env::temp_dir().join("xmodseg-growth");
    let mut expert = Vec::new();
    let mut algorithm = Vec::new();
    for (i, rate) in [1.5, 3.0, 0.5, 2.2].into_iter().enumerate() {
        let id = format!("P{:02}", i + 1);
        let weeks: Vec<f64> = (0..6).map(f64::from).collect();
        let e = weeks.iter().map(|&w| (w, 20.0 + rate * w)).collect();
        let a = weeks.iter().map(|&w| (w, 19.0 + rate * 1.05 * w + 0.3 * (w * 1.7).sin())).collect();
        expert.push(series_from_volumes(&id, SeriesSource::Expert, e)?);
        algorithm.push(series_from_volumes(&id, SeriesSource::Algorithm, a)?);
    }
    let rep = longitudinal_report(&algorithm, &expert, Some(&dir))?;
    for s in &rep.subjects {
        println!("{}: algorithm {:.3}, expert {:.3} cc/week", s.subject_id, s.slope_algorithm, s.slope_expert);
    }
    if let Some(t) = rep.ttest {
        println!("paired t = {:.3}, p = {:.3} over {} subjects", t.t, t.p, t.n);
    }
    println!("plots in {}", dir.display());
    Ok(())
}
