use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesSource {
    Algorithm,
    Expert,
}

/// Tumor volume (cc) against scan time (weeks) for one subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalSeries {
    pub subject_id: String,
    pub source: SeriesSource,
    pub points: Vec<(f64, f64)>,
}

impl LongitudinalSeries {
    pub fn new(subject_id: impl Into<String>, source: SeriesSource, points: Vec<(f64, f64)>) -> Result<Self> {
        let s = Self {
            subject_id: subject_id.into(),
            source,
            points,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "subject {}: at least two timepoints are required",
                self.subject_id
            )));
        }
        if self.points.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::InvalidInput(format!(
                "subject {}: times must be strictly increasing (duplicate or unordered weeks)",
                self.subject_id
            )));
        }
        Ok(())
    }
}

/// Median of all pairwise slopes `(v_k - v_i) / (t_k - t_i)`, `i < k`.
pub fn theil_sen_growth(series: &LongitudinalSeries) -> Result<f64> {
    series.validate()?;
    let pts = &series.points;
    let mut slopes = Vec::with_capacity(pts.len() * (pts.len() - 1) / 2);
    for (i, &(ti, vi)) in pts.iter().enumerate() {
        for &(tk, vk) in &pts[i + 1..] {
            slopes.push((vk - vi) / (tk - ti));
        }
    }
    slopes.sort_by(f64::total_cmp);
    let n = slopes.len();
    Ok(if n % 2 == 1 {
        slopes[n / 2]
    } else {
        0.5 * (slopes[n / 2 - 1] + slopes[n / 2])
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub p: f64,
    pub df: f64,
    pub n: usize,
    pub paired: bool,
}

/// Paired two-sided Student's t-test on per-subject slope differences.
pub fn growth_rate_ttest(slopes_alg: &[f64], slopes_expert: &[f64]) -> Result<TTestResult> {
    if slopes_alg.len() != slopes_expert.len() {
        return Err(Error::InvalidInput(format!(
            "paired test needs equal lengths ({} vs {})",
            slopes_alg.len(),
            slopes_expert.len()
        )));
    }
    let n = slopes_alg.len();
    if n < 2 {
        return Err(Error::InvalidInput("at least two subjects are required".into()));
    }
    let diffs: Vec<f64> = slopes_alg.iter().zip(slopes_expert).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = (n - 1) as f64;
    let (t, p) = if var == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = mean / (var / n as f64).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidInput(e.to_string()))?;
        // two-sided tail via the survival function of |t|
        (t, (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0))
    };
    Ok(TTestResult {
        t,
        p,
        df,
        n,
        paired: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(points: &[(f64, f64)]) -> LongitudinalSeries {
        LongitudinalSeries::new("s", SeriesSource::Expert, points.to_vec()).unwrap()
    }

    #[test]
    fn collinear_and_two_point() {
        assert_eq!(theil_sen_growth(&series(&[(1.0, 10.0), (2.0, 20.0), (3.0, 30.0)])).unwrap(), 10.0);
        assert_eq!(theil_sen_growth(&series(&[(1.0, 10.0), (3.0, 20.0)])).unwrap(), 5.0);
    }

    #[test]
    fn even_pair_count_uses_middle_mean() {
        // slopes: 10, 5.5, 10, 1, 10, 19 -> sorted 1, 5.5, 10, 10, 10, 19
        let s = series(&[(1.0, 10.0), (2.0, 20.0), (3.0, 21.0), (4.0, 40.0)]);
        assert_eq!(theil_sen_growth(&s).unwrap(), 10.0);
    }

    #[test]
    fn invalid_series_rejected() {
        assert!(LongitudinalSeries::new("s", SeriesSource::Expert, vec![(1.0, 1.0)]).is_err());
        assert!(LongitudinalSeries::new("s", SeriesSource::Expert, vec![(1.0, 1.0), (1.0, 2.0)]).is_err());
    }

    #[test]
    fn ttest_degenerate_cases() {
        let r = growth_rate_ttest(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
        let r = growth_rate_ttest(&[2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(r.p < 1e-12 && r.t.is_infinite());
        assert!(growth_rate_ttest(&[1.0], &[2.0]).is_err());
        assert!(growth_rate_ttest(&[1.0, 2.0], &[2.0]).is_err());
    }
}
