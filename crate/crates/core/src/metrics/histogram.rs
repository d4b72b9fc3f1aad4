use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::Sample;

pub const DEFAULT_BINS: usize = 1000;
pub const DEFAULT_KL_EPS: f64 = 1e-10;

/// Fixed-width histogram over `[lo, hi]`; out-of-range values land in the end bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityHistogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl IntensityHistogram {
    pub fn new(n_bins: usize) -> Result<Self> {
        Self::with_range(n_bins, -1.0, 1.0)
    }

    pub fn with_range(n_bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if n_bins == 0 || !(hi > lo) {
            return Err(Error::InvalidInput(format!("bad binning: {n_bins} bins over [{lo}, {hi}]")));
        }
        Ok(Self {
            lo,
            hi,
            counts: vec![0; n_bins],
        })
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_of(&self, v: f64) -> usize {
        let n = self.counts.len();
        let t = (v - self.lo) / (self.hi - self.lo) * n as f64;
        if t.is_nan() {
            return 0;
        }
        (t.floor().max(0.0) as usize).min(n - 1)
    }

    pub fn add(&mut self, v: f64) {
        let b = self.bin_of(v);
        self.counts[b] += 1;
    }

    pub fn extend(&mut self, values: impl IntoIterator<Item = f64>) {
        for v in values {
            self.add(v);
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn same_binning(&self, other: &Self) -> bool {
        self.counts.len() == other.counts.len() && self.lo == other.lo && self.hi == other.hi
    }

    /// Probabilities after adding `eps` to every bin and renormalizing.
    pub fn probabilities(&self, eps: f64) -> Vec<f64> {
        let total = self.total() as f64;
        let raw: Vec<f64> = self
            .counts
            .iter()
            .map(|&c| if total > 0.0 { c as f64 / total } else { 0.0 } + eps)
            .collect();
        let z: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / z).collect()
    }
}

/// `sum_i P_i ln(P_i / Q_i)` over eps-smoothed probabilities.
pub fn kl_divergence(p: &IntensityHistogram, q: &IntensityHistogram, eps: f64) -> Result<f64> {
    if !p.same_binning(q) {
        return Err(Error::InvalidInput("histograms use different binning".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
    }
    let pp = p.probabilities(eps);
    let qq = q.probabilities(eps);
    let kl: f64 = pp.iter().zip(&qq).map(|(&a, &b)| a * (a / b).ln()).sum();
    Ok(kl.max(0.0))
}

/// Pooled histogram of image intensities inside the tumor masks.
pub fn tumor_histogram<'a>(samples: impl IntoIterator<Item = &'a Sample>, n_bins: usize) -> Result<IntensityHistogram> {
    let mut hist = IntensityHistogram::new(n_bins)?;
    for s in samples {
        let mask = s
            .mask
            .as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("sample `{}` has no mask", s.id)))?;
        for (&v, &m) in s.image.iter().zip(mask.iter()) {
            if m != 0 {
                hist.add(v as f64);
            }
        }
    }
    if hist.total() == 0 {
        return Err(Error::InvalidInput("no masked pixels to histogram".into()));
    }
    Ok(hist)
}
