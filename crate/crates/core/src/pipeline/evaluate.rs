use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::metrics::{dsc, hd95, kl_divergence, mask_volume_cc, tumor_histogram, volume_ratio};
use crate::phantom::{read_mask, Mask, Sample, Spacing};

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl Summary {
    /// `None` for an empty slice; `sd` is 0 for a single value.
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sd, n })
    }
}

/// Metrics of one predicted mask against its reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub architecture: String,
    pub regime: String,
    pub sample_id: String,
    pub subject_id: String,
    pub week: Option<u32>,
    pub dsc: f64,
    /// Empty when either mask is empty (distance undefined).
    pub hd95_mm: Option<f64>,
    pub vr: f64,
    pub v_pred_cc: f64,
    pub v_gt_cc: f64,
    pub checkpoint: String,
}

impl SampleMetrics {
    pub fn compute(pred: &Mask, gt: &Mask, spacing: Spacing, thickness_mm: f64) -> Result<Self> {
        let hd = match hd95(pred, gt, spacing) {
            Ok(d) => Some(d),
            Err(Error::UndefinedDistance(_)) => None,
            Err(e) => return Err(e),
        };
        let v_pred = mask_volume_cc(pred, spacing, thickness_mm);
        let v_gt = mask_volume_cc(gt, spacing, thickness_mm);
        Ok(Self {
            architecture: String::new(),
            regime: String::new(),
            sample_id: String::new(),
            subject_id: String::new(),
            week: None,
            dsc: dsc(pred, gt)?,
            hd95_mm: hd,
            vr: volume_ratio(v_pred, v_gt)?,
            v_pred_cc: v_pred,
            v_gt_cc: v_gt,
            checkpoint: String::new(),
        })
    }
}

/// Aggregates of one (architecture, regime) model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub architecture: String,
    pub regime: String,
    pub checkpoint: String,
    pub dsc: Summary,
    /// Over samples where the distance is defined.
    pub hd95_mm: Option<Summary>,
    pub hd95_undefined: usize,
    /// Per-scan maximum over slices, then averaged.
    pub hd95_volume_max_mm: Option<Summary>,
    pub vr: Summary,
}

pub fn summarize(rows: &[SampleMetrics]) -> Result<Vec<ModelSummary>> {
    let mut groups: BTreeMap<(String, String), Vec<&SampleMetrics>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.architecture.clone(), r.regime.clone())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((architecture, regime), rs)| {
            let dscs: Vec<f64> = rs.iter().map(|r| r.dsc).collect();
            let hds: Vec<f64> = rs.iter().filter_map(|r| r.hd95_mm).collect();
            let vrs: Vec<f64> = rs.iter().map(|r| r.vr).collect();
            let mut per_scan: BTreeMap<(String, Option<u32>), f64> = BTreeMap::new();
            for r in &rs {
                if let Some(h) = r.hd95_mm {
                    let e = per_scan.entry((r.subject_id.clone(), r.week)).or_insert(h);
                    *e = e.max(h);
                }
            }
            let vol: Vec<f64> = per_scan.into_values().collect();
            Ok(ModelSummary {
                architecture,
                regime,
                checkpoint: rs[0].checkpoint.clone(),
                dsc: Summary::of(&dscs).expect("group is nonempty"),
                hd95_mm: Summary::of(&hds),
                hd95_undefined: rs.len() - hds.len(),
                hd95_volume_max_mm: Summary::of(&vol),
                vr: Summary::of(&vrs).expect("group is nonempty"),
            })
        })
        .collect()
}

/// Tumor-intensity KL divergences of candidate corpora against real domain B.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlSummary {
    pub n_bins: usize,
    pub eps: f64,
    /// KL(candidate || real B), keyed by candidate name.
    pub kl: BTreeMap<String, f64>,
    /// Mean tumor intensity of each corpus (normalized units).
    pub tumor_mean: BTreeMap<String, f64>,
    pub tumor_sd: BTreeMap<String, f64>,
}

fn tumor_pixels(samples: &[Sample]) -> Vec<f64> {
    samples
        .iter()
        .flat_map(|s| {
            let m = s.mask.as_ref();
            s.image
                .iter()
                .zip(m.into_iter().flat_map(|m| m.iter()))
                .filter(|(_, &k)| k != 0)
                .map(|(&v, _)| v as f64)
        })
        .collect()
}

pub fn kl_summary(reference: &[Sample], candidates: &[(&str, &[Sample])], n_bins: usize, eps: f64) -> Result<KlSummary> {
    let q = tumor_histogram(reference, n_bins)?;
    let mut out = KlSummary {
        n_bins,
        eps,
        kl: BTreeMap::new(),
        tumor_mean: BTreeMap::new(),
        tumor_sd: BTreeMap::new(),
    };
    let mut record = |name: &str, samples: &[Sample]| {
        if let Some(s) = Summary::of(&tumor_pixels(samples)) {
            out.tumor_mean.insert(name.to_string(), s.mean);
            out.tumor_sd.insert(name.to_string(), s.sd);
        }
    };
    record("real_b", reference);
    for (name, samples) in candidates {
        record(name, samples);
    }
    for (name, samples) in candidates {
        let p = tumor_histogram(*samples, n_bins)?;
        out.kl.insert(name.to_string(), kl_divergence(&p, &q, eps)?);
    }
    Ok(out)
}

impl KlSummary {
    /// Whether the candidate's tumor mean lies within two pooled standard
    /// deviations of the real domain-B tumor mean.
    pub fn mean_within_two_pooled_sd(&self, candidate: &str) -> Option<bool> {
        let (m, s) = (self.tumor_mean.get(candidate)?, self.tumor_sd.get(candidate)?);
        let (mr, sr) = (self.tumor_mean.get("real_b")?, self.tumor_sd.get("real_b")?);
        let pooled = ((s * s + sr * sr) / 2.0).sqrt();
        Some((m - mr).abs() <= 2.0 * pooled)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub models: Vec<ModelSummary>,
    pub kl: Option<KlSummary>,
    pub samples: Vec<SampleMetrics>,
}

impl EvalReport {
    pub fn new(config_hash: &str, samples: Vec<SampleMetrics>, kl: Option<KlSummary>) -> Result<Self> {
        Ok(Self {
            config_hash: config_hash.to_string(),
            models: summarize(&samples)?,
            kl,
            samples,
        })
    }

    /// `report.json` plus a per-sample CSV mirror next to it.
    pub fn write(&self, json_path: &Path) -> Result<()> {
        if let Some(dir) = json_path.parent() {
            fs::create_dir_all(dir).at(dir)?;
        }
        fs::write(json_path, serde_json::to_string_pretty(self)? + "\n").at(json_path)?;
        write_samples_csv(&json_path.with_extension("csv"), &self.samples)
    }

    pub fn read(json_path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(json_path).at(json_path)?)?)
    }
}

pub fn write_samples_csv(path: &Path, rows: &[SampleMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().at(path)
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<SampleMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| Ok(row?)).collect()
}

/// Spacing sidecar for evaluating bare mask directories.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpacingFile {
    pub row_mm: f64,
    pub col_mm: f64,
    #[serde(default = "default_thickness")]
    pub slice_thickness_mm: f64,
}

fn default_thickness() -> f64 {
    2.5
}

/// Scores every mask in `pred_dir` against the same-named mask in `gt_dir`.
pub fn evaluate_mask_dirs(pred_dir: &Path, gt_dir: &Path, spacing: &SpacingFile, config_hash: &str) -> Result<EvalReport> {
    let sp = Spacing::new(spacing.row_mm, spacing.col_mm)?;
    let mut names: Vec<_> = fs::read_dir(pred_dir)
        .at(pred_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Dataset(format!("no .png masks in {}", pred_dir.display())));
    }
    let mut rows = Vec::new();
    for name in names {
        let pred = read_mask(&pred_dir.join(&name))?;
        let gt_path = gt_dir.join(&name);
        if !gt_path.is_file() {
            return Err(Error::Dataset(format!("no reference mask for {name}")));
        }
        let gt = read_mask(&gt_path)?;
        let stem = name.trim_end_matches(".png").to_string();
        rows.push(SampleMetrics {
            architecture: "external".into(),
            regime: "external".into(),
            sample_id: stem.clone(),
            subject_id: stem,
            ..SampleMetrics::compute(&pred, &gt, sp, spacing.slice_thickness_mm)?
        });
    }
    EvalReport::new(config_hash, rows, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.sd, s.n), (2.0, 1.0, 3));
        assert_eq!(Summary::of(&[4.0]).unwrap().sd, 0.0);
        assert!(Summary::of(&[]).is_none());
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            SampleMetrics {
                architecture: "unet".into(),
                regime: "real+pmr".into(),
                sample_id: "B020_w1".into(),
                subject_id: "B020".into(),
                week: Some(1),
                dsc: 0.8123456789,
                hd95_mm: None,
                vr: 0.1,
                v_pred_cc: 1.5,
                v_gt_cc: 1.25,
                checkpoint: "abc".into(),
            },
            SampleMetrics {
                week: None,
                hd95_mm: Some(3.6),
                ..SampleMetrics::compute(&Mask::ones((3, 3)), &Mask::ones((3, 3)), Spacing::isotropic(1.0), 2.5).unwrap()
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_samples_csv(&p, &rows).unwrap();
        assert_eq!(read_samples_csv(&p).unwrap(), rows);
    }
}
