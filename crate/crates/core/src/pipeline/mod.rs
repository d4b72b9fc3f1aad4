//! Config-driven orchestration: phantoms, translation models, pseudo-B
//! export, segmenters per regime, evaluation, growth analysis and the report.
//!
//! Everything lives under `output_root`:
//!
//! ```text
//! config.toml  experiment.json
//! phantoms/                      raw dataset
//! standardized/                  intensities in [-1, 1], landmarks.json
//! synthesis/<variant>/           checkpoint.safetensors, losses.csv
//! pmr/<variant>/                 pseudo-B dataset
//! segmentation/<arch>/<regime>/  checkpoint.safetensors, history.csv
//! evaluation/                    report.json, report.csv, predictions/
//! longitudinal/                  longitudinal.json, plots/
//! report/                        grid.{csv,json,txt}, *.svg, kl.json
//! ```

mod config;
mod evaluate;
mod longitudinal;
mod manifest;
mod report;

pub use config::{
    short_hash, EvaluationSection, ExperimentConfig, Regime, SegmentationSection, SynthVariant, ENV_PREFIX,
};
pub use evaluate::{
    evaluate_mask_dirs, kl_summary, read_samples_csv, summarize, write_samples_csv, EvalReport, KlSummary,
    ModelSummary, SampleMetrics, SpacingFile, Summary,
};
pub use longitudinal::{longitudinal_report, series_from_volumes, LongitudinalReport, SubjectGrowth};
pub use manifest::{
    file_hash, hash_paths, ExperimentManifest, StageRecord, StageRunner, StageStatus, EXPERIMENT_FILE,
};
pub use report::{emit_report, read_grid_csv, write_grid_csv, GridCell, ReportGrid, GRID_METRICS};

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, IoContext, Result};
use crate::metrics::SeriesSource;
use crate::phantom::{
    apply_landmarks, clip_and_normalize, derive_seed, fit_landmarks, generate_samples, write_mask, Dataset,
    DatasetManifest, Domain, IntensityScale, LandmarkModel, Sample, Split,
};
use crate::segmentation::{build_model, predict_mask, train_segmenter, SegKind, SegModel};
use crate::synthesis::{load_normalized, synthesize_pseudo_b, train_synthesis, LossRecord, SynthesisConfig, SynthesisState};

/// Paths of every artifact of one experiment.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn phantoms(&self) -> PathBuf {
        self.root.join("phantoms")
    }

    pub fn standardized(&self) -> PathBuf {
        self.root.join("standardized")
    }

    pub fn synthesis(&self, v: SynthVariant) -> PathBuf {
        self.root.join("synthesis").join(v.name())
    }

    pub fn synthesis_checkpoint(&self, v: SynthVariant) -> PathBuf {
        self.synthesis(v).join("checkpoint.safetensors")
    }

    pub fn pmr(&self, v: SynthVariant) -> PathBuf {
        self.root.join("pmr").join(v.name())
    }

    pub fn segmentation(&self, kind: SegKind, regime: Regime) -> PathBuf {
        self.root.join("segmentation").join(kind.name()).join(regime.slug())
    }

    pub fn segmentation_checkpoint(&self, kind: SegKind, regime: Regime) -> PathBuf {
        self.segmentation(kind, regime).join("checkpoint.safetensors")
    }

    pub fn evaluation(&self) -> PathBuf {
        self.root.join("evaluation")
    }

    pub fn eval_report(&self) -> PathBuf {
        self.evaluation().join("report.json")
    }

    pub fn longitudinal(&self) -> PathBuf {
        self.root.join("longitudinal")
    }

    pub fn longitudinal_report(&self) -> PathBuf {
        self.longitudinal().join("longitudinal.json")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }

    /// Files whose bytes must match between two runs of the same config.
    pub fn report_files(&self) -> Vec<PathBuf> {
        let mut v = vec![
            self.eval_report(),
            self.eval_report().with_extension("csv"),
            self.longitudinal_report(),
        ];
        v.extend(["grid.csv", "grid.json", "grid.txt", "kl.json"].map(|f| self.report().join(f)));
        v
    }
}

fn fresh_dir(p: &Path) -> Result<()> {
    if p.exists() {
        fs::remove_dir_all(p).at(p)?;
    }
    fs::create_dir_all(p).at(p)
}

fn provenance(config_hash: &str, checkpoint: Option<&str>) -> String {
    match checkpoint {
        Some(c) => format!("config {config_hash}; checkpoint {c}"),
        None => format!("config {config_hash}"),
    }
}

/// Copies `raw` into `out` with intensities mapped to `[-1, 1]`: domain A
/// by clipping, domain B by landmark standardization (fit on the raw B
/// training images) followed by clipping. Already-normalized records pass
/// through unchanged.
pub fn standardize_dataset(raw: &Dataset, out: &Path, provenance: &str) -> Result<(DatasetManifest, Option<LandmarkModel>)> {
    let m = raw.manifest();
    let fit_on = raw.load_where(|r| r.domain == Domain::B && r.split == Split::Train && r.intensity == IntensityScale::Raw)?;
    let landmarks = if fit_on.is_empty() {
        None
    } else {
        Some(fit_landmarks(fit_on.iter().map(|(_, s)| &s.image))?)
    };
    let mut dst = Dataset::create(out, m.generation_seed, m.slice_thickness_mm)?;
    dst.set_provenance(provenance);
    for rec in &m.samples {
        let mut s = raw.load(rec)?;
        if rec.intensity == IntensityScale::Raw {
            s.image = match (s.domain, &landmarks) {
                (Domain::B, Some(lm)) => clip_and_normalize(&apply_landmarks(&s.image, lm)?, Domain::B),
                (d, _) => clip_and_normalize(&s.image, d),
            };
        }
        dst.push(&s, rec.split, IntensityScale::Normalized, rec.pseudo_of.clone())?;
    }
    if let Some(lm) = &landmarks {
        let p = out.join("landmarks.json");
        fs::write(&p, serde_json::to_string_pretty(lm)? + "\n").at(&p)?;
    }
    Ok((dst.finish()?, landmarks))
}

/// Samples of one domain and split, mapped to `[-1, 1]`.
pub fn load_split(ds: &Dataset, domain: Domain, split: Split) -> Result<Vec<Sample>> {
    ds.manifest()
        .select(domain, split)
        .map(|r| load_normalized(ds, r))
        .collect()
}

/// All samples of the first `n` subjects (sorted by id).
pub fn first_subjects(samples: Vec<Sample>, n: usize) -> Vec<Sample> {
    let ids: BTreeSet<String> = samples.iter().map(|s| s.subject_id.clone()).collect();
    let keep: BTreeSet<&String> = ids.iter().take(n).collect();
    samples.into_iter().filter(|s| keep.contains(&s.subject_id)).collect()
}

pub fn write_losses_csv(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().at(path)
}

/// Trains one translation model and writes `checkpoint.safetensors` and
/// `losses.csv` into `out`.
pub fn train_translation(
    cfg: &SynthesisConfig,
    a: &[Sample],
    b: &[Sample],
    out: &Path,
    config_hash: &str,
) -> Result<SynthesisState> {
    let mut state = SynthesisState::new(cfg.clone())?;
    let records = train_synthesis(&mut state, a, b, cfg.steps, |r| {
        if r.step % 100 == 0 {
            log::info!(
                "synthesis step {} D {:.3} G {:.3} cyc {:.3} shape {:.3} loc {:.3}",
                r.step,
                r.adv_d,
                r.adv_g,
                r.cyc,
                r.shape,
                r.loc
            );
        }
    })?;
    fs::create_dir_all(out).at(out)?;
    state.save(&out.join("checkpoint.safetensors"), config_hash)?;
    write_losses_csv(&out.join("losses.csv"), &records)?;
    Ok(state)
}

pub fn stage_phantom_gen(cfg: &ExperimentConfig, layout: &Layout, config_hash: &str) -> Result<()> {
    let raw_dir = layout.phantoms();
    fresh_dir(&raw_dir)?;
    let mut ds = Dataset::create(&raw_dir, Some(cfg.phantom.seed), cfg.phantom.slice_thickness_mm)?;
    ds.set_provenance(provenance(config_hash, None));
    for (s, split) in generate_samples(&cfg.phantom)? {
        ds.push(&s, split, IntensityScale::Raw, None)?;
    }
    ds.finish()?;
    fresh_dir(&layout.standardized())?;
    standardize_dataset(&Dataset::open(&raw_dir)?, &layout.standardized(), &provenance(config_hash, None))?;
    Ok(())
}

pub fn stage_synth_train(cfg: &ExperimentConfig, layout: &Layout, variant: SynthVariant, config_hash: &str) -> Result<()> {
    let ds = Dataset::open(&layout.standardized())?;
    let a = load_split(&ds, Domain::A, Split::Train)?;
    let b = load_split(&ds, Domain::B, Split::Train)?;
    let out = layout.synthesis(variant);
    fresh_dir(&out)?;
    log::info!("training {} translation model on {} A / {} B slices", variant.name(), a.len(), b.len());
    train_translation(&variant.apply(&cfg.synthesis), &a, &b, &out, config_hash)?;
    Ok(())
}

pub fn stage_make_pmr(layout: &Layout, variant: SynthVariant, config_hash: &str) -> Result<()> {
    let ck = layout.synthesis_checkpoint(variant);
    let state = SynthesisState::load(&ck)?;
    let out = layout.pmr(variant);
    fresh_dir(&out)?;
    let prov = provenance(config_hash, Some(&file_hash(&ck)?));
    synthesize_pseudo_b(&state, &Dataset::open(&layout.standardized())?, &out, &prov)?;
    Ok(())
}

/// Training pool of one regime.
pub fn regime_training_set(regime: Regime, real: &[Sample], pseudo: Option<&[Sample]>) -> Result<Vec<Sample>> {
    let mut pool = Vec::new();
    if regime.uses_real() {
        pool.extend_from_slice(real);
    }
    if regime.pseudo_variant().is_some() {
        let p = pseudo.ok_or_else(|| Error::Dataset(format!("regime {regime} needs pseudo-B images")))?;
        pool.extend_from_slice(p);
    }
    Ok(pool)
}

pub fn stage_seg_train(
    cfg: &ExperimentConfig,
    layout: &Layout,
    kind: SegKind,
    regime: Regime,
    config_hash: &str,
) -> Result<SegModel> {
    let ds = Dataset::open(&layout.standardized())?;
    let real = first_subjects(load_split(&ds, Domain::B, Split::Train)?, cfg.segmentation.real_subjects);
    let val = load_split(&ds, Domain::B, Split::Val)?;
    let pseudo = match regime.pseudo_variant() {
        Some(v) => {
            let p = Dataset::open(&layout.pmr(v))?;
            Some(load_split(&p, Domain::B, Split::Train)?)
        }
        None => None,
    };
    let train = regime_training_set(regime, &real, pseudo.as_deref())?;
    let out = layout.segmentation(kind, regime);
    fresh_dir(&out)?;
    let seed = cfg.segmentation_seed(kind);
    let model = build_model(cfg.segmentation.architecture(kind), seed)?;
    log::info!("training {kind} / {regime} on {} slices", train.len());
    let outcome = train_segmenter(model, &train, &val, &cfg.segmentation.train_config(derive_seed(seed, &[1])))?;
    let mut model = outcome.model.clone();
    model.regime = Some(regime.name().to_string());
    let meta = BTreeMap::from([
        ("config_hash".to_string(), config_hash.to_string()),
        ("best_epoch".to_string(), outcome.best_epoch.to_string()),
        ("best_val_dsc".to_string(), format!("{:.6}", outcome.best_val_dsc)),
        ("train_slices".to_string(), train.len().to_string()),
    ]);
    model.save(&layout.segmentation_checkpoint(kind, regime), &meta)?;
    outcome.write_history(&out.join("history.csv"))?;
    Ok(model)
}

/// Test-set metrics of every trained segmenter plus the tumor-intensity KL
/// summary of the pseudo-B corpora.
pub fn stage_evaluate(cfg: &ExperimentConfig, layout: &Layout, config_hash: &str) -> Result<EvalReport> {
    let ds = Dataset::open(&layout.standardized())?;
    let thickness = ds.manifest().slice_thickness_mm;
    let test = load_split(&ds, Domain::B, Split::Test)?;
    let out = layout.evaluation();
    fresh_dir(&out)?;
    let mut rows = Vec::new();
    for &kind in &cfg.architectures {
        for &regime in &cfg.regimes {
            let ck = layout.segmentation_checkpoint(kind, regime);
            let model = SegModel::load(&ck)?;
            let ck_hash = file_hash(&ck)?;
            let pred_dir = out.join("predictions").join(kind.name()).join(regime.slug());
            fs::create_dir_all(&pred_dir).at(&pred_dir)?;
            for s in &test {
                let gt = s
                    .mask
                    .as_ref()
                    .ok_or_else(|| Error::Dataset(format!("test sample `{}` has no mask", s.id)))?;
                let pred = predict_mask(&model, &s.image)?;
                write_mask(&pred_dir.join(format!("{}.png", s.id)), &pred)?;
                rows.push(SampleMetrics {
                    architecture: kind.name().to_string(),
                    regime: regime.name().to_string(),
                    sample_id: s.id.clone(),
                    subject_id: s.subject_id.clone(),
                    week: s.timepoint,
                    checkpoint: ck_hash.clone(),
                    ..SampleMetrics::compute(&pred, gt, s.spacing, thickness)?
                });
            }
        }
    }
    let reference = load_split(&ds, Domain::B, Split::Train)?;
    let domain_a = load_split(&ds, Domain::A, Split::Train)?;
    let mut corpora: Vec<(String, Vec<Sample>)> = vec![("domain_a".into(), domain_a)];
    for v in SynthVariant::ALL {
        if layout.pmr(v).join(crate::phantom::MANIFEST_FILE).is_file() && used_variants(cfg).contains(&v) {
            let p = Dataset::open(&layout.pmr(v))?;
            corpora.push((format!("pmr_{}", v.name()), load_split(&p, Domain::B, Split::Train)?));
        }
    }
    let refs: Vec<(&str, &[Sample])> = corpora.iter().map(|(n, s)| (n.as_str(), s.as_slice())).collect();
    let kl = kl_summary(&reference, &refs, cfg.evaluation.n_bins, cfg.evaluation.kl_eps)?;
    let report = EvalReport::new(config_hash, rows, Some(kl))?;
    report.write(&layout.eval_report())?;
    Ok(report)
}

pub fn stage_longitudinal(cfg: &ExperimentConfig, layout: &Layout, config_hash: &str) -> Result<LongitudinalReport> {
    let eval = EvalReport::read(&layout.eval_report())?;
    let (arch, regime) = (cfg.evaluation.longitudinal_arch.name(), cfg.evaluation.longitudinal_regime.name());
    let mut pred: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut expert: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in eval.samples.iter().filter(|r| r.architecture == arch && r.regime == regime) {
        if let Some(w) = r.week {
            pred.entry(r.subject_id.clone()).or_default().push((w as f64, r.v_pred_cc));
            expert.entry(r.subject_id.clone()).or_default().push((w as f64, r.v_gt_cc));
        }
    }
    if pred.is_empty() {
        return Err(Error::Dataset(format!("no longitudinal test scans evaluated for {arch}/{regime}")));
    }
    let to_series = |m: BTreeMap<String, Vec<(f64, f64)>>, src: SeriesSource| -> Result<Vec<_>> {
        m.into_iter().map(|(id, pts)| series_from_volumes(&id, src, pts)).collect()
    };
    let out = layout.longitudinal();
    fresh_dir(&out)?;
    let mut rep = longitudinal_report(
        &to_series(pred, SeriesSource::Algorithm)?,
        &to_series(expert, SeriesSource::Expert)?,
        Some(&out.join("plots")),
    )?;
    rep.config_hash = config_hash.to_string();
    rep.model = format!("{arch}/{regime}");
    rep.checkpoint = eval
        .models
        .iter()
        .find(|m| m.architecture == arch && m.regime == regime)
        .map(|m| m.checkpoint.clone())
        .unwrap_or_default();
    let p = layout.longitudinal_report();
    fs::write(&p, serde_json::to_string_pretty(&rep)? + "\n").at(&p)?;
    Ok(rep)
}

pub fn stage_report(cfg: &ExperimentConfig, layout: &Layout) -> Result<ReportGrid> {
    let eval = EvalReport::read(&layout.eval_report())?;
    let regimes: Vec<String> = cfg.regimes.iter().map(|r| r.name().to_string()).collect();
    let archs: Vec<String> = cfg.architectures.iter().map(|a| a.name().to_string()).collect();
    let grid = ReportGrid::from_eval(&eval, &regimes, &archs);
    let out = layout.report();
    fresh_dir(&out)?;
    emit_report(&grid, &out)?;
    let kl = out.join("kl.json");
    let body = serde_json::json!({ "config_hash": eval.config_hash, "kl": eval.kl });
    fs::write(&kl, serde_json::to_string_pretty(&body)? + "\n").at(&kl)?;
    Ok(grid)
}

/// Translation variants needed by the configured regimes.
pub fn used_variants(cfg: &ExperimentConfig) -> BTreeSet<SynthVariant> {
    cfg.regimes.iter().filter_map(|r| r.pseudo_variant()).collect()
}

/// Runs every stage in dependency order, skipping stages whose inputs and
/// outputs are unchanged since the last run under the same root.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentManifest> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let layout = Layout::new(&cfg.output_root);
    fs::create_dir_all(&layout.root).at(&layout.root)?;
    let cfg_path = layout.root.join("config.toml");
    fs::write(&cfg_path, cfg.to_toml_string()?).at(&cfg_path)?;
    let mut runner = StageRunner::new(&layout.root, &hash)?;

    let h_ph = runner.run(
        "phantom-gen",
        &[&js(&cfg.phantom)?],
        &[layout.phantoms(), layout.standardized()],
        || stage_phantom_gen(cfg, &layout, &hash),
    )?;

    let mut h_pmr = BTreeMap::new();
    for v in used_variants(cfg) {
        let h_syn = runner.run(
            &format!("synth-train/{}", v.name()),
            &[&js(&v.apply(&cfg.synthesis))?, &h_ph],
            &[layout.synthesis(v)],
            || stage_synth_train(cfg, &layout, v, &hash),
        )?;
        let h = runner.run(&format!("make-pmr/{}", v.name()), &[&h_syn, &h_ph], &[layout.pmr(v)], || {
            stage_make_pmr(&layout, v, &hash)
        })?;
        h_pmr.insert(v, h);
    }

    let mut h_seg = Vec::new();
    for &kind in &cfg.architectures {
        for &regime in &cfg.regimes {
            let pmr = regime.pseudo_variant().map(|v| h_pmr[&v].clone()).unwrap_or_default();
            let seed = cfg.segmentation_seed(kind).to_string();
            let h = runner.run(
                &format!("seg-train/{}/{}", kind.name(), regime.slug()),
                &[&js(&cfg.segmentation)?, kind.name(), regime.name(), &seed, &h_ph, &pmr],
                &[layout.segmentation(kind, regime)],
                || stage_seg_train(cfg, &layout, kind, regime, &hash).map(|_| ()),
            )?;
            h_seg.push(h);
        }
    }

    let seg_joined = h_seg.join(",");
    let pmr_joined: Vec<&str> = h_pmr.values().map(String::as_str).collect();
    let h_eval = runner.run(
        "evaluate",
        &[&js(&cfg.evaluation)?, &seg_joined, &h_ph, &pmr_joined.join(",")],
        &[layout.evaluation()],
        || stage_evaluate(cfg, &layout, &hash).map(|_| ()),
    )?;
    runner.run(
        "longitudinal",
        &[&h_eval, &js(&cfg.evaluation)?],
        &[layout.longitudinal()],
        || stage_longitudinal(cfg, &layout, &hash).map(|_| ()),
    )?;
    let names = js(&(&cfg.regimes, &cfg.architectures))?;
    runner.run("report", &[&h_eval, &names], &[layout.report()], || stage_report(cfg, &layout).map(|_| ()))?;
    Ok(runner.manifest)
}

fn js<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string(v)?)
}
