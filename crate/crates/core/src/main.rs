use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use xmodseg::phantom::{
    apply_landmarks, clip_and_normalize, fit_landmarks, generate_phantoms, Dataset, Domain, IntensityScale, Sample,
    Split,
};
use xmodseg::pipeline::{
    evaluate_mask_dirs, load_split, run_experiment, stage_longitudinal, stage_make_pmr, stage_phantom_gen,
    stage_report, stage_seg_train, train_translation, ExperimentConfig, Layout, Regime, SpacingFile, StageStatus,
    SynthVariant,
};
use xmodseg::segmentation::SegKind;
use xmodseg::synthesis::{load_normalized, synthesize_pseudo_b, SynthesisState};
use xmodseg::{Error, Result};

#[derive(Parser)]
#[command(name = "xmodseg", version, about = "Tumor-aware cross-modality augmentation experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the two-domain phantom corpus.
    PhantomGen {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write only the raw dataset here instead of into the experiment root.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train an A->B translation model.
    SynthTrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data_a: Option<PathBuf>,
        #[arg(long)]
        data_b: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "tumor-aware")]
        variant: SynthVariant,
    },
    /// Translate labeled domain-A images into pseudo-B images.
    MakePmr {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data_a: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "tumor-aware")]
        variant: SynthVariant,
    },
    /// Train one segmenter under one regime.
    SegTrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        arch: SegKind,
        #[arg(long)]
        regime: Regime,
    },
    /// Score predicted masks against reference masks.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// JSON with `row_mm`, `col_mm` and optional `slice_thickness_mm`.
        #[arg(long)]
        spacing: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Growth-rate analysis on the evaluated longitudinal test scans.
    Longitudinal {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run every stage, reusing unchanged results.
    RunAll {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Emit the regime x architecture tables and plots.
    Report {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

const STAGES: [&str; 7] = [
    "phantom-gen",
    "synth-train",
    "make-pmr",
    "seg-train",
    "evaluate",
    "longitudinal",
    "report",
];

// 1 for generic failures, 2 for configuration errors, 10 + stage index for
// a failed pipeline stage.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Stage { stage, .. } => {
            let base = stage.split('/').next().unwrap_or(stage);
            STAGES.iter().position(|s| *s == base).map_or(1, |i| 10 + i as u8)
        }
        _ => 1,
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => ExperimentConfig::from_toml_str(&ExperimentConfig::desk().to_toml_string()?),
    }
}

fn stage(name: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| Error::Stage {
        stage: name.to_string(),
        source: Box::new(e),
    })
}

// Domain-B training slices in [-1, 1]; raw images are landmark-standardized
// against the landmarks of the raw training set itself.
fn b_training_images(ds: &Dataset, out: &Path) -> Result<Vec<Sample>> {
    let recs: Vec<_> = ds.manifest().select(Domain::B, Split::Train).cloned().collect();
    if recs.iter().all(|r| r.intensity == IntensityScale::Normalized) {
        return load_split(ds, Domain::B, Split::Train);
    }
    let raw: Vec<Sample> = recs.iter().map(|r| ds.load(r)).collect::<Result<_>>()?;
    let lm = fit_landmarks(raw.iter().map(|s| &s.image))?;
    fs::create_dir_all(out).map_err(|e| Error::Io { path: out.into(), source: e })?;
    fs::write(out.join("landmarks.json"), serde_json::to_string_pretty(&lm)?)
        .map_err(|e| Error::Io { path: out.join("landmarks.json"), source: e })?;
    raw.into_iter()
        .zip(&recs)
        .map(|(mut s, r)| {
            if r.intensity == IntensityScale::Raw {
                s.image = clip_and_normalize(&apply_landmarks(&s.image, &lm)?, Domain::B);
            }
            Ok(s)
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::PhantomGen { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let hash = cfg.hash()?;
            match out {
                Some(dir) => {
                    stage("phantom-gen", generate_phantoms(&cfg.phantom, &dir).map(|_| ()))?;
                    println!("wrote {} ({})", dir.display(), hash);
                }
                None => {
                    let layout = Layout::new(&cfg.output_root);
                    stage("phantom-gen", stage_phantom_gen(&cfg, &layout, &hash))?;
                    println!("wrote {}", layout.phantoms().display());
                }
            }
        }
        Cmd::SynthTrain {
            config,
            data_a,
            data_b,
            out,
            variant,
        } => {
            let cfg = load_config(config.as_deref())?;
            let hash = cfg.hash()?;
            let layout = Layout::new(&cfg.output_root);
            let out = out.unwrap_or_else(|| layout.synthesis(variant));
            stage("synth-train", (|| {
                let ds_a = Dataset::open(&data_a.unwrap_or_else(|| layout.standardized()))?;
                let ds_b = Dataset::open(&data_b.unwrap_or_else(|| layout.standardized()))?;
                let a: Vec<Sample> = ds_a
                    .manifest()
                    .select(Domain::A, Split::Train)
                    .map(|r| load_normalized(&ds_a, r))
                    .collect::<Result<_>>()?;
                let b = b_training_images(&ds_b, &out)?;
                train_translation(&variant.apply(&cfg.synthesis), &a, &b, &out, &hash)?;
                Ok(())
            })())?;
            println!("wrote {}", out.display());
        }
        Cmd::MakePmr {
            config,
            checkpoint,
            data_a,
            out,
            variant,
        } => {
            let cfg = load_config(config.as_deref())?;
            let hash = cfg.hash()?;
            let layout = Layout::new(&cfg.output_root);
            if checkpoint.is_none() && data_a.is_none() && out.is_none() {
                stage("make-pmr", stage_make_pmr(&layout, variant, &hash))?;
                println!("wrote {}", layout.pmr(variant).display());
            } else {
                let ck = checkpoint.unwrap_or_else(|| layout.synthesis_checkpoint(variant));
                let out = out.unwrap_or_else(|| layout.pmr(variant));
                stage("make-pmr", (|| {
                    let state = SynthesisState::load(&ck)?;
                    let src = Dataset::open(&data_a.unwrap_or_else(|| layout.standardized()))?;
                    let prov = format!("config {hash}; checkpoint {}", xmodseg::pipeline::file_hash(&ck)?);
                    let m = synthesize_pseudo_b(&state, &src, &out, &prov)?;
                    println!("wrote {} pseudo-B samples to {}", m.samples.len(), out.display());
                    Ok(())
                })())?;
            }
        }
        Cmd::SegTrain { config, arch, regime } => {
            let cfg = load_config(config.as_deref())?;
            let hash = cfg.hash()?;
            let layout = Layout::new(&cfg.output_root);
            stage("seg-train", stage_seg_train(&cfg, &layout, arch, regime, &hash).map(|_| ()))?;
            println!("wrote {}", layout.segmentation(arch, regime).display());
        }
        Cmd::Evaluate { pred, gt, spacing, out } => {
            stage("evaluate", (|| {
                let text = fs::read_to_string(&spacing).map_err(|e| Error::Io { path: spacing.clone(), source: e })?;
                let sp: SpacingFile = serde_json::from_str(&text)?;
                let hash = xmodseg::pipeline::short_hash(text.as_bytes());
                let report = evaluate_mask_dirs(&pred, &gt, &sp, &hash)?;
                report.write(&out)?;
                for m in &report.models {
                    println!("DSC {:.3} ± {:.3} over {} masks", m.dsc.mean, m.dsc.sd, m.dsc.n);
                }
                Ok(())
            })())?;
        }
        Cmd::Longitudinal { config } => {
            let cfg = load_config(config.as_deref())?;
            let layout = Layout::new(&cfg.output_root);
            let hash = cfg.hash()?;
            stage("longitudinal", (|| {
                let r = stage_longitudinal(&cfg, &layout, &hash)?;
                for s in &r.subjects {
                    println!(
                        "{}: {:.3} vs {:.3} cc/week (|diff| {:.3})",
                        s.subject_id, s.slope_algorithm, s.slope_expert, s.abs_difference
                    );
                }
                if let Some(t) = r.ttest {
                    println!("paired t = {:.3}, p = {:.4}", t.t, t.p);
                }
                Ok(())
            })())?;
        }
        Cmd::RunAll { config } => {
            let cfg = load_config(config.as_deref())?;
            let manifest = run_experiment(&cfg)?;
            for s in &manifest.stages {
                let status = match &s.status {
                    StageStatus::Completed => "completed".to_string(),
                    StageStatus::Cached => "skipped (cached)".to_string(),
                    StageStatus::Failed(e) => format!("failed: {e}"),
                };
                println!("{:<32} {status}", s.name);
            }
            println!("{}", fs::read_to_string(Layout::new(&cfg.output_root).report().join("grid.txt")).unwrap_or_default());
        }
        Cmd::Report { config } => {
            let cfg = load_config(config.as_deref())?;
            let layout = Layout::new(&cfg.output_root);
            let grid = stage("report", stage_report(&cfg, &layout).map(|_| ())).and_then(|()| {
                fs::read_to_string(layout.report().join("grid.txt"))
                    .map_err(|e| Error::Io { path: layout.report(), source: e })
            })?;
            println!("{grid}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
