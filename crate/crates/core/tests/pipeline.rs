use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::process::Command;
use std::sync::OnceLock;

use xmodseg::pipeline::{
    read_grid_csv, read_samples_csv, run_experiment, EvalReport, ExperimentConfig, ExperimentManifest, Layout,
    LongitudinalReport, StageStatus,
};

struct Fixture {
    _dir: tempfile::TempDir,
    cfg: ExperimentConfig,
    first: ExperimentManifest,
}

fn smoke_config(root: PathBuf) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::smoke();
    cfg.output_root = root;
    cfg
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = smoke_config(dir.path().join("run"));
        let first = run_experiment(&cfg).unwrap();
        Fixture { _dir: dir, cfg, first }
    })
}

fn layout() -> Layout {
    Layout::new(&fixture().cfg.output_root)
}

#[test]
fn smoke_run_completes_every_stage_in_dependency_order() {
    let f = fixture();
    assert!(f.first.stages.iter().all(|s| s.status == StageStatus::Completed));
    let order = ["phantom-gen", "synth-train", "make-pmr", "seg-train", "evaluate", "longitudinal", "report"];
    let rank = |name: &str| {
        let head = name.split('/').next().unwrap();
        order.iter().position(|o| *o == head).unwrap()
    };
    let ranks: Vec<usize> = f.first.stages.iter().map(|s| rank(&s.name)).collect();
    // translation stages interleave per variant; everything else is grouped
    let mut fixed = ranks.clone();
    fixed.iter_mut().filter(|r| **r == 2).for_each(|r| *r = 1);
    assert!(fixed.windows(2).all(|w| w[0] <= w[1]), "{:?}", f.first.stages);
    let n_seg = ranks.iter().filter(|&&r| r == 3).count();
    assert_eq!(n_seg, f.cfg.regimes.len() * f.cfg.architectures.len());
}

#[test]
fn report_covers_at_least_three_regimes() {
    let f = fixture();
    let cells = read_grid_csv(&layout().report().join("grid.csv")).unwrap();
    assert_eq!(cells.len(), f.cfg.regimes.len() * f.cfg.architectures.len() * 3);
    let with_dsc: BTreeSet<_> = cells
        .iter()
        .filter(|c| c.metric == "dsc" && c.mean.is_some())
        .map(|c| c.regime.clone())
        .collect();
    assert!(with_dsc.len() >= 3, "{with_dsc:?}");
    for f in ["grid.txt", "grid.json", "kl.json"] {
        assert!(layout().report().join(f).is_file(), "{f}");
    }
}

#[test]
fn aggregate_dsc_matches_per_sample_csv() {
    let eval = EvalReport::read(&layout().eval_report()).unwrap();
    let rows = read_samples_csv(&layout().eval_report().with_extension("csv")).unwrap();
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.architecture, r.regime)).or_default().push(r.dsc);
    }
    assert_eq!(groups.len(), eval.models.len());
    for m in &eval.models {
        let v = &groups[&(m.architecture.clone(), m.regime.clone())];
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - m.dsc.mean).abs() <= 1e-9, "{}/{}", m.architecture, m.regime);
    }
}

#[test]
fn artifacts_name_their_config_and_checkpoint() {
    let hash = fixture().cfg.hash().unwrap();
    let eval = EvalReport::read(&layout().eval_report()).unwrap();
    assert_eq!(eval.config_hash, hash);
    assert!(eval.models.iter().all(|m| !m.checkpoint.is_empty()));
    let text = std::fs::read_to_string(layout().longitudinal_report()).unwrap();
    let lr: LongitudinalReport = serde_json::from_str(&text).unwrap();
    assert_eq!(lr.config_hash, hash);
    assert!(!lr.checkpoint.is_empty());
    assert_eq!(lr.ttest_kind, "paired");
    assert_eq!(lr.plots.len(), lr.subjects.len());
}

#[test]
fn rerun_with_identical_config_is_fully_cached() {
    let again = run_experiment(&fixture().cfg).unwrap();
    assert!(again.all_cached(), "{:?}", again.stages);
    assert_eq!(
        again.stages.iter().map(|s| &s.name).collect::<Vec<_>>(),
        fixture().first.stages.iter().map(|s| &s.name).collect::<Vec<_>>()
    );
}

#[test]
fn changed_segmentation_section_reuses_upstream_stages() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke_config(dir.path().join("run"));
    cfg.architectures.truncate(1);
    cfg.evaluation.longitudinal_arch = cfg.architectures[0];
    run_experiment(&cfg).unwrap();
    cfg.segmentation.steps += 2;
    let m = run_experiment(&cfg).unwrap();
    for s in &m.stages {
        let upstream = s.name.starts_with("phantom-gen") || s.name.starts_with("synth-train") || s.name.starts_with("make-pmr");
        let want = if upstream { StageStatus::Cached } else { StageStatus::Completed };
        assert_eq!(s.status, want, "{}", s.name);
    }
}

#[test]
fn cli_reports_configuration_errors_with_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "seed = 1\nregimes = []\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_xmodseg"))
        .args(["run-all", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
