//! Runs the whole pipeline on the smoke configuration and prints the
//! regime x architecture grid. A second run reuses every stage.

use xmodseg::pipeline::{run_experiment, ExperimentConfig, Layout};

fn main() -> xmodseg::Result<()> {
    let mut cfg = ExperimentConfig::smoke();
    cfg.output_root = std::env::temp_dir().join("xmodseg-smoke");
    for round in 1..=2 {
        let t = std::time::Instant::now();
        let m = run_experiment(&cfg)?;
        let cached = m.stages.iter().filter(|s| s.status == xmodseg::pipeline::StageStatus::Cached).count();
        println!("run {round}: {} stages, {cached} cached, {:.1} s", m.stages.len(), t.elapsed().as_secs_f64());
    }
    let grid = std::fs::read_to_string(Layout::new(&cfg.output_root).report().join("grid.txt")).unwrap_or_default();
    println!("{grid}");
    Ok(())
}
