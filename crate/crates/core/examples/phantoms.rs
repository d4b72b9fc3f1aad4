//! Generates the two-domain phantom corpus and standardizes its intensities.
//!
//! cargo run --example phantoms -- [out_dir]

use std::path::PathBuf;

use xmodseg::phantom::{generate_phantoms, Dataset, Domain, PhantomConfig, Split};
use xmodseg::pipeline::{load_split, standardize_dataset};

fn main() -> xmodseg::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("xmodseg-phantoms"));
    let cfg = PhantomConfig::desk();
    let raw = generate_phantoms(&cfg, &out.join("raw"))?;
    println!("{} raw samples in {}", raw.samples.len(), out.join("raw").display());

    let (_, landmarks) = standardize_dataset(&Dataset::open(&out.join("raw"))?, &out.join("std"), "example")?;
    if let Some(lm) = landmarks {
        println!("domain-B landmarks: {:?}", lm);
    }
    let ds = Dataset::open(&out.join("std"))?;
    for (domain, split) in [(Domain::A, Split::Train), (Domain::B, Split::Train), (Domain::B, Split::Test)] {
        let samples = load_split(&ds, domain, split)?;
        let (lo, hi) = samples
            .iter()
            .flat_map(|s| s.image.iter())
            .fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        println!("{domain:?}/{split:?}: {} slices, intensities [{lo:.3}, {hi:.3}]", samples.len());
    }
    Ok(())
}
