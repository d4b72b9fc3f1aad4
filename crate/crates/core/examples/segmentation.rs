//! Trains each segmentation architecture briefly on standardized domain-B
//! phantoms and reports validation DSC.
//!
//! cargo run --example segmentation -- [steps]

use xmodseg::phantom::{apply_landmarks, clip_and_normalize, fit_landmarks, generate_samples, Domain, PhantomConfig, Sample, Split};
use xmodseg::segmentation::{build_model, train_segmenter, SegArchitecture, SegKind, SegTrainConfig};

fn main() -> xmodseg::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let all = generate_samples(&PhantomConfig::desk())?;
    let lm = fit_landmarks(
        all.iter().filter(|(s, sp)| s.domain == Domain::B && *sp == Split::Train).map(|(s, _)| &s.image),
    )?;
    let split = |want: Split| -> xmodseg::Result<Vec<Sample>> {
        all.iter()
            .filter(|(s, sp)| s.domain == Domain::B && *sp == want)
            .map(|(s, _)| Ok(Sample { image: clip_and_normalize(&apply_landmarks(&s.image, &lm)?, Domain::B), ..s.clone() }))
            .collect()
    };
    let (train, val) = (split(Split::Train)?, split(Split::Val)?);
    let cfg = SegTrainConfig {
        steps,
        batch_size: 4,
        lr: 1e-3,
        epoch_steps: 20,
        ..SegTrainConfig::default()
    };
    for kind in SegKind::ALL {
        let model = build_model(SegArchitecture::new(kind, 0.125), 3)?;
        let t = std::time::Instant::now();
        let out = train_segmenter(model, &train, &val, &cfg)?;
        println!(
            "{kind:>9}: best val DSC {:.3} at epoch {} ({:.1} s)",
            out.best_val_dsc,
            out.best_epoch,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
