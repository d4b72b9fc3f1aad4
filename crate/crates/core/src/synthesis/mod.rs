//! Step 1: unpaired A->B translation with tumor-attention losses, and export
//! of labeled pseudo-B images.

mod losses;
mod networks;
mod state;

pub use losses::{
    adversarial_loss, cycle_loss, generator_adversarial_loss, soft_dice_loss, total_loss, total_loss_tensor,
    tumor_location_loss, tumor_shape_loss, LossComponents, LossWeights, DICE_SMOOTH, PROB_EPS,
};
pub use networks::{
    Activation, AttentionOutput, AttentionPair, NetworkKind, NetworkSpec, Norm, SequentialNet, StageOp, StageSpec,
};
pub use state::{
    train_synthesis, Discriminators, Generators, LossRecord, PairSampler, SynthesisConfig, SynthesisState, TrainPair,
};

use std::path::Path;

use crate::error::Result;
use crate::phantom::{clip_and_normalize, Dataset, DatasetManifest, Domain, IntensityScale, Sample};

/// Loads a sample and maps it to `[-1, 1]` unless it is already normalized.
pub fn load_normalized(ds: &Dataset, rec: &crate::phantom::SampleRecord) -> Result<Sample> {
    let mut s = ds.load(rec)?;
    if rec.intensity == IntensityScale::Raw {
        s.image = clip_and_normalize(&s.image, s.domain);
    }
    Ok(s)
}

/// Writes every labeled domain-A sample of `source` through the A->B
/// generator into a new dataset at `out`. Masks are carried over unchanged;
/// `provenance` is recorded in the new manifest.
pub fn synthesize_pseudo_b(
    state: &SynthesisState,
    source: &Dataset,
    out: &Path,
    provenance: &str,
) -> Result<DatasetManifest> {
    if state.iteration == 0 {
        log::warn!("synthesizing pseudo-B images from an untrained model (iteration 0)");
    }
    let m = source.manifest();
    let mut dst = Dataset::create(out, m.generation_seed, m.slice_thickness_mm)?;
    dst.set_provenance(provenance);
    for rec in m.samples.iter().filter(|r| r.domain == Domain::A && r.mask.is_some()) {
        let s = load_normalized(source, rec)?;
        let fake = state.translate_a_to_b(&[&s.image])?.remove(0);
        let pseudo = Sample {
            id: format!("pmr_{}", s.id),
            domain: Domain::B,
            image: fake,
            ..s
        };
        dst.push(&pseudo, rec.split, IntensityScale::Normalized, Some(rec.id.clone()))?;
    }
    dst.finish()
}
