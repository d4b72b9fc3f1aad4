//! Trains the tumor-aware A->B translation for a few hundred steps on desk
//! phantoms, then compares tumor intensities of the pseudo-B images.
//!
//! cargo run --example translation -- [steps]

use xmodseg::metrics::{kl_divergence, tumor_histogram, DEFAULT_BINS, DEFAULT_KL_EPS};
use xmodseg::phantom::{apply_landmarks, clip_and_normalize, fit_landmarks, generate_samples, Domain, PhantomConfig, Sample, Split};
use xmodseg::synthesis::{train_synthesis, SynthesisConfig, SynthesisState};

fn main() -> xmodseg::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let all = generate_samples(&PhantomConfig::desk())?;
    let train = |d: Domain| -> Vec<Sample> {
        all.iter().filter(|(s, sp)| s.domain == d && *sp == Split::Train).map(|(s, _)| s.clone()).collect()
    };
    let a: Vec<Sample> = train(Domain::A)
        .into_iter()
        .map(|s| Sample { image: clip_and_normalize(&s.image, Domain::A), ..s })
        .collect();
    let b_raw = train(Domain::B);
    let lm = fit_landmarks(b_raw.iter().map(|s| &s.image))?;
    let b = b_raw
        .into_iter()
        .map(|s| Ok(Sample { image: clip_and_normalize(&apply_landmarks(&s.image, &lm)?, Domain::B), ..s }))
        .collect::<xmodseg::Result<Vec<_>>>()?;

    let mut state = SynthesisState::new(SynthesisConfig::desk())?;
    train_synthesis(&mut state, &a, &b, steps, |r| {
        if r.step % 50 == 0 {
            println!(
                "step {:4}  D {:.3}  G {:.3}  cyc {:.3}  shape {:.4}  loc {:.3}",
                r.step, r.adv_d, r.adv_g, r.cyc, r.shape, r.loc
            );
        }
    })?;

    let fakes = state.translate_a_to_b(&a.iter().map(|s| &s.image).collect::<Vec<_>>())?;
    let pseudo: Vec<Sample> = a.iter().zip(fakes).map(|(s, f)| Sample { image: f, ..s.clone() }).collect();
    let real = tumor_histogram(&b, DEFAULT_BINS)?;
    for (name, set) in [("domain A", &a), ("pseudo B", &pseudo)] {
        let kl = kl_divergence(&tumor_histogram(set.iter(), DEFAULT_BINS)?, &real, DEFAULT_KL_EPS)?;
        println!("tumor KL({name} || real B) = {kl:.3}");
    }
    Ok(())
}
