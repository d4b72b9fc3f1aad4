use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::{Dataset, DatasetManifest, IntensityScale};
use super::{Domain, Image, Mask, Palette, PhantomConfig, Sample, Spacing, Split};
use crate::error::Result;

/// Mixes a base seed with a tag path into an independent stream seed.
pub(crate) fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    tags.iter().fold(splitmix(seed), |acc, &t| splitmix(acc ^ splitmix(t)))
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dy = y - self.cy;
        let dx = x - self.cx;
        let u = dy * c + dx * s;
        let v = -dy * s + dx * c;
        (u / self.ry).powi(2) + (v / self.rx).powi(2) <= 1.0
    }

    fn scaled(&self, factor: f64) -> Self {
        Self {
            ry: self.ry * factor,
            rx: self.rx * factor,
            ..*self
        }
    }
}

#[derive(Clone, Debug)]
struct Anatomy {
    body: Ellipse,
    lungs: [Ellipse; 2],
    heart: Ellipse,
    spine: Ellipse,
}

fn jitter(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    rng.random_range(-scale..=scale)
}

fn sample_anatomy(n: f64, rng: &mut ChaCha8Rng) -> Anatomy {
    let c = n / 2.0 - 0.5;
    let h = n / 2.0;
    let body = Ellipse {
        cy: c + jitter(rng, 0.02) * h,
        cx: c + jitter(rng, 0.02) * h,
        ry: (0.66 + jitter(rng, 0.04)) * h,
        rx: (0.88 + jitter(rng, 0.04)) * h,
        angle: 0.0,
    };
    let lung = |side: f64, rng: &mut ChaCha8Rng| Ellipse {
        cy: body.cy + (-0.06 + jitter(rng, 0.03)) * h,
        cx: body.cx + side * (0.42 + jitter(rng, 0.03)) * h,
        ry: (0.44 + jitter(rng, 0.04)) * h,
        rx: (0.25 + jitter(rng, 0.03)) * h,
        angle: side * jitter(rng, 0.15),
    };
    let lungs = [lung(-1.0, rng), lung(1.0, rng)];
    let heart = Ellipse {
        cy: body.cy + (0.12 + jitter(rng, 0.03)) * h,
        cx: body.cx + (0.04 + jitter(rng, 0.03)) * h,
        ry: (0.2 + jitter(rng, 0.03)) * h,
        rx: (0.14 + jitter(rng, 0.02)) * h,
        angle: jitter(rng, 0.3),
    };
    let spine = Ellipse {
        cy: body.cy + (0.5 + jitter(rng, 0.02)) * h,
        cx: body.cx,
        ry: 0.1 * h,
        rx: 0.1 * h,
        angle: 0.0,
    };
    Anatomy {
        body,
        lungs,
        heart,
        spine,
    }
}

fn sample_tumor(cfg: &PhantomConfig, anatomy: &Anatomy, rng: &mut ChaCha8Rng) -> Ellipse {
    let [lo, hi] = cfg.tumor_radius_px;
    let ry = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let rx = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let lung = anatomy.lungs[rng.random_range(0..2)];
    let phi = rng.random_range(0.0..2.0 * PI);
    let (s, c) = lung.angle.sin_cos();
    let (u, v) = (lung.ry * phi.sin(), lung.rx * phi.cos());
    let n = cfg.image_size as f64;
    let margin = ry.max(rx) + 1.0;
    let cy = (lung.cy + u * c - v * s).clamp(margin, n - 1.0 - margin);
    let cx = (lung.cx + u * s + v * c).clamp(margin, n - 1.0 - margin);
    Ellipse {
        cy,
        cx,
        ry,
        rx,
        angle: rng.random_range(0.0..PI),
    }
}

/// Smooth multiplicative field `1 + a * p(u, v)` with `|p| <= 1` over the image.
fn bias_field(n: usize, amplitude: f32, rng: &mut ChaCha8Rng) -> Array2<f32> {
    let coef: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm: f64 = coef.iter().map(|c| c.abs()).sum::<f64>().max(1e-12);
    let half = (n as f64 - 1.0) / 2.0;
    Array2::from_shape_fn((n, n), |(r, c)| {
        let u = (r as f64 - half) / half;
        let v = (c as f64 - half) / half;
        let p = coef[0] * u + coef[1] * v + coef[2] * u * v + coef[3] * (u * u - 0.5) * 2.0
            + coef[4] * (v * v - 0.5) * 2.0;
        1.0 + amplitude * (p / norm) as f32
    })
}

fn render(
    cfg: &PhantomConfig,
    domain: Domain,
    anatomy: &Anatomy,
    tumor: &Ellipse,
    palette: &Palette,
    rng: &mut ChaCha8Rng,
) -> (Image, Mask) {
    let n = cfg.image_size;
    let mut image = Array2::from_elem((n, n), palette.background);
    let mut mask = Array2::zeros((n, n));
    for ((r, c), px) in image.indexed_iter_mut() {
        let (y, x) = (r as f64, c as f64);
        if anatomy.body.contains(y, x) {
            *px = palette.body;
        }
        if anatomy.lungs.iter().any(|l| l.contains(y, x)) {
            *px = palette.lung;
        }
        if anatomy.heart.contains(y, x) {
            *px = palette.heart;
        }
        if anatomy.spine.contains(y, x) {
            *px = palette.spine;
        }
        if tumor.contains(y, x) {
            *px = palette.tumor;
            mask[(r, c)] = 1u8;
        }
    }
    let sigma = match domain {
        Domain::A => cfg.noise_sigma_a,
        Domain::B => cfg.noise_sigma_b,
    };
    if domain == Domain::B {
        let field = bias_field(n, cfg.bias_amplitude_b, rng);
        image *= &field;
    }
    if sigma > 0.0 {
        let normal = Normal::new(0.0f32, sigma).expect("finite sigma");
        image.mapv_inplace(|v| v + normal.sample(rng));
    }
    (image, mask)
}

fn palette_for_subject(cfg: &PhantomConfig, domain: Domain, rng: &mut ChaCha8Rng) -> Palette {
    match domain {
        Domain::A => cfg.palette_a.clone(),
        Domain::B => {
            let j = cfg.intensity_jitter_b as f64;
            let gain = 1.0 + jitter(rng, j) as f32;
            let p = &cfg.palette_b;
            Palette {
                background: p.background * gain,
                body: p.body * gain,
                lung: p.lung * gain,
                heart: p.heart * gain,
                spine: p.spine * gain,
                tumor: p.tumor * gain,
            }
        }
    }
}

struct SubjectPlan {
    domain: Domain,
    index: usize,
    split: Split,
    longitudinal: bool,
}

fn subject_plans(cfg: &PhantomConfig) -> Vec<SubjectPlan> {
    let mut plans = Vec::new();
    for i in 0..cfg.subjects_a {
        let split = if i < cfg.subjects_a - cfg.subjects_a_val {
            Split::Train
        } else {
            Split::Val
        };
        plans.push(SubjectPlan {
            domain: Domain::A,
            index: i,
            split,
            longitudinal: false,
        });
    }
    let b = [
        (cfg.subjects_b_train, Split::Train),
        (cfg.subjects_b_val, Split::Val),
        (cfg.subjects_b_test, Split::Test),
    ];
    let mut index = 0;
    for (count, split) in b {
        for _ in 0..count {
            plans.push(SubjectPlan {
                domain: Domain::B,
                index,
                split,
                longitudinal: split == Split::Test,
            });
            index += 1;
        }
    }
    plans
}

/// Generates the whole corpus in memory, in manifest order.
pub fn generate_samples(cfg: &PhantomConfig) -> Result<Vec<(Sample, Split)>> {
    cfg.validate()?;
    let spacing = Spacing::new(cfg.spacing_mm[0], cfg.spacing_mm[1])?;
    let mut out = Vec::new();
    for plan in subject_plans(cfg) {
        let domain_tag = plan.domain as u64;
        let subject_id = format!("{}{:03}", plan.domain, plan.index);
        let mut subject_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[domain_tag, plan.index as u64]));
        let anatomy = sample_anatomy(cfg.image_size as f64, &mut subject_rng);
        let palette = palette_for_subject(cfg, plan.domain, &mut subject_rng);

        if plan.longitudinal {
            let tumor = sample_tumor(cfg, &anatomy, &mut subject_rng);
            let [g0, g1] = cfg.growth_per_week;
            let growth = if g1 > g0 {
                subject_rng.random_range(g0..=g1)
            } else {
                g0
            };
            for week in 0..cfg.test_timepoints {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    cfg.seed,
                    &[domain_tag, plan.index as u64, 1000 + week as u64],
                ));
                let factor = (1.0 + growth * week as f64).sqrt();
                let (image, mask) =
                    render(cfg, plan.domain, &anatomy, &tumor.scaled(factor), &palette, &mut rng);
                let id = format!("{subject_id}_w{week}");
                let sample = Sample::new(id, &subject_id, plan.domain, spacing, image, Some(mask))?
                    .with_timepoint(week as u32);
                out.push((sample, plan.split));
            }
        } else {
            for slice in 0..cfg.slices_per_subject {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    cfg.seed,
                    &[domain_tag, plan.index as u64, slice as u64],
                ));
                let tumor = sample_tumor(cfg, &anatomy, &mut rng);
                let (image, mask) =
                    render(cfg, plan.domain, &anatomy, &tumor, &palette, &mut rng);
                let id = format!("{subject_id}_s{slice}");
                let sample = Sample::new(id, &subject_id, plan.domain, spacing, image, Some(mask))?;
                out.push((sample, plan.split));
            }
        }
    }
    Ok(out)
}

/// Generates the corpus and persists it as a dataset directory under `out`.
pub fn generate_phantoms(cfg: &PhantomConfig, out: &Path) -> Result<DatasetManifest> {
    let samples = generate_samples(cfg)?;
    let mut dataset = Dataset::create(out, Some(cfg.seed), cfg.slice_thickness_mm)?;
    for (sample, split) in &samples {
        dataset.push(sample, *split, IntensityScale::Raw, None)?;
    }
    dataset.finish()
}
