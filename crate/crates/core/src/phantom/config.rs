use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tissue intensities for one domain, in that domain's raw units
/// (Hounsfield-like for `A`, arbitrary MR-like units for `B`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Palette {
    pub background: f32,
    pub body: f32,
    pub lung: f32,
    pub heart: f32,
    pub spine: f32,
    pub tumor: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub image_size: usize,
    pub spacing_mm: [f64; 2],
    pub slice_thickness_mm: f64,
    /// Domain-A subjects; every slice is labeled.
    pub subjects_a: usize,
    pub subjects_a_val: usize,
    pub slices_per_subject: usize,
    pub subjects_b_train: usize,
    pub subjects_b_val: usize,
    pub subjects_b_test: usize,
    /// Weekly scans per held-out domain-B subject.
    pub test_timepoints: usize,
    /// Tumor area change per week, as a fraction of the baseline area.
    pub growth_per_week: [f64; 2],
    pub tumor_radius_px: [f64; 2],
    pub palette_a: Palette,
    pub palette_b: Palette,
    pub noise_sigma_a: f32,
    pub noise_sigma_b: f32,
    /// Maximum relative deviation of the multiplicative domain-B bias field.
    pub bias_amplitude_b: f32,
    /// Relative per-subject jitter of the domain-B tissue intensities.
    pub intensity_jitter_b: f32,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            spacing_mm: [0.9, 0.9],
            slice_thickness_mm: 2.5,
            subjects_a: 24,
            subjects_a_val: 0,
            slices_per_subject: 2,
            subjects_b_train: 16,
            subjects_b_val: 4,
            subjects_b_test: 6,
            test_timepoints: 4,
            growth_per_week: [-0.12, -0.04],
            tumor_radius_px: [20.0, 36.0],
            palette_a: Palette {
                background: -1000.0,
                body: 30.0,
                lung: -850.0,
                heart: 45.0,
                spine: 650.0,
                tumor: 75.0,
            },
            palette_b: Palette {
                background: 0.0,
                body: 210.0,
                lung: 40.0,
                heart: 360.0,
                spine: 90.0,
                tumor: 500.0,
            },
            noise_sigma_a: 25.0,
            noise_sigma_b: 18.0,
            bias_amplitude_b: 0.2,
            intensity_jitter_b: 0.15,
            seed: 7,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size < 64 {
            return bad(format!("image_size must be >= 64, got {}", self.image_size));
        }
        let [lo, hi] = self.tumor_radius_px;
        if !(lo > 0.0) {
            return bad(format!("degenerate tumor radius {lo}"));
        }
        if hi < lo {
            return bad(format!("tumor radius range [{lo}, {hi}] is inverted"));
        }
        // The tumor must fit inside the image with room to sit on a lung border.
        if 2.0 * hi >= self.image_size as f64 / 2.0 {
            return bad(format!(
                "tumor radius {hi} px does not fit a {} px image",
                self.image_size
            ));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0)) || !(self.slice_thickness_mm > 0.0) {
            return bad("spacing and slice thickness must be positive".into());
        }
        if self.subjects_a_val > self.subjects_a {
            return bad("subjects_a_val exceeds subjects_a".into());
        }
        if self.subjects_a == self.subjects_a_val || self.slices_per_subject == 0 {
            return bad("at least one domain-A training slice is required".into());
        }
        if self.subjects_b_test > 0 && self.test_timepoints < 1 {
            return bad("test_timepoints must be >= 1".into());
        }
        let [g0, g1] = self.growth_per_week;
        if g1 < g0 || (1.0 + g0.min(0.0) * self.test_timepoints as f64) <= 0.05 {
            return bad(format!("growth range [{g0}, {g1}] collapses the tumor"));
        }
        if !(0.0..1.0).contains(&self.bias_amplitude_b) {
            return bad("bias_amplitude_b must be in [0, 1)".into());
        }
        if self.noise_sigma_a < 0.0 || self.noise_sigma_b < 0.0 {
            return bad("noise sigma must be non-negative".into());
        }
        Ok(())
    }

    /// A 64 px configuration used by tests, examples and the desk-scale experiment.
    pub fn desk() -> Self {
        Self {
            image_size: 64,
            spacing_mm: [3.6, 3.6],
            tumor_radius_px: [5.0, 9.0],
            ..Self::default()
        }
    }
}
