use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};
use crate::metrics::{DEFAULT_BINS, DEFAULT_KL_EPS};
use crate::nn::Precision;
use crate::phantom::{derive_seed, PhantomConfig};
use crate::segmentation::{SegArchitecture, SegKind, SegTrainConfig};
use crate::synthesis::SynthesisConfig;

/// Prefix of environment variables that override config keys.
pub const ENV_PREFIX: &str = "XMODSEG_";

/// Training-data composition for a segmenter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "real")]
    Real,
    #[serde(rename = "real+pmr")]
    RealPmr,
    #[serde(rename = "pmr")]
    Pmr,
    #[serde(rename = "real+ablated-pmr")]
    RealAblatedPmr,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::Real, Regime::RealPmr, Regime::Pmr, Regime::RealAblatedPmr];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Real => "real",
            Regime::RealPmr => "real+pmr",
            Regime::Pmr => "pmr",
            Regime::RealAblatedPmr => "real+ablated-pmr",
        }
    }

    /// File-system friendly name.
    pub fn slug(self) -> &'static str {
        match self {
            Regime::Real => "real",
            Regime::RealPmr => "real_pmr",
            Regime::Pmr => "pmr",
            Regime::RealAblatedPmr => "real_ablated_pmr",
        }
    }

    pub fn uses_real(self) -> bool {
        self != Regime::Pmr
    }

    pub fn pseudo_variant(self) -> Option<SynthVariant> {
        match self {
            Regime::Real => None,
            Regime::RealPmr | Regime::Pmr => Some(SynthVariant::TumorAware),
            Regime::RealAblatedPmr => Some(SynthVariant::Ablated),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s || r.slug() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown regime `{s}`")))
    }
}

/// The two translation models: with tumor-attention losses, and the
/// plain cycle-consistent ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthVariant {
    TumorAware,
    Ablated,
}

impl SynthVariant {
    pub const ALL: [SynthVariant; 2] = [SynthVariant::TumorAware, SynthVariant::Ablated];

    pub fn name(self) -> &'static str {
        match self {
            SynthVariant::TumorAware => "tumor-aware",
            SynthVariant::Ablated => "ablated",
        }
    }

    pub fn apply(self, cfg: &SynthesisConfig) -> SynthesisConfig {
        let mut c = cfg.clone();
        if self == SynthVariant::Ablated {
            c.weights = c.weights.without_attention();
        }
        c
    }
}

impl FromStr for SynthVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tumor-aware" | "tumor_aware" => Ok(SynthVariant::TumorAware),
            "ablated" => Ok(SynthVariant::Ablated),
            _ => Err(Error::InvalidInput(format!("unknown synthesis variant `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationSection {
    /// Channel-width multiplier applied to every architecture.
    pub width: f64,
    /// Number of labeled real domain-B training subjects.
    pub real_subjects: usize,
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub epoch_steps: u64,
    pub patience: usize,
    pub augment: bool,
    pub precision: Precision,
}

impl Default for SegmentationSection {
    fn default() -> Self {
        let t = SegTrainConfig::default();
        Self {
            width: 0.25,
            real_subjects: 6,
            steps: t.steps,
            batch_size: t.batch_size,
            lr: t.lr,
            epoch_steps: t.epoch_steps,
            patience: t.patience,
            augment: t.augment,
            precision: Precision::F32,
        }
    }
}

impl SegmentationSection {
    pub fn architecture(&self, kind: SegKind) -> SegArchitecture {
        SegArchitecture {
            kind,
            width: self.width,
            precision: self.precision,
        }
    }

    pub fn train_config(&self, seed: u64) -> SegTrainConfig {
        SegTrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            lr: self.lr,
            epoch_steps: self.epoch_steps,
            patience: self.patience,
            augment: self.augment,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub n_bins: usize,
    pub kl_eps: f64,
    /// Model whose predictions feed the growth analysis.
    pub longitudinal_arch: SegKind,
    pub longitudinal_regime: Regime,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            n_bins: DEFAULT_BINS,
            kl_eps: DEFAULT_KL_EPS,
            longitudinal_arch: SegKind::UnetBn,
            longitudinal_regime: Regime::RealPmr,
        }
    }
}

/// Complete description of one experiment. Section-level `seed` keys are
/// replaced by values derived from the global `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_root: PathBuf,
    pub regimes: Vec<Regime>,
    pub architectures: Vec<SegKind>,
    pub phantom: PhantomConfig,
    pub synthesis: SynthesisConfig,
    pub segmentation: SegmentationSection,
    pub evaluation: EvaluationSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            output_root: PathBuf::from("runs/default"),
            regimes: Regime::ALL.to_vec(),
            architectures: SegKind::ALL.to_vec(),
            phantom: PhantomConfig::default(),
            synthesis: SynthesisConfig::default(),
            segmentation: SegmentationSection::default(),
            evaluation: EvaluationSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// 64 px phantoms and reduced networks; the configuration used by the
    /// acceptance run.
    pub fn desk() -> Self {
        Self {
            output_root: PathBuf::from("runs/desk"),
            phantom: PhantomConfig::desk(),
            synthesis: SynthesisConfig::desk(),
            segmentation: SegmentationSection {
                width: 0.125,
                real_subjects: 1,
                steps: 300,
                batch_size: 4,
                lr: 1e-3,
                ..SegmentationSection::default()
            },
            ..Self::default()
        }
        .resolved()
    }

    /// Tiny budgets for smoke runs and tests.
    pub fn smoke() -> Self {
        let mut c = Self::desk();
        c.output_root = PathBuf::from("runs/smoke");
        c.phantom.subjects_a = 4;
        c.phantom.subjects_b_train = 3;
        c.phantom.subjects_b_val = 1;
        c.phantom.subjects_b_test = 2;
        c.phantom.test_timepoints = 3;
        c.synthesis.generator_base = 4;
        c.synthesis.residual_blocks = 2;
        c.synthesis.discriminator_widths = [4, 8, 8, 8];
        c.synthesis.attention_widths = [4, 4, 8, 8, 8];
        c.synthesis.steps = 3;
        c.segmentation.width = 0.0625;
        c.segmentation.real_subjects = 2;
        c.segmentation.steps = 4;
        c.segmentation.batch_size = 2;
        c.segmentation.epoch_steps = 2;
        c.resolved()
    }

    /// Propagates the global seed into the sections.
    pub fn resolved(mut self) -> Self {
        self.phantom.seed = toml_safe(derive_seed(self.seed, &[1]));
        self.synthesis.seed = toml_safe(derive_seed(self.seed, &[2]));
        self
    }

    /// Seed for the segmenter of one architecture; shared by all regimes so
    /// they differ only in their training data.
    pub fn segmentation_seed(&self, kind: SegKind) -> u64 {
        derive_seed(self.seed, &[3, kind as u64])
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.synthesis.validate()?;
        self.segmentation.train_config(0).validate()?;
        for k in &self.architectures {
            self.segmentation.architecture(*k).validate()?;
        }
        if self.regimes.is_empty() || self.architectures.is_empty() {
            return Err(Error::Config("at least one regime and one architecture are required".into()));
        }
        if self.segmentation.real_subjects == 0 || self.segmentation.real_subjects > self.phantom.subjects_b_train {
            return Err(Error::Config(format!(
                "segmentation.real_subjects must be in 1..={}",
                self.phantom.subjects_b_train
            )));
        }
        if self.phantom.subjects_b_val == 0 || self.phantom.subjects_b_test == 0 {
            return Err(Error::Config("domain B needs validation and test subjects".into()));
        }
        let ev = &self.evaluation;
        if !self.architectures.contains(&ev.longitudinal_arch) || !self.regimes.contains(&ev.longitudinal_regime) {
            return Err(Error::Config(format!(
                "longitudinal model {}/{} is not among the trained models",
                ev.longitudinal_arch, ev.longitudinal_regime
            )));
        }
        if self.phantom.test_timepoints < 3 {
            return Err(Error::Config("growth analysis needs at least 3 test timepoints".into()));
        }
        if self.phantom.image_size % 16 != 0 {
            return Err(Error::Config("image_size must be a multiple of 16".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_env(text, std::env::vars())
    }

    /// Parses TOML, then applies `XMODSEG_<SECTION>_<KEY>=value` overrides.
    /// `<SECTION>` is `EXPERIMENT` for top-level keys; values are parsed as
    /// TOML literals and fall back to plain strings.
    pub fn from_toml_with_env(text: &str, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut overrides: Vec<(String, String)> = env
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        overrides.sort();
        for (key, value) in overrides {
            apply_override(&mut doc, &key[ENV_PREFIX.len()..], &value)?;
        }
        let cfg: Self = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let cfg = cfg.resolved();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path).at(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Short SHA-256 of the canonical JSON form. The output location is
    /// left out so that relocated runs keep their identity.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_root = PathBuf::new();
        Ok(short_hash(serde_json::to_string(&c)?.as_bytes()))
    }
}

// TOML integers are signed 64-bit.
fn toml_safe(seed: u64) -> u64 {
    seed >> 1
}

const SECTIONS: [&str; 4] = ["phantom", "synthesis", "segmentation", "evaluation"];

fn apply_override(doc: &mut toml::Table, name: &str, raw: &str) -> Result<()> {
    let lower = name.to_ascii_lowercase();
    let (section, key) = lower
        .split_once('_')
        .ok_or_else(|| Error::Config(format!("override `{ENV_PREFIX}{name}` lacks a key")))?;
    let path: Vec<&str> = key.split("__").collect();
    let mut table = match section {
        "experiment" => doc,
        s if SECTIONS.contains(&s) => doc
            .entry(s)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{s}` is not a table")))?,
        other => return Err(Error::Config(format!("override names unknown section `{other}`"))),
    };
    for part in &path[..path.len() - 1] {
        table = table
            .entry(*part)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{part}` is not a table")))?;
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    table.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

/// First 16 hex digits of SHA-256.
pub fn short_hash(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::desk();
        let text = c.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_with_env(&text, []).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn env_overrides() {
        let text = ExperimentConfig::desk().to_toml_string().unwrap();
        let env = [
            ("XMODSEG_SYNTHESIS_STEPS".to_string(), "12".to_string()),
            ("XMODSEG_SYNTHESIS_WEIGHTS__SHAPE".to_string(), "0.0".to_string()),
            ("XMODSEG_EXPERIMENT_OUTPUT_ROOT".to_string(), "elsewhere".to_string()),
            ("XMODSEG_EVALUATION_LONGITUDINAL_REGIME".to_string(), "pmr".to_string()),
            ("UNRELATED".to_string(), "1".to_string()),
        ];
        let c = ExperimentConfig::from_toml_with_env(&text, env).unwrap();
        assert_eq!(c.synthesis.steps, 12);
        assert_eq!(c.synthesis.weights.shape, 0.0);
        assert_eq!(c.output_root, PathBuf::from("elsewhere"));
        assert_eq!(c.evaluation.longitudinal_regime, Regime::Pmr);
        let bad = [("XMODSEG_NOPE_X".to_string(), "1".to_string())];
        assert!(ExperimentConfig::from_toml_with_env(&text, bad).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::desk();
        let mut b = a.clone();
        b.segmentation.steps += 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 16);
    }

    #[test]
    fn regime_names() {
        for r in Regime::ALL {
            assert_eq!(r.name().parse::<Regime>().unwrap(), r);
            assert_eq!(r.slug().parse::<Regime>().unwrap(), r);
        }
    }
}
