use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ResampleMethod;
use crate::losses::Objective;

/// How quality factors map to trained models.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QualityMode {
    /// One model pair for every configured factor.
    #[default]
    Shared,
    /// An independent model pair per factor, each under `q{Q}/`.
    PerFactor,
}

/// Hyper-parameters of the alternating training.
///
/// Config files are TOML; the short names `K`, `p`, `q`, `m` and `n` are
/// accepted as aliases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Outer iterations.
    #[serde(alias = "K")]
    pub outer_iterations: usize,
    /// Epochs of each PPNN and VCNN phase, and of the final PPNN retrain.
    #[serde(alias = "p")]
    pub ppnn_epochs: usize,
    /// Epochs of each FDNN phase.
    #[serde(alias = "q")]
    pub fdnn_epochs: usize,
    #[serde(alias = "m")]
    pub batch_size: usize,
    /// Number of training patches.
    #[serde(alias = "n")]
    pub corpus_size: usize,
    pub lr0: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub quality_factors: Vec<u8>,
    pub quality_mode: QualityMode,
    pub seed: u64,
    pub patch_size: usize,
    /// Directory of training images. Relative paths resolve against the
    /// config file's directory.
    pub corpus_path: Option<PathBuf>,
    /// Random rotations and flips of training patches.
    pub augment: bool,
    /// Interpolations used for the first descriptions.
    pub init_methods: Vec<ResampleMethod>,
    pub objective: Objective,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            outer_iterations: 3,
            ppnn_epochs: 60,
            fdnn_epochs: 30,
            batch_size: 20,
            corpus_size: 3200,
            lr0: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            quality_factors: vec![5, 10, 20, 40],
            quality_mode: QualityMode::Shared,
            seed: 0,
            patch_size: 160,
            corpus_path: None,
            augment: true,
            init_methods: ResampleMethod::ALL.to_vec(),
            objective: Objective::default(),
        }
    }
}

impl TrainingConfig {
    /// Small schedule: 32 patches of 80×80, K=2, p=q=5, m=4.
    pub fn desk() -> Self {
        TrainingConfig {
            outer_iterations: 2,
            ppnn_epochs: 5,
            fdnn_epochs: 5,
            batch_size: 4,
            corpus_size: 32,
            patch_size: 80,
            ..TrainingConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainingConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(corpus), Some(base)) = (&cfg.corpus_path, path.parent()) {
            if corpus.is_relative() {
                cfg.corpus_path = Some(base.join(corpus));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        for (name, v) in [
            ("outer_iterations", self.outer_iterations),
            ("ppnn_epochs", self.ppnn_epochs),
            ("fdnn_epochs", self.fdnn_epochs),
            ("batch_size", self.batch_size),
            ("corpus_size", self.corpus_size),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if !(self.lr0.is_finite() && self.lr0 >= 0.0) {
            return fail(format!("lr0 must be a non-negative number, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_epsilon > 0.0) {
            return fail("adam_epsilon must be positive".into());
        }
        if self.quality_factors.is_empty() {
            return fail("quality_factors is empty".into());
        }
        if let Some(q) = self.quality_factors.iter().find(|q| !(1..=100).contains(*q)) {
            return fail(format!("quality factor {q} outside 1..=100"));
        }
        if self.patch_size < 16 || self.patch_size % 2 != 0 {
            return fail(format!("patch_size must be even and at least 16, got {}", self.patch_size));
        }
        if self.init_methods.is_empty() {
            return fail("init_methods is empty".into());
        }
        let w = self.objective.weights;
        if ![w.content, w.gradient, w.ssim].iter().all(|v| v.is_finite()) {
            return fail("loss weights must be finite".into());
        }
        Ok(())
    }

    /// Total training epochs: `K·(2p + q) + p`.
    pub fn total_epochs(&self) -> usize {
        self.outer_iterations * (2 * self.ppnn_epochs + self.fdnn_epochs) + self.ppnn_epochs
    }

    /// Batches per epoch: `floor(n/m)`, or a single smaller batch when `n < m`.
    pub fn batches_per_epoch(&self) -> usize {
        (self.corpus_size / self.batch_size).max(1)
    }
}
