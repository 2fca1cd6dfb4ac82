//! Alternating training of the three networks.

mod config;
mod phases;
mod run;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{Codec, Jpeg};
use crate::error::{Error, Result};
use crate::imaging::{extract_corpus_patches, list_images, load_image, resample, CropMode, Image, PatchRecipe, ResampleMethod};

pub use config::{QualityMode, TrainingConfig};
pub use phases::{
    fdnn_sample_grad, train_fdnn, train_ppnn, train_vcnn, EpochRecord, Observer, Phase, PhaseContext, PhaseReport,
    PhaseSchedule,
};
pub use run::{
    checkpoint_name, read_log, run_algorithm1, run_algorithm1_on, run_training, LogRow, QualityUsage, RunOptions,
    TrainingState, DEPLOY_FDNN, DEPLOY_PPNN, LOG_FILE, PROGRESS_FILE,
};

/// Step-decay learning rate: `lr0` until 3/5 of the steps, `lr0/2` until
/// 4/5, then `lr0/4`.
pub fn lr_schedule(step: usize, total_steps: usize, lr0: f64) -> f64 {
    let (s, t) = (step as u128 * 5, total_steps as u128);
    if s < 3 * t {
        lr0
    } else if s < 4 * t {
        lr0 / 2.0
    } else {
        lr0 / 4.0
    }
}

/// Half-resolution descriptions of every image under every method, as
/// `(index into corpus, description)` in corpus-major order.
pub fn interpolated_descriptions(corpus: &[Image], methods: &[ResampleMethod]) -> Result<Vec<(usize, Image)>> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    if methods.is_empty() {
        return Err(Error::InvalidArgument("no interpolation methods".into()));
    }
    let mut out = Vec::with_capacity(corpus.len() * methods.len());
    for (i, x) in corpus.iter().enumerate() {
        if x.height() % 2 != 0 || x.width() % 2 != 0 {
            return Err(Error::OddDimensions {
                height: x.height(),
                width: x.width(),
            });
        }
        for &m in methods {
            out.push((i, resample(x, 0.5, m)?));
        }
    }
    Ok(out)
}

/// `(X, Y0)` pairs: each image with its factor-0.5 downsample under every
/// listed method.
pub fn build_initial_descriptions(corpus: &[Image], methods: &[ResampleMethod]) -> Result<Vec<(Image, Image)>> {
    Ok(interpolated_descriptions(corpus, methods)?
        .into_iter()
        .map(|(i, y)| (corpus[i].clone(), y))
        .collect())
}

/// Quality factor per item: the factor list repeated to cover `count`
/// items, then shuffled, so every factor is used about equally often.
pub fn assign_qualities(count: usize, factors: &[u8], seed: u64) -> Vec<u8> {
    if factors.is_empty() {
        return Vec::new();
    }
    let mut out: Vec<u8> = factors.iter().copied().cycle().take(count).collect();
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}

pub(crate) fn quality_counts(qualities: &[u8]) -> BTreeMap<u8, usize> {
    let mut counts = BTreeMap::new();
    for &q in qualities {
        *counts.entry(q).or_insert(0) += 1;
    }
    counts
}

/// JPEG round trip of each description at its assigned quality.
pub fn compress_descriptions(descriptions: &[&Image], qualities: &[u8]) -> Result<Vec<Image>> {
    if descriptions.len() != qualities.len() {
        return Err(Error::InvalidArgument("one quality per description is required".into()));
    }
    descriptions
        .iter()
        .zip(qualities)
        .map(|(y, &q)| {
            let original = (2 * y.height(), 2 * y.width());
            Jpeg.round_trip(y, q, original).map(|(z, _)| z)
        })
        .collect()
}

/// Cuts the training patches described by `cfg` out of a list of images:
/// `ceil(n / images)` random crops per image, shuffled and truncated to `n`.
pub fn patches_from_images(images: &[Image], cfg: &TrainingConfig) -> Result<Vec<Image>> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("no training images".into()));
    }
    let recipe = PatchRecipe {
        size: cfg.patch_size,
        crop: CropMode::Random {
            count: cfg.corpus_size.div_ceil(images.len()),
        },
        rotate: cfg.augment,
        flip: cfg.augment,
    };
    let mut patches = extract_corpus_patches(images, &recipe, derive_seed(cfg.seed, &[0xC0])) ?;
    patches.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0xC1])));
    patches.truncate(cfg.corpus_size);
    Ok(patches)
}

/// Loads every image under `cfg.corpus_path` and cuts the training patches.
pub fn load_corpus(cfg: &TrainingConfig) -> Result<Vec<Image>> {
    let dir = cfg
        .corpus_path
        .as_ref()
        .ok_or_else(|| Error::Config("corpus_path is not set".into()))?;
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!("no images in {}", dir.display())));
    }
    let images = paths.iter().map(load_image).collect::<Result<Vec<_>>>()?;
    patches_from_images(&images, cfg)
}

/// Mixes a base seed with tags (SplitMix64 finalizer per tag).
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(seed, |acc, &t| {
        let mut z = acc ^ t.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    })
}
