use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};

/// Where crops are taken from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum CropMode {
    /// One crop from the image center.
    Center,
    /// Every position on a regular grid with the given stride.
    Grid { stride: usize },
    /// `count` uniformly random positions.
    Random { count: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRecipe {
    pub size: usize,
    pub crop: CropMode,
    /// Rotate each crop by a random multiple of 90°.
    pub rotate: bool,
    /// Flip each crop horizontally, vertically or not at all, at random.
    pub flip: bool,
}

impl PatchRecipe {
    /// Eight random crops per image, each randomly rotated and flipped:
    /// 400 training images yield 3200 patches.
    pub fn augmented(size: usize) -> Self {
        PatchRecipe {
            size,
            crop: CropMode::Random { count: 8 },
            rotate: true,
            flip: true,
        }
    }

    pub fn plain(size: usize, crop: CropMode) -> Self {
        PatchRecipe {
            size,
            crop,
            rotate: false,
            flip: false,
        }
    }
}

fn positions(len: usize, size: usize, stride: usize) -> Vec<usize> {
    (0..=(len - size) / stride).map(|i| i * stride).collect()
}

/// Cuts square patches out of `img` following `recipe`. Output is fully
/// determined by the image, the recipe and `seed`.
pub fn extract_patches(img: &Image, recipe: &PatchRecipe, seed: u64) -> Result<Vec<Image>> {
    let (h, w) = img.dims();
    let size = recipe.size;
    if size == 0 || size > h.min(w) {
        return Err(Error::InvalidArgument(format!(
            "patch size {size} does not fit a {h}x{w} image"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origins: Vec<(usize, usize)> = match recipe.crop {
        CropMode::Center => vec![((h - size) / 2, (w - size) / 2)],
        CropMode::Grid { stride } => {
            if stride == 0 {
                return Err(Error::InvalidArgument("grid stride must be positive".into()));
            }
            let ys = positions(h, size, stride);
            let xs = positions(w, size, stride);
            ys.iter()
                .flat_map(|&y| xs.iter().map(move |&x| (y, x)))
                .collect()
        }
        CropMode::Random { count } => (0..count)
            .map(|_| (rng.random_range(0..=h - size), rng.random_range(0..=w - size)))
            .collect(),
    };
    origins
        .into_iter()
        .map(|(y, x)| {
            let mut patch = img.crop(y, x, size, size)?;
            if recipe.rotate {
                patch = patch.rotate90(rng.random_range(0..4));
            }
            if recipe.flip {
                patch = match rng.random_range(0..3) {
                    0 => patch,
                    1 => patch.flip_horizontal(),
                    _ => patch.flip_vertical(),
                };
            }
            Ok(patch)
        })
        .collect()
}

/// Applies [`extract_patches`] to every image with a per-image seed derived
/// from `seed`, concatenating results in input order.
pub fn extract_corpus_patches(images: &[Image], recipe: &PatchRecipe, seed: u64) -> Result<Vec<Image>> {
    let mut out = Vec::new();
    for (i, img) in images.iter().enumerate() {
        let image_seed = seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        out.extend(extract_patches(img, recipe, image_seed)?);
    }
    Ok(out)
}
