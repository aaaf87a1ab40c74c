use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{bicubic_downsample, Image};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Aligned HR/LR training pair; `lr` is the degraded `hr`.
#[derive(Debug, Clone)]
pub struct PatchPair {
    pub hr: Image,
    pub lr: Image,
    pub scale: usize,
}

/// Reads a dataset manifest: one image path per line, blank lines and
/// `#` comments ignored, relative paths resolved against the manifest.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = PathBuf::from(l);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        })
        .collect())
}

/// Serializable position of a sampler's random stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerState {
    pub seed: u64,
    /// ChaCha word position, decimal string (u128 does not fit JSON numbers).
    pub word_pos: String,
    /// Pairs drawn so far; fixes the epoch and the slot in its permutation.
    #[serde(default)]
    pub drawn: u64,
}

/// Seeded stream of random aligned crops. Images are visited without
/// replacement: each pass over the dataset follows a fresh permutation.
#[derive(Debug, Clone)]
pub struct PatchSampler {
    images: Vec<Image>,
    patch: usize,
    scale: usize,
    augment: bool,
    seed: u64,
    rng: ChaCha8Rng,
    drawn: u64,
    order: Vec<usize>,
}

impl PatchSampler {
    /// Images smaller than the patch are skipped with a warning.
    pub fn new(dataset: Vec<Image>, patch: usize, scale: usize, seed: u64, augment: bool) -> Result<Self> {
        if scale == 0 || patch == 0 || patch % scale != 0 {
            return Err(Error::usage(format!(
                "patch size {patch} must be a positive multiple of the scale factor {scale}"
            )));
        }
        if dataset.is_empty() {
            return Err(Error::usage("dataset is empty"));
        }
        let total = dataset.len();
        let images: Vec<Image> = dataset
            .into_iter()
            .filter(|img| {
                let ok = img.height() >= patch && img.width() >= patch;
                if !ok {
                    log::warn!(
                        "skipping {} ({}x{}): smaller than the {patch}x{patch} patch",
                        img.source.as_deref().map(|p| p.display().to_string()).unwrap_or_else(|| "<memory>".into()),
                        img.height(),
                        img.width()
                    );
                }
                ok
            })
            .collect();
        if images.is_empty() {
            return Err(Error::usage(format!(
                "none of the {total} images is at least {patch}x{patch}"
            )));
        }
        Ok(PatchSampler {
            images,
            patch,
            scale,
            augment,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            drawn: 0,
            order: Vec::new(),
        })
    }

    /// Permutation for pass `epoch`, from its own stream so crops and
    /// shuffles do not interleave.
    fn permutation(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.images.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
        order
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn state(&self) -> SamplerState {
        SamplerState {
            seed: self.seed,
            word_pos: self.rng.get_word_pos().to_string(),
            drawn: self.drawn,
        }
    }

    pub fn restore(&mut self, state: &SamplerState) -> Result<()> {
        let pos: u128 = state
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad sampler position {:?}", state.word_pos)))?;
        self.seed = state.seed;
        self.rng = ChaCha8Rng::seed_from_u64(state.seed);
        self.rng.set_word_pos(pos);
        self.drawn = state.drawn;
        self.order.clear();
        Ok(())
    }

    pub fn next_pair(&mut self) -> Result<PatchPair> {
        let n = self.images.len() as u64;
        let slot = (self.drawn % n) as usize;
        if slot == 0 || self.order.is_empty() {
            self.order = self.permutation(self.drawn / n);
        }
        self.drawn += 1;
        let img = &self.images[self.order[slot]];
        let top = self.rng.gen_range(0..=img.height() - self.patch);
        let left = self.rng.gen_range(0..=img.width() - self.patch);
        let mut hr = img.crop(top, left, self.patch, self.patch)?;
        if self.augment {
            if self.rng.gen_bool(0.5) {
                hr = hr.flip_horizontal();
            }
            for _ in 0..self.rng.gen_range(0..4) {
                hr = hr.rotate90();
            }
        }
        let lr = bicubic_downsample(&hr, self.scale)?;
        Ok(PatchPair {
            hr,
            lr,
            scale: self.scale,
        })
    }

    /// `(lr, hr)` tensors for `batch` consecutive pairs.
    pub fn next_batch<T: Scalar>(&mut self, batch: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        let pairs = (0..batch).map(|_| self.next_pair()).collect::<Result<Vec<_>>>()?;
        let lr: Vec<Image> = pairs.iter().map(|p| p.lr.clone()).collect();
        let hr: Vec<Image> = pairs.into_iter().map(|p| p.hr).collect();
        Ok((Image::batch_to_tensor(&lr)?, Image::batch_to_tensor(&hr)?))
    }
}
