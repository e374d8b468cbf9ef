//! Pseudo-incremental episode sampling.
//!
//! An episode rehearses an incremental session using only base-session data:
//! it draws `2 * way` distinct classes, keeps the first `way` as a stand-in
//! base group, and turns the second `way` into stand-in novel classes by
//! rotating every one of their images by a per-class angle. The rotated
//! classes get fresh synthetic ids past the real label space, so downstream
//! code treats them as genuinely unseen.

use rand_chacha::ChaCha8Rng;

use super::split::sample_distinct;
use super::{rotate, Dataset, DatasetError, Image, RotationAngle};
use rand::Rng;

/// One class inside an episode: the label it carries, where its images came
/// from, the rotation applied (identity for the stand-in base group), and the
/// support/query images themselves.
#[derive(Debug, Clone)]
pub struct EpisodeClass {
    pub class_id: usize,
    pub source_class: usize,
    pub rotation: RotationAngle,
    pub support: Vec<Image>,
    pub query: Vec<Image>,
}

/// A sampled rehearsal episode: `base` mimics already-known classes, and
/// `incremental` mimics a batch of novel few-shot classes.
#[derive(Debug, Clone)]
pub struct PseudoEpisode {
    pub base: Vec<EpisodeClass>,
    pub incremental: Vec<EpisodeClass>,
}

impl PseudoEpisode {
    /// All classes, stand-in base group first.
    pub fn classes(&self) -> impl Iterator<Item = &EpisodeClass> {
        self.base.iter().chain(self.incremental.iter())
    }
}

/// Sample one episode from `allowed_classes` of `dataset`. Each class
/// contributes `shot` support and `query` query images, all distinct. The
/// angle applied to each stand-in novel class is drawn from `angle_pool`.
pub fn sample_pseudo_episode(
    dataset: &Dataset,
    allowed_classes: &[usize],
    way: usize,
    shot: usize,
    query: usize,
    angle_pool: &[RotationAngle],
    rng: &mut ChaCha8Rng,
) -> Result<PseudoEpisode, DatasetError> {
    if way == 0 || shot == 0 || query == 0 {
        return Err(DatasetError::InvalidArg(
            "episodes need way >= 1, shot >= 1, query >= 1".into(),
        ));
    }
    if angle_pool.is_empty() {
        return Err(DatasetError::InvalidArg(
            "rotation angle pool must not be empty".into(),
        ));
    }
    if allowed_classes.len() < 2 * way {
        return Err(DatasetError::InvalidArg(format!(
            "need {} distinct classes for a {way}-way episode, have {}",
            2 * way,
            allowed_classes.len()
        )));
    }
    for &c in allowed_classes {
        if c >= dataset.class_count() {
            return Err(DatasetError::InvalidArg(format!(
                "allowed class {c} is outside the dataset's {} classes",
                dataset.class_count()
            )));
        }
    }

    let picked = sample_distinct(2 * way, allowed_classes.len(), rng);
    let chosen: Vec<usize> = picked.iter().map(|&i| allowed_classes[i]).collect();

    let per_class = shot + query;
    let draw_images = |class_id: usize,
                           rng: &mut ChaCha8Rng|
     -> Result<(Vec<Image>, Vec<Image>), DatasetError> {
        let pool = dataset.train_images(class_id);
        if pool.len() < per_class {
            return Err(DatasetError::InsufficientImages(format!(
                "class {class_id} has {} training images, fewer than shot + query = {per_class}",
                pool.len()
            )));
        }
        let idx = sample_distinct(per_class, pool.len(), rng);
        let support = idx[..shot].iter().map(|&i| pool[i].clone()).collect();
        let query_imgs = idx[shot..].iter().map(|&i| pool[i].clone()).collect();
        Ok((support, query_imgs))
    };

    let mut base = Vec::with_capacity(way);
    for &class_id in &chosen[..way] {
        let (support, query_imgs) = draw_images(class_id, rng)?;
        base.push(EpisodeClass {
            class_id,
            source_class: class_id,
            rotation: RotationAngle::Identity,
            support,
            query: query_imgs,
        });
    }

    let mut incremental = Vec::with_capacity(way);
    for (k, &source_class) in chosen[way..].iter().enumerate() {
        let angle = angle_pool[rng.gen_range(0..angle_pool.len())];
        let (support, query_imgs) = draw_images(source_class, rng)?;
        let support = support.iter().map(|img| rotate(img, &angle)).collect();
        let query_imgs = query_imgs.iter().map(|img| rotate(img, &angle)).collect();
        incremental.push(EpisodeClass {
            class_id: dataset.class_count() + k,
            source_class,
            rotation: angle,
            support,
            query: query_imgs,
        });
    }

    Ok(PseudoEpisode { base, incremental })
}
