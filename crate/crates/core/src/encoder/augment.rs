//! Training-time image augmentation.
//!
//! Three cheap, seeded transforms: shifted crop with edge replication,
//! horizontal flip, and mild rescaling. Each is drawn from the supplied RNG
//! in a fixed order (crop, flip, scale), so the same RNG state always yields
//! the same augmented image.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::Image;

/// Which augmentations to apply. The default is the usual recipe for small
/// images: 2-pixel shifted crops plus horizontal flips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Pad each side by this many edge-replicated pixels, then crop back to
    /// the original size at a random offset. `0` disables.
    pub crop_pad: usize,
    /// Mirror left-right with probability one half.
    pub horizontal_flip: bool,
    /// Rescale by a factor drawn from `[0.9, 1.1]` with bilinear resampling.
    pub random_scale: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_pad: 2,
            horizontal_flip: true,
            random_scale: false,
        }
    }
}

impl AugmentConfig {
    /// No-op configuration (evaluation and embedding paths).
    pub fn none() -> Self {
        Self {
            crop_pad: 0,
            horizontal_flip: false,
            random_scale: false,
        }
    }

    pub fn is_noop(&self) -> bool {
        self.crop_pad == 0 && !self.horizontal_flip && !self.random_scale
    }
}

fn shifted_crop(img: &Image, pad: usize, dy: isize, dx: isize) -> Image {
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let mut pixels = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            // Reading off the padded canvas at offset (dy, dx) equals reading
            // the source at y + dy - pad, clamped to the edge (replication).
            let sy = (y as isize + dy - pad as isize).clamp(0, h as isize - 1) as usize;
            for x in 0..w {
                let sx = (x as isize + dx - pad as isize).clamp(0, w as isize - 1) as usize;
                pixels.push(img.at(ch, sy, sx));
            }
        }
    }
    Image::new(c, h, w, pixels).expect("same dims, same range")
}

fn mirrored(img: &Image) -> Image {
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let mut pixels = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                pixels.push(img.at(ch, y, w - 1 - x));
            }
        }
    }
    Image::new(c, h, w, pixels).expect("same dims, same range")
}

fn rescaled(img: &Image, factor: f64) -> Image {
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut pixels = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let plane = img.plane(ch);
        for y in 0..h {
            for x in 0..w {
                let sy = cy + (y as f64 - cy) / factor;
                let sx = cx + (x as f64 - cx) / factor;
                let v = crate::datasets::bilinear_sample(plane, h, w, sy, sx);
                pixels.push(v.clamp(0.0, 1.0));
            }
        }
    }
    Image::new(c, h, w, pixels).expect("clamped")
}

/// Apply the configured augmentations. Draws from `rng` in a fixed order;
/// disabled transforms draw nothing.
pub fn augment_image(img: &Image, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Image {
    let mut out = None;
    if cfg.crop_pad > 0 {
        let dy = rng.gen_range(0..=2 * cfg.crop_pad) as isize;
        let dx = rng.gen_range(0..=2 * cfg.crop_pad) as isize;
        out = Some(shifted_crop(img, cfg.crop_pad, dy, dx));
    }
    if cfg.horizontal_flip && rng.gen_bool(0.5) {
        let src = out.as_ref().unwrap_or(img);
        out = Some(mirrored(src));
    }
    if cfg.random_scale {
        let factor = rng.gen_range(0.9..1.1);
        let src = out.as_ref().unwrap_or(img);
        out = Some(rescaled(src, factor));
    }
    out.unwrap_or_else(|| img.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn gradient_image() -> Image {
        let mut px = Vec::new();
        for y in 0..8 {
            for x in 0..8 {
                px.push((y * 8 + x) as f64 / 63.0);
            }
        }
        Image::new(1, 8, 8, px).unwrap()
    }

    #[test]
    fn centered_crop_is_identity() {
        let img = gradient_image();
        let same = shifted_crop(&img, 2, 2, 2);
        assert_eq!(img.pixels(), same.pixels());
    }

    #[test]
    fn crop_shifts_and_replicates_edges() {
        let img = gradient_image();
        // Offset (0, 2) with pad 2 shifts rows down by two: row 0 repeats.
        let shifted = shifted_crop(&img, 2, 0, 2);
        assert_eq!(shifted.at(0, 0, 3), img.at(0, 0, 3));
        assert_eq!(shifted.at(0, 1, 3), img.at(0, 0, 3));
        assert_eq!(shifted.at(0, 5, 3), img.at(0, 3, 3));
    }

    #[test]
    fn double_mirror_is_identity() {
        let img = gradient_image();
        let twice = mirrored(&mirrored(&img));
        assert_eq!(img.pixels(), twice.pixels());
    }

    #[test]
    fn unit_scale_is_near_identity() {
        let img = gradient_image();
        let same = rescaled(&img, 1.0);
        for (a, b) in img.pixels().iter().zip(same.pixels()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn augmentation_is_reproducible_and_bounded() {
        let img = gradient_image();
        let cfg = AugmentConfig {
            crop_pad: 2,
            horizontal_flip: true,
            random_scale: true,
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let a = augment_image(&img, &cfg, &mut r1);
        let b = augment_image(&img, &cfg, &mut r2);
        assert_eq!(a.pixels(), b.pixels());
        assert!(a.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn noop_config_returns_the_image() {
        let img = gradient_image();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment_image(&img, &AugmentConfig::none(), &mut rng);
        assert_eq!(img.pixels(), out.pixels());
        assert!(AugmentConfig::none().is_noop());
        assert!(!AugmentConfig::default().is_noop());
    }
}
