//! Seeded synthetic blob dataset.
//!
//! Each class is an anisotropic Gaussian blob with its own off-center
//! position, elongation, and orientation, plus a smaller satellite blob
//! sitting off the main axis. The satellite and the off-center placement make
//! every class orientation-sensitive: rotating an image by 90° or 180° moves
//! visible mass, so rotation synthesis genuinely produces novel classes.
//! Per-image jitter and pixel noise give classes internal variety.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::seeding::{mix, salt};

use super::{Dataset, DatasetError, Image};

struct ClassShape {
    cy: f64,
    cx: f64,
    sigma_long: f64,
    sigma_short: f64,
    alpha: f64,
    amplitude: f64,
    sat_dist: f64,
    sat_sigma: f64,
    sat_amp: f64,
}

fn draw_shape(rng: &mut ChaCha8Rng, side: f64, taken: &[ClassShape]) -> ClassShape {
    // Rejection keeps the class layout spread out: centers at least a tenth
    // of the image apart from the image center (so 180° rotation moves the
    // blob) and not stacked on an existing class with a similar orientation.
    let mid = (side - 1.0) / 2.0;
    for _ in 0..64 {
        let cy = rng.gen_range(0.25 * side..0.75 * side);
        let cx = rng.gen_range(0.25 * side..0.75 * side);
        let alpha = rng.gen_range(0.0..std::f64::consts::PI);
        let off_center = ((cy - mid).powi(2) + (cx - mid).powi(2)).sqrt() >= 0.10 * side;
        let distinct = taken.iter().all(|t| {
            let center_gap = ((cy - t.cy).powi(2) + (cx - t.cx).powi(2)).sqrt();
            let angle_gap = (alpha - t.alpha).abs().min(std::f64::consts::PI - (alpha - t.alpha).abs());
            center_gap >= 0.09 * side || angle_gap >= 0.35
        });
        if off_center && distinct {
            return ClassShape {
                cy,
                cx,
                sigma_long: rng.gen_range(0.16 * side..0.26 * side),
                sigma_short: rng.gen_range(0.07 * side..0.12 * side),
                alpha,
                amplitude: rng.gen_range(0.70..0.92),
                sat_dist: rng.gen_range(0.28 * side..0.38 * side),
                sat_sigma: rng.gen_range(0.05 * side..0.08 * side),
                sat_amp: rng.gen_range(0.45..0.65),
            };
        }
    }
    // Dense layouts eventually stop satisfying the spacing heuristic; fall
    // back to an unconstrained draw rather than fail — classes stay usable,
    // just closer together.
    ClassShape {
        cy: rng.gen_range(0.25 * side..0.75 * side),
        cx: rng.gen_range(0.25 * side..0.75 * side),
        sigma_long: rng.gen_range(0.16 * side..0.26 * side),
        sigma_short: rng.gen_range(0.07 * side..0.12 * side),
        alpha: rng.gen_range(0.0..std::f64::consts::PI),
        amplitude: rng.gen_range(0.70..0.92),
        sat_dist: rng.gen_range(0.28 * side..0.38 * side),
        sat_sigma: rng.gen_range(0.05 * side..0.08 * side),
        sat_amp: rng.gen_range(0.45..0.65),
    }
}

fn render(shape: &ClassShape, side: usize, rng: &mut ChaCha8Rng) -> Image {
    let s = side as f64;
    // Per-image jitter is deliberately generous: small support samples should
    // give noticeably noisy class-mean estimates, the regime incremental
    // learning actually faces, while the underlying pattern stays learnable.
    let cy = shape.cy + rng.gen_range(-0.085 * s..0.085 * s);
    let cx = shape.cx + rng.gen_range(-0.085 * s..0.085 * s);
    let alpha = shape.alpha + rng.gen_range(-0.28..0.28);
    let amp = (shape.amplitude + rng.gen_range(-0.08..0.08)).clamp(0.0, 0.95);
    let scale_mult = rng.gen_range(0.85..1.18);
    let sigma_long = shape.sigma_long * scale_mult;
    let sigma_short = shape.sigma_short * scale_mult;
    let (sin_a, cos_a) = alpha.sin_cos();
    // Satellite sits off the main axis (60° away), breaking 180° symmetry of
    // the blob about its own center.
    let sat_angle = alpha + std::f64::consts::FRAC_PI_3;
    let sat_cy = cy + shape.sat_dist * sat_angle.sin();
    let sat_cx = cx + shape.sat_dist * sat_angle.cos();

    let mut pixels = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let along = cos_a * dx + sin_a * dy;
            let across = -sin_a * dx + cos_a * dy;
            let q = (along / sigma_long).powi(2) + (across / sigma_short).powi(2);
            let sq = ((y as f64 - sat_cy).powi(2) + (x as f64 - sat_cx).powi(2))
                / shape.sat_sigma.powi(2);
            let v = 0.06
                + amp * (-0.5 * q).exp()
                + shape.sat_amp * (-0.5 * sq).exp()
                + rng.gen_range(-0.05..0.05);
            pixels.push(v.clamp(0.0, 1.0));
        }
    }
    Image::new(1, side, side, pixels).expect("clamped")
}

/// Deterministic grayscale blob dataset: `classes` classes, square images of
/// `side` pixels, `per_class_train`/`per_class_test` images each.
pub fn synth_blob_dataset(
    classes: usize,
    per_class_train: usize,
    per_class_test: usize,
    side: usize,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    if classes < 2 {
        return Err(DatasetError::InvalidArg(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if per_class_train == 0 || per_class_test == 0 {
        return Err(DatasetError::InvalidArg(
            "per-class train and test counts must be positive".into(),
        ));
    }
    if side < 8 {
        return Err(DatasetError::InvalidArg(format!(
            "side {side} is too small for structured blobs (need >= 8)"
        )));
    }

    let mut shapes: Vec<ClassShape> = Vec::with_capacity(classes);
    for c in 0..classes {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, &[salt("blob-class"), c as u64]));
        let shape = draw_shape(&mut rng, side as f64, &shapes);
        shapes.push(shape);
    }

    let mut train = Vec::with_capacity(classes);
    let mut test = Vec::with_capacity(classes);
    for (c, shape) in shapes.iter().enumerate() {
        let mut train_c = Vec::with_capacity(per_class_train);
        for i in 0..per_class_train {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(
                seed,
                &[salt("blob-train"), c as u64, i as u64],
            ));
            train_c.push(render(shape, side, &mut rng));
        }
        let mut test_c = Vec::with_capacity(per_class_test);
        for i in 0..per_class_test {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(
                seed,
                &[salt("blob-test"), c as u64, i as u64],
            ));
            test_c.push(render(shape, side, &mut rng));
        }
        train.push(train_c);
        test.push(test_c);
    }
    Dataset::new(train, test)
}
