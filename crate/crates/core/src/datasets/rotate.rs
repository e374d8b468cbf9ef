//! Image rotation about the center.
//!
//! Right-angle rotation is an exact pixel permutation: rotating four times by
//! 90° (or twice by 180°) returns the original buffer bit-for-bit. Arbitrary
//! angles resample bilinearly with nearest-edge fill and agree with the exact
//! path to ~1e-15 at 90°/180°/270° (the trig terms for those angles are exact
//! or within one ulp of it).
//!
//! Convention, in image coordinates (y down): 90° maps `out[y][x] =
//! in[x][W-1-y]`. Composing it four times is the identity.

use super::{Image, RightAngle, RotationAngle};

/// Exact permutation rotation. 90°/270° swap height and width.
pub fn rotate_right_angle(img: &Image, angle: RightAngle) -> Image {
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let (oh, ow) = match angle {
        RightAngle::Deg180 => (h, w),
        _ => (w, h),
    };
    let mut pixels = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let v = match angle {
                    RightAngle::Deg90 => img.at(ch, x, w - 1 - y),
                    RightAngle::Deg180 => img.at(ch, h - 1 - y, w - 1 - x),
                    RightAngle::Deg270 => img.at(ch, h - 1 - x, y),
                };
                pixels.push(v);
            }
        }
    }
    Image::new(c, oh, ow, pixels).expect("permutation preserves validity")
}

/// Bilinear read at real-valued coordinates, clamped to the nearest edge.
pub(crate) fn bilinear_sample(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Rotate by an arbitrary angle (degrees, counter-clockwise in the same
/// convention as [`rotate_right_angle`]), resampling bilinearly about the
/// image center with nearest-edge fill. Output dims equal input dims and
/// values are clamped to `[0, 1]`.
pub fn rotate_arbitrary(img: &Image, degrees: f64) -> Image {
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cy = (h - 1) as f64 / 2.0;
    let cx = (w - 1) as f64 / 2.0;
    let mut pixels = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let plane = img.plane(ch);
        for y in 0..h {
            for x in 0..w {
                let u = x as f64 - cx;
                let v = y as f64 - cy;
                // Inverse map: where in the source does this output pixel live?
                let sx = cx + u * cos - v * sin;
                let sy = cy + u * sin + v * cos;
                let val = bilinear_sample(plane, h, w, sy, sx);
                pixels.push(val.clamp(0.0, 1.0));
            }
        }
    }
    Image::new(c, h, w, pixels).expect("clamped to [0,1]")
}

/// Dispatch on the angle kind. `Identity` is a bit-exact copy.
pub fn rotate(img: &Image, angle: &RotationAngle) -> Image {
    match angle {
        RotationAngle::Identity => img.clone(),
        RotationAngle::Right(r) => rotate_right_angle(img, *r),
        RotationAngle::Degrees(d) => rotate_arbitrary(img, *d),
    }
}
