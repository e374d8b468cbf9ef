//! Images, datasets, session splits, rotation, and episode sampling.
//!
//! Everything here is deterministic: samplers are pure functions of their
//! inputs and a seed, and rotations by right angles are exact pixel
//! permutations so rotated images can be membership-checked bit-for-bit.

mod cifar;
mod episode;
mod rotate;
mod split;
mod synth;

pub use cifar::{load_cifar100_binary, read_cifar100_records, CIFAR_RECORD_LEN};
pub use episode::{sample_pseudo_episode, PseudoEpisode};
pub use rotate::{rotate, rotate_arbitrary, rotate_right_angle};
pub(crate) use rotate::bilinear_sample;
pub use split::{make_session_split, ClassIndices, SessionDef, SessionSplit};
pub use synth::synth_blob_dataset;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("record stream length {len} is not a multiple of {record} bytes")]
    BadRecordLength { len: usize, record: usize },

    #[error("fine label {label} out of range (must be < 100)")]
    LabelOutOfRange { label: u8 },

    #[error("split arithmetic does not close: {0}")]
    SplitArithmetic(String),

    #[error("not enough images: {0}")]
    InsufficientImages(String),

    #[error("i/o failure: {0}")]
    Io(String),

    #[error("malformed manifest: {0}")]
    Format(String),
}

impl From<std::io::Error> for DatasetError {
    fn from(e: std::io::Error) -> Self {
        DatasetError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for DatasetError {
    fn from(e: serde_json::Error) -> Self {
        DatasetError::Format(e.to_string())
    }
}

/// A channel-planar image with pixel values in `[0, 1]`.
///
/// Layout: `pixels[c * h * w + y * w + x]`, row-major within each channel
/// plane — the same order the convolution kernels expect when the image is
/// packed into a matrix row.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        pixels: Vec<f64>,
    ) -> Result<Self, DatasetError> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(DatasetError::InvalidImage(format!(
                "degenerate dimensions {channels}x{height}x{width}"
            )));
        }
        if pixels.len() != channels * height * width {
            return Err(DatasetError::InvalidImage(format!(
                "{channels}x{height}x{width} needs {} pixels, got {}",
                channels * height * width,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(DatasetError::InvalidImage(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            pixels,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let sz = self.height * self.width;
        &self.pixels[channel * sz..(channel + 1) * sz]
    }

    pub fn at(&self, channel: usize, y: usize, x: usize) -> f64 {
        self.pixels[channel * self.height * self.width + y * self.width + x]
    }

    /// Mean absolute pixel difference; images must share dimensions.
    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64, DatasetError> {
        if (self.channels, self.height, self.width) != (other.channels, other.height, other.width)
        {
            return Err(DatasetError::InvalidImage(
                "dimension mismatch in image comparison".into(),
            ));
        }
        let total: f64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(total / self.pixels.len() as f64)
    }
}

/// Train and test images grouped by class; class ids are `0..class_count`.
///
/// Every class carries at least one test image and all images share one
/// dimension triple, so downstream code can batch without re-checking.
#[derive(Debug, Clone)]
pub struct Dataset {
    train: Vec<Vec<Image>>,
    test: Vec<Vec<Image>>,
    channels: usize,
    height: usize,
    width: usize,
}

impl Dataset {
    pub fn new(train: Vec<Vec<Image>>, test: Vec<Vec<Image>>) -> Result<Self, DatasetError> {
        if train.len() != test.len() || train.is_empty() {
            return Err(DatasetError::InvalidArg(format!(
                "class counts disagree or are zero: {} train vs {} test",
                train.len(),
                test.len()
            )));
        }
        if let Some(c) = test.iter().position(|imgs| imgs.is_empty()) {
            return Err(DatasetError::InsufficientImages(format!(
                "class {c} has no test images"
            )));
        }
        let first = train
            .iter()
            .chain(test.iter())
            .flat_map(|v| v.iter())
            .next()
            .ok_or_else(|| DatasetError::InvalidArg("dataset holds no images".into()))?;
        let dims = (first.channels, first.height, first.width);
        for img in train.iter().chain(test.iter()).flat_map(|v| v.iter()) {
            if (img.channels, img.height, img.width) != dims {
                return Err(DatasetError::InvalidImage(format!(
                    "mixed image dimensions: {:?} vs {:?}",
                    (img.channels, img.height, img.width),
                    dims
                )));
            }
        }
        Ok(Dataset {
            train,
            test,
            channels: dims.0,
            height: dims.1,
            width: dims.2,
        })
    }

    pub fn class_count(&self) -> usize {
        self.train.len()
    }

    pub fn train_images(&self, class_id: usize) -> &[Image] {
        &self.train[class_id]
    }

    pub fn test_images(&self, class_id: usize) -> &[Image] {
        &self.test[class_id]
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

/// Rotation applied when synthesizing a pseudo-novel class.
///
/// Right angles are exact pixel permutations; arbitrary angles go through
/// bilinear resampling. `Identity` leaves the image untouched (used to switch
/// rotation synthesis off in ablations). A symmetric pair like ±45° is
/// expressed as the two-element pool `[Degrees(45.0), Degrees(-45.0)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RotationAngle {
    Identity,
    Right(RightAngle),
    Degrees(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RightAngle {
    Deg90,
    Deg180,
    Deg270,
}

impl RotationAngle {
    /// The conventional pool: 90°, 180°, 270° (i.e. {180°, ±90°}).
    pub fn right_angles() -> Vec<RotationAngle> {
        vec![
            RotationAngle::Right(RightAngle::Deg90),
            RotationAngle::Right(RightAngle::Deg180),
            RotationAngle::Right(RightAngle::Deg270),
        ]
    }
}

impl std::fmt::Display for RotationAngle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RotationAngle::Identity => write!(f, "identity"),
            RotationAngle::Right(RightAngle::Deg90) => write!(f, "90"),
            RotationAngle::Right(RightAngle::Deg180) => write!(f, "180"),
            RotationAngle::Right(RightAngle::Deg270) => write!(f, "270"),
            RotationAngle::Degrees(d) => write!(f, "{d}"),
        }
    }
}

// Config form: the strings "identity"/"90"/"180"/"270" pick the exact paths,
// any JSON number means bilinear rotation by that many degrees.
impl Serialize for RotationAngle {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            RotationAngle::Degrees(d) => s.serialize_f64(*d),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

struct AngleVisitor;

impl<'de> Visitor<'de> for AngleVisitor {
    type Value = RotationAngle;

    fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        write!(f, "\"identity\", \"90\", \"180\", \"270\", or a number of degrees")
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<RotationAngle, E> {
        match v {
            "identity" => Ok(RotationAngle::Identity),
            "90" => Ok(RotationAngle::Right(RightAngle::Deg90)),
            "180" => Ok(RotationAngle::Right(RightAngle::Deg180)),
            "270" => Ok(RotationAngle::Right(RightAngle::Deg270)),
            other => other
                .parse::<f64>()
                .map(RotationAngle::Degrees)
                .map_err(|_| E::custom(format!("unrecognized rotation `{other}`"))),
        }
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<RotationAngle, E> {
        Ok(RotationAngle::Degrees(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<RotationAngle, E> {
        Ok(RotationAngle::Degrees(v as f64))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<RotationAngle, E> {
        Ok(RotationAngle::Degrees(v as f64))
    }
}

impl<'de> Deserialize<'de> for RotationAngle {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(AngleVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_validates_range_and_count() {
        assert!(Image::new(1, 2, 2, vec![0.0, 0.5, 1.0, 0.25]).is_ok());
        assert!(Image::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(Image::new(1, 2, 2, vec![0.0, 0.5, 1.0, 1.25]).is_err());
        assert!(Image::new(1, 2, 2, vec![0.0, 0.5, -0.1, 0.25]).is_err());
    }

    #[test]
    fn dataset_requires_test_images_everywhere() {
        let img = Image::new(1, 2, 2, vec![0.1; 4]).unwrap();
        let ok = Dataset::new(vec![vec![img.clone()]], vec![vec![img.clone()]]);
        assert!(ok.is_ok());
        let missing = Dataset::new(vec![vec![img.clone()]], vec![vec![]]);
        assert!(missing.is_err());
    }

    #[test]
    fn rotation_angle_config_round_trip() {
        let pool = vec![
            RotationAngle::Identity,
            RotationAngle::Right(RightAngle::Deg180),
            RotationAngle::Degrees(45.0),
            RotationAngle::Degrees(-45.0),
        ];
        let text = serde_json::to_string(&pool).unwrap();
        assert_eq!(text, r#"["identity","180",45.0,-45.0]"#);
        let back: Vec<RotationAngle> = serde_json::from_str(&text).unwrap();
        assert_eq!(pool, back);
        let terse: Vec<RotationAngle> = serde_json::from_str(r#"["90", 20.5]"#).unwrap();
        assert_eq!(terse[0], RotationAngle::Right(RightAngle::Deg90));
        assert_eq!(terse[1], RotationAngle::Degrees(20.5));
    }
}
