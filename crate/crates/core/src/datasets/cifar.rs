//! CIFAR-100 binary-format loader.
//!
//! The binary format stores one record per image: a coarse label byte, a
//! fine label byte, then 3072 pixel bytes (a 32x32 red plane, then green,
//! then blue, each row-major). That plane order matches [`Image`]'s
//! channel-planar layout, so records map straight into images with pixels
//! scaled to `[0, 1]` by 1/255.

use std::path::Path;

use super::{Dataset, DatasetError, Image};

/// Bytes per record: coarse label + fine label + 3 x 32 x 32 pixels.
pub const CIFAR_RECORD_LEN: usize = 2 + 3 * 32 * 32;

/// Parse a raw record stream into `(fine_label, image)` pairs in file order.
/// The coarse label byte is ignored; fine labels must be below 100.
pub fn read_cifar100_records(bytes: &[u8]) -> Result<Vec<(u8, Image)>, DatasetError> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_LEN != 0 {
        return Err(DatasetError::BadRecordLength {
            len: bytes.len(),
            record: CIFAR_RECORD_LEN,
        });
    }
    let mut out = Vec::with_capacity(bytes.len() / CIFAR_RECORD_LEN);
    for record in bytes.chunks_exact(CIFAR_RECORD_LEN) {
        let fine = record[1];
        if fine >= 100 {
            return Err(DatasetError::LabelOutOfRange { label: fine });
        }
        let pixels: Vec<f64> = record[2..].iter().map(|&b| f64::from(b) / 255.0).collect();
        out.push((fine, Image::new(3, 32, 32, pixels)?));
    }
    Ok(out)
}

/// Load a full dataset from CIFAR-100 binary train and test files. The class
/// count is `max fine label + 1` across both files, and every class below it
/// must appear in both splits.
pub fn load_cifar100_binary(
    train_path: &Path,
    test_path: &Path,
) -> Result<Dataset, DatasetError> {
    let train_records = read_cifar100_records(&std::fs::read(train_path)?)?;
    let test_records = read_cifar100_records(&std::fs::read(test_path)?)?;

    let max_label = train_records
        .iter()
        .chain(test_records.iter())
        .map(|(l, _)| *l)
        .max()
        .expect("streams are non-empty");
    let classes = usize::from(max_label) + 1;

    let mut train: Vec<Vec<Image>> = vec![Vec::new(); classes];
    for (label, image) in train_records {
        train[usize::from(label)].push(image);
    }
    let mut test: Vec<Vec<Image>> = vec![Vec::new(); classes];
    for (label, image) in test_records {
        test[usize::from(label)].push(image);
    }

    for (c, images) in train.iter().enumerate() {
        if images.is_empty() {
            return Err(DatasetError::InsufficientImages(format!(
                "class {c} has no training images in {}",
                train_path.display()
            )));
        }
    }
    for (c, images) in test.iter().enumerate() {
        if images.is_empty() {
            return Err(DatasetError::InsufficientImages(format!(
                "class {c} has no test images in {}",
                test_path.display()
            )));
        }
    }

    Dataset::new(train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(coarse: u8, fine: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![coarse, fine];
        r.extend(std::iter::repeat(fill).take(3 * 32 * 32));
        r
    }

    #[test]
    fn parses_records_and_scales_pixels() {
        let mut stream = record(7, 0, 0);
        stream.extend(record(3, 1, 255));
        stream.extend(record(0, 99, 128));
        let parsed = read_cifar100_records(&stream).unwrap();
        assert_eq!(parsed.len(), 3);
        assert_eq!(parsed[0].0, 0);
        assert_eq!(parsed[1].0, 1);
        assert_eq!(parsed[2].0, 99);
        assert_eq!(parsed[0].1.at(0, 0, 0), 0.0);
        assert_eq!(parsed[1].1.at(2, 31, 31), 1.0);
        assert_eq!(parsed[2].1.at(1, 5, 9), 128.0 / 255.0);
        assert_eq!(
            (parsed[0].1.channels(), parsed[0].1.height(), parsed[0].1.width()),
            (3, 32, 32)
        );
    }

    #[test]
    fn plane_order_is_red_green_blue() {
        let mut r = vec![0u8, 4u8];
        r.extend(std::iter::repeat(10u8).take(1024)); // red plane
        r.extend(std::iter::repeat(20u8).take(1024)); // green plane
        r.extend(std::iter::repeat(30u8).take(1024)); // blue plane
        let parsed = read_cifar100_records(&r).unwrap();
        let img = &parsed[0].1;
        assert_eq!(img.at(0, 0, 0), 10.0 / 255.0);
        assert_eq!(img.at(1, 16, 16), 20.0 / 255.0);
        assert_eq!(img.at(2, 31, 0), 30.0 / 255.0);
    }

    #[test]
    fn truncated_stream_is_rejected() {
        let mut stream = record(0, 0, 0);
        stream.pop();
        let err = read_cifar100_records(&stream).unwrap_err();
        assert!(matches!(
            err,
            DatasetError::BadRecordLength { record: CIFAR_RECORD_LEN, .. }
        ));
        assert!(read_cifar100_records(&[]).is_err());
    }

    #[test]
    fn out_of_range_fine_label_is_rejected() {
        let stream = record(0, 100, 0);
        let err = read_cifar100_records(&stream).unwrap_err();
        assert!(matches!(err, DatasetError::LabelOutOfRange { label: 100 }));
    }

    #[test]
    fn loads_dataset_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let train_path = dir.path().join("train.bin");
        let test_path = dir.path().join("test.bin");

        let mut train = Vec::new();
        for (fine, fill) in [(0u8, 1u8), (0, 2), (1, 3), (1, 4), (1, 5)] {
            train.extend(record(0, fine, fill));
        }
        let mut test = Vec::new();
        for (fine, fill) in [(0u8, 6u8), (1, 7)] {
            test.extend(record(0, fine, fill));
        }
        std::fs::write(&train_path, &train).unwrap();
        std::fs::write(&test_path, &test).unwrap();

        let d = load_cifar100_binary(&train_path, &test_path).unwrap();
        assert_eq!(d.class_count(), 2);
        assert_eq!(d.train_images(0).len(), 2);
        assert_eq!(d.train_images(1).len(), 3);
        assert_eq!(d.test_images(0).len(), 1);
        assert_eq!(d.test_images(1).len(), 1);
        assert_eq!(d.train_images(1)[0].at(0, 0, 0), 3.0 / 255.0);
    }

    #[test]
    fn class_missing_from_one_split_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let train_path = dir.path().join("train.bin");
        let test_path = dir.path().join("test.bin");
        // Train covers classes 0 and 1; test only covers class 1.
        let mut train = record(0, 0, 1);
        train.extend(record(0, 1, 2));
        let test = record(0, 1, 3);
        std::fs::write(&train_path, &train).unwrap();
        std::fs::write(&test_path, &test).unwrap();
        let err = load_cifar100_binary(&train_path, &test_path).unwrap_err();
        assert!(matches!(err, DatasetError::InsufficientImages(_)));
    }
}
