//! Session splits for class-incremental runs.
//!
//! A split carves the label space into one base session followed by a fixed
//! number of incremental sessions. Class blocks are consecutive: the base
//! session owns classes `0..base_classes`, incremental session `i` owns the
//! next `way` classes. The base session trains on every image of its classes;
//! each incremental session sees only `shot` images per class, chosen by a
//! seeded draw so the same seed always picks the same exemplars.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seeding::{mix, salt};

use super::{Dataset, DatasetError};

/// The training images one session may use for one class, as indices into
/// `Dataset::train_images(class_id)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassIndices {
    pub class_id: usize,
    pub indices: Vec<usize>,
}

/// One session of the incremental protocol: the classes it introduces and
/// the per-class training indices it is allowed to touch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionDef {
    pub session: usize,
    pub classes: Vec<usize>,
    pub support: Vec<ClassIndices>,
}

/// Full manifest of a class-incremental run over one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSplit {
    pub base_classes: usize,
    pub way: usize,
    pub shot: usize,
    pub sessions: Vec<SessionDef>,
}

impl SessionSplit {
    /// Number of sessions including the base session.
    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    /// All class ids introduced in sessions `0..=session`, ascending. With
    /// consecutive blocks this is `0..limit`, but it is derived from the
    /// manifest so a deserialized split stays authoritative.
    pub fn classes_up_to(&self, session: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = self.sessions[..=session]
            .iter()
            .flat_map(|s| s.classes.iter().copied())
            .collect();
        ids.sort_unstable();
        ids
    }
}

pub(crate) fn sample_distinct(count: usize, pool: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    // Partial Fisher-Yates: the first `count` slots end up holding a uniform
    // draw of distinct indices.
    let mut all: Vec<usize> = (0..pool).collect();
    for i in 0..count {
        let j = rng.gen_range(i..pool);
        all.swap(i, j);
    }
    let mut picked = all[..count].to_vec();
    picked.sort_unstable();
    picked
}

/// Build a split with `base_classes` base classes followed by
/// `incremental_sessions` sessions of `way` classes and `shot` training
/// images each. Requires the blocks to tile the label space exactly.
pub fn make_session_split(
    dataset: &Dataset,
    base_classes: usize,
    way: usize,
    shot: usize,
    incremental_sessions: usize,
    seed: u64,
) -> Result<SessionSplit, DatasetError> {
    let total = dataset.class_count();
    if base_classes == 0 {
        return Err(DatasetError::InvalidArg(
            "base session needs at least one class".into(),
        ));
    }
    if incremental_sessions > 0 && (way == 0 || shot == 0) {
        return Err(DatasetError::InvalidArg(
            "incremental sessions need way >= 1 and shot >= 1".into(),
        ));
    }
    let covered = base_classes + incremental_sessions * way;
    if covered != total {
        return Err(DatasetError::SplitArithmetic(format!(
            "{base_classes} base + {incremental_sessions} sessions x {way}-way \
             covers {covered} classes but the dataset has {total}"
        )));
    }

    let mut sessions = Vec::with_capacity(1 + incremental_sessions);

    let mut base_support = Vec::with_capacity(base_classes);
    for class_id in 0..base_classes {
        let n = dataset.train_images(class_id).len();
        if n == 0 {
            return Err(DatasetError::InsufficientImages(format!(
                "base class {class_id} has no training images"
            )));
        }
        base_support.push(ClassIndices {
            class_id,
            indices: (0..n).collect(),
        });
    }
    sessions.push(SessionDef {
        session: 0,
        classes: (0..base_classes).collect(),
        support: base_support,
    });

    for s in 1..=incremental_sessions {
        let first = base_classes + (s - 1) * way;
        let classes: Vec<usize> = (first..first + way).collect();
        let mut support = Vec::with_capacity(way);
        for &class_id in &classes {
            let n = dataset.train_images(class_id).len();
            if n < shot {
                return Err(DatasetError::InsufficientImages(format!(
                    "class {class_id} has {n} training images, fewer than shot {shot}"
                )));
            }
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix(seed, &[salt("shot"), class_id as u64]));
            support.push(ClassIndices {
                class_id,
                indices: sample_distinct(shot, n, &mut rng),
            });
        }
        sessions.push(SessionDef {
            session: s,
            classes,
            support,
        });
    }

    Ok(SessionSplit {
        base_classes,
        way,
        shot,
        sessions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::synth_blob_dataset;

    fn tiny() -> Dataset {
        synth_blob_dataset(10, 6, 2, 12, 3).unwrap()
    }

    #[test]
    fn blocks_tile_the_label_space() {
        let d = tiny();
        let split = make_session_split(&d, 4, 2, 1, 3, 11).unwrap();
        assert_eq!(split.session_count(), 4);
        assert_eq!(split.sessions[0].classes, vec![0, 1, 2, 3]);
        assert_eq!(split.sessions[1].classes, vec![4, 5]);
        assert_eq!(split.sessions[3].classes, vec![8, 9]);
        assert_eq!(split.classes_up_to(0), vec![0, 1, 2, 3]);
        assert_eq!(split.classes_up_to(2), (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn base_session_keeps_every_training_image() {
        let d = tiny();
        let split = make_session_split(&d, 4, 2, 1, 3, 11).unwrap();
        for ci in &split.sessions[0].support {
            assert_eq!(ci.indices, (0..6).collect::<Vec<_>>());
        }
    }

    #[test]
    fn incremental_support_is_shot_sized_distinct_and_seeded() {
        let d = tiny();
        let a = make_session_split(&d, 4, 2, 3, 3, 11).unwrap();
        let b = make_session_split(&d, 4, 2, 3, 3, 11).unwrap();
        let c = make_session_split(&d, 4, 2, 3, 3, 12).unwrap();
        assert_eq!(a, b);
        for s in 1..4 {
            for ci in &a.sessions[s].support {
                assert_eq!(ci.indices.len(), 3);
                let mut sorted = ci.indices.clone();
                sorted.dedup();
                assert_eq!(sorted.len(), 3, "indices must be distinct");
                assert!(ci.indices.iter().all(|&i| i < 6));
            }
        }
        assert_ne!(a, c, "different seed should pick different exemplars");
    }

    #[test]
    fn arithmetic_mismatch_is_rejected() {
        let d = tiny();
        let err = make_session_split(&d, 4, 2, 1, 2, 0).unwrap_err();
        assert!(matches!(err, DatasetError::SplitArithmetic(_)));
    }

    #[test]
    fn shot_larger_than_pool_is_rejected() {
        let d = tiny();
        let err = make_session_split(&d, 4, 2, 7, 3, 0).unwrap_err();
        assert!(matches!(err, DatasetError::InsufficientImages(_)));
    }

    #[test]
    fn manifest_round_trips_through_json() {
        let d = tiny();
        let split = make_session_split(&d, 4, 2, 2, 3, 5).unwrap();
        let text = serde_json::to_string(&split).unwrap();
        let back: SessionSplit = serde_json::from_str(&text).unwrap();
        assert_eq!(split, back);
    }
}
