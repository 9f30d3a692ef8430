use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, DatasetManifest, Split};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.70, val: 0.15, test: 0.15 }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<(), DataError> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DataError::Ratios(*self));
        }
        Ok(())
    }
}

// Guards products like 0.15 · 20 landing a hair under an integer.
const FLOOR_EPS: f64 = 1e-9;

/// `(train, val, test)` for a class of `n` samples: val and test get
/// `floor(ratio · n)`, train takes the remainder.
pub fn split_sizes(n: usize, ratios: SplitRatios) -> (usize, usize, usize) {
    let take = |r: f64| ((r * n as f64) + FLOOR_EPS).floor() as usize;
    let val = take(ratios.val);
    let test = take(ratios.test);
    (n - val - test, val, test)
}

/// Stratified split: each class is shuffled with a generator seeded from
/// `seed` and cut per [`split_sizes`]. Classes are processed in label order.
pub fn split_manifest(manifest: &DatasetManifest, ratios: SplitRatios, seed: u64) -> Result<DatasetManifest, DataError> {
    ratios.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = manifest.clone();
    for label in 0..2 {
        let mut members: Vec<usize> = (0..out.records.len()).filter(|&i| out.records[i].label == label).collect();
        if members.len() < 3 {
            return Err(DataError::ClassTooSmall {
                class: manifest.stage.class_names()[label].to_string(),
                count: members.len(),
            });
        }
        members.shuffle(&mut rng);
        let (_, val, test) = split_sizes(members.len(), ratios);
        for (k, &i) in members.iter().enumerate() {
            out.records[i].split = Some(if k < val {
                Split::Val
            } else if k < val + test {
                Split::Test
            } else {
                Split::Train
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ManifestRecord;
    use crate::labels::Stage;

    fn manifest(counts: [usize; 2]) -> DatasetManifest {
        let records = (0..2)
            .flat_map(|label| {
                (0..counts[label]).map(move |i| ManifestRecord {
                    path: format!("{label}/{i}.png").into(),
                    label,
                    split: None,
                })
            })
            .collect();
        DatasetManifest::new(Stage::Shape, records).unwrap()
    }

    #[test]
    fn ten_samples_split_eight_one_one() {
        assert_eq!(split_sizes(10, SplitRatios::default()), (8, 1, 1));
        assert_eq!(split_sizes(20, SplitRatios::default()), (14, 3, 3));
    }

    #[test]
    fn small_class_is_rejected() {
        assert!(matches!(
            split_manifest(&manifest([2, 10]), SplitRatios::default(), 0),
            Err(DataError::ClassTooSmall { count: 2, .. })
        ));
    }

    #[test]
    fn bad_ratios_are_rejected() {
        let r = SplitRatios { train: 0.7, val: 0.2, test: 0.2 };
        assert!(matches!(split_manifest(&manifest([5, 5]), r, 0), Err(DataError::Ratios(_))));
    }

    #[test]
    fn deterministic_under_seed() {
        let m = manifest([40, 33]);
        let a = split_manifest(&m, SplitRatios::default(), 9).unwrap();
        let b = split_manifest(&m, SplitRatios::default(), 9).unwrap();
        let c = split_manifest(&m, SplitRatios::default(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
