use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelsPerClass {
    All,
    Count(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub per_class: LabelsPerClass,
    pub seed: u64,
}

/// Class-balanced labeled subset: exactly `n` items per class drawn without
/// replacement by a seeded generator. Returns one flag per item.
pub fn split_labels(labels: &[usize], classes: usize, spec: &SplitSpec) -> Result<Vec<bool>> {
    let n = match spec.per_class {
        LabelsPerClass::All => return Ok(vec![true; labels.len()]),
        LabelsPerClass::Count(n) => n,
    };
    let mut by_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut mask = vec![false; labels.len()];
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < n {
            return Err(Error::InfeasibleSplit {
                class,
                wanted: n,
                available: members.len(),
            });
        }
        for j in sample(&mut rng, members.len(), n) {
            mask[members[j]] = true;
        }
    }
    Ok(mask)
}

/// Labels as seen by the learner: `None` where the mask is unset.
pub fn visible_labels(labels: &[usize], mask: &[bool]) -> Vec<Option<usize>> {
    labels
        .iter()
        .zip(mask)
        .map(|(&l, &m)| m.then_some(l))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> Vec<usize> {
        (0..200).map(|i| i % 10).collect()
    }

    #[test]
    fn all_labels() {
        let spec = SplitSpec {
            per_class: LabelsPerClass::All,
            seed: 0,
        };
        assert!(split_labels(&labels(), 10, &spec)
            .unwrap()
            .iter()
            .all(|&m| m));
    }

    #[test]
    fn balanced_and_seeded() {
        let spec = SplitSpec {
            per_class: LabelsPerClass::Count(10),
            seed: 3,
        };
        let l = labels();
        let mask = split_labels(&l, 10, &spec).unwrap();
        assert_eq!(mask.iter().filter(|&&m| m).count(), 100);
        for k in 0..10 {
            let count = l.iter().zip(&mask).filter(|(&c, &m)| m && c == k).count();
            assert_eq!(count, 10);
        }
        assert_eq!(mask, split_labels(&l, 10, &spec).unwrap());
        let other = SplitSpec { seed: 4, ..spec };
        assert_ne!(mask, split_labels(&l, 10, &other).unwrap());
    }

    #[test]
    fn infeasible() {
        let spec = SplitSpec {
            per_class: LabelsPerClass::Count(21),
            seed: 0,
        };
        assert!(matches!(
            split_labels(&labels(), 10, &spec),
            Err(Error::InfeasibleSplit {
                wanted: 21,
                available: 20,
                ..
            })
        ));
    }
}
