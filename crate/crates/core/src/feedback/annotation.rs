use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{HeroError, Result};

/// One epoch's verdicts. `good` and `bad` partition `ids`; `best` is set
/// exactly when `good` is non-empty and then belongs to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchAnnotation {
    pub epoch: usize,
    pub ids: Vec<usize>,
    pub good: BTreeSet<usize>,
    pub bad: BTreeSet<usize>,
    pub best: Option<usize>,
    pub annotator: String,
}

impl BatchAnnotation {
    /// Builds an annotation from per-id verdicts, enforcing the partition
    /// and best-in-good invariants against the expected batch ids.
    pub fn from_labels(
        epoch: usize,
        expected_ids: &[usize],
        labels: &[(usize, bool)],
        best: Option<usize>,
        annotator: impl Into<String>,
    ) -> Result<Self> {
        let expected: BTreeSet<usize> = expected_ids.iter().copied().collect();
        let mut good = BTreeSet::new();
        let mut bad = BTreeSet::new();
        for &(id, is_good) in labels {
            if !expected.contains(&id) {
                return Err(invalid(format!("unknown sample id {id}")));
            }
            if good.contains(&id) || bad.contains(&id) {
                return Err(invalid(format!("sample id {id} labelled twice")));
            }
            if is_good {
                good.insert(id);
            } else {
                bad.insert(id);
            }
        }
        if good.len() + bad.len() != expected.len() {
            let missing: Vec<_> = expected
                .iter()
                .filter(|id| !good.contains(id) && !bad.contains(id))
                .collect();
            return Err(invalid(format!("missing labels for ids {missing:?}")));
        }
        let ann = Self {
            epoch,
            ids: expected_ids.to_vec(),
            good,
            bad,
            best,
            annotator: annotator.into(),
        };
        ann.validate()?;
        Ok(ann)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(id) = self.good.intersection(&self.bad).next() {
            return Err(invalid(format!("sample id {id} is both good and bad")));
        }
        let ids: BTreeSet<usize> = self.ids.iter().copied().collect();
        if ids.len() != self.ids.len() {
            return Err(invalid("duplicate ids in batch".into()));
        }
        let union: BTreeSet<usize> = self.good.union(&self.bad).copied().collect();
        if union != ids {
            return Err(invalid("good and bad sets do not cover the batch".into()));
        }
        match (self.best, self.good.is_empty()) {
            (Some(b), _) if !self.good.contains(&b) => {
                Err(invalid(format!("best id {b} is not among the good samples")))
            }
            (None, false) => Err(invalid("a best sample is required when any sample is good".into())),
            _ => Ok(()),
        }
    }

    pub fn is_good(&self, id: usize) -> bool {
        self.good.contains(&id)
    }

    pub fn good_fraction(&self) -> f64 {
        if self.ids.is_empty() {
            0.0
        } else {
            self.good.len() as f64 / self.ids.len() as f64
        }
    }
}

fn invalid(msg: String) -> HeroError {
    HeroError::InvalidArgument(msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_valid_labels() {
        let a = BatchAnnotation::from_labels(0, &[0, 1, 2], &[(0, true), (1, false), (2, true)], Some(2), "t").unwrap();
        assert_eq!(a.good.len(), 2);
        assert_eq!(a.best, Some(2));
    }

    #[test]
    fn all_bad_has_no_best() {
        let a = BatchAnnotation::from_labels(0, &[0, 1], &[(0, false), (1, false)], None, "t").unwrap();
        assert!(a.good.is_empty());
        assert!(BatchAnnotation::from_labels(0, &[0, 1], &[(0, false), (1, false)], Some(0), "t").is_err());
    }

    #[test]
    fn rejects_violations() {
        // best not good
        assert!(BatchAnnotation::from_labels(0, &[0, 1], &[(0, true), (1, false)], Some(1), "t").is_err());
        // incomplete
        assert!(BatchAnnotation::from_labels(0, &[0, 1], &[(0, true)], Some(0), "t").is_err());
        // duplicate
        assert!(BatchAnnotation::from_labels(0, &[0, 1], &[(0, true), (0, false)], Some(0), "t").is_err());
        // foreign id
        assert!(BatchAnnotation::from_labels(0, &[0, 1], &[(0, true), (5, false)], Some(0), "t").is_err());
        // good without best
        assert!(BatchAnnotation::from_labels(0, &[0], &[(0, true)], None, "t").is_err());
    }
}
