use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::SubjectSet;
use crate::error::{Error, Result};
use crate::seed::{self, tag};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self> {
        let spec = SplitSpec {
            train_fraction: train,
            val_fraction: val,
            test_fraction: test,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Subject shares of the reference cohort: 657 / 219 / 117 of 993.
    pub fn reference(seed: u64) -> Self {
        SplitSpec {
            train_fraction: 657.0 / 993.0,
            val_fraction: 219.0 / 993.0,
            test_fraction: 117.0 / 993.0,
            seed,
        }
    }

    pub fn fractions(&self) -> [f64; 3] {
        [self.train_fraction, self.val_fraction, self.test_fraction]
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.fractions();
        if f.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::validation(format!(
                "split fractions {f:?} outside [0, 1]"
            )));
        }
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "split fractions sum to {sum}, not 1"
            )));
        }
        Ok(())
    }
}

/// Subject counts per split by largest-remainder apportionment of `n`.
/// Ties in the remainder go to train, then validation, then test.
pub fn split_sizes(n: usize, spec: &SplitSpec) -> Result<[usize; 3]> {
    spec.validate()?;
    let quotas = spec.fractions().map(|f| f * n as f64);
    let mut sizes = quotas.map(|q| q.floor() as usize);
    let assigned: usize = sizes.iter().sum();
    let mut order = [0usize, 1, 2];
    // stable sort keeps train < val < test among equal remainders
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap()
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    Ok(sizes)
}

/// Partition subjects into (train, validation, test). No subject appears in
/// more than one split; each split keeps the input's subject order.
pub fn split_subjectwise(
    subjects: &SubjectSet,
    spec: &SplitSpec,
) -> Result<(SubjectSet, SubjectSet, SubjectSet)> {
    let n = subjects.len();
    if n < 3 {
        return Err(Error::validation(format!(
            "need at least 3 subjects to split, got {n}"
        )));
    }
    let [n_train, n_val, _] = split_sizes(n, spec)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(spec.seed, &[tag::SPLIT]));

    let pick = |range: &[usize]| -> Result<SubjectSet> {
        let mut idx = range.to_vec();
        idx.sort_unstable();
        let ids: Vec<&str> = idx.iter().map(|&i| subjects.ids()[i].as_str()).collect();
        subjects.select(&ids)
    };
    Ok((
        pick(&order[..n_train])?,
        pick(&order[n_train..n_train + n_val])?,
        pick(&order[n_train + n_val..])?,
    ))
}

/// `max(1, round_half_up(fraction × n))`, capped at `n`.
pub fn subsample_count(n: usize, fraction: f64) -> usize {
    let k = (fraction * n as f64 + 0.5).floor() as usize;
    k.clamp(1, n.max(1))
}

/// Uniform draw of subjects without replacement, one draw per (fraction, seed).
pub fn subsample_subjects(subjects: &SubjectSet, fraction: f64, seed: u64) -> Result<SubjectSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::validation(format!(
            "subsample fraction {fraction} outside (0, 1]"
        )));
    }
    let n = subjects.len();
    if n == 0 {
        return Err(Error::validation("cannot subsample an empty subject set"));
    }
    let k = subsample_count(n, fraction);
    let mut rng = seed::rng(seed, &[tag::SUBSAMPLE, fraction.to_bits()]);
    let mut idx = index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    let ids: Vec<&str> = idx.iter().map(|&i| subjects.ids()[i].as_str()).collect();
    subjects.select(&ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::EpochRecord;
    use std::collections::BTreeSet;

    fn empty_subjects(n: usize) -> SubjectSet {
        let mut s = SubjectSet::new();
        for i in 0..n {
            s.insert(format!("s{i:04}"), Vec::<EpochRecord>::new())
                .unwrap();
        }
        s
    }

    #[test]
    fn reference_split_sizes() {
        let spec = SplitSpec::new(0.662, 0.220, 0.118, 0).unwrap();
        assert_eq!(split_sizes(993, &spec).unwrap(), [657, 219, 117]);
        assert_eq!(
            split_sizes(993, &SplitSpec::reference(0)).unwrap(),
            [657, 219, 117]
        );
        assert_eq!(
            split_sizes(100, &SplitSpec::reference(0)).unwrap(),
            [66, 22, 12]
        );
        let third = 1.0 / 3.0;
        let spec = SplitSpec::new(third, third, 1.0 - 2.0 * third, 0).unwrap();
        assert_eq!(split_sizes(3, &spec).unwrap(), [1, 1, 1]);
    }

    #[test]
    fn split_is_a_partition() {
        let set = empty_subjects(993);
        let spec = SplitSpec::new(0.662, 0.220, 0.118, 11).unwrap();
        let (tr, va, te) = split_subjectwise(&set, &spec).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (657, 219, 117));
        assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        let union: BTreeSet<&String> = tr.ids().iter().chain(va.ids()).chain(te.ids()).collect();
        assert_eq!(union, set.ids().iter().collect());
    }

    #[test]
    fn split_rejects_tiny_sets_and_bad_fractions() {
        let spec = SplitSpec::new(0.5, 0.25, 0.25, 0).unwrap();
        assert!(split_subjectwise(&empty_subjects(2), &spec).is_err());
        assert!(SplitSpec::new(0.5, 0.5, 0.5, 0).is_err());
    }

    #[test]
    fn subsample_sizes_and_identity() {
        assert_eq!(subsample_count(657, 0.01), 7);
        assert_eq!(subsample_count(66, 0.01), 1);
        assert_eq!(subsample_count(66, 0.10), 7);
        let set = empty_subjects(40);
        assert_eq!(subsample_subjects(&set, 1.0, 3).unwrap(), set);
        assert!(subsample_subjects(&set, 0.0, 3).is_err());
    }

    #[test]
    fn subsample_seeds_give_different_subsets() {
        let set = empty_subjects(100);
        let a = subsample_subjects(&set, 0.10, 1).unwrap();
        let b = subsample_subjects(&set, 0.10, 2).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(b.len(), 10);
        assert_ne!(a.ids(), b.ids());
        assert_eq!(a, subsample_subjects(&set, 0.10, 1).unwrap());
    }
}
