use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sample::{Label, LabeledDataset};
use crate::error::{Error, Result};

/// Index lists of a train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
}

pub const DEFAULT_SPLIT_RATIOS: (f64, f64, f64) = (0.6, 0.2, 0.2);

fn indices_by_class(labels: &[Label]) -> [Vec<usize>; 2] {
    let mut by_class = [Vec::new(), Vec::new()];
    for (i, l) in labels.iter().enumerate() {
        by_class[l.index()].push(i);
    }
    by_class
}

/// Per class: seeded shuffle, `floor(r_train·n)` to train, `floor(r_val·n)`
/// to validation, the remainder to test. Each split's indices come back in
/// ascending order.
pub fn stratified_split_indices(
    labels: &[Label],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitIndices> {
    let (rt, rv, rs) = ratios;
    if [rt, rv, rs].iter().any(|r| !(0.0..=1.0).contains(r)) || (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "split ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (class, mut idx) in indices_by_class(labels).into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 3 {
            return Err(Error::Argument(format!(
                "class {class} has {} samples; stratified splitting needs at least 3",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        // The epsilon absorbs products like 0.6 * 10 = 5.999...
        let n_train = (rt * n + 1e-9).floor() as usize;
        let n_val = (rv * n + 1e-9).floor() as usize;
        out.train.extend_from_slice(&idx[..n_train]);
        out.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        out.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

pub fn stratified_split(
    dataset: &LabeledDataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit> {
    let idx = stratified_split_indices(&dataset.labels(), ratios, seed)?;
    Ok(DatasetSplit {
        train: dataset.select(&idx.train)?,
        val: dataset.select(&idx.val)?,
        test: dataset.select(&idx.test)?,
    })
}

/// Indices of the input followed by uniformly drawn duplicates of the
/// minority class until both classes have equal counts.
pub fn random_oversample_indices(labels: &[Label], seed: u64) -> Result<Vec<usize>> {
    let by_class = indices_by_class(labels);
    if by_class.iter().any(|c| c.is_empty()) {
        return Err(Error::Argument(
            "random oversampling needs both classes present".into(),
        ));
    }
    let (minority, majority) = if by_class[0].len() < by_class[1].len() {
        (&by_class[0], &by_class[1])
    } else {
        (&by_class[1], &by_class[0])
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<usize> = (0..labels.len()).collect();
    for _ in 0..majority.len() - minority.len() {
        out.push(minority[rng.random_range(0..minority.len())]);
    }
    Ok(out)
}

pub fn random_oversample(dataset: &LabeledDataset, seed: u64) -> Result<LabeledDataset> {
    let idx = random_oversample_indices(&dataset.labels(), seed)?;
    dataset.select(&idx)
}

/// `n` indices drawn uniformly with replacement from `0..n`.
pub fn bootstrap_indices(n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Argument("cannot bootstrap an empty set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| rng.random_range(0..n)).collect())
}

pub fn bootstrap_subset(dataset: &LabeledDataset, seed: u64) -> Result<LabeledDataset> {
    let idx = bootstrap_indices(dataset.len(), seed)?;
    dataset.select(&idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(ripe: usize, unripe: usize) -> Vec<Label> {
        let mut v = vec![Label::Ripe; ripe];
        v.extend(vec![Label::Unripe; unripe]);
        v
    }

    fn counts(labels_all: &[Label], idx: &[usize]) -> [usize; 2] {
        let mut c = [0; 2];
        for &i in idx {
            c[labels_all[i].index()] += 1;
        }
        c
    }

    #[test]
    fn counts_164_37_split_by_floor_rule() {
        let l = labels(164, 37);
        let s = stratified_split_indices(&l, DEFAULT_SPLIT_RATIOS, 7).unwrap();
        assert_eq!(counts(&l, &s.train), [98, 22]);
        assert_eq!(counts(&l, &s.val), [32, 7]);
        assert_eq!(counts(&l, &s.test), [34, 8]);
    }

    #[test]
    fn balanced_split_is_exact() {
        let l = labels(10, 10);
        let s = stratified_split_indices(&l, DEFAULT_SPLIT_RATIOS, 1).unwrap();
        assert_eq!(counts(&l, &s.train), [6, 6]);
        assert_eq!(counts(&l, &s.val), [2, 2]);
        assert_eq!(counts(&l, &s.test), [2, 2]);
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let l = labels(23, 11);
        let a = stratified_split_indices(&l, DEFAULT_SPLIT_RATIOS, 5).unwrap();
        assert_eq!(a, stratified_split_indices(&l, DEFAULT_SPLIT_RATIOS, 5).unwrap());
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..34).collect::<Vec<_>>());
    }

    #[test]
    fn tiny_class_rejected() {
        assert!(stratified_split_indices(&labels(10, 2), DEFAULT_SPLIT_RATIOS, 0).is_err());
    }

    #[test]
    fn oversampling_balances_164_37() {
        let l = labels(164, 37);
        let idx = random_oversample_indices(&l, 3).unwrap();
        assert_eq!(counts(&l, &idx), [164, 164]);
        assert_eq!(&idx[..201], &(0..201).collect::<Vec<_>>()[..]);
        assert!(idx[201..].iter().all(|&i| l[i] == Label::Unripe));
    }

    #[test]
    fn oversampling_balanced_is_noop_and_needs_two_classes() {
        let l = labels(5, 5);
        assert_eq!(random_oversample_indices(&l, 0).unwrap(), (0..10).collect::<Vec<_>>());
        assert!(random_oversample_indices(&labels(4, 0), 0).is_err());
    }

    #[test]
    fn bootstrap_shape() {
        assert_eq!(bootstrap_indices(1, 9).unwrap(), vec![0]);
        for n in [2, 17, 200] {
            assert_eq!(bootstrap_indices(n, n as u64).unwrap().len(), n);
        }
        assert!(bootstrap_indices(0, 0).is_err());
    }
}
