use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::dataset::LabeledDataset;
use super::metrics::ConfusionMatrix;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Item indices of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn items_of(groups: &[String], chosen: &BTreeSet<&str>) -> Vec<usize> {
    (0..groups.len()).filter(|&i| chosen.contains(groups[i].as_str())).collect()
}

/// Split items into `k` folds by group. Distinct groups are shuffled with
/// the seed and dealt round-robin to the test folds; within each fold the
/// remaining groups are split `split : 1 - split` into train and validation.
pub fn grouped_kfold(groups: &[String], k: usize, split: f64, seed: u64) -> Result<Vec<Fold>> {
    let mut unique: Vec<&str> = groups.iter().map(String::as_str).collect::<BTreeSet<_>>().into_iter().collect();
    if k < 2 || unique.len() < k {
        return Err(Error::TooFewGroups { k, found: unique.len() });
    }
    unique.shuffle(&mut stream_rng(seed, Stream::Fold, 0, 0));
    (0..k)
        .map(|f| {
            let test: BTreeSet<&str> = unique.iter().skip(f).step_by(k).copied().collect();
            let mut rest: Vec<&str> = unique.iter().filter(|g| !test.contains(*g)).copied().collect();
            rest.shuffle(&mut stream_rng(seed, Stream::Fold, 1, f as u64));
            let n_train = ((rest.len() as f64 * split).round() as usize).clamp(1, rest.len().saturating_sub(1).max(1));
            let val_groups: BTreeSet<&str> = rest.split_off(n_train).into_iter().collect();
            let train_groups: BTreeSet<&str> = rest.into_iter().collect();
            Ok(Fold {
                train: items_of(groups, &train_groups),
                val: items_of(groups, &val_groups),
                test: items_of(groups, &test),
            })
        })
        .collect()
}

/// Split items `split : 1 - split` into train and validation by group.
pub fn grouped_split(groups: &[String], split: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut unique: Vec<&str> = groups.iter().map(String::as_str).collect::<BTreeSet<_>>().into_iter().collect();
    if unique.len() < 2 {
        return Err(Error::TooFewGroups { k: 2, found: unique.len() });
    }
    unique.shuffle(&mut stream_rng(seed, Stream::Fold, 2, 0));
    let n_train = ((unique.len() as f64 * split).round() as usize).clamp(1, unique.len() - 1);
    let val: BTreeSet<&str> = unique.split_off(n_train).into_iter().collect();
    let train: BTreeSet<&str> = unique.into_iter().collect();
    Ok((items_of(groups, &train), items_of(groups, &val)))
}

/// Run `fit_eval(fold, train, val, test)` on every grouped fold and collect
/// the test confusion matrices.
pub fn cross_validate<F>(ds: &LabeledDataset, k: usize, split: f64, seed: u64, mut fit_eval: F) -> Result<Vec<ConfusionMatrix>>
where
    F: FnMut(usize, &LabeledDataset, &LabeledDataset, &LabeledDataset) -> Result<ConfusionMatrix>,
{
    grouped_kfold(&ds.groups, k, split, seed)?
        .iter()
        .enumerate()
        .map(|(f, fold)| fit_eval(f, &ds.subset(&fold.train), &ds.subset(&fold.val), &ds.subset(&fold.test)))
        .collect()
}

/// Sum of per-fold confusion matrices.
pub fn aggregate(cms: &[ConfusionMatrix]) -> Result<ConfusionMatrix> {
    let first = cms.first().ok_or(Error::EmptyConfusionMatrix)?;
    let mut total = ConfusionMatrix::new(first.classes());
    for cm in cms {
        total.merge(cm)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn groups(n_groups: usize, per: usize) -> Vec<String> {
        (0..n_groups * per).map(|i| format!("g{}", i % n_groups)).collect()
    }

    #[test]
    fn forty_one_groups_ten_folds() {
        let g = groups(41, 3);
        let folds = grouped_kfold(&g, 10, 0.8, 7).unwrap();
        let mut sizes: Vec<usize> = folds
            .iter()
            .map(|f| f.test.iter().map(|&i| &g[i]).collect::<BTreeSet<_>>().len())
            .collect();
        sizes.sort_unstable();
        assert!(sizes.iter().all(|&s| s == 4 || s == 5));
        assert_eq!(sizes.iter().sum::<usize>(), 41);
    }

    #[test]
    fn too_few_groups() {
        assert!(matches!(
            grouped_kfold(&groups(5, 2), 10, 0.8, 0),
            Err(Error::TooFewGroups { k: 10, found: 5 })
        ));
    }

    #[test]
    fn split_keeps_groups_together() {
        let g = groups(20, 3);
        let (train, val) = grouped_split(&g, 0.8, 1).unwrap();
        assert_eq!(train.len() + val.len(), 60);
        assert_eq!(val.len(), 12);
        let tg: BTreeSet<&String> = train.iter().map(|&i| &g[i]).collect();
        assert!(val.iter().all(|&i| !tg.contains(&g[i])));
    }

    #[test]
    fn aggregate_sums() {
        let a = ConfusionMatrix::from_rows(&[vec![1, 2], vec![3, 4]]).unwrap();
        let b = ConfusionMatrix::from_rows(&[vec![1, 0], vec![0, 1]]).unwrap();
        let t = aggregate(&[a, b]).unwrap();
        assert_eq!(t.rows(), vec![vec![2, 2], vec![3, 5]]);
        assert_eq!(t.total(), 12);
    }

    proptest! {
        #[test]
        fn folds_partition_groups_without_leakage(n in 10usize..60, per in 1usize..4, k in 2usize..11, seed in 0u64..500) {
            let g = groups(n, per);
            let folds = grouped_kfold(&g, k, 0.8, seed).unwrap();
            let mut seen = vec![0usize; g.len()];
            for f in &folds {
                for &i in &f.test { seen[i] += 1; }
                let test: BTreeSet<&String> = f.test.iter().map(|&i| &g[i]).collect();
                let train: BTreeSet<&String> = f.train.iter().map(|&i| &g[i]).collect();
                let val: BTreeSet<&String> = f.val.iter().map(|&i| &g[i]).collect();
                prop_assert!(test.is_disjoint(&train) && test.is_disjoint(&val) && train.is_disjoint(&val));
                prop_assert_eq!(f.train.len() + f.val.len() + f.test.len(), g.len());
                prop_assert!(!f.train.is_empty() && !f.val.is_empty());
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }
}
