use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataio::SubjectRecord;
use crate::numerics::seeded_rng;
use crate::{Error, Result};

/// Train/test split of one fold, as indices into the cohort's record list
/// together with the matching subject ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub by_site: bool,
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn fold(&self, i: usize) -> Result<&Fold> {
        self.folds
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("fold {i} out of range for {} folds", self.k)))
    }
}

/// Shuffles each class with a seeded RNG and deals its members round-robin
/// over the folds. The dealing position carries over from one class to the
/// next, so fold sizes differ by at most one as well.
pub fn stratified_kfold(records: &[SubjectRecord], k: usize, seed: u64) -> Result<FoldPlan> {
    kfold(records, k, seed, false)
}

/// As [`stratified_kfold`], dealing (class, site) groups in turn. Only the
/// class sizes are required to reach `k`.
pub fn stratified_kfold_by_site(records: &[SubjectRecord], k: usize, seed: u64) -> Result<FoldPlan> {
    kfold(records, k, seed, true)
}

fn kfold(records: &[SubjectRecord], k: usize, seed: u64, by_site: bool) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Stratification(format!("{k} folds; need at least 2")));
    }
    let mut per_class: BTreeMap<u8, usize> = BTreeMap::new();
    for r in records {
        *per_class.entry(r.label).or_default() += 1;
    }
    if let Some((label, n)) = per_class.iter().find(|(_, &n)| n < k) {
        return Err(Error::Stratification(format!("class {label} has {n} subjects, fewer than {k} folds")));
    }
    let mut groups: BTreeMap<(u8, &str), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let site = if by_site { r.site.as_str() } else { "" };
        groups.entry((r.label, site)).or_default().push(i);
    }
    let mut rng = seeded_rng(seed, "folds", k as u64);
    let mut assignment = vec![0usize; records.len()];
    let mut next = 0usize;
    for members in groups.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            assignment[i] = next % k;
            next += 1;
        }
    }
    let folds = (0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..records.len()).partition(|&i| assignment[i] == f);
            let ids = |v: &[usize]| v.iter().map(|&i| records[i].id.clone()).collect();
            Fold {
                train_ids: ids(&train),
                test_ids: ids(&test),
                train,
                test,
            }
        })
        .collect();
    Ok(FoldPlan { k, seed, by_site, folds })
}
