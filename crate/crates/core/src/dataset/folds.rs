use rand::seq::SliceRandom;

use super::DatasetTable;
use crate::error::{Error, Result};
use crate::rng;

/// Assignment of every graph to one of `k` folds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldSplit {
    pub fn validation_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn training_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }
}

/// Stratified split for classification, shuffled split for regression.
///
/// Classes are shuffled independently, laid end to end and dealt to folds
/// round-robin, so every fold holds each class within one graph of its
/// global share and fold sizes differ by at most one.
pub fn stratified_kfold(ds: &DatasetTable, k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::Contract(format!("k-fold needs k >= 2, got {k}")));
    }
    if ds.len() < k {
        return Err(Error::Contract(format!("{} graphs cannot fill {k} folds", ds.len())));
    }
    let mut rng = rng::seeded(seed);
    let order: Vec<usize> = match ds.class_count() {
        Some(classes) if ds.task().is_classification() => {
            let mut by_class = vec![Vec::new(); classes];
            for (i, g) in ds.graphs().iter().enumerate() {
                by_class[g.target().class().expect("class target")].push(i);
            }
            for (c, members) in by_class.iter_mut().enumerate() {
                if members.len() < k {
                    return Err(Error::Contract(format!(
                        "class {c} has {} graphs, fewer than k = {k}",
                        members.len()
                    )));
                }
                members.shuffle(&mut rng);
            }
            by_class.into_iter().flatten().collect()
        }
        _ => {
            let mut all: Vec<usize> = (0..ds.len()).collect();
            all.shuffle(&mut rng);
            all
        }
    };
    let mut assignments = vec![0; ds.len()];
    for (pos, &graph) in order.iter().enumerate() {
        assignments[graph] = pos % k;
    }
    Ok(FoldSplit { k, assignments, seed })
}
