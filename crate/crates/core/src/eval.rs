//! Groupwise accuracy and worst-group checkpoint selection.

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::debias::Checkpoint;
use crate::error::{Error, Result};
use crate::nncore::Mlp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub y: usize,
    pub a: usize,
    pub count: usize,
    pub correct: usize,
}

impl GroupStat {
    pub fn accuracy(&self) -> Option<f64> {
        (self.count > 0).then(|| self.correct as f64 / self.count as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub groups: Vec<GroupStat>,
    /// Plain sample mean accuracy.
    pub average_accuracy: f64,
    /// Minimum accuracy over groups with at least one sample.
    pub worst_group_accuracy: f64,
}

impl GroupMetrics {
    /// Builds metrics from per-group `(count, correct)` pairs indexed by
    /// group id `y * n_attrs + a`.
    pub fn from_counts(n_attrs: usize, counts: &[(usize, usize)]) -> Result<Self> {
        let total: usize = counts.iter().map(|c| c.0).sum();
        if total == 0 {
            return Err(Error::config("cannot evaluate on an empty dataset"));
        }
        if let Some(&(c, k)) = counts.iter().find(|(c, k)| k > c) {
            return Err(Error::config(format!("{k} correct out of {c} samples")));
        }
        let groups: Vec<GroupStat> = counts
            .iter()
            .enumerate()
            .map(|(g, &(count, correct))| GroupStat {
                y: g / n_attrs,
                a: g % n_attrs,
                count,
                correct,
            })
            .collect();
        let correct: usize = counts.iter().map(|c| c.1).sum();
        let worst = groups
            .iter()
            .filter_map(GroupStat::accuracy)
            .fold(f64::INFINITY, f64::min);
        Ok(Self {
            groups,
            average_accuracy: correct as f64 / total as f64,
            worst_group_accuracy: worst,
        })
    }

    pub fn per_group_accuracy(&self) -> Vec<Option<f64>> {
        self.groups.iter().map(GroupStat::accuracy).collect()
    }

    /// Group id of the worst group (lowest id on ties).
    pub fn worst_group(&self) -> usize {
        let mut best: Option<(usize, f64)> = None;
        for (g, acc) in self.per_group_accuracy().into_iter().enumerate() {
            if let Some(acc) = acc {
                if best.is_none_or(|(_, b)| acc < b) {
                    best = Some((g, acc));
                }
            }
        }
        best.map_or(0, |(g, _)| g)
    }
}

/// Accuracy per `(y, a)` group by argmax prediction (ties to the lowest class).
pub fn evaluate(model: &Mlp, dataset: &Dataset) -> Result<GroupMetrics> {
    if dataset.is_empty() {
        return Err(Error::config("cannot evaluate on an empty dataset"));
    }
    let labels = dataset.labels("evaluate")?;
    let pred = model.predict(dataset.x())?;
    let mut counts = vec![(0usize, 0usize); dataset.n_groups()];
    for ((&p, &y), &g) in pred.iter().zip(labels).zip(dataset.groups()) {
        counts[g].0 += 1;
        if p == y {
            counts[g].1 += 1;
        }
    }
    GroupMetrics::from_counts(dataset.n_attrs(), &counts)
}

/// Index maximizing worst-group score; ties go to the higher average, then
/// to the earlier entry.
pub fn select_best_by_scores(scores: &[(f64, f64)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &(worst, avg)) in scores.iter().enumerate() {
        best = match best {
            None => Some(i),
            Some(b) => {
                let (bw, ba) = scores[b];
                if worst > bw || (worst == bw && avg > ba) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// Picks the checkpoint with the best worst-group validation accuracy.
pub fn select_best(history: &[Checkpoint], val: &Dataset) -> Result<(usize, GroupMetrics)> {
    if history.is_empty() {
        return Err(Error::config("checkpoint history is empty"));
    }
    let metrics = history
        .iter()
        .map(|c| evaluate(&c.model, val))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<(f64, f64)> = metrics
        .iter()
        .map(|m| (m.worst_group_accuracy, m.average_accuracy))
        .collect();
    let idx = select_best_by_scores(&scores).expect("history is nonempty");
    Ok((idx, metrics.into_iter().nth(idx).expect("index in range")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worst_and_average() {
        let m = GroupMetrics::from_counts(2, &[(20, 18), (20, 16), (20, 19), (20, 12)]).unwrap();
        assert_eq!(m.worst_group_accuracy, 0.6);
        assert_eq!(m.average_accuracy, 0.8125);
        assert_eq!(m.worst_group(), 3);
        assert_eq!(m.groups[2].y, 1);
        assert_eq!(m.groups[2].a, 0);
    }

    #[test]
    fn empty_groups_are_skipped() {
        let m = GroupMetrics::from_counts(2, &[(10, 5), (0, 0), (10, 10), (10, 9)]).unwrap();
        assert_eq!(m.worst_group_accuracy, 0.5);
        assert_eq!(m.per_group_accuracy()[1], None);
        assert!(GroupMetrics::from_counts(2, &[(0, 0); 4]).is_err());
    }

    #[test]
    fn selection_rules() {
        assert_eq!(select_best_by_scores(&[(0.4, 0.9)]), Some(0));
        assert_eq!(select_best_by_scores(&[(0.5, 0.9), (0.7, 0.8), (0.6, 0.99)]), Some(1));
        assert_eq!(select_best_by_scores(&[(0.7, 0.8), (0.7, 0.9)]), Some(1));
        assert_eq!(select_best_by_scores(&[(0.7, 0.9), (0.7, 0.9)]), Some(0));
        assert_eq!(select_best_by_scores(&[]), None);
    }
}
