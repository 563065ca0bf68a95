use serde::Serialize;

use crate::error::{Error, Result};
use crate::nncore::Matrix;

/// Labeled (or label-flagged-unusable) samples with their spurious
/// attribute, group id `y * n_attrs + a`, and a per-sample weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Matrix,
    y: Vec<usize>,
    a: Vec<usize>,
    group: Vec<usize>,
    weight: Vec<f64>,
    n_classes: usize,
    n_attrs: usize,
    labels_usable: bool,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<usize>, a: Vec<usize>, n_classes: usize, n_attrs: usize) -> Result<Self> {
        let n = x.rows();
        if y.len() != n || a.len() != n {
            return Err(Error::shape(
                "Dataset::new labels",
                format!("{n} labels and attributes"),
                format!("{} labels, {} attributes", y.len(), a.len()),
            ));
        }
        if n_classes < 2 || n_attrs < 1 {
            return Err(Error::config("dataset needs at least 2 classes and 1 attribute value"));
        }
        if let Some((index, &label)) = y.iter().enumerate().find(|(_, &v)| v >= n_classes) {
            return Err(Error::LabelOutOfRange { index, label, n_classes });
        }
        if let Some(&bad) = a.iter().find(|&&v| v >= n_attrs) {
            return Err(Error::config(format!("attribute {bad} out of range for {n_attrs} values")));
        }
        let group = y.iter().zip(&a).map(|(&y, &a)| y * n_attrs + a).collect();
        Ok(Self {
            x,
            y,
            a,
            group,
            weight: vec![1.0; n],
            n_classes,
            n_attrs,
            labels_usable: true,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_attrs(&self) -> usize {
        self.n_attrs
    }

    pub fn n_groups(&self) -> usize {
        self.n_classes * self.n_attrs
    }

    pub fn labels_usable(&self) -> bool {
        self.labels_usable
    }

    /// Labels, or an error naming `consumer` when they are flagged unusable.
    pub fn labels(&self, consumer: &'static str) -> Result<&[usize]> {
        if self.labels_usable {
            Ok(&self.y)
        } else {
            Err(Error::Unlabeled(consumer))
        }
    }

    /// Labels regardless of the usability flag (for evaluation bookkeeping).
    pub fn raw_labels(&self) -> &[usize] {
        &self.y
    }

    pub fn attrs(&self) -> &[usize] {
        &self.a
    }

    pub fn groups(&self) -> &[usize] {
        &self.group
    }

    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    pub fn with_weights(mut self, weight: Vec<f64>) -> Result<Self> {
        if weight.len() != self.len() {
            return Err(Error::shape("Dataset::with_weights", self.len(), weight.len()));
        }
        if weight.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config("sample weights must be finite and nonnegative"));
        }
        self.weight = weight;
        Ok(self)
    }

    /// Same samples with labels replaced (groups are recomputed).
    pub fn with_labels(self, y: Vec<usize>) -> Result<Self> {
        let usable = self.labels_usable;
        let weight = self.weight;
        let mut d = Dataset::new(self.x, y, self.a, self.n_classes, self.n_attrs)?.with_weights(weight)?;
        d.labels_usable = usable;
        Ok(d)
    }

    pub fn mark_unlabeled(mut self) -> Self {
        self.labels_usable = false;
        self
    }

    pub(crate) fn set_labels_usable(&mut self, usable: bool) {
        self.labels_usable = usable;
    }

    /// Rows in the given order (duplicates allowed).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            a: indices.iter().map(|&i| self.a[i]).collect(),
            group: indices.iter().map(|&i| self.group[i]).collect(),
            weight: indices.iter().map(|&i| self.weight[i]).collect(),
            n_classes: self.n_classes,
            n_attrs: self.n_attrs,
            labels_usable: self.labels_usable,
        }
    }

    /// Column slice `[start, end)` of the inputs, everything else kept.
    pub fn with_columns(&self, start: usize, end: usize) -> Dataset {
        Dataset {
            x: self.x.select_cols(start, end),
            ..self.clone()
        }
    }

    pub fn group_of(&self, y: usize, a: usize) -> usize {
        y * self.n_attrs + a
    }
}

/// Raw and weight-summed sample counts per group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupTable {
    pub n_attrs: usize,
    pub counts: Vec<usize>,
    pub effective: Vec<f64>,
}

impl GroupTable {
    pub fn total_count(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn total_effective(&self) -> f64 {
        self.effective.iter().sum()
    }

    /// `(y, a)` for group index `g`.
    pub fn label_attr(&self, g: usize) -> (usize, usize) {
        (g / self.n_attrs, g % self.n_attrs)
    }
}

pub fn group_counts(dataset: &Dataset) -> GroupTable {
    let mut counts = vec![0; dataset.n_groups()];
    let mut effective = vec![0.0; dataset.n_groups()];
    for (&g, &w) in dataset.groups().iter().zip(dataset.weights()) {
        counts[g] += 1;
        effective[g] += w;
    }
    GroupTable {
        n_attrs: dataset.n_attrs(),
        counts,
        effective,
    }
}
