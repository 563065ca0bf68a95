//! Synthetic spurious-correlation datasets.
//!
//! Each sample carries a label `y`, a binary spurious attribute `a`, and a
//! feature vector `[core | spurious | noise]`:
//!
//! - core block: `mu_core * dir(y) + sigma * N(0, I)`
//! - spurious block: `mu_spurious * dir(a) + sigma * N(0, I)`
//! - noise block: `sigma * N(0, I)`
//!
//! In the training split `a` agrees with the label's aligned attribute with
//! probability `bias_rho`; validation and test splits hold exactly equal
//! counts per `(y, a)` group.

mod dataset;
mod format;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use dataset::{group_counts, Dataset, GroupTable};
pub use format::{
    dataset_from_str, dataset_to_string, load_dataset, read_dataset, save_dataset, write_dataset, DATA_MAGIC,
};

use crate::error::{Error, Result};
use crate::nncore::Matrix;
use crate::rng::{self, Stream};

/// The spurious attribute is binary in every configuration.
pub const N_ATTRS: usize = 2;

/// Which classes carry the spurious correlation in the training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    /// Every class sees `a == aligned(y)` with probability `bias_rho`.
    #[default]
    Symmetric,
    /// As `Symmetric`, except the given class draws `a` uniformly.
    UnbiasedClass(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub bias_rho: f64,
    pub mu_core: f64,
    pub mu_spurious: f64,
    pub sigma: f64,
    pub d_core: usize,
    pub d_spurious: usize,
    pub d_noise: usize,
    pub n_classes: usize,
    /// Class prior of the training split and the unlabeled pool; uniform when `None`.
    pub class_prior: Option<Vec<f64>>,
    pub bias_mode: BiasMode,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_train: 4000,
            n_val: 400,
            n_test: 2000,
            bias_rho: 0.95,
            mu_core: 0.85,
            mu_spurious: 3.0,
            sigma: 1.0,
            d_core: 5,
            d_spurious: 5,
            d_noise: 10,
            n_classes: 2,
            class_prior: Some(vec![0.9, 0.1]),
            bias_mode: BiasMode::Symmetric,
            seed: 0,
        }
    }
}

/// The three splits produced by [`generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl SyntheticConfig {
    pub fn d(&self) -> usize {
        self.d_core + self.d_spurious + self.d_noise
    }

    pub fn n_groups(&self) -> usize {
        self.n_classes * N_ATTRS
    }

    pub fn validate(&self) -> Result<()> {
        if self.d() == 0 {
            return Err(Error::config("d_core + d_spurious + d_noise must be at least 1"));
        }
        if !(2..=3).contains(&self.n_classes) {
            return Err(Error::config(format!("n_classes must be 2 or 3, got {}", self.n_classes)));
        }
        if !(0.5..=1.0).contains(&self.bias_rho) {
            return Err(Error::config(format!("bias_rho must lie in [0.5, 1], got {}", self.bias_rho)));
        }
        if !(self.mu_core >= 0.0 && self.mu_spurious >= 0.0) {
            return Err(Error::config("mean offsets must be nonnegative"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::config(format!("sigma must be positive, got {}", self.sigma)));
        }
        let g = self.n_groups();
        for (name, n) in [("n_val", self.n_val), ("n_test", self.n_test)] {
            if n % g != 0 {
                return Err(Error::config(format!(
                    "{name} = {n} cannot be split evenly over {g} groups"
                )));
            }
        }
        if let Some(p) = &self.class_prior {
            if p.len() != self.n_classes || p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || p.iter().sum::<f64>() <= 0.0
            {
                return Err(Error::config("class_prior needs one nonnegative entry per class with positive sum"));
            }
        }
        if let BiasMode::UnbiasedClass(c) = self.bias_mode {
            if c >= self.n_classes {
                return Err(Error::config(format!("unbiased class {c} out of range")));
            }
        }
        Ok(())
    }

    /// Attribute that co-occurs with class `y` in the biased split.
    pub fn aligned_attr(&self, y: usize) -> usize {
        y % N_ATTRS
    }

    /// Group ids that conflict with the training bias.
    pub fn minority_groups(&self) -> Vec<usize> {
        (0..self.n_classes)
            .flat_map(|y| (0..N_ATTRS).map(move |a| (y, a)))
            .filter(|&(y, a)| a != self.aligned_attr(y))
            .map(|(y, a)| y * N_ATTRS + a)
            .collect()
    }

    fn sample_class<R: Rng>(&self, rng: &mut R) -> usize {
        match &self.class_prior {
            None => rng.random_range(0..self.n_classes),
            Some(p) => {
                let total: f64 = p.iter().sum();
                let mut u = rng.random::<f64>() * total;
                for (c, &pc) in p.iter().enumerate() {
                    if u < pc {
                        return c;
                    }
                    u -= pc;
                }
                p.iter().rposition(|&v| v > 0.0).unwrap_or(0)
            }
        }
    }

    fn sample_biased_attr<R: Rng>(&self, y: usize, rng: &mut R) -> usize {
        let rho = match self.bias_mode {
            BiasMode::UnbiasedClass(c) if c == y => 1.0 / N_ATTRS as f64,
            _ => self.bias_rho,
        };
        let aligned = self.aligned_attr(y);
        if rng.random::<f64>() < rho {
            aligned
        } else {
            // uniform over the remaining attribute values
            let k = rng.random_range(0..N_ATTRS - 1);
            if k >= aligned {
                k + 1
            } else {
                k
            }
        }
    }

    /// Writes the feature vector of one `(y, a)` sample into `row`.
    fn sample_features<R: Rng>(&self, y: usize, a: usize, rng: &mut R, row: &mut [f64]) {
        let (core, rest) = row.split_at_mut(self.d_core);
        let (spur, noise) = rest.split_at_mut(self.d_spurious);
        for (j, v) in core.iter_mut().enumerate() {
            *v = self.mu_core * direction(y, self.n_classes, j) + self.sigma * gaussian(rng);
        }
        for (j, v) in spur.iter_mut().enumerate() {
            *v = self.mu_spurious * direction(a, N_ATTRS, j) + self.sigma * gaussian(rng);
        }
        for v in noise.iter_mut() {
            *v = self.sigma * gaussian(rng);
        }
    }

    fn assemble(&self, ys: Vec<usize>, attrs: Vec<usize>, rng: &mut impl Rng) -> Result<Dataset> {
        let d = self.d();
        let mut x = Matrix::zeros(ys.len(), d);
        for (i, (&y, &a)) in ys.iter().zip(&attrs).enumerate() {
            self.sample_features(y, a, rng, x.row_mut(i));
        }
        Dataset::new(x, ys, attrs, self.n_classes, N_ATTRS)
    }

    fn biased_split(&self, n: usize, stream: Stream) -> Result<Dataset> {
        let mut rng = rng::stream(self.seed, stream, 0);
        let mut ys = Vec::with_capacity(n);
        let mut attrs = Vec::with_capacity(n);
        for _ in 0..n {
            let y = self.sample_class(&mut rng);
            attrs.push(self.sample_biased_attr(y, &mut rng));
            ys.push(y);
        }
        self.assemble(ys, attrs, &mut rng)
    }

    fn balanced_split(&self, n: usize, stream: Stream) -> Result<Dataset> {
        let mut rng = rng::stream(self.seed, stream, 0);
        let g = self.n_groups();
        let ys = (0..n).map(|i| (i % g) / N_ATTRS).collect();
        let attrs = (0..n).map(|i| (i % g) % N_ATTRS).collect();
        self.assemble(ys, attrs, &mut rng)
    }
}

/// Class pattern on coordinate `j` of a block: `±1` for two values, and for
/// three a `+1 / -1/2` pattern cycling over coordinates.
fn direction(value: usize, n_values: usize, j: usize) -> f64 {
    if n_values == 2 {
        if value == 1 {
            1.0
        } else {
            -1.0
        }
    } else if j % n_values == value {
        1.0
    } else {
        -1.0 / (n_values - 1) as f64
    }
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Biased training split plus exactly group-balanced validation and test splits.
pub fn generate(config: &SyntheticConfig) -> Result<Splits> {
    config.validate()?;
    Ok(Splits {
        train: config.biased_split(config.n_train, Stream::TrainSplit)?,
        val: config.balanced_split(config.n_val, Stream::ValSplit)?,
        test: config.balanced_split(config.n_test, Stream::TestSplit)?,
    })
}

/// `n_train` samples with uniform classes and the attribute drawn
/// independently of the label, flagged so that no labeled trainer accepts
/// them.
pub fn make_unlabeled_pool(config: &SyntheticConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let mut rng = rng::stream(seed, Stream::Pool, config.seed);
    let mut ys = Vec::with_capacity(config.n_train);
    let mut attrs = Vec::with_capacity(config.n_train);
    for _ in 0..config.n_train {
        ys.push(rng.random_range(0..config.n_classes));
        attrs.push(rng.random_range(0..N_ATTRS));
    }
    Ok(config.assemble(ys, attrs, &mut rng)?.mark_unlabeled())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn val_split_is_exactly_balanced() {
        let cfg = SyntheticConfig {
            n_val: 400,
            ..Default::default()
        };
        let s = generate(&cfg).unwrap();
        assert_eq!(group_counts(&s.val).counts, vec![100; 4]);
        assert_eq!(group_counts(&s.test).counts, vec![500; 4]);
    }

    #[test]
    fn unbalanceable_sizes_rejected() {
        let cfg = SyntheticConfig {
            n_val: 402,
            ..Default::default()
        };
        assert!(matches!(generate(&cfg), Err(Error::InvalidConfig(_))));
        let ternary = SyntheticConfig {
            n_classes: 3,
            n_val: 400,
            class_prior: None,
            ..Default::default()
        };
        assert!(generate(&ternary).is_err());
    }

    #[test]
    fn group_ids_consistent() {
        let s = generate(&SyntheticConfig::default()).unwrap();
        for d in [&s.train, &s.val, &s.test] {
            for i in 0..d.len() {
                assert_eq!(d.groups()[i], d.raw_labels()[i] * 2 + d.attrs()[i]);
            }
        }
    }

    #[test]
    fn minority_groups_binary_and_ternary() {
        assert_eq!(SyntheticConfig::default().minority_groups(), vec![1, 2]);
        let t = SyntheticConfig {
            n_classes: 3,
            ..Default::default()
        };
        assert_eq!(t.minority_groups(), vec![1, 2, 5]);
    }

    #[test]
    fn unbiased_class_mode_leaves_one_class_balanced() {
        let cfg = SyntheticConfig {
            n_train: 8000,
            bias_mode: BiasMode::UnbiasedClass(0),
            ..Default::default()
        };
        let t = group_counts(&generate(&cfg).unwrap().train);
        let (c00, c01) = (t.counts[0] as f64, t.counts[1] as f64);
        assert!((c00 / (c00 + c01) - 0.5).abs() < 0.05);
        let (c10, c11) = (t.counts[2] as f64, t.counts[3] as f64);
        assert!(c10 / (c10 + c11) < 0.08);
    }
}
