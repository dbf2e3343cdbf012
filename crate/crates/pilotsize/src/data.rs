//! Core data containers, validation, standardization, and deterministic
//! splitting/subsampling primitives.
//!
//! Everything here is immutable after construction and all resampling
//! operations are pure functions of `(data, parameters, seed)`.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seeds;

/// A binary-labeled data set: labels, optional clinical covariates, and a
/// high-dimensional feature matrix.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    /// Class labels, each 0 or 1.
    pub labels: Vec<u8>,
    /// Optional n x q matrix of clinical covariates.
    pub covariates: Option<Array2<f64>>,
    /// n x p matrix of high-dimensional measurements.
    pub features: Array2<f64>,
    /// Optional feature identifiers (length p).
    pub feature_names: Option<Vec<String>>,
    /// Sample identifiers (length n). Preserved through every resampling
    /// step so bootstrap collation can match left-out cases.
    pub sample_ids: Vec<String>,
}

/// Outcome of [`validate`]: counts plus any invariant violations found.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub class_counts: (usize, usize),
    pub n_non_finite: usize,
    pub flags: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.flags.is_empty()
    }
}

impl LabeledDataset {
    /// Builds a dataset, checking shape alignment only. Value-level
    /// invariants (binary labels, finiteness, both classes present) are
    /// reported by [`validate`] rather than enforced here.
    pub fn new(
        labels: Vec<u8>,
        covariates: Option<Array2<f64>>,
        features: Array2<f64>,
        feature_names: Option<Vec<String>>,
        sample_ids: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = labels.len();
        if features.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "labels has {n} rows but features has {}",
                features.nrows()
            )));
        }
        if let Some(z) = &covariates {
            if z.nrows() != n {
                return Err(Error::DimensionMismatch(format!(
                    "labels has {n} rows but covariates has {}",
                    z.nrows()
                )));
            }
        }
        if let Some(names) = &feature_names {
            if names.len() != features.ncols() {
                return Err(Error::DimensionMismatch(format!(
                    "{} feature names for {} features",
                    names.len(),
                    features.ncols()
                )));
            }
        }
        let sample_ids = match sample_ids {
            Some(ids) => {
                if ids.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "{} sample ids for {n} samples",
                        ids.len()
                    )));
                }
                ids
            }
            None => (0..n).map(|i| format!("s{i}")).collect(),
        };
        Ok(Self {
            labels,
            covariates,
            features,
            feature_names,
            sample_ids,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    pub fn q(&self) -> usize {
        self.covariates.as_ref().map_or(0, |z| z.ncols())
    }

    /// Count of (class 0, class 1) samples.
    pub fn class_counts(&self) -> (usize, usize) {
        let ones = self.labels.iter().filter(|&&y| y == 1).count();
        (self.labels.len() - ones, ones)
    }

    /// Proportion of the underrepresented class.
    pub fn pi_lowest(&self) -> f64 {
        let (n0, n1) = self.class_counts();
        let n = self.n().max(1);
        (n0.min(n1) as f64) / n as f64
    }

    /// Row-subset by index, preserving sample ids. Indices may repeat
    /// (bootstrap) or reorder.
    pub fn select(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            covariates: self
                .covariates
                .as_ref()
                .map(|z| z.select(Axis(0), idx)),
            features: self.features.select(Axis(0), idx),
            feature_names: self.feature_names.clone(),
            sample_ids: idx.iter().map(|&i| self.sample_ids[i].clone()).collect(),
        }
    }

    /// Indices of each class, in row order.
    pub(crate) fn class_indices(&self) -> (Vec<usize>, Vec<usize>) {
        let mut zeros = Vec::new();
        let mut ones = Vec::new();
        for (i, &y) in self.labels.iter().enumerate() {
            if y == 1 {
                ones.push(i);
            } else {
                zeros.push(i);
            }
        }
        (zeros, ones)
    }
}

/// Checks the dataset invariants and reports counts. Report-only: callers
/// decide whether flags are fatal.
pub fn validate(ds: &LabeledDataset) -> ValidationReport {
    let mut flags = Vec::new();
    for (i, &y) in ds.labels.iter().enumerate() {
        if y > 1 {
            flags.push(format!("non-binary label {y} at sample {}", ds.sample_ids[i]));
        }
    }
    let (n0, n1) = ds.class_counts();
    if n0 == 0 || n1 == 0 {
        flags.push("only one class present".to_string());
    }
    let mut n_non_finite = 0usize;
    for v in ds.features.iter() {
        if !v.is_finite() {
            n_non_finite += 1;
        }
    }
    if let Some(z) = &ds.covariates {
        for v in z.iter() {
            if !v.is_finite() {
                n_non_finite += 1;
            }
        }
    }
    if n_non_finite > 0 {
        flags.push(format!("non-finite value ({n_non_finite} cells)"));
    }
    ValidationReport {
        n: ds.n(),
        p: ds.p(),
        q: ds.q(),
        class_counts: (n0, n1),
        n_non_finite,
        flags,
    }
}

/// Cross-validation plan: fold count, repetition count, and master seed.
#[derive(Debug, Clone, Copy)]
pub struct SplitPlan {
    pub n_folds: usize,
    pub n_repeats: usize,
    pub seed: u64,
}

impl SplitPlan {
    pub fn new(n_folds: usize, n_repeats: usize, seed: u64) -> Result<Self> {
        let plan = SplitPlan {
            n_folds,
            n_repeats,
            seed,
        };
        plan.check()?;
        Ok(plan)
    }

    pub fn check(&self) -> Result<()> {
        if self.n_folds < 2 {
            return Err(Error::InvalidConfig(format!(
                "n_folds = {}, need at least 2",
                self.n_folds
            )));
        }
        if !(20..=50).contains(&self.n_repeats) {
            return Err(Error::InvalidConfig(format!(
                "n_repeats = {}, must lie in 20..=50",
                self.n_repeats
            )));
        }
        Ok(())
    }
}

/// Class-stratified fold assignment: shuffles each class with the seeded RNG
/// and deals samples round-robin. Folds are disjoint, cover all indices, and
/// per-fold class counts are within one sample of proportional.
pub fn stratified_folds(
    ds: &LabeledDataset,
    n_folds: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if n_folds < 2 {
        return Err(Error::InvalidConfig(format!(
            "n_folds = {n_folds}, need at least 2"
        )));
    }
    let (zeros, ones) = ds.class_indices();
    for (label, class) in [(0u8, &zeros), (1u8, &ones)] {
        if class.len() < n_folds {
            return Err(Error::ClassTooSmall {
                label,
                count: class.len(),
                needed: n_folds,
                action: "stratify folds",
            });
        }
    }
    if ds.n() < 2 * n_folds {
        return Err(Error::InvalidData(format!(
            "{} samples cannot form {n_folds} folds of size >= 2",
            ds.n()
        )));
    }
    let mut rng = seeds::rng(seed, "stratified-folds", 0);
    let mut folds = vec![Vec::new(); n_folds];
    // Rotate the starting fold between classes so remainders do not pile up
    // in fold 0.
    let mut start = 0usize;
    for class in [&zeros, &ones] {
        let mut shuffled = class.clone();
        shuffled.shuffle(&mut rng);
        for (k, &i) in shuffled.iter().enumerate() {
            folds[(start + k) % n_folds].push(i);
        }
        start = (start + class.len()) % n_folds;
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Draws `m` rows without replacement, stratified so each class keeps its
/// proportion to the nearest integer. Deterministic given the seed.
pub fn subsample(ds: &LabeledDataset, m: usize, seed: u64) -> Result<LabeledDataset> {
    let n = ds.n();
    if m < 2 || m > n {
        return Err(Error::SubsampleSize { m, n });
    }
    if m == n {
        return Ok(ds.clone());
    }
    let (zeros, ones) = ds.class_indices();
    // Nearest-integer stratified split, with the remainder going to the
    // class whose exact share rounds up.
    let exact1 = m as f64 * ones.len() as f64 / n as f64;
    let mut m1 = exact1.round() as usize;
    m1 = m1.min(ones.len()).min(m);
    let mut m0 = m - m1;
    if m0 > zeros.len() {
        m1 += m0 - zeros.len();
        m0 = zeros.len();
    }
    for (label, take, avail) in [(0u8, m0, zeros.len()), (1u8, m1, ones.len())] {
        if take == 0 {
            return Err(Error::ClassTooSmall {
                label,
                count: avail,
                needed: 1,
                action: "subsample with both classes",
            });
        }
        debug_assert!(take <= avail);
    }
    let mut rng = seeds::rng(seed, "subsample", m as u64);
    let mut idx = Vec::with_capacity(m);
    idx.extend(draw_without_replacement(&zeros, m0, &mut rng));
    idx.extend(draw_without_replacement(&ones, m1, &mut rng));
    idx.sort_unstable();
    Ok(ds.select(&idx))
}

fn draw_without_replacement<R: Rng>(pool: &[usize], k: usize, rng: &mut R) -> Vec<usize> {
    let mut pool = pool.to_vec();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let j = rng.random_range(0..pool.len());
        out.push(pool.swap_remove(j));
    }
    out
}

/// Stratified bootstrap: draws with replacement within each class so class
/// counts are preserved exactly. Returns row indices into `ds`.
pub fn stratified_bootstrap_indices(ds: &LabeledDataset, seed: u64) -> Vec<usize> {
    let (zeros, ones) = ds.class_indices();
    let mut rng = seeds::rng(seed, "bootstrap-indices", 0);
    let mut idx = Vec::with_capacity(ds.n());
    for class in [&zeros, &ones] {
        for _ in 0..class.len() {
            idx.push(class[rng.random_range(0..class.len())]);
        }
    }
    idx
}

/// Centers and scales a batch of scores to sample mean 0 and sample
/// variance 1 (n-1 denominator), in place.
///
/// Batches with fewer than 3 values or zero variance cannot be standardized
/// and are surfaced as errors; callers must enlarge folds or record the
/// batch as degenerate.
pub fn center_scale(values: &mut [f64]) -> Result<()> {
    if values.len() < 3 {
        return Err(Error::DegenerateBatch(format!(
            "batch has {} values, need at least 3",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 || !var.is_finite() {
        return Err(Error::DegenerateBatch(format!(
            "batch variance {var} is not positive"
        )));
    }
    let sd = var.sqrt();
    for v in values.iter_mut() {
        *v = (*v - mean) / sd;
    }
    Ok(())
}

/// Identifies the repetition and fold a score came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BatchId {
    pub rep: u32,
    pub fold: u32,
}

/// Standardized classification scores with their labels, covariates, and
/// batch provenance. Each `(rep, fold)` batch has sample mean 0 and sample
/// variance 1.
#[derive(Debug, Clone, Default)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub covariates: Option<Array2<f64>>,
    pub batch: Vec<BatchId>,
}

impl ScoreSet {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Splits the pooled set into one `ScoreSet` per repetition, in
    /// ascending repetition order.
    pub fn split_by_rep(&self) -> Vec<ScoreSet> {
        let mut reps: Vec<u32> = self.batch.iter().map(|b| b.rep).collect();
        reps.sort_unstable();
        reps.dedup();
        reps.iter()
            .map(|&r| {
                let idx: Vec<usize> = (0..self.len())
                    .filter(|&i| self.batch[i].rep == r)
                    .collect();
                ScoreSet {
                    scores: idx.iter().map(|&i| self.scores[i]).collect(),
                    labels: idx.iter().map(|&i| self.labels[i]).collect(),
                    covariates: self.covariates.as_ref().map(|z| z.select(Axis(0), &idx)),
                    batch: idx.iter().map(|&i| self.batch[i]).collect(),
                }
            })
            .collect()
    }
}
