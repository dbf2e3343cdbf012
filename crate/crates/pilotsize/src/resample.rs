//! The two resampling engines.
//!
//! `rcs_cv` estimates the finite-sample slope: repeated 5-fold nested
//! cross-validation where each held-out score batch is centered and scaled,
//! the pooled scores are regressed on the labels, and the slope is averaged
//! over 20-50 repetitions.
//!
//! `cs_loo_nccv_bs` estimates the prediction-error variance: a stratified
//! bootstrap where each bootstrap sample is tuned by nested
//! case-cross-validation and scores every out-of-bag case, batches are
//! centered and scaled, and the within-case variances are pooled.
//!
//! Repetitions and bootstrap replicates run as independent parallel tasks
//! with per-task seeds derived from the master seed by fixed counters;
//! aggregation is in task-index order, so results do not depend on the
//! execution schedule.

use ndarray::Axis;
use rayon::prelude::*;

use crate::data::{
    center_scale, stratified_bootstrap_indices, stratified_folds, subsample, BatchId,
    LabeledDataset, ScoreSet, SplitPlan,
};
use crate::error::{Error, Result};
use crate::lasso;
use crate::logistic;
use crate::seeds;

/// Finite-sample slope estimate from RCS-CV.
#[derive(Debug, Clone)]
pub struct SlopeEstimate {
    /// Mean of the repetition slopes.
    pub beta_n: f64,
    /// Mean of the repetition intercepts from the pooled logistic fits.
    pub alpha_n: f64,
    /// Slope of each non-degenerate repetition.
    pub per_rep: Vec<f64>,
    /// Intercept of each non-degenerate repetition.
    pub alpha_per_rep: Vec<f64>,
    /// Training size the slope refers to.
    pub n: usize,
    /// Repetitions requested.
    pub n_reps: usize,
    /// Repetitions dropped as degenerate (zero-variance batch or separable
    /// pooled fit).
    pub n_degenerate: usize,
}

/// Prediction-error variance estimate from CS-LOO-NCCV-BS.
#[derive(Debug, Clone)]
pub struct VarianceEstimate {
    pub sigma2_n: f64,
    /// Mean number of collated out-of-bag scores per contributing case.
    pub b0: f64,
    /// Training size the variance refers to.
    pub n: usize,
    /// Cases excluded for having fewer than 2 out-of-bag scores.
    pub n_excluded: usize,
}

/// Scores one evaluation set from one training set, returning the
/// standardized batch, or `None` when the batch is degenerate (null model or
/// separable inner fit). The default implementation is the nested-CV lasso;
/// tests substitute stubs through this seam.
pub trait OobScorer: Sync {
    fn score(
        &self,
        train: &LabeledDataset,
        eval: &LabeledDataset,
        seed: u64,
    ) -> Result<Option<Vec<f64>>>;
}

/// Nested cross-validation scorer: selects the penalty on the training set
/// by inner CV, fits, scores the evaluation set with the high-dimensional
/// part of the model, and standardizes the batch.
pub struct NestedCvScorer {
    pub n_folds: usize,
}

impl Default for NestedCvScorer {
    fn default() -> Self {
        NestedCvScorer { n_folds: 5 }
    }
}

impl OobScorer for NestedCvScorer {
    fn score(
        &self,
        train: &LabeledDataset,
        eval: &LabeledDataset,
        seed: u64,
    ) -> Result<Option<Vec<f64>>> {
        let plan = SplitPlan {
            n_folds: self.n_folds,
            n_repeats: 20,
            seed,
        };
        let lambda = lasso::select_lambda_cv(train, &plan)?;
        let model = lasso::fit(train, lambda)?;
        let mut scores: Vec<f64> = (0..eval.n())
            .map(|i| model.feature_score(eval.features.row(i).as_slice().expect("row-major")))
            .collect();
        match center_scale(&mut scores) {
            Ok(()) => Ok(Some(scores)),
            Err(Error::DegenerateBatch(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// How each RCS-CV repetition obtains its data.
enum RepSource<'a> {
    /// Every repetition works on the same dataset (full-pilot mode).
    Fixed(&'a LabeledDataset),
    /// Every repetition draws a fresh subset of size `m` (subset mode).
    Redraw { full: &'a LabeledDataset, m: usize },
}

struct RepOutcome {
    slope: Option<(f64, f64)>,
    scores: Vec<f64>,
    labels: Vec<u8>,
    covariates: Option<Vec<Vec<f64>>>,
    batch: Vec<BatchId>,
}

/// One repetition: fresh stratified partition, per-fold nested-CV fit and
/// scoring, per-batch standardization, pooled logistic fit of y on (z, w).
fn one_repetition(
    ds: &LabeledDataset,
    n_folds: usize,
    rep: u32,
    rep_seed: u64,
) -> Result<RepOutcome> {
    let folds = stratified_folds(ds, n_folds, seeds::derive(rep_seed, "partition", 0))?;
    let n = ds.n();
    let mut pooled_scores = vec![0.0; n];
    let mut batch = vec![BatchId { rep, fold: 0 }; n];
    let mut degenerate = false;

    for (k, held_out) in folds.iter().enumerate() {
        let train_idx: Vec<usize> = (0..n).filter(|i| !held_out.contains(i)).collect();
        let train = ds.select(&train_idx);
        let inner_seed = seeds::derive(rep_seed, "inner-cv", k as u64);
        let plan = SplitPlan {
            n_folds,
            n_repeats: 20,
            seed: inner_seed,
        };
        let lambda = lasso::select_lambda_cv(&train, &plan)?;
        let model = lasso::fit(&train, lambda)?;
        let mut w: Vec<f64> = held_out
            .iter()
            .map(|&i| model.feature_score(ds.features.row(i).as_slice().expect("row-major")))
            .collect();
        match center_scale(&mut w) {
            Ok(()) => {}
            Err(Error::DegenerateBatch(_)) => {
                degenerate = true;
                break;
            }
            Err(e) => return Err(e),
        }
        for (pos, &i) in held_out.iter().enumerate() {
            pooled_scores[i] = w[pos];
            batch[i] = BatchId {
                rep,
                fold: k as u32,
            };
        }
    }

    let covariates = ds.covariates.as_ref().map(|z| {
        (0..z.ncols())
            .map(|j| z.index_axis(Axis(1), j).to_vec())
            .collect::<Vec<_>>()
    });

    let slope = if degenerate {
        None
    } else {
        // The repetition slope is the w-coefficient of an ordinary logistic
        // regression of y on (z, w); a separable pooled fit makes the
        // repetition degenerate, like a zero-variance batch.
        let mut cols: Vec<&[f64]> = Vec::new();
        if let Some(zc) = &covariates {
            cols.extend(zc.iter().map(|c| c.as_slice()));
        }
        cols.push(&pooled_scores);
        match logistic::fit_logistic(&cols, &ds.labels) {
            Ok(fit) => Some((*fit.coef.last().expect("slope"), fit.coef[0])),
            Err(Error::SeparableData) | Err(Error::NonConvergence { .. }) => None,
            Err(e) => return Err(e),
        }
    };

    Ok(RepOutcome {
        slope,
        scores: pooled_scores,
        labels: ds.labels.clone(),
        covariates,
        batch,
    })
}

fn run_rcs_cv(source: RepSource<'_>, plan: &SplitPlan) -> Result<(SlopeEstimate, ScoreSet)> {
    plan.check()?;
    let n_folds = plan.n_folds;

    let outcomes: Vec<Result<RepOutcome>> = (0..plan.n_repeats as u32)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = seeds::derive(plan.seed, "rcs-cv-rep", rep as u64);
            let owned;
            let ds: &LabeledDataset = match source {
                RepSource::Fixed(ds) => ds,
                RepSource::Redraw { full, m } => {
                    owned = subsample(full, m, seeds::derive(rep_seed, "rep-subset", 0))?;
                    &owned
                }
            };
            one_repetition(ds, n_folds, rep, rep_seed)
        })
        .collect();

    let mut per_rep = Vec::new();
    let mut alpha_per_rep = Vec::new();
    let mut pooled = ScoreSet::default();
    let mut cov_cols: Option<Vec<Vec<f64>>> = None;
    let mut n_degenerate = 0usize;
    let mut train_n = 0usize;
    for outcome in outcomes {
        let outcome = outcome?;
        train_n = outcome.labels.len();
        match outcome.slope {
            Some((slope, alpha)) => {
                per_rep.push(slope);
                alpha_per_rep.push(alpha);
                pooled.scores.extend_from_slice(&outcome.scores);
                pooled.labels.extend_from_slice(&outcome.labels);
                pooled.batch.extend_from_slice(&outcome.batch);
                if let Some(zc) = outcome.covariates {
                    let acc = cov_cols.get_or_insert_with(|| vec![Vec::new(); zc.len()]);
                    for (dst, src) in acc.iter_mut().zip(&zc) {
                        dst.extend_from_slice(src);
                    }
                }
            }
            None => n_degenerate += 1,
        }
    }
    if 2 * n_degenerate > plan.n_repeats {
        return Err(Error::SignalTooWeak {
            degenerate: n_degenerate,
            total: plan.n_repeats,
        });
    }
    if let Some(cols) = cov_cols {
        let q = cols.len();
        let rows = pooled.scores.len();
        let mut z = ndarray::Array2::zeros((rows, q));
        for (j, col) in cols.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                z[(i, j)] = v;
            }
        }
        pooled.covariates = Some(z);
    }
    let beta_n = per_rep.iter().sum::<f64>() / per_rep.len() as f64;
    let alpha_n = alpha_per_rep.iter().sum::<f64>() / alpha_per_rep.len() as f64;
    Ok((
        SlopeEstimate {
            beta_n,
            alpha_n,
            per_rep,
            alpha_per_rep,
            n: train_n,
            n_reps: plan.n_repeats,
            n_degenerate,
        },
        pooled,
    ))
}

/// Repeated, centered, scaled nested cross-validation on a fixed dataset:
/// each repetition draws a fresh stratified partition.
pub fn rcs_cv(ds: &LabeledDataset, plan: &SplitPlan) -> Result<(SlopeEstimate, ScoreSet)> {
    run_rcs_cv(RepSource::Fixed(ds), plan)
}

/// RCS-CV at a subset size: each repetition draws a fresh stratified subset
/// of `m` rows from the full dataset before partitioning.
pub fn rcs_cv_redrawn(
    full: &LabeledDataset,
    m: usize,
    plan: &SplitPlan,
) -> Result<(SlopeEstimate, ScoreSet)> {
    if m == full.n() {
        return run_rcs_cv(RepSource::Fixed(full), plan);
    }
    run_rcs_cv(RepSource::Redraw { full, m }, plan)
}

/// Leave-one-out nested case-cross-validated bootstrap with centering and
/// scaling, collated from a single set of bootstrap replicates.
pub fn cs_loo_nccv_bs(
    ds: &LabeledDataset,
    n_bootstrap: usize,
    seed: u64,
) -> Result<VarianceEstimate> {
    cs_loo_nccv_bs_with(ds, n_bootstrap, seed, &NestedCvScorer::default())
}

/// As [`cs_loo_nccv_bs`], with an injectable scorer (test seam).
pub fn cs_loo_nccv_bs_with(
    ds: &LabeledDataset,
    n_bootstrap: usize,
    seed: u64,
    scorer: &dyn OobScorer,
) -> Result<VarianceEstimate> {
    if n_bootstrap < 50 {
        return Err(Error::InvalidConfig(format!(
            "n_bootstrap = {n_bootstrap}, need at least 50"
        )));
    }
    let n = ds.n();

    // Each bootstrap yields (out-of-bag case index, standardized score)
    // pairs; a degenerate batch contributes nothing.
    let batches: Vec<Result<Vec<(usize, f64)>>> = (0..n_bootstrap as u64)
        .into_par_iter()
        .map(|b| {
            let bs_seed = seeds::derive(seed, "bootstrap", b);
            let idx = stratified_bootstrap_indices(ds, bs_seed);
            let mut in_bag = vec![false; n];
            for &i in &idx {
                in_bag[i] = true;
            }
            let oob: Vec<usize> = (0..n).filter(|&i| !in_bag[i]).collect();
            if oob.len() < 3 {
                return Ok(Vec::new());
            }
            let train = ds.select(&idx);
            let eval = ds.select(&oob);
            match scorer.score(&train, &eval, seeds::derive(bs_seed, "scorer", 0))? {
                Some(scores) => Ok(oob.into_iter().zip(scores).collect()),
                None => Ok(Vec::new()),
            }
        })
        .collect();

    let mut per_case: Vec<Vec<f64>> = vec![Vec::new(); n];
    for batch in batches {
        for (i, w) in batch? {
            per_case[i].push(w);
        }
    }

    // sigma^2 = sum_i sum_j (W_ij - Wbar_i)^2 / sum_i (b0_i - 1), the pooled
    // within-case variance with the per-case collated b0_i.
    let mut ss = 0.0;
    let mut dof = 0.0;
    let mut b0_sum = 0usize;
    let mut contributing = 0usize;
    let mut excluded = 0usize;
    for scores in &per_case {
        let b0 = scores.len();
        if b0 < 2 {
            excluded += 1;
            continue;
        }
        let mean = scores.iter().sum::<f64>() / b0 as f64;
        ss += scores.iter().map(|w| (w - mean).powi(2)).sum::<f64>();
        dof += (b0 - 1) as f64;
        b0_sum += b0;
        contributing += 1;
    }
    if 5 * excluded > n {
        return Err(Error::InsufficientBootstraps { excluded, total: n });
    }
    Ok(VarianceEstimate {
        sigma2_n: ss / dof,
        b0: b0_sum as f64 / contributing.max(1) as f64,
        n,
        n_excluded: excluded,
    })
}
