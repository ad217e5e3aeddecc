//! Twisting, twirling and the loss decomposition `L = L_mean + L_equiv`.
//!
//! Exact decompositions average over an enumerated finite group. Sampled
//! decompositions draw `N` rotations per sample and report Bessel-corrected
//! estimates alongside the plug-in values.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::group::{enumerate, sample_many, BlockAction, GroupElement, GroupSpec};
use crate::losses::LossModel;
use crate::models::ModelHandle;
use crate::objective::{mean_sq_dev, row_mean, twisted, Sample};
use crate::rng::Stream;

/// Totals below this are treated as zero loss and the percent is undefined.
pub const ZERO_LOSS: f64 = 1e-30;
/// Default rotation count for sampled measurements.
pub const DEFAULT_ROTATIONS: usize = 10;
/// Allowed floating-point Jensen violation before clamping, relative to max(1, L).
const JENSEN_SLACK: f64 = 1e-12;

/// Twisted predictions of one input under a list of rotations.
#[derive(Debug, Clone, PartialEq)]
pub struct TwistedBatch {
    pub predictions: Vec<Vec<f64>>,
    pub elements: Vec<GroupElement>,
}

impl TwistedBatch {
    pub fn sample_count(&self) -> usize {
        self.predictions.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossDecomposition {
    pub total: f64,
    pub mean: f64,
    pub equiv: f64,
    /// `equiv / total`; NaN when the total loss is zero.
    pub percent: f64,
}

impl LossDecomposition {
    fn from_parts(total: f64, mean: f64, equiv: f64) -> Self {
        Self { total, mean, equiv, percent: percent(equiv, total) }
    }
}

pub fn percent(equiv: f64, total: f64) -> f64 {
    if total < ZERO_LOSS {
        f64::NAN
    } else {
        equiv / total
    }
}

/// Finite-sample estimates from `N` rotations per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    /// μ̂ for each sample.
    pub mu_hat: Vec<Vec<f64>>,
    /// Dataset mean of `(1/(N D)) Σ ‖Ẑ_i − μ̂‖²` (divide-by-N variance).
    pub sigma_hat_sq: f64,
    /// Plug-in `l(μ̂, y)`, biased upward.
    pub mean_loss_naive: f64,
    /// Plug-in `L̂ − l(μ̂, y)`, biased downward by `(N−1)/N`.
    pub equiv_loss_naive: f64,
    pub mean_loss_unbiased: f64,
    pub equiv_loss_unbiased: f64,
    pub percent_bias_corrected: f64,
    pub rotation_count: usize,
    /// Set for non-quadratic losses, where the correction is only second-order accurate.
    pub approximate: bool,
}

pub fn twist(model: &ModelHandle, action: &BlockAction, x: &[f64], elements: &[GroupElement]) -> Result<TwistedBatch> {
    check_len("twist input", x.len(), action.dimension())?;
    check_len("model dimension", model.dimension(), action.dimension())?;
    let predictions = elements
        .iter()
        .enumerate()
        .map(|(i, g)| {
            twisted(model, &model.params.values, x, std::slice::from_ref(g))
                .map(|mut v| v.pop().expect("one prediction"))
                .map_err(|e| Error::Sample { index: i, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TwistedBatch { predictions, elements: elements.to_vec() })
}

/// Group-averaged prediction μ(x): the row mean of the twisted predictions.
pub fn twirl(batch: &TwistedBatch) -> Result<Vec<f64>> {
    if batch.predictions.is_empty() {
        return Err(Error::Argument("cannot twirl an empty batch".into()));
    }
    Ok(row_mean(&batch.predictions))
}

fn check_dataset(model: &ModelHandle, loss: &LossModel, action: &BlockAction, dataset: &[Sample]) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Argument("dataset is empty".into()));
    }
    check_len("model dimension", model.dimension(), action.dimension())?;
    check_len("loss dimension", loss.dimension, action.dimension())
}

/// Per-sample (total, l(μ, y), variance term) under the given rotations.
fn sample_parts(
    model: &ModelHandle,
    loss: &LossModel,
    sample: &Sample,
    elements: &[GroupElement],
) -> Result<(f64, f64, f64, Vec<f64>)> {
    let z = twisted(model, &model.params.values, &sample.x, elements)?;
    let mu = row_mean(&z);
    let total = z.iter().map(|zi| loss.loss(zi, &sample.y)).sum::<Result<f64>>()? / z.len() as f64;
    let mean = loss.loss(&mu, &sample.y)?;
    let variance = mean_sq_dev(&z, &mu);
    Ok((total, mean, variance, mu))
}

/// Exact decomposition by enumerating a finite group.
pub fn decompose_exact(
    model: &ModelHandle,
    loss: &LossModel,
    action: &BlockAction,
    dataset: &[Sample],
    group: &GroupSpec,
) -> Result<LossDecomposition> {
    let elements = match group {
        GroupSpec::So3 => {
            return Err(Error::Unsupported(
                "exact decomposition needs a finite group; use decompose_sampled for SO(3)".into(),
            ))
        }
        GroupSpec::Finite(_) => enumerate(group)?,
    };
    check_dataset(model, loss, action, dataset)?;
    let parts: Vec<(f64, f64, f64, Vec<f64>)> = dataset
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            sample_parts(model, loss, s, &elements).map_err(|e| Error::Sample { index: i, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;
    let n = dataset.len() as f64;
    let (mut total, mut mean, mut variance) = (0.0, 0.0, 0.0);
    for (t, m, v, _) in &parts {
        total += t;
        mean += m;
        variance += v;
    }
    total /= n;
    mean /= n;
    variance /= n;

    let equiv = if loss.is_quadratic() {
        if (total - (mean + variance)).abs() > 1e-10 * total.max(ZERO_LOSS) {
            return Err(Error::Numerical(format!(
                "decomposition does not reconcile: L={total:e}, L_mean={mean:e}, L_equiv={variance:e}"
            )));
        }
        variance
    } else {
        clamp_jensen(total - mean, total)?
    };
    Ok(LossDecomposition::from_parts(total, mean, equiv))
}

fn clamp_jensen(diff: f64, total: f64) -> Result<f64> {
    if diff >= 0.0 {
        Ok(diff)
    } else if diff >= -JENSEN_SLACK * total.max(1.0) {
        Ok(0.0)
    } else {
        Err(Error::Numerical(format!("Jensen violated: L − L_mean = {diff:e}")))
    }
}

/// Bessel-corrected estimates from aggregated plug-in quantities.
///
/// `spread` is the plug-in equivariance term `L̂ − l(μ̂, y)` (equal to the
/// divide-by-N variance for MSE). Returns (mean_unbiased, equiv_unbiased, percent).
pub fn bias_corrected(total: f64, mean_naive: f64, spread: f64, n: usize) -> (f64, f64, f64) {
    let nf = n as f64;
    let equiv = nf / (nf - 1.0) * spread;
    let mean = mean_naive - spread / (nf - 1.0);
    (mean, equiv, percent(equiv, total))
}

/// Estimates the decomposition from `n` fresh rotations per sample.
pub fn decompose_sampled(
    model: &ModelHandle,
    loss: &LossModel,
    action: &BlockAction,
    dataset: &[Sample],
    spec: &GroupSpec,
    n: usize,
    rng: &mut Stream,
) -> Result<(EstimatorReport, LossDecomposition)> {
    if n < 2 {
        return Err(Error::Argument(format!("sampled decomposition needs N >= 2 rotations (got {n})")));
    }
    check_dataset(model, loss, action, dataset)?;
    let plans = dataset.iter().map(|_| sample_many(spec, n, rng)).collect::<Result<Vec<_>>>()?;
    let parts: Vec<(f64, f64, f64, Vec<f64>)> = dataset
        .par_iter()
        .zip(plans.par_iter())
        .enumerate()
        .map(|(i, (s, els))| {
            sample_parts(model, loss, s, els).map_err(|e| Error::Sample { index: i, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;
    let count = dataset.len() as f64;
    let (mut total, mut mean, mut variance) = (0.0, 0.0, 0.0);
    let mut mu_hat = Vec::with_capacity(parts.len());
    for (t, m, v, mu) in parts {
        total += t;
        mean += m;
        variance += v;
        mu_hat.push(mu);
    }
    total /= count;
    mean /= count;
    variance /= count;
    let spread = if loss.is_quadratic() { variance } else { total - mean };
    let (mean_u, equiv_u, pct) = bias_corrected(total, mean, spread, n);
    let report = EstimatorReport {
        mu_hat,
        sigma_hat_sq: variance,
        mean_loss_naive: mean,
        equiv_loss_naive: spread,
        mean_loss_unbiased: mean_u,
        equiv_loss_unbiased: equiv_u,
        percent_bias_corrected: pct,
        rotation_count: n,
        approximate: !loss.is_quadratic(),
    };
    Ok((report, LossDecomposition { total, mean: mean_u, equiv: equiv_u, percent: pct }))
}

/// Second-order Taylor estimate `½ E[tr(H_l(μ, y) Cov_T)]` over a finite group.
pub fn second_order_equiv_error(
    model: &ModelHandle,
    loss: &LossModel,
    action: &BlockAction,
    dataset: &[Sample],
    group: &GroupSpec,
) -> Result<f64> {
    let elements = enumerate(group)?;
    check_dataset(model, loss, action, dataset)?;
    let per: Vec<f64> = dataset
        .par_iter()
        .map(|s| {
            let z = twisted(model, &model.params.values, &s.x, &elements)?;
            let mu = row_mean(&z);
            let h = loss.hessian(&mu, &s.y)?;
            let mut acc = 0.0;
            for zi in &z {
                let delta: Vec<f64> = zi.iter().zip(&mu).map(|(a, b)| a - b).collect();
                let hd = h.matvec(&delta)?;
                acc += delta.iter().zip(&hd).map(|(a, b)| a * b).sum::<f64>();
            }
            Ok(0.5 * acc / z.len() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / dataset.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub n: usize,
    pub percent_mean: f64,
    pub percent_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub rows: Vec<SensitivityRow>,
    pub max_rotations: usize,
    pub repeats: usize,
    /// Set when fewer than 10 bootstrap repeats were requested.
    pub few_repeats: bool,
}

/// Subsampled bootstrap of the bias-corrected percent as a function of the
/// rotation count.
///
/// Twisted predictions are computed once for `max_n` rotations per sample.
/// For each `n` in `2..=max_n`, every repeat resamples `n` of them with
/// replacement (independently per sample) and recomputes the percent.
#[allow(clippy::too_many_arguments)]
pub fn sensitivity_bootstrap(
    model: &ModelHandle,
    loss: &LossModel,
    action: &BlockAction,
    dataset: &[Sample],
    spec: &GroupSpec,
    max_n: usize,
    repeats: usize,
    rng: &mut Stream,
) -> Result<SensitivityReport> {
    if max_n < 2 {
        return Err(Error::Argument(format!("max rotations must be at least 2 (got {max_n})")));
    }
    if repeats < 2 {
        return Err(Error::Argument("bootstrap needs at least two repeats".into()));
    }
    check_dataset(model, loss, action, dataset)?;
    let plans = dataset.iter().map(|_| sample_many(spec, max_n, rng)).collect::<Result<Vec<_>>>()?;
    // Per sample and rotation: loss of the twisted prediction, plus the prediction itself.
    let cache: Vec<(Vec<Vec<f64>>, Vec<f64>)> = dataset
        .par_iter()
        .zip(plans.par_iter())
        .map(|(s, els)| {
            let z = twisted(model, &model.params.values, &s.x, els)?;
            let losses = z.iter().map(|zi| loss.loss(zi, &s.y)).collect::<Result<Vec<_>>>()?;
            Ok((z, losses))
        })
        .collect::<Result<_>>()?;
    let seeds: Vec<u64> = (2..=max_n).map(|_| rng.random()).collect();

    let rows = seeds
        .par_iter()
        .enumerate()
        .map(|(k, seed)| {
            let n = k + 2;
            let mut local = Stream::seed_from_u64(*seed);
            let mut estimates = Vec::with_capacity(repeats);
            let mut idx = vec![0usize; n];
            let mut picked: Vec<Vec<f64>> = Vec::with_capacity(n);
            for _ in 0..repeats {
                let (mut total, mut mean, mut variance) = (0.0, 0.0, 0.0);
                for (sample, (z, losses)) in dataset.iter().zip(&cache) {
                    idx.iter_mut().for_each(|k| *k = local.random_range(0..max_n));
                    picked.clear();
                    picked.extend(idx.iter().map(|&k| z[k].clone()));
                    let mu = row_mean(&picked);
                    total += idx.iter().map(|&k| losses[k]).sum::<f64>() / n as f64;
                    mean += loss.loss(&mu, &sample.y)?;
                    variance += mean_sq_dev(&picked, &mu);
                }
                let c = dataset.len() as f64;
                let (total, mean, variance) = (total / c, mean / c, variance / c);
                let spread = if loss.is_quadratic() { variance } else { total - mean };
                estimates.push(bias_corrected(total, mean, spread, n).2);
            }
            let (m, sd) = mean_and_std(&estimates);
            Ok(SensitivityRow { n, percent_mean: m, percent_stderr: sd })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SensitivityReport { rows, max_rotations: max_n, repeats, few_repeats: repeats < 10 })
}

/// Mean and sample standard deviation (n − 1 denominator).
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}
