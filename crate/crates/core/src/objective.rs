//! Data-augmented objectives and their parameter gradients.
//!
//! For each sample `(x, y)` and its rotations `T_1..T_N`, the twisted
//! predictions are `Z_i = T_i⁻¹ f(T_i x)`. Three objectives are evaluated
//! together, each averaged over samples:
//!
//! * total:  `(1/N) Σ_i l(Z_i, y)`
//! * mean:   `l(μ̂, y)` with `μ̂ = (1/N) Σ_i Z_i`
//! * equiv:  `(1/(N D)) Σ_i ‖Z_i − μ̂‖²` for MSE, `total − mean` otherwise
//!
//! The equivariance term uses the divide-by-N variance; the Bessel-corrected
//! estimate lives in [`crate::metrics`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::group::{apply_blocks, apply_blocks_transposed, sample_many, BlockAction, GroupElement, GroupSpec};
use crate::losses::LossModel;
use crate::models::ModelHandle;
use crate::rng::Stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Rotations used for each sample of a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum RotationPlan {
    /// The same elements for every sample (e.g. a full finite-group enumeration).
    Shared(Vec<GroupElement>),
    PerSample(Vec<Vec<GroupElement>>),
}

impl RotationPlan {
    /// Independent draws of `n` elements for each of `samples` samples.
    pub fn sampled(spec: &GroupSpec, samples: usize, n: usize, rng: &mut Stream) -> Result<Self> {
        let per = (0..samples).map(|_| sample_many(spec, n, rng)).collect::<Result<Vec<_>>>()?;
        Ok(RotationPlan::PerSample(per))
    }

    pub fn identity() -> Self {
        RotationPlan::Shared(vec![GroupElement::identity()])
    }

    pub fn for_sample(&self, i: usize) -> &[GroupElement] {
        match self {
            RotationPlan::Shared(e) => e,
            RotationPlan::PerSample(per) => &per[i],
        }
    }

    fn check(&self, samples: usize) -> Result<()> {
        match self {
            RotationPlan::Shared(e) if e.is_empty() => Err(Error::Argument("rotation plan is empty".into())),
            RotationPlan::PerSample(per) if per.len() != samples => Err(Error::Argument(format!(
                "rotation plan covers {} samples, batch has {samples}",
                per.len()
            ))),
            RotationPlan::PerSample(per) if per.iter().any(Vec::is_empty) => {
                Err(Error::Argument("a sample has no rotations".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradTarget {
    Total,
    Mean,
    Equiv,
}

impl std::str::FromStr for GradTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "total" => Ok(GradTarget::Total),
            "mean" => Ok(GradTarget::Mean),
            "equiv" => Ok(GradTarget::Equiv),
            other => Err(Error::Argument(format!("unknown gradient target '{other}' (total, mean, equiv)"))),
        }
    }
}

/// Which gradients [`evaluate_at`] should return.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grads {
    None,
    /// Only the augmented-loss gradient (the training step).
    Total,
    All,
}

#[derive(Debug, Clone, Default)]
pub struct ObjectiveValues {
    pub total: f64,
    pub mean: f64,
    pub equiv: f64,
    /// Empty unless gradients were requested.
    pub grad_total: Vec<f64>,
    pub grad_mean: Vec<f64>,
    pub grad_equiv: Vec<f64>,
}

impl ObjectiveValues {
    pub fn value(&self, target: GradTarget) -> f64 {
        match target {
            GradTarget::Total => self.total,
            GradTarget::Mean => self.mean,
            GradTarget::Equiv => self.equiv,
        }
    }

    pub fn gradient(&self, target: GradTarget) -> &[f64] {
        match target {
            GradTarget::Total => &self.grad_total,
            GradTarget::Mean => &self.grad_mean,
            GradTarget::Equiv => &self.grad_equiv,
        }
    }
}

/// Twisted predictions `T⁻¹ f(T x)` for each element.
pub(crate) fn twisted(
    model: &ModelHandle,
    theta: &[f64],
    x: &[f64],
    elements: &[GroupElement],
) -> Result<Vec<Vec<f64>>> {
    elements
        .iter()
        .map(|g| {
            let fx = model.forward_with(theta, &apply_blocks(g.matrix(), x))?;
            Ok(apply_blocks_transposed(g.matrix(), &fx))
        })
        .collect()
}

pub(crate) fn row_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut mu = vec![0.0; rows[0].len()];
    for r in rows {
        for (m, v) in mu.iter_mut().zip(r) {
            *m += v;
        }
    }
    let n = rows.len() as f64;
    mu.iter_mut().for_each(|m| *m /= n);
    mu
}

pub(crate) fn mean_sq_dev(rows: &[Vec<f64>], mu: &[f64]) -> f64 {
    let d = mu.len() as f64;
    rows.iter().map(|r| r.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).sum::<f64>()
        / (rows.len() as f64 * d)
}

struct SampleTerms {
    total: f64,
    mean: f64,
    equiv: f64,
    grads: Option<[Vec<f64>; 3]>,
}

fn sample_terms(
    model: &ModelHandle,
    theta: &[f64],
    loss: &LossModel,
    sample: &Sample,
    elements: &[GroupElement],
    grads: Grads,
) -> Result<SampleTerms> {
    let z = twisted(model, theta, &sample.x, elements)?;
    let n = z.len() as f64;
    let mu = row_mean(&z);
    let total = z.iter().map(|zi| loss.loss(zi, &sample.y)).sum::<Result<f64>>()? / n;
    let mean = loss.loss(&mu, &sample.y)?;
    let equiv = if loss.is_quadratic() { mean_sq_dev(&z, &mu) } else { total - mean };
    if grads == Grads::None {
        return Ok(SampleTerms { total, mean, equiv, grads: None });
    }
    let all = grads == Grads::All;

    let p = theta.len();
    let d = mu.len() as f64;
    let mut g_total = vec![0.0; p];
    let mut g_mean = vec![0.0; p];
    let mut g_equiv = vec![0.0; p];
    let dmean: Vec<f64> = loss.gradient(&mu, &sample.y)?.iter().map(|v| v / n).collect();
    for (g, zi) in elements.iter().zip(&z) {
        let input = apply_blocks(g.matrix(), &sample.x);
        let dtotal: Vec<f64> = loss.gradient(zi, &sample.y)?.iter().map(|v| v / n).collect();
        // Z = T⁻¹ f(T x), so ∂/∂f = T ∂/∂Z.
        model.backward_with(theta, &input, &apply_blocks(g.matrix(), &dtotal), &mut g_total)?;
        if !all {
            continue;
        }
        model.backward_with(theta, &input, &apply_blocks(g.matrix(), &dmean), &mut g_mean)?;
        if loss.is_quadratic() {
            let dequiv: Vec<f64> = zi.iter().zip(&mu).map(|(a, b)| 2.0 * (a - b) / (n * d)).collect();
            model.backward_with(theta, &input, &apply_blocks(g.matrix(), &dequiv), &mut g_equiv)?;
        }
    }
    if all && !loss.is_quadratic() {
        for ((e, t), m) in g_equiv.iter_mut().zip(&g_total).zip(&g_mean) {
            *e = t - m;
        }
    }
    Ok(SampleTerms { total, mean, equiv, grads: Some([g_total, g_mean, g_equiv]) })
}

/// Evaluates all three objectives (and optionally their gradients) at `theta`.
///
/// Samples are processed in parallel and reduced in sample order, so results
/// are bitwise reproducible regardless of thread count.
pub fn evaluate_at(
    model: &ModelHandle,
    theta: &[f64],
    loss: &LossModel,
    action: &BlockAction,
    batch: &[Sample],
    plan: &RotationPlan,
    grads: Grads,
) -> Result<ObjectiveValues> {
    if batch.is_empty() {
        return Err(Error::Argument("batch is empty".into()));
    }
    check_len("model dimension", model.dimension(), action.dimension())?;
    check_len("loss dimension", loss.dimension, action.dimension())?;
    plan.check(batch.len())?;
    let terms: Vec<SampleTerms> = batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            sample_terms(model, theta, loss, s, plan.for_sample(i), grads)
                .map_err(|e| Error::Sample { index: i, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;

    let count = batch.len() as f64;
    let mut out = ObjectiveValues::default();
    if grads != Grads::None {
        out.grad_total = vec![0.0; theta.len()];
    }
    if grads == Grads::All {
        out.grad_mean = vec![0.0; theta.len()];
        out.grad_equiv = vec![0.0; theta.len()];
    }
    for t in &terms {
        out.total += t.total;
        out.mean += t.mean;
        out.equiv += t.equiv;
        if let Some([gt, gm, ge]) = &t.grads {
            for (o, v) in [(&mut out.grad_total, gt), (&mut out.grad_mean, gm), (&mut out.grad_equiv, ge)] {
                // Zip over the output: unrequested buffers are empty.
                for (a, b) in o.iter_mut().zip(v) {
                    *a += b;
                }
            }
        }
    }
    out.total /= count;
    out.mean /= count;
    out.equiv /= count;
    for g in [&mut out.grad_total, &mut out.grad_mean, &mut out.grad_equiv] {
        g.iter_mut().for_each(|v| *v /= count);
    }
    Ok(out)
}

pub fn evaluate(
    model: &ModelHandle,
    loss: &LossModel,
    action: &BlockAction,
    batch: &[Sample],
    plan: &RotationPlan,
    grads: Grads,
) -> Result<ObjectiveValues> {
    evaluate_at(model, &model.params.values, loss, action, batch, plan, grads)
}

/// Reverse-mode gradient of one objective with respect to all parameters.
pub fn parameter_gradient(
    model: &ModelHandle,
    loss: &LossModel,
    action: &BlockAction,
    batch: &[Sample],
    plan: &RotationPlan,
    target: GradTarget,
) -> Result<Vec<f64>> {
    let mut values = evaluate(model, loss, action, batch, plan, Grads::All)?;
    Ok(match target {
        GradTarget::Total => std::mem::take(&mut values.grad_total),
        GradTarget::Mean => std::mem::take(&mut values.grad_mean),
        GradTarget::Equiv => std::mem::take(&mut values.grad_equiv),
    })
}
