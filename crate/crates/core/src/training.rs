//! Synthetic equivariant tasks and a data-augmented training loop that
//! records the loss decomposition as it goes.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{sample_many, BlockAction, GroupSpec};
use crate::losses::LossModel;
use crate::metrics::decompose_sampled;
use crate::models::{ModelHandle, ModelKind};
use crate::objective::{evaluate, Grads, RotationPlan, Sample};
use crate::rng::{self, streams, Stream};
use crate::stats::{pearson, spearman};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    SpringForces,
    NoisyAutoencode,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spring-forces" => Ok(TaskKind::SpringForces),
            "noisy-autoencode" => Ok(TaskKind::NoisyAutoencode),
            other => Err(Error::Config(format!("unknown task '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub atoms: usize,
    pub train_samples: usize,
    pub heldout_samples: usize,
    /// Standard deviation of the isotropic input noise (noisy-autoencode only).
    pub noise_scale: f64,
    /// Standard deviation of each clean coordinate.
    pub spread: f64,
    pub seed: u64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self {
            kind: TaskKind::SpringForces,
            atoms: 8,
            train_samples: 2048,
            heldout_samples: 256,
            noise_scale: 0.1,
            spread: 1.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub heldout: Vec<Sample>,
}

/// Spring coupling `k(r) = exp(−r²)`.
pub fn spring_forces(x: &[f64]) -> Vec<f64> {
    let atoms = x.len() / 3;
    let mut y = vec![0.0; x.len()];
    for i in 0..atoms {
        for j in (i + 1)..atoms {
            let e: [f64; 3] = std::array::from_fn(|k| x[3 * j + k] - x[3 * i + k]);
            let k = (-(e[0] * e[0] + e[1] * e[1] + e[2] * e[2])).exp();
            for c in 0..3 {
                y[3 * i + c] += k * e[c];
                y[3 * j + c] -= k * e[c];
            }
        }
    }
    y
}

fn gaussian(rng: &mut Stream, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).collect()
}

fn centred(mut x: Vec<f64>) -> Vec<f64> {
    let atoms = x.len() / 3;
    for k in 0..3 {
        let c = x.iter().skip(k).step_by(3).sum::<f64>() / atoms as f64;
        x.iter_mut().skip(k).step_by(3).for_each(|v| *v -= c);
    }
    x
}

pub fn make_task(task: &SyntheticTask) -> Result<Dataset> {
    if task.atoms == 0 || task.train_samples == 0 {
        return Err(Error::Config("task needs atoms > 0 and train_samples > 0".into()));
    }
    if !(task.spread > 0.0) || !(task.noise_scale >= 0.0) {
        return Err(Error::Config("task spread must be positive and noise_scale non-negative".into()));
    }
    let d = 3 * task.atoms;
    let mut rng = rng::stream(task.seed, streams::DATA);
    let mut draw = |_| {
        let clean = centred(gaussian(&mut rng, d, task.spread));
        match task.kind {
            TaskKind::SpringForces => Sample { y: spring_forces(&clean), x: clean },
            TaskKind::NoisyAutoencode => {
                let noise = gaussian(&mut rng, d, task.noise_scale);
                Sample { x: clean.iter().zip(&noise).map(|(a, b)| a + b).collect(), y: clean }
            }
        }
    };
    let train = (0..task.train_samples).map(&mut draw).collect();
    let heldout = (0..task.heldout_samples).map(&mut draw).collect();
    Ok(Dataset { train, heldout })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub augmentation: bool,
    pub measure_every: usize,
    pub eval_rotations: usize,
    /// Size of the fixed batch used for gradient-norm diagnostics.
    pub probe_size: usize,
    /// Steps after which a copy of the parameters is kept.
    pub checkpoint_steps: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            batch_size: 32,
            steps: 5000,
            augmentation: true,
            measure_every: 50,
            eval_rotations: 10,
            probe_size: 32,
            checkpoint_steps: Vec::new(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.measure_every == 0 || self.batch_size == 0 || self.probe_size == 0 {
            return Err(Error::Config("steps, measure_every, batch_size and probe_size must be >= 1".into()));
        }
        if self.eval_rotations < 2 {
            return Err(Error::Config("eval_rotations must be >= 2".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        Ok(())
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { lr: f64, m: Vec<f64>, v: Vec<f64>, t: i32 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam { lr, m: vec![0.0; params], v: vec![0.0; params], t: 0 },
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in theta.iter_mut().zip(grad) {
                    *p -= *lr * g;
                }
            }
            Optimizer::Adam { lr, m, v, t } => {
                *t += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*t);
                let c2 = 1.0 - ADAM_BETA2.powi(*t);
                for i in 0..theta.len() {
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad[i];
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
                    theta[i] -= *lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// One measurement row. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub loss_total: f64,
    pub loss_mean: f64,
    pub loss_equiv: f64,
    pub percent_equiv: f64,
    pub grad_norm_total: f64,
    pub grad_norm_mean: f64,
    pub grad_norm_equiv: f64,
    pub grad_norm_ratio: f64,
    /// `‖W_⊥‖²_F` of the force head; NaN for other model kinds.
    pub head_deviation_sq: f64,
    pub epsilon: f64,
    pub n_rotations: usize,
    pub seed: u64,
}

pub const METRICS_HEADER: [&str; 13] = [
    "step",
    "loss_total",
    "loss_mean",
    "loss_equiv",
    "percent_equiv",
    "grad_norm_total",
    "grad_norm_mean",
    "grad_norm_equiv",
    "grad_norm_ratio",
    "head_deviation_sq",
    "epsilon",
    "n_rotations",
    "seed",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientRatio {
    /// `‖∇L_equiv‖ / ‖∇L_mean‖`; NaN when the denominator is below 1e-30.
    pub ratio: f64,
    pub norm_total: f64,
    pub norm_mean: f64,
    pub norm_equiv: f64,
}

impl GradientRatio {
    pub fn is_defined(&self) -> bool {
        self.ratio.is_finite()
    }
}

pub fn gradient_norm_ratio(
    model: &ModelHandle,
    loss: &LossModel,
    action: &BlockAction,
    probe: &[Sample],
    plan: &RotationPlan,
) -> Result<GradientRatio> {
    let v = evaluate(model, loss, action, probe, plan, Grads::All)?;
    let l2 = |g: &[f64]| g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (norm_total, norm_mean, norm_equiv) = (l2(&v.grad_total), l2(&v.grad_mean), l2(&v.grad_equiv));
    let ratio = if norm_mean < 1e-30 { f64::NAN } else { norm_equiv / norm_mean };
    Ok(GradientRatio { ratio, norm_total, norm_mean, norm_equiv })
}

/// `‖W_⊥‖²_F` for the graph head: squared distance of the rows
/// `w_x, w_y, w_z` from their mean.
pub fn head_deviation_sq(model: &ModelHandle) -> Result<f64> {
    if model.kind() != ModelKind::InvariantGraphHead {
        return Err(Error::Argument(format!("head deviation needs an invariant-graph-head, got {}", model.kind().as_str())));
    }
    let w = model.params.get("head.w")?;
    let h = w.len() / 3;
    Ok((0..h)
        .map(|c| {
            let col = [w[c], w[h + c], w[2 * h + c]];
            let bar = (col[0] + col[1] + col[2]) / 3.0;
            col.iter().map(|v| (v - bar) * (v - bar)).sum::<f64>()
        })
        .sum())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelHandle,
    pub series: Vec<MetricsRow>,
    /// `(step, parameters after that many updates)` for each requested step.
    pub checkpoints: Vec<(usize, ModelHandle)>,
}

pub const DIVERGENCE_FACTOR: f64 = 1e6;

struct Measurer<'a> {
    loss: &'a LossModel,
    action: &'a BlockAction,
    group: &'a GroupSpec,
    heldout: &'a [Sample],
    probe: Vec<Sample>,
    rotations: usize,
    seed: u64,
    measure_rng: Stream,
    probe_rng: Stream,
}

impl Measurer<'_> {
    fn row(&mut self, model: &ModelHandle, step: usize) -> Result<MetricsRow> {
        let (_, dec) =
            decompose_sampled(model, self.loss, self.action, self.heldout, self.group, self.rotations, &mut self.measure_rng)?;
        let plan = RotationPlan::sampled(self.group, self.probe.len(), self.rotations, &mut self.probe_rng)?;
        let g = gradient_norm_ratio(model, self.loss, self.action, &self.probe, &plan)?;
        let head = if model.kind() == ModelKind::InvariantGraphHead { head_deviation_sq(model)? } else { f64::NAN };
        Ok(MetricsRow {
            step,
            loss_total: dec.total,
            loss_mean: dec.mean,
            loss_equiv: dec.equiv,
            percent_equiv: dec.percent,
            grad_norm_total: g.norm_total,
            grad_norm_mean: g.norm_mean,
            grad_norm_equiv: g.norm_equiv,
            grad_norm_ratio: g.ratio,
            head_deviation_sq: head,
            epsilon: if dec.mean > 0.0 { dec.equiv / dec.mean } else { f64::NAN },
            n_rotations: self.rotations,
            seed: self.seed,
        })
    }
}

/// Trains with per-sample augmentation and measures on the held-out split at
/// step 0, every `measure_every` steps and after the last step.
pub fn train(
    model: &ModelHandle,
    loss: &LossModel,
    action: &BlockAction,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.heldout.is_empty() {
        return Err(Error::Config("held-out split is empty".into()));
    }
    let group = &action.group;
    let mut model = model.clone();
    let mut train_rng = rng::stream(config.seed, streams::TRAIN);
    let mut probe_rng = rng::stream(config.seed, streams::PROBE);
    let probe = (0..config.probe_size.min(data.heldout.len()))
        .map(|_| data.heldout[probe_rng.random_range(0..data.heldout.len())].clone())
        .collect();
    let mut measurer = Measurer {
        loss,
        action,
        group,
        heldout: &data.heldout,
        probe,
        rotations: config.eval_rotations,
        seed: config.seed,
        measure_rng: rng::stream(config.seed, streams::MEASURE),
        probe_rng,
    };
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, model.parameter_count());
    let mut series = Vec::new();
    let mut checkpoints = Vec::new();
    let mut initial = None;

    for step in 0..=config.steps {
        if step % config.measure_every == 0 || step == config.steps {
            series.push(measurer.row(&model, step)?);
        }
        if config.checkpoint_steps.contains(&step) {
            checkpoints.push((step, model.clone()));
        }
        if step == config.steps {
            break;
        }
        let batch: Vec<Sample> = (0..config.batch_size)
            .map(|_| data.train[train_rng.random_range(0..data.train.len())].clone())
            .collect();
        let plan = if config.augmentation {
            RotationPlan::PerSample(
                (0..batch.len()).map(|_| sample_many(group, 1, &mut train_rng)).collect::<Result<_>>()?,
            )
        } else {
            RotationPlan::identity()
        };
        let v = evaluate(&model, loss, action, &batch, &plan, Grads::Total)?;
        let first = *initial.get_or_insert(v.total);
        if !v.total.is_finite() || v.total > DIVERGENCE_FACTOR * first.max(f64::MIN_POSITIVE) {
            return Err(Error::Diverged { step, loss: v.total, initial: first });
        }
        optimizer.step(&mut model.params.values, &v.grad_total);
    }
    Ok(TrainOutcome { model, series, checkpoints })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    pub pearson_log_log: f64,
    pub spearman: f64,
    pub used: usize,
    pub excluded: usize,
}

pub const MIN_CORRELATION_ROWS: usize = 10;

/// Correlates ε with the gradient-norm ratio over a series, skipping rows
/// where either is undefined or non-positive.
pub fn correlate_loss_vs_grad_ratio(series: &[MetricsRow]) -> Result<Correlation> {
    let (eps, ratio): (Vec<f64>, Vec<f64>) = series
        .iter()
        .filter(|r| r.epsilon.is_finite() && r.epsilon > 0.0 && r.grad_norm_ratio.is_finite() && r.grad_norm_ratio > 0.0)
        .map(|r| (r.epsilon, r.grad_norm_ratio))
        .unzip();
    if eps.len() < MIN_CORRELATION_ROWS {
        return Err(Error::InsufficientData(format!(
            "{} valid rows, need at least {MIN_CORRELATION_ROWS}",
            eps.len()
        )));
    }
    let log = |v: &[f64]| v.iter().map(|x| x.ln()).collect::<Vec<_>>();
    Ok(Correlation {
        pearson_log_log: pearson(&log(&eps), &log(&ratio)),
        spearman: spearman(&eps, &ratio),
        used: eps.len(),
        excluded: series.len() - eps.len(),
    })
}
