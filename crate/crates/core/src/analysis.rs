//! Parameter-space diagnostics: Hessian spectra on parameter subsets, 2D
//! landscape grids, projection of dense layers onto their equivariant
//! subspace, and numerical checks of the quadratic behaviour of `L_equiv`
//! around that subspace.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::group::{BlockAction, FiniteGroup, GroupSpec};
use crate::linalg::{dot, eig_symmetric, norm, Matrix};
use crate::losses::LossModel;
use crate::metrics::{decompose_exact, decompose_sampled};
use crate::models::{ModelHandle, ModelKind};
use crate::objective::{evaluate_at, twisted, GradTarget, Grads, ObjectiveValues, RotationPlan, Sample};
use crate::rng::Stream;

/// Largest subset handled by the dense eigensolver.
pub const HESSIAN_BUDGET: usize = 2000;
/// Relative finite-difference step, scaled by `max(1, ‖θ_subset‖∞)`.
pub const HESSIAN_STEP: f64 = 1e-4;
/// Eigenvalues at or below `POSITIVITY_FLOOR · λ_max` do not count as positive.
pub const POSITIVITY_FLOOR: f64 = 1e-10;
pub const DEFAULT_STEP_SCALE: f64 = 2.5;

/// Hessians of the three objectives on one parameter subset.
#[derive(Debug, Clone)]
pub struct SubsetHessians {
    pub indices: Vec<usize>,
    /// Symmetrised `(H + Hᵀ)/2`.
    pub total: Matrix,
    pub mean: Matrix,
    pub equiv: Matrix,
    /// `‖H − Hᵀ‖_F / ‖H‖_F` before symmetrisation, per objective (total, mean, equiv).
    pub asymmetry: [f64; 3],
    pub step: f64,
}

impl SubsetHessians {
    pub fn get(&self, target: GradTarget) -> &Matrix {
        match target {
            GradTarget::Total => &self.total,
            GradTarget::Mean => &self.mean,
            GradTarget::Equiv => &self.equiv,
        }
    }
}

pub fn hessian_step(theta: &[f64], indices: &[usize]) -> f64 {
    let inf = indices.iter().map(|&i| theta[i].abs()).fold(0.0, f64::max);
    HESSIAN_STEP * inf.max(1.0)
}

/// Central differences of the analytic gradients, one column per subset
/// parameter. The same rotations are used at every probe point.
pub fn hessians_on_subset(
    model: &ModelHandle,
    loss: &LossModel,
    action: &BlockAction,
    batch: &[Sample],
    plan: &RotationPlan,
    subset: &[String],
) -> Result<SubsetHessians> {
    let indices = model.params.indices(subset)?;
    let step = hessian_step(&model.params.values, &indices);
    hessians_with_step(model, loss, action, batch, plan, indices, step)
}

pub fn hessians_with_step(
    model: &ModelHandle,
    loss: &LossModel,
    action: &BlockAction,
    batch: &[Sample],
    plan: &RotationPlan,
    indices: Vec<usize>,
    step: f64,
) -> Result<SubsetHessians> {
    let n = indices.len();
    if n == 0 {
        return Err(Error::Argument("parameter subset is empty".into()));
    }
    if n > HESSIAN_BUDGET {
        return Err(Error::Budget(format!("subset has {n} parameters, the dense budget is {HESSIAN_BUDGET}")));
    }
    let theta = &model.params.values;
    let columns: Vec<[Vec<f64>; 3]> = indices
        .par_iter()
        .map(|&k| {
            let probe = |sign: f64| {
                let mut t = theta.clone();
                t[k] += sign * step;
                evaluate_at(model, &t, loss, action, batch, plan, Grads::All)
            };
            let (plus, minus) = (probe(1.0)?, probe(-1.0)?);
            let col = |a: &[f64], b: &[f64]| indices.iter().map(|&i| (a[i] - b[i]) / (2.0 * step)).collect();
            Ok([
                col(&plus.grad_total, &minus.grad_total),
                col(&plus.grad_mean, &minus.grad_mean),
                col(&plus.grad_equiv, &minus.grad_equiv),
            ])
        })
        .collect::<Result<_>>()?;
    let assemble = |which: usize| {
        let raw = Matrix::from_fn(n, n, |i, j| columns[j][which][i]);
        let fro = raw.frobenius();
        let asym = if fro > 0.0 { raw.sub(&raw.transpose()).expect("square").frobenius() / fro } else { 0.0 };
        (raw.symmetrized(), asym)
    };
    let (total, a0) = assemble(0);
    let (mean, a1) = assemble(1);
    let (equiv, a2) = assemble(2);
    Ok(SubsetHessians { indices, total, mean, equiv, asymmetry: [a0, a1, a2], step })
}

pub fn hessian_on_subset(
    model: &ModelHandle,
    loss: &LossModel,
    action: &BlockAction,
    target: GradTarget,
    subset: &[String],
    batch: &[Sample],
    plan: &RotationPlan,
) -> Result<Matrix> {
    let mut all = hessians_on_subset(model, loss, action, batch, plan, subset)?;
    Ok(match target {
        GradTarget::Total => std::mem::replace(&mut all.total, Matrix::zeros(0, 0)),
        GradTarget::Mean => std::mem::replace(&mut all.mean, Matrix::zeros(0, 0)),
        GradTarget::Equiv => std::mem::replace(&mut all.equiv, Matrix::zeros(0, 0)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HessianSummary {
    pub subset: String,
    pub subset_size: usize,
    pub lambda_max_pos: f64,
    pub lambda_min_pos: f64,
    pub cond: f64,
    pub loss_kind: GradTarget,
    pub batch_index: usize,
    /// No eigenvalue above the positivity floor.
    pub degenerate: bool,
}

/// Extremes of the positive part of an ascending spectrum.
pub fn summarize_spectrum(values: &[f64], subset: &str, loss_kind: GradTarget, batch_index: usize) -> HessianSummary {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = POSITIVITY_FLOOR * max;
    let min_pos = values.iter().copied().filter(|&v| v > floor).fold(f64::INFINITY, f64::min);
    let degenerate = !(max > 0.0) || !min_pos.is_finite();
    let (lambda_max_pos, lambda_min_pos, cond) =
        if degenerate { (f64::NAN, f64::NAN, f64::NAN) } else { (max, min_pos, max / min_pos) };
    HessianSummary {
        subset: subset.to_string(),
        subset_size: values.len(),
        lambda_max_pos,
        lambda_min_pos,
        cond,
        loss_kind,
        batch_index,
        degenerate,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionNumbers {
    pub mean: HessianSummary,
    pub equiv: HessianSummary,
    pub total: HessianSummary,
}

/// Condition numbers of `L_mean`, `L_equiv` and `L` on one batch.
pub fn condition_numbers(
    model: &ModelHandle,
    loss: &LossModel,
    action: &BlockAction,
    subset: &[String],
    batch: &[Sample],
    plan: &RotationPlan,
    batch_index: usize,
) -> Result<ConditionNumbers> {
    let h = hessians_on_subset(model, loss, action, batch, plan, subset)?;
    let name = subset.join("+");
    let spectrum = |t: GradTarget| -> Result<Vec<f64>> { Ok(eig_symmetric(h.get(t))?.values) };
    let (mean, equiv, total) = (spectrum(GradTarget::Mean)?, spectrum(GradTarget::Equiv)?, spectrum(GradTarget::Total)?);
    // A term whose curvature is finite-difference noise next to the total
    // (an exactly equivariant model's L_equiv) has no meaningful condition number.
    let scale = total.iter().chain(&mean).copied().fold(0.0, f64::max);
    let summary = |values: &[f64], t: GradTarget| {
        let mut s = summarize_spectrum(values, &name, t, batch_index);
        if !s.degenerate && s.lambda_max_pos <= POSITIVITY_FLOOR * scale {
            s = summarize_spectrum(&[], &name, t, batch_index);
            s.subset_size = values.len();
        }
        s
    };
    Ok(ConditionNumbers {
        mean: summary(&mean, GradTarget::Mean),
        equiv: summary(&equiv, GradTarget::Equiv),
        total: summary(&total, GradTarget::Total),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LandscapeOptions {
    /// Points per side are `2 · radius + 1`.
    pub radius: usize,
    pub step_scale: f64,
    pub learning_rate: f64,
    /// Replaces `step_scale · learning_rate · ‖∇L‖` when set.
    pub step_override: Option<f64>,
}

impl Default for LandscapeOptions {
    fn default() -> Self {
        Self { radius: 10, step_scale: DEFAULT_STEP_SCALE, learning_rate: 1e-3, step_override: None }
    }
}

/// Loss values on the plane `θ₀ + step·(a·axis1 + b·axis2)` for
/// `a, b ∈ {−R, …, R}`; `values[a + R][b + R]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LandscapeGrid {
    pub loss_kind: GradTarget,
    pub indices: Vec<usize>,
    pub axis1: Vec<f64>,
    pub axis2: Vec<f64>,
    pub step: f64,
    pub radius: usize,
    pub values: Vec<Vec<f64>>,
}

impl LandscapeGrid {
    pub fn center(&self) -> f64 {
        self.values[self.radius][self.radius]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LandscapePair {
    pub mean: LandscapeGrid,
    pub equiv: LandscapeGrid,
    pub lambda_axis1: f64,
    pub lambda_axis2: f64,
}

/// Landscape of `L_mean` and `L_equiv` along the total-loss Hessian
/// eigenvectors of the largest and smallest positive eigenvalues.
#[allow(clippy::too_many_arguments)]
pub fn landscape_grid(
    model: &ModelHandle,
    loss: &LossModel,
    action: &BlockAction,
    subset: &[String],
    batch: &[Sample],
    plan: &RotationPlan,
    options: &LandscapeOptions,
) -> Result<LandscapePair> {
    let h = hessians_on_subset(model, loss, action, batch, plan, subset)?;
    let eig = eig_symmetric(&h.total)?;
    let max = eig.values.last().copied().unwrap_or(0.0);
    let positive: Vec<usize> = (0..eig.values.len()).filter(|&k| eig.values[k] > POSITIVITY_FLOOR * max).collect();
    if !(max > 0.0) || positive.len() < 2 {
        return Err(Error::Degenerate(format!(
            "total-loss Hessian has {} positive eigenvalues, two are needed for landscape axes",
            positive.len()
        )));
    }
    let (lo, hi) = (positive[0], *positive.last().expect("non-empty"));
    let axis1 = eig.vector(hi);
    let axis2 = eig.vector(lo);
    let theta = &model.params.values;
    let step = match options.step_override {
        Some(s) => s,
        None => {
            let g = evaluate_at(model, theta, loss, action, batch, plan, Grads::Total)?.grad_total;
            let sub: Vec<f64> = h.indices.iter().map(|&i| g[i]).collect();
            options.step_scale * options.learning_rate * norm(&sub)
        }
    };
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::Degenerate(format!("landscape step {step:e} is not positive")));
    }
    let r = options.radius as i64;
    let cells: Vec<(i64, i64)> = (-r..=r).flat_map(|a| (-r..=r).map(move |b| (a, b))).collect();
    let values: Vec<ObjectiveValues> = cells
        .par_iter()
        .map(|&(a, b)| {
            let mut t = theta.clone();
            for (k, &i) in h.indices.iter().enumerate() {
                t[i] += step * (a as f64 * axis1[k] + b as f64 * axis2[k]);
            }
            evaluate_at(model, &t, loss, action, batch, plan, Grads::None)
        })
        .collect::<Result<_>>()?;
    let side = 2 * options.radius + 1;
    let grid = |kind: GradTarget| LandscapeGrid {
        loss_kind: kind,
        indices: h.indices.clone(),
        axis1: axis1.clone(),
        axis2: axis2.clone(),
        step,
        radius: options.radius,
        values: values.chunks(side).map(|row| row.iter().map(|v| v.value(kind)).collect()).collect(),
    };
    Ok(LandscapePair {
        mean: grid(GradTarget::Mean),
        equiv: grid(GradTarget::Equiv),
        lambda_axis1: eig.values[hi],
        lambda_axis2: eig.values[lo],
    })
}

/// Representation matrices of one dense layer's input and output spaces,
/// aligned with the elements of a finite group.
#[derive(Debug, Clone)]
pub struct LayerRep {
    pub input: Vec<Matrix>,
    pub output: Vec<Matrix>,
}

/// `g` acting on `copies` stacked 3-vectors.
pub fn block_rep(group: &FiniteGroup, copies: usize) -> Vec<Matrix> {
    group
        .elements()
        .iter()
        .map(|g| {
            let m = g.matrix();
            Matrix::from_fn(3 * copies, 3 * copies, |i, j| if i / 3 == j / 3 { m[i % 3][j % 3] } else { 0.0 })
        })
        .collect()
}

pub fn trivial_rep(group: &FiniteGroup, dim: usize) -> Vec<Matrix> {
    vec![Matrix::identity(dim); group.order()]
}

/// The coordinate permutation `|g|` induced by a signed permutation. This is
/// how rotations act on the three rows `w_x, w_y, w_z` of the force head.
pub fn axis_permutation_rep(group: &FiniteGroup) -> Result<Vec<Matrix>> {
    if !group.is_signed_permutation_group() {
        return Err(Error::Argument(format!("group '{}' does not permute coordinate axes", group.name())));
    }
    Ok(group.elements().iter().map(|g| Matrix::from_fn(3, 3, |i, j| g.matrix()[i][j].abs())).collect())
}

/// `θ = θ_E + θ_⊥` for one layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterSplit {
    pub equivariant: Matrix,
    pub deviation: Matrix,
    pub deviation_norm_sq: f64,
}

/// Layer twirling: `θ_E = |G|⁻¹ Σ_g ρ_out(g)ᵀ A ρ_in(g)`.
pub fn project_equivariant(weights: &Matrix, rep: &LayerRep) -> Result<ParameterSplit> {
    if rep.input.is_empty() || rep.input.len() != rep.output.len() {
        return Err(Error::Argument("input and output representations must list the same non-empty group".into()));
    }
    for (rin, rout) in rep.input.iter().zip(&rep.output) {
        if rin.rows() != weights.cols() || rout.rows() != weights.rows() {
            return Err(Error::Shape(format!(
                "representations of size {}/{} do not fit a {}x{} layer",
                rout.rows(),
                rin.rows(),
                weights.rows(),
                weights.cols()
            )));
        }
        if !rin.is_orthogonal(1e-10) || !rout.is_orthogonal(1e-10) {
            return Err(Error::Argument("layer representations must be orthogonal".into()));
        }
    }
    let mut sum = Matrix::zeros(weights.rows(), weights.cols());
    for (rin, rout) in rep.input.iter().zip(&rep.output) {
        sum = sum.add(&rout.transpose().matmul(weights)?.matmul(rin)?)?;
    }
    let equivariant = sum.scale(1.0 / rep.input.len() as f64);
    let deviation = weights.sub(&equivariant)?;
    let deviation_norm_sq = deviation.as_slice().iter().map(|v| v * v).sum();
    Ok(ParameterSplit { equivariant, deviation, deviation_norm_sq })
}

/// The force head split `W_E = [w̄, w̄, w̄]`, `W_⊥ = [d_x, d_y, d_z]`.
pub fn head_split(model: &ModelHandle) -> Result<ParameterSplit> {
    if model.kind() != ModelKind::InvariantGraphHead {
        return Err(Error::Argument(format!("head split needs an invariant-graph-head, got {}", model.kind().as_str())));
    }
    let seg = model.params.segment("head.w")?;
    let w = Matrix::from_row_major(3, seg.shape[1], model.params.values[seg.range()].to_vec())?;
    let octahedral = FiniteGroup::octahedral();
    let rep = LayerRep { input: trivial_rep(&octahedral, w.cols()), output: axis_permutation_rep(&octahedral)? };
    project_equivariant(&w, &rep)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadDeviationRow {
    pub step: usize,
    pub deviation_norm_sq: f64,
    pub loss_equiv: f64,
    pub percent: f64,
}

/// `‖W_⊥‖²_F` and the measured decomposition at each checkpoint.
pub fn head_deviation_series(
    checkpoints: &[(usize, ModelHandle)],
    loss: &LossModel,
    action: &BlockAction,
    dataset: &[Sample],
    rotations: usize,
    rng: &mut Stream,
) -> Result<Vec<HeadDeviationRow>> {
    checkpoints
        .iter()
        .map(|(step, model)| {
            let split = head_split(model)?;
            let (_, dec) = decompose_sampled(model, loss, action, dataset, &action.group, rotations, rng)?;
            Ok(HeadDeviationRow {
                step: *step,
                deviation_norm_sq: split.deviation_norm_sq,
                loss_equiv: dec.equiv,
                percent: dec.percent,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingCheck {
    pub s: f64,
    pub ratio: f64,
    pub expected: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem1Report {
    /// `Q̄` over `vec(W)` (row-major, `3H` entries).
    pub q_matrix: Matrix,
    /// Extremes of `Q̄` restricted to the deviation subspace.
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `max |Q̄ v|` over unit vectors `v` of the equivariant subspace.
    pub equivariant_leak: f64,
    pub deviation_norm_sq: f64,
    pub loss_equiv: f64,
    pub quadratic_form: f64,
    pub identity_rel_error: f64,
    pub scaling: Vec<ScalingCheck>,
    pub bound_checks: usize,
    pub bound_violations: usize,
    pub eigenvector_rel_error: f64,
    pub degenerate: bool,
}

/// Orthonormal basis of `E⊥ = {W : w_x + w_y + w_z = 0}` as `3H`-vectors.
fn head_deviation_basis(h: usize) -> Vec<Vec<f64>> {
    let u = [[1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt(), 0.0], [1.0 / 6f64.sqrt(), 1.0 / 6f64.sqrt(), -2.0 / 6f64.sqrt()]];
    let mut out = Vec::with_capacity(2 * h);
    for c in 0..h {
        for row in &u {
            let mut v = vec![0.0; 3 * h];
            for k in 0..3 {
                v[k * h + c] = row[k];
            }
            out.push(v);
        }
    }
    out
}

fn with_head(model: &ModelHandle, w: &[f64]) -> Result<ModelHandle> {
    let mut m = model.clone();
    m.params.get_mut("head.w")?.copy_from_slice(w);
    Ok(m)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Builds `Q̄ = (1/D) E_{x,T}[(M_{T,x} − M̄_x)ᵀ(M_{T,x} − M̄_x)]`, where
/// `M_{T,x}` maps `vec(W)` to the twisted prediction, and checks that
/// `vec(W_⊥)ᵀ Q̄ vec(W_⊥)` reproduces `L_equiv` under MSE.
pub fn verify_theorem1(
    model: &ModelHandle,
    dataset: &[Sample],
    group: &FiniteGroup,
    rng: &mut Stream,
) -> Result<Theorem1Report> {
    if model.kind() != ModelKind::InvariantGraphHead {
        return Err(Error::Argument(format!("the quadratic-form check needs an invariant-graph-head, got {}", model.kind().as_str())));
    }
    if dataset.is_empty() {
        return Err(Error::Argument("dataset is empty".into()));
    }
    let d = model.dimension();
    let loss = LossModel::mse(d);
    let spec = GroupSpec::Finite(group.clone());
    let action = BlockAction::new(spec.clone(), model.spec().atoms)?;
    let p = model.params.segment("head.w")?.len;
    let h = p / 3;
    let elements = group.elements();

    // Column c of M_{T,x} is the twisted prediction with the c-th unit head.
    let units: Vec<ModelHandle> = (0..p)
        .map(|c| {
            let mut w = vec![0.0; p];
            w[c] = 1.0;
            with_head(model, &w)
        })
        .collect::<Result<_>>()?;
    let per_sample: Vec<Matrix> = dataset
        .par_iter()
        .map(|s| {
            // cols[c][t] = twisted prediction of unit head c under element t
            let cols: Vec<Vec<Vec<f64>>> = units
                .iter()
                .map(|u| twisted(u, &u.params.values, &s.x, elements))
                .collect::<Result<_>>()?;
            let mut q = Matrix::zeros(p, p);
            for t in 0..elements.len() {
                let dev: Vec<Vec<f64>> = cols
                    .iter()
                    .map(|col| {
                        let mean: Vec<f64> =
                            (0..d).map(|i| col.iter().map(|z| z[i]).sum::<f64>() / elements.len() as f64).collect();
                        col[t].iter().zip(&mean).map(|(a, b)| a - b).collect()
                    })
                    .collect();
                for a in 0..p {
                    for b in a..p {
                        q[(a, b)] += dot(&dev[a], &dev[b]);
                    }
                }
            }
            Ok(q)
        })
        .collect::<Result<_>>()?;
    let scale = 1.0 / (d as f64 * elements.len() as f64 * dataset.len() as f64);
    let mut q = Matrix::zeros(p, p);
    for m in &per_sample {
        for a in 0..p {
            for b in a..p {
                q[(a, b)] += m[(a, b)];
            }
        }
    }
    for a in 0..p {
        for b in a..p {
            q[(a, b)] *= scale;
            q[(b, a)] = q[(a, b)];
        }
    }

    let basis = head_deviation_basis(h);
    let restricted = Matrix::from_fn(basis.len(), basis.len(), |i, j| dot(&basis[i], &q.matvec(&basis[j]).expect("fits")));
    let eig = eig_symmetric(&restricted.symmetrized())?;
    let lambda_min = eig.values[0];
    let lambda_max = *eig.values.last().expect("non-empty");
    let degenerate = !(lambda_min > POSITIVITY_FLOOR * lambda_max);
    let equivariant_leak = (0..h)
        .map(|c| {
            let mut v = vec![0.0; p];
            for k in 0..3 {
                v[k * h + c] = 1.0 / 3f64.sqrt();
            }
            norm(&q.matvec(&v).expect("fits"))
        })
        .fold(0.0, f64::max);

    let split = head_split(model)?;
    let w_e = split.equivariant.as_slice().to_vec();
    let w_perp = split.deviation.as_slice().to_vec();
    let l_equiv_at = |perp: &[f64], s: f64| -> Result<f64> {
        let w: Vec<f64> = w_e.iter().zip(perp).map(|(e, v)| e + s * v).collect();
        Ok(decompose_exact(&with_head(model, &w)?, &loss, &action, dataset, &spec)?.equiv)
    };
    let quad = |v: &[f64]| dot(v, &q.matvec(v).expect("fits"));
    let loss_equiv = l_equiv_at(&w_perp, 1.0)?;
    let quadratic_form = quad(&w_perp);
    let scaling = [0.5, 2.0, 10.0]
        .iter()
        .map(|&s| {
            let ratio = l_equiv_at(&w_perp, s)? / loss_equiv;
            Ok(ScalingCheck { s, ratio, expected: s * s, rel_error: rel(ratio, s * s) })
        })
        .collect::<Result<_>>()?;

    let mut violations = 0;
    const BOUND_CHECKS: usize = 100;
    for _ in 0..BOUND_CHECKS {
        let amp = 10f64.powf(rng.random_range(-2.0..1.0));
        let mut perp = vec![0.0; p];
        for b in &basis {
            let c: f64 = StandardNormal.sample(rng);
            for (v, bv) in perp.iter_mut().zip(b) {
                *v += amp * c * bv;
            }
        }
        let nsq = dot(&perp, &perp);
        let l = l_equiv_at(&perp, 1.0)?;
        let slack = 1e-10 * l.abs().max(1e-300);
        if l < lambda_min * nsq - slack || l > lambda_max * nsq + slack {
            violations += 1;
        }
    }
    let top: Vec<f64> = {
        let v = eig.vector(eig.values.len() - 1);
        (0..p).map(|i| basis.iter().zip(&v).map(|(b, c)| b[i] * c).sum()).collect()
    };
    let eigenvector_rel_error = rel(l_equiv_at(&top, 1.0)?, lambda_max * dot(&top, &top));

    Ok(Theorem1Report {
        q_matrix: q,
        lambda_min,
        lambda_max,
        equivariant_leak,
        deviation_norm_sq: split.deviation_norm_sq,
        loss_equiv,
        quadratic_form,
        identity_rel_error: rel(quadratic_form, loss_equiv),
        scaling,
        bound_checks: BOUND_CHECKS,
        bound_violations: violations,
        eigenvector_rel_error,
        degenerate,
    })
}

/// Which deviations are scaled along the ray `θ_E + s·θ_⊥`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RayScope {
    /// Only the output layer's deviation; every other layer sits at its projection.
    FinalLayer,
    AllLayers,
}

/// A model split into its equivariant point and a deviation direction.
#[derive(Debug, Clone)]
pub struct EquivariantRay {
    pub base: Vec<f64>,
    pub direction: Vec<f64>,
    /// Segments whose gradient is projected onto their deviation subspace.
    pub layers: Vec<(usize, usize, LayerRep)>,
}

impl EquivariantRay {
    pub fn at(&self, s: f64) -> Vec<f64> {
        self.base.iter().zip(&self.direction).map(|(b, d)| b + s * d).collect()
    }

    /// Component of `grad` in the deviation subspace of the scaled layers.
    pub fn perp_gradient(&self, grad: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for (offset, rows, rep) in &self.layers {
            let cols = rep.input[0].rows();
            let g = Matrix::from_row_major(*rows, cols, grad[*offset..offset + rows * cols].to_vec())?;
            out.extend_from_slice(project_equivariant(&g, rep)?.deviation.as_slice());
        }
        Ok(out)
    }
}

/// Projects every dense layer of a model onto its equivariant subspace.
pub fn equivariant_ray(model: &ModelHandle, group: &FiniteGroup, scope: RayScope) -> Result<EquivariantRay> {
    let theta = &model.params.values;
    let mut base = theta.clone();
    let mut direction = vec![0.0; theta.len()];
    let mut layers = Vec::new();
    let mut project = |offset: usize, rows: usize, rep: LayerRep, scaled: bool| -> Result<()> {
        let cols = rep.input[0].rows();
        let a = Matrix::from_row_major(rows, cols, theta[offset..offset + rows * cols].to_vec())?;
        let split = project_equivariant(&a, &rep)?;
        base[offset..offset + rows * cols].copy_from_slice(split.equivariant.as_slice());
        if scaled {
            direction[offset..offset + rows * cols].copy_from_slice(split.deviation.as_slice());
            layers.push((offset, rows, rep));
        }
        Ok(())
    };
    match model.kind() {
        ModelKind::InvariantGraphHead => {
            let seg = model.params.segment("head.w")?;
            let rep = LayerRep { input: trivial_rep(group, seg.shape[1]), output: axis_permutation_rep(group)? };
            project(seg.offset, 3, rep, true)?;
        }
        ModelKind::EquivariantBaseline => {
            return Err(Error::Degenerate("the equivariant baseline has no deviation subspace".into()));
        }
        ModelKind::CoordMlp => {
            if !group.is_signed_permutation_group() {
                return Err(Error::Unsupported(
                    "coord-mlp layer projection needs a group of signed permutations (tanh must commute with it)".into(),
                ));
            }
            let sizes: Vec<usize> = std::iter::once(model.dimension())
                .chain(model.spec().hidden.iter().copied())
                .chain(std::iter::once(model.dimension()))
                .collect();
            if let Some(bad) = sizes.iter().find(|&&n| n % 3 != 0) {
                return Err(Error::Unsupported(format!("layer width {bad} is not a multiple of 3")));
            }
            let layers_named = model.dense_layers();
            let last = layers_named.len() - 1;
            for (l, (weight, bias)) in layers_named.iter().enumerate() {
                let scaled = scope == RayScope::AllLayers || l == last;
                let (fan_in, fan_out) = (sizes[l] / 3, sizes[l + 1] / 3);
                let w = model.params.segment(weight)?;
                let rep = LayerRep { input: block_rep(group, fan_in), output: block_rep(group, fan_out) };
                project(w.offset, 3 * fan_out, rep, scaled)?;
                let b = model.params.segment(bias)?;
                let rep = LayerRep { input: trivial_rep(group, 1), output: block_rep(group, fan_out) };
                project(b.offset, 3 * fan_out, rep, scaled)?;
            }
        }
    }
    Ok(EquivariantRay { base, direction, layers })
}

pub const RAY_SCALES: [f64; 7] = [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem23Report {
    pub scope: RayScope,
    pub scales: Vec<f64>,
    pub loss_equiv: Vec<f64>,
    pub grad_norm_perp: Vec<f64>,
    /// Log-log least-squares slopes over `s ≤ 1/8`.
    pub loss_slope: f64,
    pub grad_slope: f64,
    /// Slopes between consecutive scales.
    pub local_loss_slopes: Vec<f64>,
    pub local_grad_slopes: Vec<f64>,
    /// `L_equiv` and its gradient at `s = 0`.
    pub loss_at_zero: f64,
    pub grad_at_zero: f64,
}

impl Theorem23Report {
    pub fn quadratic(&self) -> bool {
        (1.9..=2.1).contains(&self.loss_slope)
    }

    pub fn linear_gradient(&self) -> bool {
        (0.9..=1.1).contains(&self.grad_slope)
    }
}

pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Evaluates `L_equiv` (exact over the group, MSE) and `‖∇_{θ_⊥} L_equiv‖`
/// along `θ_E + s·θ_⊥`.
pub fn verify_theorem2_3(
    model: &ModelHandle,
    group: &FiniteGroup,
    dataset: &[Sample],
    scope: RayScope,
) -> Result<Theorem23Report> {
    let ray = equivariant_ray(model, group, scope)?;
    let loss = LossModel::mse(model.dimension());
    let action = BlockAction::new(GroupSpec::Finite(group.clone()), model.spec().atoms)?;
    let plan = RotationPlan::Shared(group.elements().to_vec());
    let at = |s: f64| -> Result<(f64, f64)> {
        let v = evaluate_at(model, &ray.at(s), &loss, &action, dataset, &plan, Grads::All)?;
        Ok((v.equiv, norm(&ray.perp_gradient(&v.grad_equiv)?)))
    };
    let points: Vec<(f64, f64)> = RAY_SCALES.iter().map(|&s| at(s)).collect::<Result<_>>()?;
    let (loss_equiv, grad_norm_perp): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
    if loss_equiv[0] < 1e-24 {
        return Err(Error::Degenerate(format!("L_equiv = {:e} at s = 1; the deviation signal is too small", loss_equiv[0])));
    }
    let (loss_at_zero, grad_at_zero) = at(0.0)?;
    let small: Vec<usize> = (0..RAY_SCALES.len()).filter(|&k| RAY_SCALES[k] <= 0.125).collect();
    let pick = |v: &[f64]| small.iter().map(|&k| v[k]).collect::<Vec<_>>();
    let scales = RAY_SCALES.to_vec();
    let local = |v: &[f64]| (1..v.len()).map(|k| log_log_slope(&scales[k - 1..=k], &v[k - 1..=k])).collect();
    Ok(Theorem23Report {
        scope,
        loss_slope: log_log_slope(&pick(&scales), &pick(&loss_equiv)),
        grad_slope: log_log_slope(&pick(&scales), &pick(&grad_norm_perp)),
        local_loss_slopes: local(&loss_equiv),
        local_grad_slopes: local(&grad_norm_perp),
        scales,
        loss_equiv,
        grad_norm_perp,
        loss_at_zero,
        grad_at_zero,
    })
}
