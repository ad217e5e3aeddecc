//! One function per subcommand. Each reads the config, writes its artifacts
//! under the output directory and reports a [`CliError`] on failure.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use equidiag::analysis::{
    condition_numbers, head_split, landscape_grid, verify_theorem1, verify_theorem2_3, HessianSummary,
    LandscapeOptions, RayScope, Theorem1Report, Theorem23Report,
};
use equidiag::group::{BlockAction, GroupSpec};
use equidiag::io::{heatmap_pair, line_plot, write_csv, write_matrix_csv, Axes, Series};
use equidiag::metrics::{decompose_exact, decompose_sampled, sensitivity_bootstrap, DEFAULT_ROTATIONS};
use equidiag::models::{init_parameters, ModelHandle, ModelKind};
use equidiag::objective::{RotationPlan, Sample};
use equidiag::rng::{self, streams, Stream};
use equidiag::stats::spearman;
use equidiag::training::{correlate_loss_vs_grad_ratio, make_task, train, Dataset, MetricsRow};
use equidiag::Error;
use rand::Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::manifest::Manifest;
use crate::{Cli, Command, EXIT_NUMERICAL, EXIT_USAGE};

/// A library error tagged with the stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct CliError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        if self.source.is_numerical() {
            EXIT_NUMERICAL
        } else {
            EXIT_USAGE
        }
    }
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> Stage<T> for equidiag::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError { stage, source })
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// Everything a command needs from the config and flags.
pub struct Context {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub data: Dataset,
    pub action: BlockAction,
    pub group: GroupSpec,
}

impl Context {
    pub fn load(cli: &Cli) -> CliResult<Self> {
        let g = &cli.global;
        let mut config = match &g.config {
            Some(path) => ExperimentConfig::load(path).stage("config")?,
            None => ExperimentConfig::default(),
        };
        let seed = g.seed.unwrap_or(config.seed);
        config = config.with_seed(seed);
        if let Some(out) = &g.out {
            config.out_dir = out.clone();
        }
        if let (Some(n), Command::Train) = (g.rotations, &cli.command) {
            config.train.eval_rotations = n;
        }
        config.validate().stage("config")?;
        let group = config.group_spec().stage("config")?;
        let action = BlockAction::new(group.clone(), config.task.atoms).stage("config")?;
        let data = make_task(&config.task).stage("training")?;
        let out = config.out_dir.clone();
        std::fs::create_dir_all(&out).map_err(Error::from).stage("io")?;
        Ok(Self { config, out, data, action, group })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Loads a checkpoint and checks it against the configured architecture.
    fn checkpoint(&self, path: Option<&Path>) -> CliResult<ModelHandle> {
        let path = path.map(Path::to_path_buf).unwrap_or_else(|| self.path("model.bin"));
        let model = ModelHandle::load(&path)
            .map_err(|e| Error::Config(format!("cannot load checkpoint {}: {e}", path.display())))
            .stage("models")?;
        let want = self.config.model_spec();
        if model.spec() != &want {
            return Err(Error::Config(format!(
                "checkpoint is a {} with {} atoms and hidden {:?}; config expects a {} with {} atoms and hidden {:?}",
                model.kind().as_str(),
                model.spec().atoms,
                model.spec().hidden,
                want.kind.as_str(),
                want.atoms,
                want.hidden
            )))
            .stage("models");
        }
        Ok(model)
    }

    fn analysis_rng(&self) -> Stream {
        rng::stream(self.config.seed, streams::ANALYSIS)
    }

    /// A training minibatch with per-sample rotations for the Hessian-based reports.
    fn analysis_batch(&self, rng: &mut Stream) -> CliResult<(Vec<Sample>, RotationPlan)> {
        let train = &self.data.train;
        let batch: Vec<Sample> = (0..self.config.analysis.batch_size)
            .map(|_| train[rng.random_range(0..train.len())].clone())
            .collect();
        let plan = RotationPlan::sampled(&self.group, batch.len(), self.config.train.eval_rotations, rng).stage("analysis")?;
        Ok((batch, plan))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult {
        let text = serde_json::to_string_pretty(value).map_err(Error::from).stage("io")? + "\n";
        std::fs::write(self.path(name), text).map_err(Error::from).stage("io")
    }

    fn write_text(&self, name: &str, text: &str) -> CliResult {
        std::fs::write(self.path(name), text).map_err(Error::from).stage("io")
    }

    fn manifest(&self, command: &str, artifacts: &[&str]) -> CliResult {
        let list = artifacts.iter().map(|s| s.to_string()).collect();
        let name = if command == "train" { "manifest.json".to_string() } else { format!("manifest_{command}.json") };
        Manifest::new(command, &self.config, &self.data, list).write(&self.path(&name)).stage("io")
    }
}

/// Writes to stdout without panicking when the reader has gone away.
fn print_json(value: &serde_json::Value) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(Error::from).stage("io")?;
    let _ = writeln!(std::io::stdout(), "{text}");
    Ok(())
}

pub fn dispatch(cli: &Cli) -> CliResult {
    let ctx = Context::load(cli)?;
    let rotations = cli.global.rotations;
    match &cli.command {
        Command::Train => cmd_train(&ctx),
        Command::Measure { checkpoint, exact_group } => {
            cmd_measure(&ctx, checkpoint.checkpoint.as_deref(), rotations, *exact_group)
        }
        Command::Landscape { checkpoint } => cmd_landscape(&ctx, checkpoint.checkpoint.as_deref()),
        Command::Hessian { checkpoint, batches } => cmd_hessian(&ctx, checkpoint.checkpoint.as_deref(), *batches),
        Command::Sensitivity { checkpoint, repeats } => {
            cmd_sensitivity(&ctx, checkpoint.checkpoint.as_deref(), rotations, *repeats)
        }
        Command::Theorems { checkpoint } => cmd_theorems(&ctx, checkpoint.checkpoint.as_deref()),
        Command::ProjectHead { checkpoint } => cmd_project_head(&ctx, checkpoint.checkpoint.as_deref()),
    }
}

fn points(series: &[MetricsRow], f: impl Fn(&MetricsRow) -> f64) -> Vec<(f64, f64)> {
    series.iter().map(|r| (r.step as f64, f(r))).collect()
}

pub fn cmd_train(ctx: &Context) -> CliResult {
    let c = &ctx.config;
    let model = init_parameters(&c.model_spec(), c.seed).stage("models")?;
    let outcome = train(&model, &c.loss_model(), &ctx.action, &ctx.data, &c.train).stage("training")?;
    let series = &outcome.series;

    write_csv(&ctx.path("metrics.csv"), series).stage("io")?;
    outcome.model.save(&ctx.path("model.bin")).stage("io")?;
    let mut artifacts = vec!["metrics.csv", "model.bin", "model.json", "percent.svg", "percent_loglog.svg", "losses.svg"];
    if !outcome.checkpoints.is_empty() {
        std::fs::create_dir_all(ctx.path("checkpoints")).map_err(Error::from).stage("io")?;
        for (step, m) in &outcome.checkpoints {
            m.save(&ctx.path(&format!("checkpoints/step_{step}.bin"))).stage("io")?;
        }
        artifacts.push("checkpoints/");
    }

    let percent = [Series { name: "percent", points: points(series, |r| r.percent_equiv) }];
    let title = format!("{} on {:?}", c.model.kind.as_str(), c.task.kind);
    ctx.write_text("percent.svg", &line_plot(&title, "step", "L_equiv / L", &percent, Axes::default()))?;
    let loglog = Axes { log_x: true, log_y: true };
    ctx.write_text("percent_loglog.svg", &line_plot(&title, "step", "L_equiv / L", &percent, loglog))?;
    let losses = [
        Series { name: "L_mean", points: points(series, |r| r.loss_mean) },
        Series { name: "L_equiv", points: points(series, |r| r.loss_equiv) },
    ];
    ctx.write_text("losses.svg", &line_plot(&title, "step", "loss", &losses, loglog))?;

    let correlation = match correlate_loss_vs_grad_ratio(series) {
        Ok(c) => json!(c),
        Err(e @ Error::InsufficientData(_)) => json!({ "error": e.to_string() }),
        Err(e) => return Err(e).stage("training"),
    };
    let head = (c.model.kind == ModelKind::InvariantGraphHead).then(|| {
        let (dev, equiv): (Vec<f64>, Vec<f64>) = series
            .iter()
            .filter(|r| r.head_deviation_sq.is_finite() && r.loss_equiv.is_finite())
            .map(|r| (r.head_deviation_sq, r.loss_equiv))
            .unzip();
        spearman(&dev, &equiv)
    });
    ctx.write_json("correlation.json", &json!({ "loss_vs_grad_ratio": correlation, "spearman_head_deviation_vs_loss_equiv": head }))?;
    artifacts.push("correlation.json");
    ctx.manifest("train", &artifacts)?;

    let last = series.last().expect("at least one row");
    println!(
        "step {}: L = {:.6e}, L_mean = {:.6e}, L_equiv = {:.6e}, percent = {:.4}",
        last.step, last.loss_total, last.loss_mean, last.loss_equiv, last.percent_equiv
    );
    Ok(())
}

pub fn cmd_measure(ctx: &Context, checkpoint: Option<&Path>, rotations: Option<usize>, exact: bool) -> CliResult {
    let model = ctx.checkpoint(checkpoint)?;
    let loss = ctx.config.loss_model();
    let heldout = &ctx.data.heldout;
    let report = if exact {
        let (group, surrogate) = ctx.config.exact_group().stage("config")?;
        let dec = decompose_exact(&model, &loss, &ctx.action, heldout, &GroupSpec::Finite(group.clone())).stage("metrics")?;
        json!({ "mode": "exact", "group": group.name(), "surrogate_for_so3": surrogate, "decomposition": dec })
    } else {
        let n = rotations.unwrap_or(DEFAULT_ROTATIONS);
        let mut rng = rng::stream(ctx.config.seed, streams::MEASURE);
        let (estimator, dec) =
            decompose_sampled(&model, &loss, &ctx.action, heldout, &ctx.group, n, &mut rng).stage("metrics")?;
        json!({ "mode": "sampled", "group": ctx.group.name(), "rotations": n, "decomposition": dec, "estimator": estimator })
    };
    ctx.write_json("measure.json", &report)?;
    print_json(&report)?;
    Ok(())
}

pub fn cmd_landscape(ctx: &Context, checkpoint: Option<&Path>) -> CliResult {
    let model = ctx.checkpoint(checkpoint)?;
    let c = &ctx.config;
    let (batch, plan) = ctx.analysis_batch(&mut ctx.analysis_rng())?;
    let options = LandscapeOptions {
        radius: c.analysis.landscape_radius,
        step_scale: c.analysis.step_scale,
        learning_rate: c.train.learning_rate,
        step_override: None,
    };
    let subset = c.subset();
    let pair = landscape_grid(&model, &c.loss_model(), &ctx.action, &subset, &batch, &plan, &options).stage("analysis")?;
    write_matrix_csv(&ctx.path("landscape_mean.csv"), &pair.mean.values).stage("io")?;
    write_matrix_csv(&ctx.path("landscape_equiv.csv"), &pair.equiv.values).stage("io")?;
    let title = format!("loss landscape on {}", subset.join("+"));
    ctx.write_text("landscape.svg", &heatmap_pair(&title, [("L_mean", &pair.mean.values), ("L_equiv", &pair.equiv.values)]))?;
    ctx.write_json(
        "landscape.json",
        &json!({
            "subset": subset,
            "radius": pair.mean.radius,
            "step": pair.mean.step,
            "lambda_axis1": pair.lambda_axis1,
            "lambda_axis2": pair.lambda_axis2,
            "center_mean": pair.mean.center(),
            "center_equiv": pair.equiv.center(),
            "axis1": pair.mean.axis1,
            "axis2": pair.mean.axis2,
        }),
    )?;
    ctx.manifest("landscape", &["landscape_mean.csv", "landscape_equiv.csv", "landscape.svg", "landscape.json"])?;
    println!("landscape: step {:.4e}, eigenvalues {:.4e} / {:.4e}", pair.mean.step, pair.lambda_axis1, pair.lambda_axis2);
    Ok(())
}

pub fn cmd_hessian(ctx: &Context, checkpoint: Option<&Path>, batches: Option<usize>) -> CliResult {
    let model = ctx.checkpoint(checkpoint)?;
    let c = &ctx.config;
    let batches = batches.unwrap_or(c.analysis.batches);
    if batches == 0 {
        return Err(Error::Argument("--batches must be at least 1".into())).stage("config");
    }
    let subset = c.subset();
    let mut rng = ctx.analysis_rng();
    let mut records: Vec<HessianSummary> = Vec::with_capacity(3 * batches);
    for k in 0..batches {
        let (batch, plan) = ctx.analysis_batch(&mut rng)?;
        let cn = condition_numbers(&model, &c.loss_model(), &ctx.action, &subset, &batch, &plan, k).stage("analysis")?;
        records.extend([cn.mean, cn.equiv, cn.total]);
    }
    ctx.write_json("hessian.json", &records)?;
    write_csv(&ctx.path("hessian.csv"), &records).stage("io")?;
    ctx.manifest("hessian", &["hessian.json", "hessian.csv"])?;
    for r in &records {
        println!("batch {:>3} {:<5} cond {:.4e}", r.batch_index, format!("{:?}", r.loss_kind).to_lowercase(), r.cond);
    }
    if let Some(bad) = records.iter().find(|r| r.degenerate) {
        return Err(Error::Degenerate(format!(
            "{:?} Hessian on batch {} has no positive eigenvalues above the floor",
            bad.loss_kind, bad.batch_index
        )))
        .stage("analysis");
    }
    Ok(())
}

pub fn cmd_sensitivity(ctx: &Context, checkpoint: Option<&Path>, max_n: Option<usize>, repeats: Option<usize>) -> CliResult {
    let model = ctx.checkpoint(checkpoint)?;
    let c = &ctx.config;
    let max_n = max_n.unwrap_or(c.analysis.sensitivity_max_rotations);
    let repeats = repeats.unwrap_or(c.analysis.sensitivity_repeats);
    let mut rng = ctx.analysis_rng();
    let report = sensitivity_bootstrap(&model, &c.loss_model(), &ctx.action, &ctx.data.heldout, &ctx.group, max_n, repeats, &mut rng)
        .stage("metrics")?;
    if report.few_repeats {
        eprintln!("warning: only {repeats} bootstrap repeats; standard errors are unreliable below 10");
    }
    write_csv(&ctx.path("sensitivity.csv"), &report.rows).stage("io")?;
    let stderr = [Series { name: "stderr", points: report.rows.iter().map(|r| (r.n as f64, r.percent_stderr)).collect() }];
    ctx.write_text(
        "sensitivity.svg",
        &line_plot("bootstrap standard error", "rotations N", "stderr of percent", &stderr, Axes { log_x: true, log_y: true }),
    )?;
    ctx.manifest("sensitivity", &["sensitivity.csv", "sensitivity.svg"])?;
    for r in &report.rows {
        println!("N = {:>3}: percent {:.6} ± {:.6}", r.n, r.percent_mean, r.percent_stderr);
    }
    Ok(())
}

#[derive(Serialize)]
struct TheoremReport {
    group: String,
    surrogate_for_so3: bool,
    theorem1: Option<Theorem1Report>,
    theorem2_3: Vec<Theorem23Report>,
}

pub fn cmd_theorems(ctx: &Context, checkpoint: Option<&Path>) -> CliResult {
    let model = ctx.checkpoint(checkpoint)?;
    let (group, surrogate) = ctx.config.exact_group().stage("config")?;
    let n = ctx.config.analysis.theorem_samples.min(ctx.data.heldout.len());
    let data = &ctx.data.heldout[..n];
    let mut rng = ctx.analysis_rng();
    let theorem1 = if model.kind() == ModelKind::InvariantGraphHead {
        Some(verify_theorem1(&model, data, &group, &mut rng).stage("analysis")?)
    } else {
        None
    };
    let scopes: &[RayScope] =
        if model.kind() == ModelKind::CoordMlp { &[RayScope::FinalLayer, RayScope::AllLayers] } else { &[RayScope::FinalLayer] };
    let theorem2_3 =
        scopes.iter().map(|&s| verify_theorem2_3(&model, &group, data, s)).collect::<equidiag::Result<Vec<_>>>().stage("analysis")?;
    let report = TheoremReport { group: group.name().to_string(), surrogate_for_so3: surrogate, theorem1, theorem2_3 };
    ctx.write_json("theorems.json", &report)?;
    ctx.manifest("theorems", &["theorems.json"])?;

    if let Some(t) = &report.theorem1 {
        println!(
            "head quadratic form: identity rel. error {:.3e}, lambda in [{:.4e}, {:.4e}], bound violations {}/{}",
            t.identity_rel_error, t.lambda_min, t.lambda_max, t.bound_violations, t.bound_checks
        );
    }
    for t in &report.theorem2_3 {
        println!("ray scaling ({:?}): loss slope {:.6}, gradient slope {:.6}", t.scope, t.loss_slope, t.grad_slope);
    }
    if report.theorem1.as_ref().is_some_and(|t| t.degenerate) {
        return Err(Error::Degenerate(format!(
            "the quadratic form is singular on the deviation subspace under '{}'",
            group.name()
        )))
        .stage("analysis");
    }
    Ok(())
}

pub fn cmd_project_head(ctx: &Context, checkpoint: Option<&Path>) -> CliResult {
    let model = ctx.checkpoint(checkpoint)?;
    let split = head_split(&model).stage("analysis")?;
    let h = split.equivariant.cols();
    let report = json!({
        "w_bar": split.equivariant.row(0),
        "deviation": (0..3).map(|i| split.deviation.row(i).to_vec()).collect::<Vec<_>>(),
        "deviation_norm_sq": split.deviation_norm_sq,
        "width": h,
    });
    ctx.write_json("project_head.json", &report)?;
    print_json(&report)?;
    Ok(())
}
