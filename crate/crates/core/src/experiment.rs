//! Seed ensembles over schemes and step sizes, with CSV/JSON/SVG output.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::constants::{estimate_constants, f_star};
use crate::datagen::{
    gen_consistent_ls, gen_overparam_ls, gen_separable, perturb_labels, rbf_featurize,
    SeparableSpec,
};
use crate::dataset::{format_float, load_csv, save_json};
use crate::error::{Error, Result};
use crate::optim::{run, GrowthCondition, PermutationPlan, RunOptions, RunRecord, SchemeKind};
use crate::plot::{line_plot, PlotOptions, Series};
use crate::problem::{Constant, ConstantField, FiniteSumProblem, LossModel, ParamVector, ProblemConstants};
use crate::theory::{predicted_curve, theorem_step, RateBundle};

/// Points in the step-size grid.
pub const GRID_POINTS: usize = 7;
pub const GRID_MIN: f64 = 1e-3;
pub const GRID_MAX: f64 = 1e-1;

/// `GRID_POINTS` log-spaced values over `[GRID_MIN, GRID_MAX]`.
pub fn eta_grid() -> Vec<f64> {
    let (a, b) = (GRID_MIN.log10(), GRID_MAX.log10());
    (0..GRID_POINTS)
        .map(|k| 10f64.powf(a + (b - a) * k as f64 / (GRID_POINTS - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Separable { n: usize, d: usize, margin: f64, seed: u64 },
    ConsistentLs { n: usize, d: usize, seed: u64 },
    OverparamLs { n: usize, d: usize, seed: u64 },
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaRule {
    /// Largest step the convergence theorem for each scheme allows.
    Theorem,
    /// Sweep [`eta_grid`] and keep the step with the lowest mean final loss.
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaSpec {
    Fixed(f64),
    Rule(EtaRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelNoise {
    pub scale: f64,
    pub seed: u64,
}

fn default_condition() -> GrowthCondition {
    GrowthCondition::Sgc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub loss: LossModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rbf_bandwidth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_noise: Option<LabelNoise>,
    pub schemes: Vec<SchemeKind>,
    pub eta: EtaSpec,
    /// Growth condition used by `"theorem"` step sizes.
    #[serde(default = "default_condition")]
    pub condition: GrowthCondition,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::Config("at least one scheme is required".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        if let EtaSpec::Fixed(e) = self.eta {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::Config(format!("eta must be finite and ≥ 0, got {e}")));
            }
        }
        self.loss
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A problem built from a config, with whatever is known about it.
#[derive(Debug, Clone)]
pub struct PreparedProblem {
    pub problem: FiniteSumProblem,
    /// Margin of generated separable data.
    pub tau: Option<f64>,
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<PreparedProblem> {
    let base_loss = cfg.loss.clone();
    let (mut problem, tau) = match &cfg.dataset {
        DatasetSpec::Separable { n, d, margin, seed } => {
            let ds = gen_separable(
                SeparableSpec {
                    n: *n,
                    d: *d,
                    margin: *margin,
                    seed: *seed,
                },
                base_loss.scalar_loss().clone(),
            )?;
            (ds.problem, Some(ds.tau_actual))
        }
        DatasetSpec::ConsistentLs { n, d, seed } => (gen_consistent_ls(*n, *d, *seed)?.problem, None),
        DatasetSpec::OverparamLs { n, d, seed } => (gen_overparam_ls(*n, *d, *seed)?.problem, None),
        DatasetSpec::Csv { path } => (load_csv(path, base_loss.scalar_loss().clone())?, None),
    };
    if let Some(noise) = cfg.label_noise {
        problem = perturb_labels(&problem, noise.scale, noise.seed)?;
    }
    if let Some(bw) = cfg.rbf_bandwidth {
        problem = rbf_featurize(&problem, bw)?;
    }
    if problem.loss_model() != &cfg.loss {
        problem = problem.with_loss(cfg.loss.clone())?;
    }
    Ok(PreparedProblem { problem, tau })
}

/// Constants for theorem step sizes: analytic where available, otherwise
/// probe estimates, with the separable-margin cap `ρ ≤ n/τ²` for plain
/// margin losses on unit-ball features.
pub fn resolve_constants(prep: &PreparedProblem, seed: u64) -> Result<ProblemConstants> {
    let p = &prep.problem;
    let mut c = ProblemConstants::new(p.n());
    if let Some(tau) = prep.tau {
        c = c.with(ConstantField::Tau, Constant::analytic(tau));
        let unwrapped_margin = matches!(p.loss_model(), LossModel::SquaredHinge | LossModel::Logistic);
        if unwrapped_margin {
            c = c.with(ConstantField::Rho, Constant::analytic(p.n() as f64 / (tau * tau)));
        }
    }
    let (est, _) = estimate_constants(p, None, seed)?;
    Ok(c.merge_missing(&est))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunnerOptions {
    /// Worker threads for independent runs (`None`: all cores).
    pub workers: Option<usize>,
    pub seed_base: u64,
}

impl Default for RunnerOptions {
    fn default() -> Self {
        RunnerOptions {
            workers: None,
            seed_base: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub eta: f64,
    /// `None` when a run diverged.
    pub mean_final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: SchemeKind,
    pub eta: f64,
    pub seeds: usize,
    pub mean_loss: Vec<f64>,
    pub min_loss: Vec<f64>,
    pub max_loss: Vec<f64>,
    /// Standard error of the mean loss across seeds.
    pub std_err: Vec<f64>,
    /// Minimum over epochs of the ensemble-mean loss.
    pub min_train_loss: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<GridPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub schemes: Vec<SchemeSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rr_minus_sgd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rr_minus_ig: Option<f64>,
}

impl EnsembleSummary {
    pub fn scheme(&self, kind: SchemeKind) -> Option<&SchemeSummary> {
        self.schemes.iter().find(|s| s.scheme == kind)
    }

    fn fill_differences(&mut self) {
        let min = |k| self.scheme(k).map(|s| s.min_train_loss);
        let (rr, sgd, ig) = (min(SchemeKind::Rr), min(SchemeKind::Sgd), min(SchemeKind::Ig));
        self.rr_minus_sgd = rr.zip(sgd).map(|(a, b)| a - b);
        self.rr_minus_ig = rr.zip(ig).map(|(a, b)| a - b);
    }
}

pub fn summarize(kind: SchemeKind, eta: f64, records: &[RunRecord]) -> Result<SchemeSummary> {
    let k = records.len();
    if k == 0 {
        return Err(Error::InvalidInput("no runs to summarize".into()));
    }
    let len = records[0].losses.len();
    if records.iter().any(|r| r.losses.len() != len) {
        return Err(Error::InvalidInput("runs have different lengths".into()));
    }
    let mut mean_loss = Vec::with_capacity(len);
    let mut min_loss = Vec::with_capacity(len);
    let mut max_loss = Vec::with_capacity(len);
    let mut std_err = Vec::with_capacity(len);
    for t in 0..len {
        let vals = records.iter().map(|r| r.losses[t]);
        // Shifted by the first run so identical losses give an exact mean.
        let base = records[0].losses[t];
        let mean = base + vals.clone().map(|v| v - base).sum::<f64>() / k as f64;
        let var = if k > 1 {
            vals.clone().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64
        } else {
            0.0
        };
        mean_loss.push(mean);
        min_loss.push(vals.clone().fold(f64::INFINITY, f64::min));
        max_loss.push(vals.fold(f64::NEG_INFINITY, f64::max));
        std_err.push((var / k as f64).sqrt());
    }
    let min_train_loss = mean_loss.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(SchemeSummary {
        scheme: kind,
        eta,
        seeds: k,
        mean_loss,
        min_loss,
        max_loss,
        std_err,
        min_train_loss,
        grid: Vec::new(),
    })
}

/// Runs every `(seed, η)` job; results come back in job order.
fn run_jobs(
    problem: &FiniteSumProblem,
    x0: &ParamVector,
    epochs: usize,
    jobs: &[(SchemeKind, u64, f64)],
    opts: &RunnerOptions,
) -> Result<Vec<Result<RunRecord>>> {
    let one = |&(kind, seed, eta): &(SchemeKind, u64, f64)| {
        let plan = PermutationPlan::for_kind(kind, problem.n(), seed);
        run(problem, &plan, x0, eta, epochs, RunOptions::default())
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(w) = opts.workers {
            builder = builder.num_threads(w.max(1));
        }
        let pool = builder
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        Ok(pool.install(|| jobs.par_iter().map(one).collect()))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = opts;
        Ok(jobs.iter().map(one).collect())
    }
}

/// Everything a finished experiment produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub summary: EnsembleSummary,
    /// Runs at the selected step size, keyed by scheme, in seed order.
    pub records: BTreeMap<SchemeKind, Vec<RunRecord>>,
    pub constants: Option<ProblemConstants>,
    pub problem: FiniteSumProblem,
}

pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunnerOptions) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let prep = build_problem(cfg)?;
    let problem = &prep.problem;
    let x0 = match &cfg.x0 {
        Some(v) if v.len() == problem.dim() => ParamVector::new(v.clone())?,
        Some(v) => {
            return Err(Error::Config(format!(
                "x0 has length {}, problem dimension is {}",
                v.len(),
                problem.dim()
            )))
        }
        None => ParamVector::zeros(problem.dim()),
    };
    let seeds: Vec<u64> = cfg.seeds.iter().map(|s| s.wrapping_add(opts.seed_base)).collect();

    let constants = match cfg.eta {
        EtaSpec::Rule(EtaRule::Theorem) => Some(resolve_constants(&prep, seeds[0])?),
        _ => None,
    };
    let mut candidates: Vec<(SchemeKind, Vec<f64>)> = Vec::new();
    for &kind in &cfg.schemes {
        let etas = match cfg.eta {
            EtaSpec::Fixed(e) => vec![e],
            EtaSpec::Rule(EtaRule::Grid) => eta_grid(),
            EtaSpec::Rule(EtaRule::Theorem) => {
                let c = constants.as_ref().expect("resolved above");
                vec![theorem_step(c, kind, cfg.condition.into()).map_err(|e| {
                    Error::Config(format!("theorem step for {kind} unavailable: {e}"))
                })?]
            }
        };
        candidates.push((kind, etas));
    }

    let mut jobs: Vec<(SchemeKind, u64, f64)> = Vec::new();
    for (kind, etas) in &candidates {
        for &eta in etas {
            jobs.extend(seeds.iter().map(|&s| (*kind, s, eta)));
        }
    }
    let results = run_jobs(problem, &x0, cfg.epochs, &jobs, opts)?;

    let mut by_key: BTreeMap<(SchemeKind, u64), Vec<Result<RunRecord>>> = BTreeMap::new();
    for (job, res) in jobs.iter().zip(results) {
        by_key.entry((job.0, job.2.to_bits())).or_default().push(res);
    }

    let mut summary = EnsembleSummary {
        schemes: Vec::new(),
        rr_minus_sgd: None,
        rr_minus_ig: None,
    };
    let mut records = BTreeMap::new();
    for (kind, etas) in &candidates {
        let mut grid = Vec::new();
        let mut best: Option<(f64, f64, Vec<RunRecord>)> = None;
        let mut last_err = None;
        for &eta in etas {
            let runs = by_key.remove(&(*kind, eta.to_bits())).unwrap_or_default();
            let runs: Result<Vec<RunRecord>> = runs.into_iter().collect();
            match runs {
                Ok(runs) => {
                    let mean_final =
                        runs.iter().map(|r| r.final_loss()).sum::<f64>() / runs.len() as f64;
                    grid.push(GridPoint {
                        eta,
                        mean_final_loss: Some(mean_final),
                    });
                    if best.as_ref().is_none_or(|b| mean_final < b.1) {
                        best = Some((eta, mean_final, runs));
                    }
                }
                Err(e) => {
                    grid.push(GridPoint {
                        eta,
                        mean_final_loss: None,
                    });
                    last_err = Some(e);
                }
            }
        }
        let Some((eta, _, runs)) = best else {
            return Err(last_err.unwrap_or_else(|| Error::Config("no step sizes to try".into())));
        };
        let mut s = summarize(*kind, eta, &runs)?;
        if etas.len() > 1 {
            s.grid = grid;
        }
        summary.schemes.push(s);
        records.insert(*kind, runs);
    }
    summary.fill_differences();
    Ok(ExperimentOutput {
        summary,
        records,
        constants,
        problem: prep.problem,
    })
}

pub fn write_run_csv<W: Write>(record: &RunRecord, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "loss", "grad_norm_sq"])?;
    for (t, (l, g)) in record.losses.iter().zip(&record.grad_norm_sq).enumerate() {
        w.write_record([t.to_string(), format_float(*l), format_float(*g)])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(summary: &EnsembleSummary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "scheme", "mean_loss", "min_loss", "max_loss"])?;
    for s in &summary.schemes {
        for t in 0..s.mean_loss.len() {
            w.write_record([
                t.to_string(),
                s.scheme.as_str().to_string(),
                format_float(s.mean_loss[t]),
                format_float(s.min_loss[t]),
                format_float(s.max_loss[t]),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[derive(Serialize)]
struct RunSidecar<'a> {
    scheme: SchemeKind,
    seed: u64,
    eta: f64,
    epochs: usize,
    wall_time_secs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<&'a ExperimentConfig>,
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn summary_plot(summary: &EnsembleSummary, title: &str) -> String {
    let series: Vec<Series> = summary
        .schemes
        .iter()
        .map(|s| {
            Series::new(
                format!("{} (η={:.3e})", s.scheme, s.eta),
                s.mean_loss.iter().enumerate().map(|(t, &l)| (t as f64, l)).collect(),
            )
        })
        .collect();
    line_plot(
        &series,
        &PlotOptions {
            title: title.into(),
            ..PlotOptions::default()
        },
    )
}

/// Writes `runs/<scheme>_seed<seed>.{csv,json}`, `summary.{csv,json,svg}`.
pub fn write_outputs(out: &ExperimentOutput, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let runs_dir = dir.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
    for (kind, recs) in &out.records {
        for r in recs {
            let stem = format!("{}_seed{}", kind.as_str().to_lowercase(), r.seed);
            write_run_csv(r, create(&runs_dir.join(format!("{stem}.csv")))?)?;
            save_json(
                &RunSidecar {
                    scheme: r.scheme,
                    seed: r.seed,
                    eta: r.eta,
                    epochs: r.epochs,
                    wall_time_secs: r.wall_time_secs,
                    config: None,
                },
                &runs_dir.join(format!("{stem}.json")),
            )?;
        }
    }
    write_summary_csv(&out.summary, create(&dir.join("summary.csv"))?)?;
    save_json(&out.summary, &dir.join("summary.json"))?;
    save_json(cfg, &dir.join("config.json"))?;
    if let Some(c) = &out.constants {
        save_json(c, &dir.join("constants.json"))?;
    }
    let svg = summary_plot(&out.summary, "mean train loss");
    let p = dir.join("summary.svg");
    fs::write(&p, svg).map_err(|e| Error::io(&p, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayRow {
    pub epoch: usize,
    pub empirical_gap: f64,
    pub std_err: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub scheme: SchemeKind,
    pub rows: Vec<OverlayRow>,
    /// Epochs where `empirical > bound + 2·std_err + tol`.
    pub violations: usize,
}

/// Joins an ensemble's mean gap `f − f*` with a predicted curve.
pub fn overlay_theory(s: &SchemeSummary, bundle: &RateBundle, f_star: f64, tol: f64) -> Overlay {
    let epochs = s.mean_loss.len().saturating_sub(1);
    let gap0 = s.mean_loss[0] - f_star;
    let curve = predicted_curve(bundle, gap0, epochs);
    let rows: Vec<OverlayRow> = (0..=epochs)
        .map(|t| OverlayRow {
            epoch: t,
            empirical_gap: s.mean_loss[t] - f_star,
            std_err: s.std_err[t],
            bound: curve[t],
        })
        .collect();
    let violations = rows
        .iter()
        .filter(|r| r.empirical_gap > r.bound + 2.0 * r.std_err + tol)
        .count();
    Overlay {
        scheme: s.scheme,
        rows,
        violations,
    }
}

pub fn write_overlay(overlay: &Overlay, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = format!("overlay_{}", overlay.scheme.as_str().to_lowercase());
    let mut w = csv::Writer::from_writer(create(&dir.join(format!("{stem}.csv")))?);
    w.write_record(["epoch", "empirical_gap", "std_err", "bound"])?;
    for r in &overlay.rows {
        w.write_record([
            r.epoch.to_string(),
            format_float(r.empirical_gap),
            format_float(r.std_err),
            format_float(r.bound),
        ])?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;
    let svg = line_plot(
        &[
            Series::new(
                format!("{} mean gap", overlay.scheme),
                overlay.rows.iter().map(|r| (r.epoch as f64, r.empirical_gap)).collect(),
            ),
            Series::new(
                "bound",
                overlay.rows.iter().map(|r| (r.epoch as f64, r.bound)).collect(),
            )
            .dashed(),
        ],
        &PlotOptions {
            title: format!("{} against predicted rate", overlay.scheme),
            y_label: "f - f*".into(),
            ..PlotOptions::default()
        },
    );
    let p = dir.join(format!("{stem}.svg"));
    fs::write(&p, svg).map_err(|e| Error::io(&p, e))
}

/// `f*` for gap plots; see [`crate::constants::f_star`].
pub fn optimal_value(problem: &FiniteSumProblem) -> Result<f64> {
    Ok(f_star(problem)?.value)
}
