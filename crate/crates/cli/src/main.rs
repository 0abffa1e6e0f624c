use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use rrlab::constants::{certify_relations, RelationReport};
use rrlab::datagen::{
    gen_consistent_ls, gen_overparam_ls, gen_separable, perturb_labels, DatasetMeta,
    SeparableSpec,
};
use rrlab::dataset::{save_csv, save_json};
use rrlab::experiment::{
    optimal_value, overlay_theory, run_experiment, write_outputs, write_overlay, ExperimentConfig,
    ExperimentOutput, LabelNoise, RunnerOptions,
};
use rrlab::optim::GrowthCondition;
use rrlab::plot::{line_plot, PlotOptions, Series};
use rrlab::problem::{Constant, ConstantField};
use rrlab::theory::{rate_bundle, theory_table, winner_prediction, winner_threshold, write_theory_csv, Winner};
use rrlab::verify::{verify, CheckStatus, Suite, VerifyOptions};
use rrlab::{Error, LossModel, ProblemConstants};

const EXIT_INVARIANT: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(name = "rrlab", version, about = "SGD, random reshuffling and incremental gradient experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset CSV (plus meta.json) from a generator config.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Run an experiment config; writes per-run traces, summaries and plots.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: the config's `outputs`, else `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
    },
    /// Step sizes, rates and complexities for a set of constants.
    Theory {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run invariant suites; exit 1 on failures, 2 on precondition violations only.
    Verify {
        #[arg(long, default_value = "all")]
        suite: Suite,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Multiplies every lemma step size (values above 1 test precondition gating).
        #[arg(long, default_value_t = 1.0)]
        eta_scale: f64,
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
    },
    /// Render run, summary or overlay CSVs as an SVG line plot.
    Plot {
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        title: Option<String>,
        #[arg(long)]
        linear: bool,
    },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
enum GenConfig {
    Separable {
        n: usize,
        d: usize,
        margin: f64,
        seed: u64,
    },
    ConsistentLs {
        n: usize,
        d: usize,
        seed: u64,
        #[serde(default)]
        label_noise: Option<LabelNoise>,
    },
    OverparamLs {
        n: usize,
        d: usize,
        seed: u64,
    },
}

/// Either a `constants.json` written by `run` or plain numbers taken as declared.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum TheoryConfig {
    Full(ProblemConstants),
    Plain {
        n: usize,
        #[serde(default)]
        l: Option<f64>,
        #[serde(default)]
        l_max: Option<f64>,
        #[serde(default)]
        mu: Option<f64>,
        #[serde(default)]
        rho: Option<f64>,
        #[serde(default)]
        alpha: Option<f64>,
        #[serde(default)]
        sigma: Option<f64>,
        #[serde(default)]
        tau: Option<f64>,
    },
}

impl TheoryConfig {
    fn into_constants(self) -> ProblemConstants {
        match self {
            TheoryConfig::Full(c) => c,
            TheoryConfig::Plain { n, l, l_max, mu, rho, alpha, sigma, tau } => {
                let mut c = ProblemConstants::new(n);
                for (field, v) in [
                    (ConstantField::L, l),
                    (ConstantField::LMax, l_max),
                    (ConstantField::Mu, mu),
                    (ConstantField::Rho, rho),
                    (ConstantField::Alpha, alpha),
                    (ConstantField::Sigma, sigma),
                    (ConstantField::Tau, tau),
                ] {
                    if let Some(v) = v {
                        c = c.with(field, Constant::declared(v));
                    }
                }
                c
            }
        }
    }
}

#[derive(Debug, Serialize)]
struct WinnerEntry {
    condition: &'static str,
    threshold: f64,
    winner: Winner,
}

#[derive(Debug, Serialize)]
struct TheoryReport {
    constants: ProblemConstants,
    winners: Vec<WinnerEntry>,
    relations: RelationReport,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

fn cmd_gen(config: &Path, out: &Path) -> Result<(), Error> {
    let cfg: GenConfig = read_json(config)?;
    create_dir(out)?;
    let (problem, meta) = match cfg {
        GenConfig::Separable { n, d, margin, seed } => {
            let ds = gen_separable(SeparableSpec { n, d, margin, seed }, LossModel::SquaredHinge)?;
            let meta = DatasetMeta {
                generator: "separable".into(),
                n,
                d,
                tau_requested: Some(margin),
                tau_actual: Some(ds.tau_actual),
                seed,
            };
            (ds.problem, meta)
        }
        GenConfig::ConsistentLs { n, d, seed, label_noise } => {
            let mut p = gen_consistent_ls(n, d, seed)?.problem;
            if let Some(noise) = label_noise {
                p = perturb_labels(&p, noise.scale, noise.seed)?;
            }
            let meta = DatasetMeta {
                generator: "consistent_ls".into(),
                n,
                d,
                tau_requested: None,
                tau_actual: None,
                seed,
            };
            (p, meta)
        }
        GenConfig::OverparamLs { n, d, seed } => {
            let p = gen_overparam_ls(n, d, seed)?.problem;
            let meta = DatasetMeta {
                generator: "overparam_ls".into(),
                n,
                d,
                tau_requested: None,
                tau_actual: None,
                seed,
            };
            (p, meta)
        }
    };
    save_csv(&problem, &out.join("data.csv"))?;
    save_json(&meta, &out.join("meta.json"))?;
    println!("wrote {} samples of dimension {} to {}", problem.n(), problem.dim(), out.display());
    Ok(())
}

fn print_summary(out: &ExperimentOutput) {
    for s in &out.summary.schemes {
        println!(
            "{:<4} eta={:<10.4e} seeds={:<3} final mean loss={:.6e} min train loss={:.6e}",
            s.scheme.as_str(),
            s.eta,
            s.seeds,
            s.mean_loss.last().copied().unwrap_or(f64::NAN),
            s.min_train_loss
        );
    }
    if let Some(d) = out.summary.rr_minus_sgd {
        println!("RR - SGD min train loss: {d:+.6e}");
    }
    if let Some(d) = out.summary.rr_minus_ig {
        println!("RR - IG  min train loss: {d:+.6e}");
    }
}

fn cmd_run(config: &Path, out: Option<PathBuf>, workers: Option<usize>, seed_base: u64) -> Result<(), Error> {
    let cfg = ExperimentConfig::load(config)?;
    let dir = out.or_else(|| cfg.outputs.clone()).unwrap_or_else(|| PathBuf::from("out"));
    if workers == Some(0) {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    let output = run_experiment(&cfg, &RunnerOptions { workers, seed_base })?;
    create_dir(&dir)?;
    write_outputs(&output, &cfg, &dir)?;
    print_summary(&output);

    // Overlays for every scheme whose rate the constants resolve.
    if let Some(c) = &output.constants {
        if let Ok(f_star) = optimal_value(&output.problem) {
            for s in &output.summary.schemes {
                if let Ok(b) = rate_bundle(c, s.scheme, cfg.condition.into(), Some(s.eta)) {
                    let ov = overlay_theory(s, &b, f_star, 1e-9);
                    write_overlay(&ov, &dir)?;
                    println!(
                        "{} overlay: {} epoch(s) above bound + 2 SE",
                        s.scheme.as_str(),
                        ov.violations
                    );
                }
            }
        }
    }
    println!("outputs in {}", dir.display());
    Ok(())
}

fn cmd_theory(config: &Path, out: Option<PathBuf>) -> Result<u8, Error> {
    let c = read_json::<TheoryConfig>(config)?.into_constants();
    c.validate().map_err(|e| Error::Config(e.to_string()))?;
    let rows = theory_table(&c);
    if rows.is_empty() {
        return Err(Error::Config("constants resolve no rate (need at least L_max, mu and rho or alpha)".into()));
    }
    let mut buf = Vec::new();
    write_theory_csv(&rows, &mut buf)?;
    print!("{}", String::from_utf8_lossy(&buf));
    let winners: Vec<WinnerEntry> = [GrowthCondition::Sgc, GrowthCondition::Wgc]
        .into_iter()
        .filter_map(|cond| {
            Some(WinnerEntry {
                condition: cond.as_str(),
                threshold: winner_threshold(&c, cond).ok()?,
                winner: winner_prediction(&c, cond).ok()?,
            })
        })
        .collect();
    for w in &winners {
        println!("{}: n threshold {:.6e}, predicted winner {:?}", w.condition, w.threshold, w.winner);
    }
    let relations = certify_relations(&c);
    if let Some(dir) = out {
        create_dir(&dir)?;
        let p = dir.join("theory.csv");
        fs::write(&p, &buf).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        save_json(&TheoryReport { constants: c, winners, relations: relations.clone() }, &dir.join("theory.json"))?;
    }
    if relations.any_failed() {
        for r in relations.checks.iter().filter(|r| r.status == rrlab::constants::RelationStatus::Fail) {
            eprintln!("relation violated: {} ({:?} vs {:?})", r.relation, r.lhs, r.rhs);
        }
        return Ok(EXIT_INVARIANT);
    }
    Ok(0)
}

fn cmd_verify(suite: Suite, out: Option<PathBuf>, eta_scale: f64, seed: u64) -> Result<u8, Error> {
    if !(eta_scale > 0.0 && eta_scale.is_finite()) {
        return Err(Error::Config(format!("--eta-scale must be positive, got {eta_scale}")));
    }
    let report = verify(suite, &VerifyOptions { eta_scale, seed })?;
    for c in &report.checks {
        let tag = match c.status {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "FAIL",
            CheckStatus::PreconditionViolated => "PRECONDITION",
        };
        if c.detail.is_empty() {
            println!("[{tag}] {}: {}", c.suite, c.name);
        } else {
            println!("[{tag}] {}: {} ({})", c.suite, c.name, c.detail);
        }
    }
    println!(
        "{} passed, {} failed, {} precondition violation(s)",
        report.passed, report.failed, report.precondition_violations
    );
    let json = serde_json::to_string_pretty(&report)?;
    match out {
        Some(dir) => {
            create_dir(&dir)?;
            let p = dir.join("verify_report.json");
            fs::write(&p, json + "\n").map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        }
        None => eprintln!("{json}"),
    }
    Ok(report.exit_code() as u8)
}

/// Series found in one CSV, chosen by its header.
fn csv_series(path: &Path) -> Result<Vec<Series>, Error> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let records: Vec<csv::StringRecord> = r.records().collect::<Result<_, _>>()?;
    let num = |rec: &csv::StringRecord, i: usize| -> Result<f64, Error> {
        rec[i]
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{}: cannot parse {:?}", path.display(), &rec[i])))
    };
    let epoch = col("epoch").ok_or_else(|| Error::Config(format!("{}: no epoch column", path.display())))?;
    if let (Some(s), Some(m)) = (col("scheme"), col("mean_loss")) {
        let mut by: Vec<Series> = Vec::new();
        for rec in &records {
            let name = rec[s].to_string();
            let pt = (num(rec, epoch)?, num(rec, m)?);
            match by.iter_mut().find(|x| x.name == name) {
                Some(x) => x.points.push(pt),
                None => by.push(Series::new(name, vec![pt])),
            }
        }
        return Ok(by);
    }
    if let (Some(g), Some(b)) = (col("empirical_gap"), col("bound")) {
        let pts = |i| records.iter().map(|r| Ok((num(r, epoch)?, num(r, i)?))).collect::<Result<Vec<_>, Error>>();
        return Ok(vec![Series::new(format!("{stem} gap"), pts(g)?), Series::new("bound", pts(b)?).dashed()]);
    }
    if let Some(l) = col("loss") {
        let pts = records.iter().map(|r| Ok((num(r, epoch)?, num(r, l)?))).collect::<Result<Vec<_>, Error>>()?;
        return Ok(vec![Series::new(stem, pts)]);
    }
    Err(Error::Config(format!("{}: unrecognized CSV header {header:?}", path.display())))
}

fn cmd_plot(inputs: &[PathBuf], out: &Path, title: Option<String>, linear: bool) -> Result<(), Error> {
    if inputs.is_empty() {
        return Err(Error::Config("plot needs at least one CSV".into()));
    }
    let mut series = Vec::new();
    for p in inputs {
        series.extend(csv_series(p)?);
    }
    let svg = line_plot(
        &series,
        &PlotOptions {
            title: title.unwrap_or_default(),
            log_y: !linear,
            ..PlotOptions::default()
        },
    );
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(out, svg).map_err(|e| Error::Config(format!("{}: {e}", out.display())))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Estimation(_) | Error::NonFinite { .. } => EXIT_INVARIANT,
        _ => EXIT_CONFIG,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen { config, out } => cmd_gen(&config, &out).map(|_| 0),
        Command::Run { config, out, workers, seed_base } => cmd_run(&config, out, workers, seed_base).map(|_| 0),
        Command::Theory { config, out } => cmd_theory(&config, out),
        Command::Verify { suite, out, eta_scale, seed_base } => cmd_verify(suite, out, eta_scale, seed_base),
        Command::Plot { inputs, out, title, linear } => cmd_plot(&inputs, &out, title, linear).map(|_| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
