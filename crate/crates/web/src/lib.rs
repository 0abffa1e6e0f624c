//! Browser bindings. Each export takes and returns JSON so the page needs no
//! generated type glue beyond strings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use rrlab::constants::{certify_relations, RelationReport};
use rrlab::experiment::{
    optimal_value, run_experiment, summary_plot, DatasetSpec, EtaSpec, ExperimentConfig, RunnerOptions,
};
use rrlab::optim::{step_size_ig, step_size_rr, step_size_sgd, GrowthCondition, SchemeKind};
use rrlab::oracle::without_replacement_stats;
use rrlab::problem::{Constant, ConstantField};
use rrlab::theory::{rate_bundle, theory_table, winner_prediction, winner_threshold, TheoryRow, Winner};
use rrlab::{Error, ParamVector, ProblemConstants};

/// Browser-side limits so a click never freezes the tab.
pub const MAX_N: usize = 400;
pub const MAX_WORK: usize = 20_000_000;

#[derive(Debug, Serialize)]
pub struct Curve {
    pub scheme: SchemeKind,
    pub eta: f64,
    pub mean_loss: Vec<f64>,
    pub std_err: Vec<f64>,
    pub min_train_loss: f64,
    /// Predicted `f* + bound` curve when the constants resolve a rate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
pub struct Simulation {
    pub curves: Vec<Curve>,
    pub f_star: Option<f64>,
    pub rr_minus_sgd: Option<f64>,
    pub rr_minus_ig: Option<f64>,
    pub svg: String,
}

fn check_budget(cfg: &ExperimentConfig) -> Result<(), Error> {
    let (n, d) = match cfg.dataset {
        DatasetSpec::Separable { n, d, .. }
        | DatasetSpec::ConsistentLs { n, d, .. }
        | DatasetSpec::OverparamLs { n, d, .. } => (n, d),
        DatasetSpec::Csv { .. } => return Err(Error::Config("files are not available in the browser".into())),
    };
    if n > MAX_N {
        return Err(Error::Config(format!("n is limited to {MAX_N} here")));
    }
    let grid = if matches!(cfg.eta, EtaSpec::Fixed(_)) { 1 } else { 7 };
    let work = n * d * cfg.epochs * cfg.seeds.len() * cfg.schemes.len() * grid;
    if work > MAX_WORK {
        return Err(Error::Config(format!(
            "about {work} gradient coordinates requested; the page allows {MAX_WORK}"
        )));
    }
    Ok(())
}

/// Runs an experiment config and returns mean curves, with predicted rate
/// curves where the constants allow.
pub fn simulate_json(config: &str) -> Result<String, Error> {
    let cfg: ExperimentConfig = serde_json::from_str(config).map_err(|e| Error::Config(e.to_string()))?;
    check_budget(&cfg)?;
    let out = run_experiment(&cfg, &RunnerOptions::default())?;
    let f_star = optimal_value(&out.problem).ok();
    let curves = out
        .summary
        .schemes
        .iter()
        .map(|s| {
            let bound = match (&out.constants, f_star) {
                (Some(c), Some(fs)) => rate_bundle(c, s.scheme, cfg.condition.into(), Some(s.eta))
                    .ok()
                    .map(|b| {
                        rrlab::theory::predicted_curve(&b, s.mean_loss[0] - fs, cfg.epochs)
                            .into_iter()
                            .map(|v| v + fs)
                            .collect()
                    }),
                _ => None,
            };
            Curve {
                scheme: s.scheme,
                eta: s.eta,
                mean_loss: s.mean_loss.clone(),
                std_err: s.std_err.clone(),
                min_train_loss: s.min_train_loss,
                bound,
            }
        })
        .collect();
    let sim = Simulation {
        curves,
        f_star,
        rr_minus_sgd: out.summary.rr_minus_sgd,
        rr_minus_ig: out.summary.rr_minus_ig,
        svg: summary_plot(&out.summary, "mean train loss"),
    };
    Ok(serde_json::to_string(&sim)?)
}

#[derive(Debug, Deserialize)]
pub struct CalculatorInput {
    pub n: usize,
    pub l: Option<f64>,
    pub l_max: Option<f64>,
    pub mu: Option<f64>,
    pub rho: Option<f64>,
    pub alpha: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct StepSizes {
    pub condition: &'static str,
    pub rr: Option<f64>,
    pub ig: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct WinnerInfo {
    pub condition: &'static str,
    pub threshold: f64,
    pub winner: Winner,
}

#[derive(Debug, Serialize)]
pub struct Calculation {
    pub steps: Vec<StepSizes>,
    pub sgd_step: Option<f64>,
    pub table: Vec<TheoryRow>,
    pub winners: Vec<WinnerInfo>,
    pub relations: RelationReport,
}

/// Step sizes, complexity table, winner prediction and relation checks.
pub fn calculator_json(input: &str) -> Result<String, Error> {
    let inp: CalculatorInput = serde_json::from_str(input).map_err(|e| Error::Config(e.to_string()))?;
    let mut c = ProblemConstants::new(inp.n);
    for (f, v) in [
        (ConstantField::L, inp.l),
        (ConstantField::LMax, inp.l_max),
        (ConstantField::Mu, inp.mu),
        (ConstantField::Rho, inp.rho),
        (ConstantField::Alpha, inp.alpha),
        (ConstantField::Sigma, inp.sigma),
    ] {
        if let Some(v) = v {
            c = c.with(f, Constant::declared(v));
        }
    }
    c.validate()?;
    let conds = [GrowthCondition::Sgc, GrowthCondition::Wgc];
    let calc = Calculation {
        steps: conds
            .iter()
            .map(|&cond| StepSizes {
                condition: cond.as_str(),
                rr: step_size_rr(&c, cond).ok(),
                ig: step_size_ig(&c, cond).ok(),
            })
            .collect(),
        sgd_step: step_size_sgd(&c).ok(),
        table: theory_table(&c),
        winners: conds
            .iter()
            .filter_map(|&cond| {
                Some(WinnerInfo {
                    condition: cond.as_str(),
                    threshold: winner_threshold(&c, cond).ok()?,
                    winner: winner_prediction(&c, cond).ok()?,
                })
            })
            .collect(),
        relations: certify_relations(&c),
    };
    Ok(serde_json::to_string(&calc)?)
}

#[derive(Debug, Serialize)]
pub struct SubsetRow {
    pub k: usize,
    pub enumerated: f64,
    pub closed_form: f64,
}

#[derive(Debug, Serialize)]
pub struct SubsetDemo {
    pub n: usize,
    pub variance: f64,
    pub rows: Vec<SubsetRow>,
}

/// Exact variance of a size-k subset mean for every k, on random vectors.
pub fn subset_variance_json(n: usize, d: usize, seed: u64) -> Result<String, Error> {
    if d == 0 || d > 16 {
        return Err(Error::Config("dimension must be in 1..=16".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vectors = (0..n)
        .map(|_| ParamVector::new((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::with_capacity(n);
    let mut variance = 0.0;
    for k in 1..=n {
        let s = without_replacement_stats(&vectors, k)?;
        variance = s.population_variance;
        rows.push(SubsetRow {
            k,
            enumerated: s.expected_sq_dev,
            closed_form: s.closed_form,
        });
    }
    Ok(serde_json::to_string(&SubsetDemo { n, variance, rows })?)
}

fn js(r: Result<String, Error>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen]
pub fn simulate(config: &str) -> Result<String, JsValue> {
    js(simulate_json(config))
}

#[wasm_bindgen]
pub fn calculator(input: &str) -> Result<String, JsValue> {
    js(calculator_json(input))
}

#[wasm_bindgen]
pub fn subset_variance(n: usize, d: usize, seed: u64) -> Result<String, JsValue> {
    js(subset_variance_json(n, d, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn simulate_returns_curves_and_bounds() {
        let cfg = r#"{
            "dataset": { "kind": "overparam_ls", "n": 8, "d": 16, "seed": 1 },
            "loss": { "model": "least_squares" },
            "schemes": ["rr", "ig"],
            "eta": "theorem",
            "epochs": 20,
            "seeds": [1, 2, 3]
        }"#;
        let v: Value = serde_json::from_str(&simulate_json(cfg).unwrap()).unwrap();
        let curves = v["curves"].as_array().unwrap();
        assert_eq!(curves.len(), 2);
        for c in curves {
            assert_eq!(c["mean_loss"].as_array().unwrap().len(), 21);
            let bound = c["bound"].as_array().unwrap();
            let mean = c["mean_loss"].as_array().unwrap();
            assert_eq!(bound[0], mean[0]);
        }
        assert!(v["svg"].as_str().unwrap().starts_with("<svg"));
    }

    #[test]
    fn simulate_rejects_oversized_requests() {
        let cfg = r#"{
            "dataset": { "kind": "separable", "n": 5000, "d": 5, "margin": 0.1, "seed": 1 },
            "loss": { "model": "squared_hinge" },
            "schemes": ["rr"], "eta": 0.1, "epochs": 10, "seeds": [1]
        }"#;
        assert!(matches!(simulate_json(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn calculator_matches_step_rules() {
        let out = calculator_json(r#"{ "n": 4, "l_max": 1.0, "l": 1.0, "mu": 0.1, "rho": 4.0 }"#).unwrap();
        let v: Value = serde_json::from_str(&out).unwrap();
        let sgc = &v["steps"][0];
        assert_eq!(sgc["condition"], "SGC");
        // min{1/(2·4), 1/(2√2·√16)} = 1/(8√2)
        let rr = sgc["rr"].as_f64().unwrap();
        assert!((rr - 1.0 / (8.0 * 2f64.sqrt())).abs() < 1e-15);
        assert_eq!(v["winners"][0]["winner"], "tie");
        let wide = calculator_json(r#"{ "n": 4, "l_max": 1.0, "l": 1.0, "mu": 0.1, "rho": 100.0 }"#).unwrap();
        let v: Value = serde_json::from_str(&wide).unwrap();
        assert_eq!(v["winners"][0]["winner"], "rr");
        assert!(calculator_json(r#"{ "n": 0 }"#).is_err());
    }

    #[test]
    fn subset_demo_agrees_with_closed_form() {
        let v: Value = serde_json::from_str(&subset_variance_json(7, 3, 9).unwrap()).unwrap();
        let rows = v["rows"].as_array().unwrap();
        assert_eq!(rows.len(), 7);
        for r in rows {
            let (a, b) = (r["enumerated"].as_f64().unwrap(), r["closed_form"].as_f64().unwrap());
            assert!((a - b).abs() <= 1e-12);
        }
        assert_eq!(rows[6]["closed_form"].as_f64().unwrap(), 0.0);
        assert!(subset_variance_json(13, 2, 0).is_err());
    }
}
