use rrlab_web::{calculator_json, simulate_json, subset_variance_json};
use serde_json::Value;

#[test]
fn page_default_simulation_fits_the_budget() {
    // The same request the page sends with its initial form values.
    let cfg = r#"{
        "dataset": { "kind": "separable", "n": 100, "d": 10, "margin": 0.1, "seed": 1 },
        "loss": { "model": "squared_hinge_l2", "lambda": 0.001 },
        "schemes": ["sgd", "rr", "ig"],
        "eta": 0.05,
        "epochs": 50,
        "seeds": [1, 2, 3, 4, 5]
    }"#;
    let v: Value = serde_json::from_str(&simulate_json(cfg).unwrap()).unwrap();
    let curves = v["curves"].as_array().unwrap();
    assert_eq!(curves.len(), 3);
    for c in curves {
        let m = c["mean_loss"].as_array().unwrap();
        assert_eq!(m.len(), 51);
        assert!(m[50].as_f64().unwrap() < m[0].as_f64().unwrap());
    }
    assert!(v["rr_minus_sgd"].is_number());
}

#[test]
fn csv_datasets_are_refused() {
    let cfg = r#"{
        "dataset": { "kind": "csv", "path": "x.csv" },
        "loss": { "model": "least_squares" },
        "schemes": ["rr"], "eta": 0.1, "epochs": 1, "seeds": [1]
    }"#;
    assert!(simulate_json(cfg).unwrap_err().to_string().contains("browser"));
}

#[test]
fn calculator_flags_inconsistent_constants() {
    let v: Value = serde_json::from_str(
        &calculator_json(r#"{ "n": 10, "l": 5.0, "l_max": 1.0, "mu": 0.1, "rho": 3 }"#).unwrap(),
    )
    .unwrap();
    let checks = v["relations"]["checks"].as_array().unwrap();
    assert!(checks.iter().any(|c| c["status"] == "fail"));
}

#[test]
fn subset_rows_shrink_with_k() {
    let v: Value = serde_json::from_str(&subset_variance_json(10, 4, 3).unwrap()).unwrap();
    let rows: Vec<f64> = v["rows"].as_array().unwrap().iter().map(|r| r["closed_form"].as_f64().unwrap()).collect();
    assert!(rows.windows(2).all(|w| w[1] <= w[0]));
    assert!((rows[0] - v["variance"].as_f64().unwrap()).abs() < 1e-12);
}
