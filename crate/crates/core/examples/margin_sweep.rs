//! Best train loss of SGD, RR and IG across separation margins.
//!
//! `cargo run --release --example margin_sweep -- [d] [lambda] [epochs] [data_seed]`
//! Defaults: 20, 1e-3, 100, 1.

use rrlab::experiment::{run_experiment, DatasetSpec, EtaRule, EtaSpec, ExperimentConfig, RunnerOptions};
use rrlab::optim::{GrowthCondition, SchemeKind};
use rrlab::LossModel;

fn arg<T: std::str::FromStr>(args: &[String], i: usize, default: T) -> T {
    args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> Result<(), rrlab::Error> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let d = arg(&args, 0, 20usize);
    let lambda = arg(&args, 1, 1e-3);
    let epochs = arg(&args, 2, 100usize);
    let data_seed = arg(&args, 3, 1u64);
    println!("tau,sgd,rr,ig,rr_minus_sgd,rr_minus_ig");
    for tau in [0.02, 0.05, 0.1, 0.3] {
        let cfg = ExperimentConfig {
            dataset: DatasetSpec::Separable { n: 200, d, margin: tau, seed: data_seed },
            loss: if lambda > 0.0 { LossModel::SquaredHingeL2 { lambda } } else { LossModel::SquaredHinge },
            rbf_bandwidth: None,
            label_noise: None,
            schemes: vec![SchemeKind::Sgd, SchemeKind::Rr, SchemeKind::Ig],
            eta: EtaSpec::Rule(EtaRule::Grid),
            condition: GrowthCondition::Sgc,
            epochs,
            seeds: (1..=20).collect(),
            x0: None,
            outputs: None,
        };
        let s = run_experiment(&cfg, &RunnerOptions::default())?.summary;
        let best = |k| s.scheme(k).map_or(f64::NAN, |r| r.min_train_loss);
        println!(
            "{tau},{:.6e},{:.6e},{:.6e},{:+.3e},{:+.3e}",
            best(SchemeKind::Sgd),
            best(SchemeKind::Rr),
            best(SchemeKind::Ig),
            s.rr_minus_sgd.unwrap_or(f64::NAN),
            s.rr_minus_ig.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
