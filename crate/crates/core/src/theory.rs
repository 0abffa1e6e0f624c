//! Predicted rates: per-epoch contraction factors, noise-ball radii and
//! sample complexities (constants and log factors dropped).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{step_size_ig, step_size_rr, step_size_sgd, GrowthCondition, SchemeKind};
use crate::problem::{Constant, ConstantField, ProblemConstants};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateCondition {
    Sgc,
    Wgc,
    /// Interpolation with invex components: ρ is replaced by `L_max/μ`.
    InterpInvex,
}

impl RateCondition {
    pub const ALL: [RateCondition; 3] = [
        RateCondition::Sgc,
        RateCondition::Wgc,
        RateCondition::InterpInvex,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RateCondition::Sgc => "SGC",
            RateCondition::Wgc => "WGC",
            RateCondition::InterpInvex => "Interp+Invex",
        }
    }
}

impl From<GrowthCondition> for RateCondition {
    fn from(c: GrowthCondition) -> Self {
        match c {
            GrowthCondition::Sgc => RateCondition::Sgc,
            GrowthCondition::Wgc => RateCondition::Wgc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBundle {
    pub scheme: SchemeKind,
    pub condition: RateCondition,
    pub eta: f64,
    /// Per-epoch factor on `f(x) − f*`.
    pub contraction: f64,
    pub noise_ball: f64,
    pub sample_complexity: f64,
}

fn pos(v: Result<f64>) -> Result<f64> {
    let v = v?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidInput(format!("constant must be positive, got {v}")))
    }
}

/// Growth factor `g` entering the step-size rules: `ρ`, `αL/μ` or `L_max/μ`.
fn growth(c: &ProblemConstants, cond: RateCondition) -> Result<f64> {
    match cond {
        RateCondition::Sgc => pos(c.require_rho()),
        RateCondition::Wgc => {
            Ok(pos(c.require_alpha())? * pos(c.require_l())? / pos(c.require_mu())?)
        }
        RateCondition::InterpInvex => Ok(pos(c.require_l_max())? / pos(c.require_mu())?),
    }
}

/// Constants rewritten so the SGC step-size rules apply to `cond`.
fn as_sgc(c: &ProblemConstants, cond: RateCondition) -> Result<ProblemConstants> {
    Ok(c.clone()
        .with(ConstantField::Rho, Constant::declared(growth(c, cond)?)))
}

fn n_of(c: &ProblemConstants) -> Result<f64> {
    if c.n == 0 {
        Err(Error::InsufficientConstants("n"))
    } else {
        Ok(c.n as f64)
    }
}

/// Largest step the corresponding theorem allows.
pub fn theorem_step(c: &ProblemConstants, scheme: SchemeKind, cond: RateCondition) -> Result<f64> {
    let sgc = as_sgc(c, cond)?;
    match scheme {
        SchemeKind::Rr => step_size_rr(&sgc, GrowthCondition::Sgc),
        SchemeKind::Ig => step_size_ig(&sgc, GrowthCondition::Sgc),
        SchemeKind::Sgd => match cond {
            RateCondition::Wgc => step_size_sgd(c),
            // the strong growth condition implies the weak one with α = ρ
            RateCondition::Sgc => step_size_sgd(
                &c.clone()
                    .with(ConstantField::Alpha, Constant::declared(pos(c.require_rho())?)),
            ),
            // invex components give α ≤ L_max/L
            RateCondition::InterpInvex => step_size_sgd(&c.clone().with(
                ConstantField::Alpha,
                Constant::declared(pos(c.require_l_max())? / pos(c.require_l())?),
            )),
        },
    }
}

/// Rate bundle at step `eta` (the theorem step when `None`).
///
/// RR contracts by `1 − nμη/4` per epoch with ball `4L_max²η²nσ²/μ`; IG by
/// `1 − nμη/2` with ball `2L_max²η²n²σ²/μ`; SGD by `(1 − 2μη(1 − L²ηα/(2μ)))ⁿ`
/// per epoch and needs `σ = 0`.
pub fn rate_bundle(
    c: &ProblemConstants,
    scheme: SchemeKind,
    cond: RateCondition,
    eta: Option<f64>,
) -> Result<RateBundle> {
    let eta = match eta {
        Some(e) if e > 0.0 && e.is_finite() => e,
        Some(e) => return Err(Error::InvalidInput(format!("step size must be positive, got {e}"))),
        None => theorem_step(c, scheme, cond)?,
    };
    let n = n_of(c)?;
    let mu = pos(c.require_mu())?;
    let sigma_sq = c.sigma_or_zero().powi(2);
    let (contraction, noise_ball) = match scheme {
        SchemeKind::Rr => {
            let l_max = pos(c.require_l_max())?;
            (
                1.0 - n * mu * eta / 4.0,
                4.0 * l_max * l_max * eta * eta * n * sigma_sq / mu,
            )
        }
        SchemeKind::Ig => {
            let l_max = pos(c.require_l_max())?;
            (
                1.0 - n * mu * eta / 2.0,
                2.0 * l_max * l_max * eta * eta * n * n * sigma_sq / mu,
            )
        }
        SchemeKind::Sgd => {
            if sigma_sq > 0.0 {
                return Err(Error::InvalidInput(
                    "the SGD rate is only available for σ = 0".into(),
                ));
            }
            let l = pos(c.require_l())?;
            let alpha = match cond {
                RateCondition::Wgc => pos(c.require_alpha())?,
                RateCondition::Sgc => pos(c.require_rho())?,
                RateCondition::InterpInvex => pos(c.require_l_max())? / l,
            };
            let per_iter = 1.0 - 2.0 * mu * eta * (1.0 - l * l * eta * alpha / (2.0 * mu));
            (per_iter.powf(n), 0.0)
        }
    };
    Ok(RateBundle {
        scheme,
        condition: cond,
        eta,
        contraction,
        noise_ball,
        sample_complexity: sample_complexity(c, scheme, cond)?,
    })
}

/// `[cᵗ·gap + ball for t = 0..=epochs]`.
pub fn predicted_curve(bundle: &RateBundle, f0_gap: f64, epochs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(epochs + 1);
    let mut factor = 1.0;
    for _ in 0..=epochs {
        out.push(factor * f0_gap + bundle.noise_ball);
        factor *= bundle.contraction;
    }
    out
}

/// Single-sample gradient evaluations to reach accuracy ε, up to constants
/// and logarithms.
///
/// | | SGC | WGC | Interp+Invex |
/// |---|---|---|---|
/// | RR | `κ√n·max(√n, √ρ)` | `κ√n·max(√n, √(αL/μ))` | `κ√n·max(√n, √κ)` |
/// | IG | `κn√ρ` | `κn√(αL/μ)` | `κ^{3/2} n` |
/// | SGD | `ρL/μ` | `αL²/μ²` | `L_max²/μ²` |
///
/// with `κ = L_max/μ`.
pub fn sample_complexity(c: &ProblemConstants, scheme: SchemeKind, cond: RateCondition) -> Result<f64> {
    let n = n_of(c)?;
    let mu = pos(c.require_mu())?;
    let g = growth(c, cond)?;
    match scheme {
        SchemeKind::Rr => {
            let kappa = pos(c.require_l_max())? / mu;
            Ok(kappa * n.sqrt() * n.sqrt().max(g.sqrt()))
        }
        SchemeKind::Ig => {
            let kappa = pos(c.require_l_max())? / mu;
            Ok(kappa * n * g.sqrt())
        }
        SchemeKind::Sgd => match cond {
            RateCondition::Sgc => Ok(g * pos(c.require_l())? / mu),
            RateCondition::Wgc => {
                let l = pos(c.require_l())?;
                Ok(pos(c.require_alpha())? * l * l / (mu * mu))
            }
            RateCondition::InterpInvex => {
                let l_max = pos(c.require_l_max())?;
                Ok(l_max * l_max / (mu * mu))
            }
        },
    }
}

/// Earlier RR analyses used for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceRate {
    /// Interpolation only: `(L_max/μ)²·n`.
    NguyenInterp,
    /// Strong growth: `max{(L_max/μ)n, (L_max/μ²)√n·√(n + ρ − 1)}`.
    NguyenSgc,
}

impl ReferenceRate {
    pub fn as_str(self) -> &'static str {
        match self {
            ReferenceRate::NguyenInterp => "RR-Nguyen-interp",
            ReferenceRate::NguyenSgc => "RR-Nguyen-SGC",
        }
    }
}

pub fn reference_complexity(c: &ProblemConstants, which: ReferenceRate) -> Result<f64> {
    let n = n_of(c)?;
    let mu = pos(c.require_mu())?;
    let l_max = pos(c.require_l_max())?;
    let kappa = l_max / mu;
    match which {
        ReferenceRate::NguyenInterp => Ok(kappa * kappa * n),
        ReferenceRate::NguyenSgc => {
            let rho = pos(c.require_rho())?;
            Ok(f64::max(
                kappa * n,
                l_max / (mu * mu) * n.sqrt() * (n + rho - 1.0).sqrt(),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    Rr,
    Sgd,
    Tie,
}

/// `n` against `ρL²/L_max²` (SGC) or `αL³/(μL_max²)` (WGC). Within a factor
/// of two either way the call is a tie.
pub fn winner_threshold(c: &ProblemConstants, cond: GrowthCondition) -> Result<f64> {
    let l = pos(c.require_l())?;
    let l_max = pos(c.require_l_max())?;
    let ratio = l * l / (l_max * l_max);
    Ok(match cond {
        GrowthCondition::Sgc => pos(c.require_rho())? * ratio,
        GrowthCondition::Wgc => {
            pos(c.require_alpha())? * l / pos(c.require_mu())? * ratio
        }
    })
}

pub fn winner_prediction(c: &ProblemConstants, cond: GrowthCondition) -> Result<Winner> {
    let thr = winner_threshold(c, cond)?;
    let n = n_of(c)?;
    let tol = 1e-12;
    Ok(if n <= 0.5 * thr * (1.0 + tol) {
        Winner::Rr
    } else if n >= 2.0 * thr * (1.0 - tol) {
        Winner::Sgd
    } else {
        Winner::Tie
    })
}

/// First `t` with `cᵗ·gap ≤ ε` (the contraction part of the curve).
pub fn epochs_to_accuracy(contraction: f64, f0_gap: f64, eps: f64) -> Result<usize> {
    if !(eps > 0.0) || !(f0_gap >= 0.0) {
        return Err(Error::InvalidInput("need ε > 0 and a non-negative gap".into()));
    }
    if f0_gap <= eps {
        return Ok(0);
    }
    if !(contraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "contraction {contraction} never reaches ε"
        )));
    }
    if contraction <= 0.0 {
        return Ok(1);
    }
    let guess = ((eps / f0_gap).ln() / contraction.ln()).ceil().max(0.0) as usize;
    let reaches = |t: usize| contraction.powi(t as i32) * f0_gap <= eps;
    let mut t = guess.saturating_sub(2);
    while !reaches(t) {
        t += 1;
    }
    Ok(t)
}

/// Epoch count from the recursion `δ_T ≤ (1 − x)^T δ₀`: `⌈log(δ₀/ε)/x⌉`,
/// with `x` the per-epoch decrease `1 − contraction`.
pub fn lemma_epochs(bundle: &RateBundle, f0_gap: f64, eps: f64) -> f64 {
    ((f0_gap / eps).ln() / (1.0 - bundle.contraction)).ceil()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub scheme: String,
    pub condition: String,
    pub complexity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ball: Option<f64>,
}

/// Every row the constants resolve, plus the reference rates.
pub fn theory_table(c: &ProblemConstants) -> Vec<TheoryRow> {
    let mut rows = Vec::new();
    for cond in RateCondition::ALL {
        for scheme in SchemeKind::ALL {
            if let Ok(complexity) = sample_complexity(c, scheme, cond) {
                let bundle = rate_bundle(c, scheme, cond, None).ok();
                rows.push(TheoryRow {
                    scheme: scheme.as_str().into(),
                    condition: cond.as_str().into(),
                    complexity,
                    contraction: bundle.as_ref().map(|b| b.contraction),
                    ball: bundle.as_ref().map(|b| b.noise_ball),
                });
            }
        }
    }
    for (which, cond) in [
        (ReferenceRate::NguyenInterp, "Interp"),
        (ReferenceRate::NguyenSgc, "SGC"),
    ] {
        if let Ok(complexity) = reference_complexity(c, which) {
            rows.push(TheoryRow {
                scheme: which.as_str().into(),
                condition: cond.into(),
                complexity,
                contraction: None,
                ball: None,
            });
        }
    }
    rows
}

pub fn write_theory_csv<W: Write>(rows: &[TheoryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scheme", "condition", "complexity", "contraction", "ball"])?;
    let opt = |v: Option<f64>| v.map(crate::dataset::format_float).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.scheme.clone(),
            r.condition.clone(),
            crate::dataset::format_float(r.complexity),
            opt(r.contraction),
            opt(r.ball),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn decl(n: usize, pairs: &[(ConstantField, f64)]) -> ProblemConstants {
        pairs.iter().fold(ProblemConstants::new(n), |c, &(f, v)| {
            c.with(f, Constant::declared(v))
        })
    }

    use ConstantField as F;

    #[test]
    fn contractions_at_fixed_eta() {
        let c = decl(4, &[(F::Mu, 1.0), (F::LMax, 1.0), (F::Rho, 2.0)]);
        let rr = rate_bundle(&c, SchemeKind::Rr, RateCondition::Sgc, Some(0.05)).unwrap();
        let ig = rate_bundle(&c, SchemeKind::Ig, RateCondition::Sgc, Some(0.05)).unwrap();
        assert_relative_eq!(rr.contraction, 0.95, epsilon = 1e-15);
        assert_relative_eq!(ig.contraction, 0.9, epsilon = 1e-15);
        assert_eq!(rr.noise_ball, 0.0);
    }

    #[test]
    fn curve_is_geometric() {
        let c = decl(4, &[(F::Mu, 1.0), (F::LMax, 1.0), (F::Rho, 2.0)]);
        let b = rate_bundle(&c, SchemeKind::Ig, RateCondition::Sgc, Some(0.05)).unwrap();
        let curve = predicted_curve(&b, 2.0, 3);
        assert_eq!(curve[0], 2.0);
        assert_relative_eq!(curve[1], 1.8, epsilon = 1e-15);
        assert_relative_eq!(curve[2], 1.62, epsilon = 1e-15);
        assert_relative_eq!(curve[3], 1.458, epsilon = 1e-14);
    }

    #[test]
    fn ball_scales_with_eta_squared() {
        let c = decl(5, &[(F::Mu, 0.3), (F::LMax, 2.0), (F::Rho, 4.0), (F::Sigma, 0.7)]);
        for s in [SchemeKind::Rr, SchemeKind::Ig] {
            let a = rate_bundle(&c, s, RateCondition::Sgc, Some(1e-3)).unwrap();
            let b = rate_bundle(&c, s, RateCondition::Sgc, Some(2e-3)).unwrap();
            assert_eq!(b.noise_ball, 4.0 * a.noise_ball);
        }
    }

    #[test]
    fn complexity_examples() {
        let c = decl(100, &[(F::LMax, 10.0), (F::L, 10.0), (F::Mu, 0.1), (F::Rho, 1e4)]);
        let rr = sample_complexity(&c, SchemeKind::Rr, RateCondition::Sgc).unwrap();
        let sgd = sample_complexity(&c, SchemeKind::Sgd, RateCondition::Sgc).unwrap();
        assert_relative_eq!(rr, 1e5, max_relative = 1e-12);
        assert_relative_eq!(sgd, 1e6, max_relative = 1e-12);

        // ρ = n: RR equals the n-dominated branch
        let c = decl(50, &[(F::LMax, 3.0), (F::Mu, 0.5), (F::Rho, 50.0)]);
        let rr = sample_complexity(&c, SchemeKind::Rr, RateCondition::Sgc).unwrap();
        assert_relative_eq!(rr, 6.0 * 50.0, max_relative = 1e-12);

        let c = decl(1, &[(F::LMax, 3.0), (F::Mu, 0.5), (F::Rho, 9.0)]);
        assert_relative_eq!(sample_complexity(&c, SchemeKind::Rr, RateCondition::Sgc).unwrap(), 18.0);
        assert_relative_eq!(sample_complexity(&c, SchemeKind::Ig, RateCondition::Sgc).unwrap(), 18.0);
    }

    #[test]
    fn wgc_and_invex_rows() {
        let c = decl(
            16,
            &[(F::LMax, 4.0), (F::L, 2.0), (F::Mu, 0.5), (F::Alpha, 25.0)],
        );
        // αL/μ = 100
        assert_relative_eq!(
            sample_complexity(&c, SchemeKind::Rr, RateCondition::Wgc).unwrap(),
            8.0 * 4.0 * 10.0
        );
        assert_relative_eq!(
            sample_complexity(&c, SchemeKind::Ig, RateCondition::Wgc).unwrap(),
            8.0 * 16.0 * 10.0
        );
        assert_relative_eq!(
            sample_complexity(&c, SchemeKind::Sgd, RateCondition::Wgc).unwrap(),
            25.0 * 4.0 / 0.25
        );
        assert_relative_eq!(
            sample_complexity(&c, SchemeKind::Ig, RateCondition::InterpInvex).unwrap(),
            8f64.powf(1.5) * 16.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            sample_complexity(&c, SchemeKind::Sgd, RateCondition::InterpInvex).unwrap(),
            64.0
        );
    }

    #[test]
    fn reference_rates() {
        let c = decl(9, &[(F::LMax, 2.0), (F::Mu, 0.5), (F::Rho, 8.0)]);
        assert_relative_eq!(reference_complexity(&c, ReferenceRate::NguyenInterp).unwrap(), 144.0);
        // max{36, 8·3·4} = 96
        assert_relative_eq!(reference_complexity(&c, ReferenceRate::NguyenSgc).unwrap(), 96.0);
    }

    #[test]
    fn winner_examples() {
        let c = decl(800, &[(F::L, 1.0), (F::LMax, 1.0), (F::Rho, 1e4)]);
        assert_eq!(winner_prediction(&c, GrowthCondition::Sgc).unwrap(), Winner::Rr);
        let c = decl(800, &[(F::L, 1.0), (F::LMax, 1.0), (F::Rho, 800.0)]);
        assert_eq!(winner_prediction(&c, GrowthCondition::Sgc).unwrap(), Winner::Tie);
        for n in [7usize, 100, 1000] {
            let c = decl(n, &[(F::L, 1.0), (F::LMax, 10.0), (F::Rho, 50.0 * n as f64)]);
            assert_eq!(winner_prediction(&c, GrowthCondition::Sgc).unwrap(), Winner::Sgd);
        }
        assert!(winner_prediction(&ProblemConstants::new(3), GrowthCondition::Wgc).is_err());
    }

    #[test]
    fn sgd_bundle_at_theorem_step() {
        let c = decl(1, &[(F::L, 2.0), (F::Mu, 0.5), (F::Alpha, 4.0)]);
        let b = rate_bundle(&c, SchemeKind::Sgd, RateCondition::Wgc, None).unwrap();
        assert_eq!(b.eta, 0.03125);
        assert_relative_eq!(b.contraction, 1.0 - 0.25 / 16.0, epsilon = 1e-15);
        let noisy = c.with(F::Sigma, Constant::declared(0.1));
        assert!(rate_bundle(&noisy, SchemeKind::Sgd, RateCondition::Wgc, None).is_err());
    }

    #[test]
    fn epochs_to_accuracy_is_first_crossing() {
        let t = epochs_to_accuracy(0.5, 1.0, 0.1).unwrap();
        assert_eq!(t, 4);
        assert_eq!(epochs_to_accuracy(0.5, 0.05, 0.1).unwrap(), 0);
        assert!(epochs_to_accuracy(1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn theory_table_csv() {
        let c = decl(10, &[(F::L, 1.0), (F::LMax, 2.0), (F::Mu, 0.1), (F::Rho, 30.0)]);
        let rows = theory_table(&c);
        assert!(rows.iter().any(|r| r.scheme == "RR" && r.condition == "SGC"));
        assert!(rows.iter().all(|r| r.condition != "WGC"));
        let mut buf = Vec::new();
        write_theory_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("scheme,condition,complexity,contraction,ball\n"));
    }
}
