//! Probe-based estimates of the growth and PL constants, plus consistency
//! checks between constants.
//!
//! The growth conditions quantify over every `x`, which no finite probe set
//! can cover. So `ρ̂`, `α̂` and `σ̂` are lower bounds on the true constants and
//! `μ̂` is an upper bound on the true PL constant.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::unit_ball;
use crate::error::{Error, Result};
use crate::optim::RunRecord;
use crate::problem::{
    analytic_constants, least_squares_optimum, FiniteSumProblem, GrowthTerms, LossModel,
    ParamVector, ProblemConstants, Provenance,
};
use crate::vecops;

pub use crate::problem::{Constant, ConstantField};

/// Probes whose denominator falls below this are skipped.
pub const EXCLUSION_THRESHOLD: f64 = 1e-12;
pub const DEFAULT_PROBE_COUNT: usize = 100;
pub const DEFAULT_PROBE_RADIUS: f64 = 10.0;
/// Slack used by [`certify_relations`] and the probe-level checks.
pub const RELATION_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeSource {
    RandomBall { radius: f64, seed: u64 },
    Trajectory,
    Mixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbePointSet {
    points: Vec<ParamVector>,
    source: ProbeSource,
}

impl ProbePointSet {
    pub fn new(points: Vec<ParamVector>, source: ProbeSource) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Estimation("probe set is empty".into()));
        }
        Ok(ProbePointSet { points, source })
    }

    /// `count` points uniform in the ball of `radius` around the origin.
    pub fn random_ball(dim: usize, count: usize, radius: f64, seed: u64) -> Result<Self> {
        if dim == 0 || !(radius > 0.0) {
            return Err(Error::InvalidInput(
                "probe ball needs dim ≥ 1 and a positive radius".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..count)
            .map(|_| {
                let mut v = unit_ball(&mut rng, dim);
                v.iter_mut().for_each(|x| *x *= radius);
                ParamVector::new(v)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(points, ProbeSource::RandomBall { radius, seed })
    }

    /// Same as [`random_ball`](Self::random_ball) but centred at `center`.
    pub fn ball_around(center: &ParamVector, count: usize, radius: f64, seed: u64) -> Result<Self> {
        let mut set = Self::random_ball(center.len(), count, radius, seed)?;
        for p in set.points.iter_mut() {
            let mut v = p.as_slice().to_vec();
            vecops::axpy(1.0, center.as_slice(), &mut v);
            *p = ParamVector::new(v)?;
        }
        Ok(set)
    }

    /// Epoch-start iterates of a run recorded with `record_epoch_starts`.
    pub fn trajectory(record: &RunRecord) -> Result<Self> {
        let starts = record.epoch_starts.as_ref().ok_or_else(|| {
            Error::Estimation("run was recorded without epoch starts".into())
        })?;
        Self::new(starts.clone(), ProbeSource::Trajectory)
    }

    /// Union of two sets.
    pub fn mixed(a: ProbePointSet, b: ProbePointSet) -> Self {
        let mut points = a.points;
        points.extend(b.points);
        ProbePointSet {
            points,
            source: ProbeSource::Mixed,
        }
    }

    pub fn push(&mut self, p: ParamVector) {
        self.points.push(p);
    }

    pub fn points(&self) -> &[ParamVector] {
        &self.points
    }

    pub fn source(&self) -> &ProbeSource {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Loss, full-gradient norm and mean per-sample gradient norm at every probe.
pub fn probe_terms(problem: &FiniteSumProblem, probes: &ProbePointSet) -> Result<Vec<GrowthTerms>> {
    for p in probes.points() {
        if p.len() != problem.dim() {
            return Err(Error::DimensionMismatch {
                expected: problem.dim(),
                got: p.len(),
            });
        }
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        Ok(probes
            .points()
            .par_iter()
            .map(|x| problem.growth_terms_raw(x.as_slice()))
            .collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        Ok(probes
            .points()
            .iter()
            .map(|x| problem.growth_terms_raw(x.as_slice()))
            .collect())
    }
}

fn reduce_ratio(
    terms: &[GrowthTerms],
    num: impl Fn(&GrowthTerms) -> f64,
    den: impl Fn(&GrowthTerms) -> f64,
    pick: fn(f64, f64) -> f64,
    start: f64,
    what: &str,
) -> Result<f64> {
    let mut kept = 0usize;
    let mut best = start;
    for t in terms {
        let d = den(t);
        if d >= EXCLUSION_THRESHOLD {
            kept += 1;
            best = pick(best, num(t) / d);
        }
    }
    if kept == 0 {
        return Err(Error::Estimation(format!(
            "every probe was excluded while estimating {what}"
        )));
    }
    Ok(best)
}

/// Largest observed `[(1/n)Σ‖∇f(x;i)‖²] / ‖∇f(x)‖²`. A lower bound on ρ.
pub fn estimate_rho(problem: &FiniteSumProblem, probes: &ProbePointSet) -> Result<f64> {
    let terms = probe_terms(problem, probes)?;
    reduce_ratio(
        &terms,
        |t| t.mean_sq_grad,
        |t| t.grad_norm_sq,
        f64::max,
        f64::NEG_INFINITY,
        "rho",
    )
}

/// Largest observed `[(1/n)Σ‖∇f(x;i)‖²] / (2L(f(x) − f*))`. A lower bound on α.
pub fn estimate_alpha(
    problem: &FiniteSumProblem,
    probes: &ProbePointSet,
    f_star: f64,
    l: f64,
) -> Result<f64> {
    if !(l > 0.0) {
        return Err(Error::InvalidInput("alpha estimation needs L > 0".into()));
    }
    let terms = probe_terms(problem, probes)?;
    reduce_ratio(
        &terms,
        |t| t.mean_sq_grad / (2.0 * l),
        |t| t.loss - f_star,
        f64::max,
        f64::NEG_INFINITY,
        "alpha",
    )
}

/// Smallest observed `‖∇f(x)‖² / (2(f(x) − f*))`. An upper bound on μ.
pub fn estimate_mu(problem: &FiniteSumProblem, probes: &ProbePointSet, f_star: f64) -> Result<f64> {
    let terms = probe_terms(problem, probes)?;
    reduce_ratio(
        &terms,
        |t| t.grad_norm_sq / 2.0,
        |t| t.loss - f_star,
        f64::min,
        f64::INFINITY,
        "mu",
    )
}

/// Growth bound paired with `σ²` in the relaxed conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "condition", rename_all = "snake_case")]
pub enum GrowthBound {
    Strong { rho: f64 },
    Weak { alpha: f64, l: f64, f_star: f64 },
}

impl GrowthBound {
    fn term(&self, t: &GrowthTerms) -> f64 {
        match *self {
            GrowthBound::Strong { rho } => rho * t.grad_norm_sq,
            GrowthBound::Weak { alpha, l, f_star } => 2.0 * alpha * l * (t.loss - f_star),
        }
    }
}

/// `√max(0, (1/n)Σ‖∇f(x;i)‖² − bound)` over the probes. A lower bound on σ.
pub fn estimate_sigma(
    problem: &FiniteSumProblem,
    probes: &ProbePointSet,
    bound: GrowthBound,
) -> Result<f64> {
    let terms = probe_terms(problem, probes)?;
    let excess = terms
        .iter()
        .map(|t| t.mean_sq_grad - bound.term(t))
        .filter(|v| !v.is_nan())
        .fold(0.0_f64, f64::max);
    Ok(excess.sqrt())
}

/// How `f*` was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FStarMethod {
    /// Interpolating loss whose infimum is zero.
    Interpolating,
    /// Closed-form least-squares solve.
    LeastSquares,
    /// Full-batch gradient descent.
    GradientDescent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FStar {
    pub value: f64,
    pub method: FStarMethod,
    /// Gradient descent met its tolerance (always true for the other methods).
    pub converged: bool,
    #[serde(skip)]
    pub minimizer: Option<ParamVector>,
}

pub const GD_TOLERANCE: f64 = 1e-12;
pub const GD_MAX_ITERS: usize = 200_000;

/// Optimal value of the objective.
///
/// Squared hinge without ridge is taken as interpolating (`f* = 0`); least
/// squares is solved directly; everything else runs gradient descent with
/// backtracking until `‖∇f‖ ≤ 1e-12` or the iteration cap.
pub fn f_star(problem: &FiniteSumProblem) -> Result<FStar> {
    match problem.loss_model().scalar_loss() {
        LossModel::SquaredHinge => Ok(FStar {
            value: 0.0,
            method: FStarMethod::Interpolating,
            converged: true,
            minimizer: None,
        }),
        LossModel::LeastSquares => {
            let opt = least_squares_optimum(problem)?;
            Ok(FStar {
                value: if opt.consistent { 0.0 } else { opt.f_star },
                method: if opt.consistent {
                    FStarMethod::Interpolating
                } else {
                    FStarMethod::LeastSquares
                },
                converged: true,
                minimizer: Some(opt.x),
            })
        }
        _ => gradient_descent_f_star(problem),
    }
}

fn gradient_descent_f_star(problem: &FiniteSumProblem) -> Result<FStar> {
    // A known L gives a fixed 1/L step, which keeps reducing the gradient
    // after loss differences drop below rounding; otherwise backtrack.
    let fixed = analytic_constants(problem)
        .ok()
        .and_then(|c| c.l.map(|l| 1.0 / l.value));
    let mut step = fixed.unwrap_or(1.0);
    let mut x = vec![0.0; problem.dim()];
    let mut f = problem.mean_loss(&x);
    let mut converged = false;
    let mut trial = vec![0.0; problem.dim()];
    for _ in 0..GD_MAX_ITERS {
        let g = problem.mean_grad(&x);
        let g2 = vecops::norm_sq(&g);
        if g2.sqrt() <= GD_TOLERANCE {
            converged = true;
            break;
        }
        if fixed.is_some() {
            vecops::axpy(-step, &g, &mut x);
            continue;
        }
        loop {
            trial.copy_from_slice(&x);
            vecops::axpy(-step, &g, &mut trial);
            let ft = problem.mean_loss(&trial);
            if ft <= f - 0.5 * step * g2 {
                std::mem::swap(&mut x, &mut trial);
                f = ft;
                step *= 2.0;
                break;
            }
            step *= 0.5;
            if step < 1e-300 {
                break;
            }
        }
        if step < 1e-300 {
            break;
        }
    }
    Ok(FStar {
        value: problem.mean_loss(&x),
        method: FStarMethod::GradientDescent,
        converged,
        minimizer: Some(ParamVector::new(x)?),
    })
}

/// Exact relaxed-SGC noise of a least-squares problem for a given `ρ`.
#[derive(Debug, Clone)]
pub struct LeastSquaresNoise {
    pub sigma_sq: f64,
    /// Point attaining the supremum of `(1/n)Σ‖∇f(x;i)‖² − ρ‖∇f(x)‖²`.
    pub maximizer: ParamVector,
}

/// `σ²(ρ) = sup_x (1/n)Σ‖∇f(x;i)‖² − ρ‖∇f(x)‖²` for full-column-rank least squares.
///
/// With `x = x̂ + e` around the least-squares solution and residual `v`, the
/// objective is the concave quadratic `c + 2bᵀe − eᵀ(ρH² − M)e` with
/// `H = AᵀA/n`, `M = AᵀDA/n`, `D = diag(‖aᵢ‖²)`, `b = AᵀDv/n`, `c = vᵀDv/n`.
/// Fails if `ρH² − M` is not positive definite (the supremum is infinite).
pub fn least_squares_noise_sigma(problem: &FiniteSumProblem, rho: f64) -> Result<LeastSquaresNoise> {
    if !matches!(problem.loss_model(), LossModel::LeastSquares) {
        return Err(Error::AnalyticUnavailable(problem.loss_model().name()));
    }
    let n = problem.n() as f64;
    let a = DMatrix::from_row_slice(problem.n(), problem.dim(), problem.feature_matrix());
    let opt = least_squares_optimum(problem)?;
    let x_hat = DVector::from_column_slice(opt.x.as_slice());
    let y = DVector::from_column_slice(problem.labels());
    let v = &a * &x_hat - y;
    let dn = DVector::from_fn(problem.n(), |i, _| problem.feature_norm_sq(i));
    let dv = v.component_mul(&dn);
    let c = v.dot(&dv) / n;
    let b = a.transpose() * &dv / n;
    let h = a.transpose() * &a / n;
    let mut da = a.clone();
    for (i, mut row) in da.row_iter_mut().enumerate() {
        row *= dn[i];
    }
    let m = a.transpose() * da / n;
    let q = &h * &h * rho - m;
    let q = (&q + q.transpose()) * 0.5;
    let chol = q.cholesky().ok_or_else(|| {
        Error::Estimation(format!(
            "ρ = {rho} is below the growth constant; the noise supremum is unbounded"
        ))
    })?;
    let e = chol.solve(&b);
    let sigma_sq = (c + b.dot(&e)).max(0.0);
    let maximizer = ParamVector::new((x_hat + e).iter().cloned().collect())?;
    Ok(LeastSquaresNoise {
        sigma_sq,
        maximizer,
    })
}

/// Direction in which a reported value may differ from the true constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSide {
    Exact,
    /// True value ≥ reported value.
    Lower,
    /// True value ≤ reported value.
    Upper,
    Unknown,
}

impl BoundSide {
    fn of(field: ConstantField, provenance: Provenance) -> Self {
        match provenance {
            Provenance::Analytic | Provenance::Declared => BoundSide::Exact,
            Provenance::Estimated => match field {
                ConstantField::Mu => BoundSide::Upper,
                ConstantField::Tau => BoundSide::Unknown,
                _ => BoundSide::Lower,
            },
        }
    }

    fn flip(self) -> Self {
        match self {
            BoundSide::Lower => BoundSide::Upper,
            BoundSide::Upper => BoundSide::Lower,
            s => s,
        }
    }

    /// Side of a product of two positive quantities.
    fn times(self, other: Self) -> Self {
        match (self, other) {
            (BoundSide::Exact, s) | (s, BoundSide::Exact) => s,
            (a, b) if a == b => a,
            _ => BoundSide::Unknown,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationStatus {
    Pass,
    Fail,
    /// The bound directions cannot falsify the relation.
    Unverifiable,
    /// A field is missing.
    NotChecked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationCheck {
    pub relation: String,
    pub status: RelationStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lhs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rhs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationReport {
    pub checks: Vec<RelationCheck>,
}

impl RelationReport {
    pub fn status(&self, relation: &str) -> Option<RelationStatus> {
        self.checks
            .iter()
            .find(|c| c.relation == relation)
            .map(|c| c.status)
    }

    pub fn any_failed(&self) -> bool {
        self.checks.iter().any(|c| c.status == RelationStatus::Fail)
    }
}

type Term = (f64, BoundSide);

fn term(c: &ProblemConstants, field: ConstantField) -> Option<Term> {
    c.get(field)
        .map(|k| (k.value, BoundSide::of(field, k.provenance)))
}

fn mul(a: Term, b: Term) -> Term {
    (a.0 * b.0, a.1.times(b.1))
}

fn div(a: Term, b: Term) -> Term {
    (a.0 / b.0, a.1.times(b.1.flip()))
}

/// `lhs ≤ rhs` within slack. A violation is only conclusive when the true
/// lhs is at least the reported one and the true rhs at most the reported one.
fn compare(name: &str, lhs: Option<Term>, rhs: Option<Term>) -> RelationCheck {
    let (Some(l), Some(r)) = (lhs, rhs) else {
        return RelationCheck {
            relation: name.into(),
            status: RelationStatus::NotChecked,
            lhs: lhs.map(|t| t.0),
            rhs: rhs.map(|t| t.0),
        };
    };
    let holds = l.0 <= r.0 + RELATION_SLACK * (1.0 + r.0.abs());
    let falsifiable = matches!(l.1, BoundSide::Exact | BoundSide::Lower)
        && matches!(r.1, BoundSide::Exact | BoundSide::Upper);
    let status = match (falsifiable, holds) {
        (true, true) => RelationStatus::Pass,
        (true, false) => RelationStatus::Fail,
        (false, _) => RelationStatus::Unverifiable,
    };
    RelationCheck {
        relation: name.into(),
        status,
        lhs: Some(l.0),
        rhs: Some(r.0),
    }
}

pub const REL_L_LE_LMAX: &str = "L <= L_max";
pub const REL_ALPHA_LE_RHO: &str = "alpha <= rho";
pub const REL_MU_OVER_L_LE_ALPHA: &str = "mu/L <= alpha";
pub const REL_RHO_LE_ALPHA_L_OVER_MU: &str = "rho <= alpha*L/mu";
pub const REL_RHO_LE_N_OVER_TAU_SQ: &str = "rho <= n/tau^2";

/// Checks the relations that must hold between the constants of any problem.
pub fn certify_relations(c: &ProblemConstants) -> RelationReport {
    use ConstantField as F;
    let l = term(c, F::L);
    let l_max = term(c, F::LMax);
    let mu = term(c, F::Mu);
    let rho = term(c, F::Rho);
    let alpha = term(c, F::Alpha);
    let tau = term(c, F::Tau);
    let n = (c.n as f64, BoundSide::Exact);

    let mu_over_l = mu.zip(l).map(|(m, l)| div(m, l));
    let alpha_l_over_mu = alpha.zip(l).zip(mu).map(|((a, l), m)| div(mul(a, l), m));
    let n_over_tau_sq = tau.map(|t| div(n, mul(t, t)));

    RelationReport {
        checks: vec![
            compare(REL_L_LE_LMAX, l, l_max),
            compare(REL_ALPHA_LE_RHO, alpha, rho),
            compare(REL_MU_OVER_L_LE_ALPHA, mu_over_l, alpha),
            compare(REL_RHO_LE_ALPHA_L_OVER_MU, rho, alpha_l_over_mu),
            compare(REL_RHO_LE_N_OVER_TAU_SQ, rho, n_over_tau_sq),
        ],
    }
}

/// Outcome of a pointwise inequality evaluated at every probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeCheck {
    pub name: String,
    pub evaluated: usize,
    pub violations: usize,
    /// Largest `lhs − rhs` seen (negative when every probe passes strictly).
    pub max_excess: f64,
}

impl ProbeCheck {
    fn collect(name: &str, pairs: impl Iterator<Item = (f64, f64)>) -> Self {
        let mut out = ProbeCheck {
            name: name.into(),
            evaluated: 0,
            violations: 0,
            max_excess: f64::NEG_INFINITY,
        };
        for (lhs, rhs) in pairs {
            let excess = lhs - rhs;
            out.evaluated += 1;
            if !(excess <= RELATION_SLACK) {
                out.violations += 1;
            }
            out.max_excess = out.max_excess.max(excess);
        }
        out
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Strong growth with `ρ = n/τ²` at every probe with a nonzero gradient.
pub fn check_separable_rho_cap(
    problem: &FiniteSumProblem,
    probes: &ProbePointSet,
    tau: f64,
) -> Result<ProbeCheck> {
    let cap = problem.n() as f64 / (tau * tau);
    let terms = probe_terms(problem, probes)?;
    Ok(ProbeCheck::collect(
        "SGC ratio <= n/tau^2",
        terms
            .iter()
            .filter(|t| t.grad_norm_sq >= EXCLUSION_THRESHOLD)
            .map(|t| (t.mean_sq_grad / t.grad_norm_sq, cap)),
    ))
}

/// Strong growth with `ρ` implies weak growth with `α = ρ`:
/// `(1/n)Σ‖∇f(x;i)‖² ≤ 2Lρ(f(x) − f*)`.
pub fn check_strong_implies_weak(
    problem: &FiniteSumProblem,
    probes: &ProbePointSet,
    rho: f64,
    l: f64,
    f_star: f64,
) -> Result<ProbeCheck> {
    let terms = probe_terms(problem, probes)?;
    Ok(ProbeCheck::collect(
        "mean sq grad <= 2 L rho (f - f*)",
        terms
            .iter()
            .map(|t| (t.mean_sq_grad, 2.0 * l * rho * (t.loss - f_star))),
    ))
}

/// The chain behind `α ≥ μ/L`, term by term:
/// `2μ(f − f*) ≤ ‖∇f‖² ≤ (1/n)Σ‖∇f(x;i)‖² ≤ 2αL(f − f*)`.
pub fn check_weak_growth_chain(
    problem: &FiniteSumProblem,
    probes: &ProbePointSet,
    mu: f64,
    alpha: f64,
    l: f64,
    f_star: f64,
) -> Result<[ProbeCheck; 3]> {
    let terms = probe_terms(problem, probes)?;
    Ok([
        ProbeCheck::collect(
            "2 mu (f - f*) <= |grad f|^2",
            terms
                .iter()
                .map(|t| (2.0 * mu * (t.loss - f_star), t.grad_norm_sq)),
        ),
        ProbeCheck::collect(
            "|grad f|^2 <= mean sq grad",
            terms.iter().map(|t| (t.grad_norm_sq, t.mean_sq_grad)),
        ),
        ProbeCheck::collect(
            "mean sq grad <= 2 alpha L (f - f*)",
            terms
                .iter()
                .map(|t| (t.mean_sq_grad, 2.0 * alpha * l * (t.loss - f_star))),
        ),
    ])
}

/// Estimated constants for problems without a full closed form.
///
/// Analytic values from [`analytic_constants`] are kept; missing `ρ`, `α`
/// and `μ` are filled from probes (random ball plus `extra`).
pub fn estimate_constants(
    problem: &FiniteSumProblem,
    extra: Option<ProbePointSet>,
    seed: u64,
) -> Result<(ProblemConstants, FStar)> {
    let mut c = analytic_constants(problem).unwrap_or_else(|_| ProblemConstants::new(problem.n()));
    let fs = f_star(problem)?;
    let mut probes = ProbePointSet::random_ball(
        problem.dim(),
        DEFAULT_PROBE_COUNT,
        DEFAULT_PROBE_RADIUS,
        seed,
    )?;
    if let Some(extra) = extra {
        probes = ProbePointSet::mixed(probes, extra);
    }
    if c.rho.is_none() {
        if let Ok(r) = estimate_rho(problem, &probes) {
            c = c.with(ConstantField::Rho, Constant::estimated(r));
        }
    }
    if c.mu.is_none() {
        if let Ok(m) = estimate_mu(problem, &probes, fs.value) {
            c = c.with(ConstantField::Mu, Constant::estimated(m));
        }
    }
    if c.alpha.is_none() {
        if let Some(l) = c.l {
            if let Ok(a) = estimate_alpha(problem, &probes, fs.value, l.value) {
                c = c.with(ConstantField::Alpha, Constant::estimated(a));
            }
        }
    }
    Ok((c, fs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_consistent_ls, gen_separable, perturb_labels, SeparableSpec};
    use crate::problem::Sample;
    use approx::assert_relative_eq;

    fn pair() -> FiniteSumProblem {
        FiniteSumProblem::new(
            vec![
                Sample::new(vec![1.0, 0.0], 0.0),
                Sample::new(vec![0.0, 1.0], 0.0),
            ],
            LossModel::LeastSquares,
        )
        .unwrap()
    }

    fn single(x: &[f64]) -> ProbePointSet {
        ProbePointSet::new(
            vec![ParamVector::new(x.to_vec()).unwrap()],
            ProbeSource::Trajectory,
        )
        .unwrap()
    }

    #[test]
    fn rho_by_hand() {
        let r = estimate_rho(&pair(), &single(&[1.0, -1.0])).unwrap();
        assert_relative_eq!(r, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn identical_gradients_give_rho_one() {
        let p = FiniteSumProblem::new(
            vec![Sample::new(vec![0.5, 0.5], 1.0); 4],
            LossModel::LeastSquares,
        )
        .unwrap();
        let probes = ProbePointSet::random_ball(2, 50, 10.0, 3).unwrap();
        assert_relative_eq!(estimate_rho(&p, &probes).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn interpolation_point_is_excluded() {
        let p = pair();
        let probes = single(&[0.0, 0.0]);
        assert!(matches!(estimate_alpha(&p, &probes, 0.0, 0.5), Err(Error::Estimation(_))));
        assert!(matches!(estimate_rho(&p, &probes), Err(Error::Estimation(_))));
    }

    #[test]
    fn single_sample_alpha_at_most_one() {
        let p = FiniteSumProblem::new(
            vec![Sample::new(vec![0.3, -0.7, 0.2], 0.4)],
            LossModel::LeastSquares,
        )
        .unwrap();
        let c = analytic_constants(&p).unwrap();
        let fs = f_star(&p).unwrap();
        let probes = ProbePointSet::random_ball(3, 100, 10.0, 9).unwrap();
        let a = estimate_alpha(&p, &probes, fs.value, c.require_l().unwrap()).unwrap();
        assert!(a <= 1.0 + 1e-9, "alpha = {a}");
    }

    #[test]
    fn mu_of_scalar_quadratic() {
        // f(x) = ½μ₀x² as least squares with a = √μ₀, y = 0
        let mu0: f64 = 0.37;
        let p = FiniteSumProblem::new(
            vec![Sample::new(vec![mu0.sqrt()], 0.0)],
            LossModel::LeastSquares,
        )
        .unwrap();
        let probes = ProbePointSet::random_ball(1, 20, 5.0, 1).unwrap();
        assert_relative_eq!(estimate_mu(&p, &probes, 0.0).unwrap(), mu0, max_relative = 1e-12);
    }

    #[test]
    fn mu_estimate_dominates_analytic() {
        let ds = gen_consistent_ls(30, 5, 4).unwrap();
        let c = analytic_constants(&ds.problem).unwrap();
        let probes = ProbePointSet::random_ball(5, 100, 10.0, 2).unwrap();
        let m = estimate_mu(&ds.problem, &probes, 0.0).unwrap();
        assert!(m >= c.require_mu().unwrap() - 1e-9);
    }

    #[test]
    fn sigma_examples() {
        let ds = gen_consistent_ls(20, 4, 8).unwrap();
        let c = analytic_constants(&ds.problem).unwrap();
        let rho = c.require_rho().unwrap();
        let probes = ProbePointSet::random_ball(4, 100, 10.0, 5).unwrap();
        assert!(estimate_sigma(&ds.problem, &probes, GrowthBound::Strong { rho }).unwrap() < 1e-6);
        let big = GrowthBound::Strong { rho: 1e30 };
        assert_eq!(estimate_sigma(&ds.problem, &probes, big).unwrap(), 0.0);

        // perturbed labels, probed at the old solution
        let noisy = perturb_labels(&ds.problem, 0.1, 1).unwrap();
        let at_truth = ProbePointSet::new(vec![ds.truth.clone()], ProbeSource::Trajectory).unwrap();
        let s = estimate_sigma(&noisy, &at_truth, GrowthBound::Strong { rho: 0.0 }).unwrap();
        let direct = noisy.mean_sq_grad(ds.truth.as_slice());
        assert!(s > 0.0);
        assert_relative_eq!(s * s, direct, max_relative = 1e-12);
    }

    #[test]
    fn exact_noise_dominates_probes() {
        let ds = gen_consistent_ls(15, 3, 21).unwrap();
        let rho0 = analytic_constants(&ds.problem).unwrap().require_rho().unwrap();
        let noisy = perturb_labels(&ds.problem, 0.2, 4).unwrap();
        let rho = 2.0 * rho0;
        let exact = least_squares_noise_sigma(&noisy, rho).unwrap();
        let mut probes = ProbePointSet::random_ball(3, 200, 3.0, 6).unwrap();
        let probed = estimate_sigma(&noisy, &probes, GrowthBound::Strong { rho }).unwrap();
        assert!(probed * probed <= exact.sigma_sq * (1.0 + 1e-9));
        probes.push(exact.maximizer.clone());
        let with_max = estimate_sigma(&noisy, &probes, GrowthBound::Strong { rho }).unwrap();
        assert_relative_eq!(with_max * with_max, exact.sigma_sq, max_relative = 1e-8);
        assert!(least_squares_noise_sigma(&noisy, 0.5 * rho0).is_err());
    }

    #[test]
    fn probes_grow_monotonically() {
        let ds = gen_separable(
            SeparableSpec { n: 30, d: 3, margin: 0.1, seed: 2 },
            LossModel::SquaredHinge,
        )
        .unwrap();
        let a = ProbePointSet::random_ball(3, 30, 10.0, 1).unwrap();
        let b = ProbePointSet::random_ball(3, 30, 10.0, 2).unwrap();
        let ab = ProbePointSet::mixed(a.clone(), b);
        assert!(estimate_rho(&ds.problem, &ab).unwrap() >= estimate_rho(&ds.problem, &a).unwrap());
        assert!(estimate_mu(&ds.problem, &ab, 0.0).unwrap() <= estimate_mu(&ds.problem, &a, 0.0).unwrap());
        assert!(estimate_rho(&ds.problem, &a).unwrap() >= 1.0 - 1e-12);
    }

    #[test]
    fn relations_on_analytic_least_squares() {
        let ds = gen_consistent_ls(12, 4, 3).unwrap();
        let c = analytic_constants(&ds.problem).unwrap();
        let r = certify_relations(&c);
        for rel in [REL_L_LE_LMAX, REL_ALPHA_LE_RHO, REL_MU_OVER_L_LE_ALPHA, REL_RHO_LE_ALPHA_L_OVER_MU] {
            assert_eq!(r.status(rel), Some(RelationStatus::Pass), "{rel}");
        }
        assert_eq!(r.status(REL_RHO_LE_N_OVER_TAU_SQ), Some(RelationStatus::NotChecked));
    }

    #[test]
    fn relation_boundary_and_directions() {
        let c = ProblemConstants::new(3)
            .with(ConstantField::Mu, Constant::declared(0.5))
            .with(ConstantField::L, Constant::declared(2.0))
            .with(ConstantField::Alpha, Constant::declared(0.25));
        assert_eq!(certify_relations(&c).status(REL_MU_OVER_L_LE_ALPHA), Some(RelationStatus::Pass));
        let c = c.with(ConstantField::Alpha, Constant::declared(0.2));
        assert_eq!(certify_relations(&c).status(REL_MU_OVER_L_LE_ALPHA), Some(RelationStatus::Fail));
        // an estimated α is only a lower bound, so a small value proves nothing
        let c = c.with(ConstantField::Alpha, Constant::estimated(0.2));
        assert_eq!(
            certify_relations(&c).status(REL_MU_OVER_L_LE_ALPHA),
            Some(RelationStatus::Unverifiable)
        );
        let c = ProblemConstants::new(100)
            .with(ConstantField::Rho, Constant::estimated(50.0))
            .with(ConstantField::Tau, Constant::analytic(0.1));
        assert_eq!(certify_relations(&c).status(REL_RHO_LE_N_OVER_TAU_SQ), Some(RelationStatus::Pass));
    }

    #[test]
    fn separable_cap_holds() {
        let ds = gen_separable(
            SeparableSpec { n: 40, d: 4, margin: 0.1, seed: 11 },
            LossModel::SquaredHinge,
        )
        .unwrap();
        let probes = ProbePointSet::random_ball(4, 200, 10.0, 0).unwrap();
        let chk = check_separable_rho_cap(&ds.problem, &probes, ds.tau_actual).unwrap();
        assert!(chk.passed(), "{chk:?}");
        assert!(chk.evaluated > 0);
    }

    #[test]
    fn gd_f_star_for_ridge_hinge() {
        let ds = gen_separable(
            SeparableSpec { n: 30, d: 3, margin: 0.05, seed: 7 },
            LossModel::SquaredHingeL2 { lambda: 0.05 },
        )
        .unwrap();
        let fs = f_star(&ds.problem).unwrap();
        assert!(fs.converged);
        assert_eq!(fs.method, FStarMethod::GradientDescent);
        let x = fs.minimizer.unwrap();
        assert!(vecops::norm_sq(&ds.problem.mean_grad(x.as_slice())) < 1e-20);
    }
}
