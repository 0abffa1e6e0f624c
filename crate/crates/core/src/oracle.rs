//! Exact enumeration oracles for small `n`: every size-k subset, every epoch
//! ordering. Also central finite differences for gradient checks.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{FiniteSumProblem, ParamVector};
use crate::vecops::{self, CompensatedSum};

/// Hard cap on `n` for permutation enumeration (8! = 40320 epochs).
pub const MAX_PERMUTATION_N: usize = 8;
/// Hard cap on `n` for subset enumeration.
pub const MAX_SUBSET_N: usize = 12;
/// Slack on every lemma inequality.
pub const LEMMA_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnumerationBudget {
    max_n: usize,
    pub tolerance: f64,
}

impl EnumerationBudget {
    pub fn new(max_n: usize, tolerance: f64) -> Result<Self> {
        if max_n > MAX_PERMUTATION_N {
            return Err(Error::BudgetExceeded {
                n: max_n,
                limit: MAX_PERMUTATION_N,
            });
        }
        Ok(EnumerationBudget { max_n, tolerance })
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    fn admit(&self, n: usize) -> Result<()> {
        if n > self.max_n {
            Err(Error::BudgetExceeded {
                n,
                limit: self.max_n,
            })
        } else {
            Ok(())
        }
    }
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        EnumerationBudget {
            max_n: MAX_PERMUTATION_N,
            tolerance: LEMMA_SLACK,
        }
    }
}

/// Exact moments of the mean of a uniformly drawn size-k subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetStats {
    pub n: usize,
    pub k: usize,
    /// `E[X̄_π]` over all `C(n, k)` subsets.
    pub mean_of_means: Vec<f64>,
    /// `E‖X̄_π − X̄‖²` over all subsets.
    pub expected_sq_dev: f64,
    pub population_mean: Vec<f64>,
    /// `(1/n)Σ‖Xᵢ − X̄‖²`
    pub population_variance: f64,
    /// `(n−k)/(k(n−1))·σ²` (zero when `n = 1`).
    pub closed_form: f64,
    /// `max_j |E[X̄_π]_j − X̄_j|`
    pub mean_error: f64,
    /// `|E‖X̄_π − X̄‖² − closed_form|`
    pub variance_error: f64,
}

impl SubsetStats {
    pub fn within(&self, tol: f64) -> bool {
        self.mean_error <= tol && self.variance_error <= tol
    }
}

/// Enumerates all `C(n, k)` subsets of `vectors` and compares against the
/// without-replacement sampling identities.
pub fn without_replacement_stats(vectors: &[ParamVector], k: usize) -> Result<SubsetStats> {
    let n = vectors.len();
    if n == 0 || k == 0 || k > n {
        return Err(Error::InvalidInput(format!(
            "need 1 ≤ k ≤ n, got k = {k}, n = {n}"
        )));
    }
    if n > MAX_SUBSET_N {
        return Err(Error::BudgetExceeded {
            n,
            limit: MAX_SUBSET_N,
        });
    }
    let d = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: v.len(),
        });
    }

    let mut pop_mean = vec![0.0; d];
    for v in vectors {
        vecops::axpy(1.0 / n as f64, v.as_slice(), &mut pop_mean);
    }
    let mut var = CompensatedSum::default();
    for v in vectors {
        var.add(vecops::dist_sq(v.as_slice(), &pop_mean) / n as f64);
    }
    let population_variance = var.value();

    let mut mean_acc: Vec<CompensatedSum> = vec![CompensatedSum::default(); d];
    let mut dev_acc = CompensatedSum::default();
    let mut count = 0usize;
    let mut sub_mean = vec![0.0; d];
    for subset in (0..n).combinations(k) {
        sub_mean.iter_mut().for_each(|v| *v = 0.0);
        for &i in &subset {
            vecops::axpy(1.0 / k as f64, vectors[i].as_slice(), &mut sub_mean);
        }
        for (acc, v) in mean_acc.iter_mut().zip(&sub_mean) {
            acc.add(*v);
        }
        dev_acc.add(vecops::dist_sq(&sub_mean, &pop_mean));
        count += 1;
    }
    let mean_of_means: Vec<f64> = mean_acc.iter().map(|a| a.value() / count as f64).collect();
    let expected_sq_dev = dev_acc.value() / count as f64;
    let closed_form = if n == 1 {
        0.0
    } else {
        (n - k) as f64 / (k * (n - 1)) as f64 * population_variance
    };
    let mean_error = mean_of_means
        .iter()
        .zip(&pop_mean)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(SubsetStats {
        n,
        k,
        mean_of_means,
        expected_sq_dev,
        population_mean: pop_mean,
        population_variance,
        closed_form,
        mean_error,
        variance_error: (expected_sq_dev - closed_form).abs(),
    })
}

/// One epoch from `x0` along a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochPath {
    /// `Σ_{i=0}^{n−1} ‖x_i − x_0‖²`
    pub deviation: f64,
    /// `Σ_{i=0}^{n} ‖x_i − x_0‖²`
    pub deviation_with_end: f64,
    pub final_loss: f64,
    pub final_x: Vec<f64>,
}

fn check_order(problem: &FiniteSumProblem, x0: &ParamVector, order: &[usize]) -> Result<()> {
    if x0.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: x0.len(),
        });
    }
    let n = problem.n();
    let mut seen = vec![false; n];
    if order.len() != n || !order.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true)) {
        return Err(Error::InvalidInput("order must be a permutation of 0..n".into()));
    }
    Ok(())
}

fn walk(problem: &FiniteSumProblem, x0: &[f64], eta: f64, order: &[usize]) -> EpochPath {
    let mut x = x0.to_vec();
    let mut deviation = 0.0;
    let last = order.len() - 1;
    for (j, &i) in order.iter().enumerate() {
        problem.step(&mut x, i, eta);
        if j < last {
            deviation += vecops::dist_sq(&x, x0);
        }
    }
    let end = vecops::dist_sq(&x, x0);
    EpochPath {
        deviation,
        deviation_with_end: deviation + end,
        final_loss: problem.mean_loss(&x),
        final_x: x,
    }
}

/// Deviation and end point of one epoch in the given order.
pub fn deviation_for_order(
    problem: &FiniteSumProblem,
    x0: &ParamVector,
    eta: f64,
    order: &[usize],
) -> Result<EpochPath> {
    check_order(problem, x0, order)?;
    Ok(walk(problem, x0.as_slice(), eta, order))
}

/// Statistics over all `n!` epoch orderings from one start point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationSweep {
    pub count: usize,
    pub mean_deviation: f64,
    pub min_deviation: f64,
    pub max_deviation: f64,
    pub mean_final_loss: f64,
}

/// Walks every ordering. Per-order results are collected in lexicographic
/// order and summed sequentially, so the means are bit-reproducible.
pub fn enumerate_epochs(
    problem: &FiniteSumProblem,
    x0: &ParamVector,
    eta: f64,
    budget: &EnumerationBudget,
) -> Result<PermutationSweep> {
    let n = problem.n();
    budget.admit(n)?;
    check_order(problem, x0, &(0..n).collect::<Vec<_>>())?;
    let orders: Vec<Vec<usize>> = (0..n).permutations(n).collect();
    let run = |o: &Vec<usize>| {
        let p = walk(problem, x0.as_slice(), eta, o);
        (p.deviation, p.final_loss)
    };
    #[cfg(feature = "parallel")]
    let results: Vec<(f64, f64)> = {
        use rayon::prelude::*;
        orders.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<(f64, f64)> = orders.iter().map(run).collect();

    let mut dev = CompensatedSum::default();
    let mut loss = CompensatedSum::default();
    let mut min_deviation = f64::INFINITY;
    let mut max_deviation = f64::NEG_INFINITY;
    for &(d, l) in &results {
        dev.add(d);
        loss.add(l);
        min_deviation = min_deviation.min(d);
        max_deviation = max_deviation.max(d);
    }
    let count = results.len() as f64;
    Ok(PermutationSweep {
        count: results.len(),
        mean_deviation: dev.value() / count,
        min_deviation,
        max_deviation,
        mean_final_loss: loss.value() / count,
    })
}

/// `E[Σ_{i=0}^{n−1} ‖x_i − x_0‖²]` over a uniformly random epoch ordering.
pub fn exact_rr_deviation(
    problem: &FiniteSumProblem,
    x0: &ParamVector,
    eta: f64,
    budget: &EnumerationBudget,
) -> Result<f64> {
    Ok(enumerate_epochs(problem, x0, eta, budget)?.mean_deviation)
}

/// `E[f(x_n)]` after one random-reshuffling epoch from `x0`.
pub fn exact_rr_epoch_expectation(
    problem: &FiniteSumProblem,
    x0: &ParamVector,
    eta: f64,
    budget: &EnumerationBudget,
) -> Result<f64> {
    Ok(enumerate_epochs(problem, x0, eta, budget)?.mean_final_loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaStatus {
    Pass,
    Fail,
    /// The step size is outside the range the inequality is stated for.
    PreconditionViolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaOutcome {
    pub lemma: String,
    pub status: LemmaStatus,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`
    pub slack: f64,
    pub eta: f64,
    pub eta_max: f64,
    pub instance: String,
}

impl LemmaOutcome {
    fn build(lemma: &str, eta: f64, eta_max: f64, lhs: f64, rhs: f64, tol: f64) -> Self {
        let status = if eta > eta_max * (1.0 + 1e-12) {
            LemmaStatus::PreconditionViolated
        } else if lhs <= rhs + tol {
            LemmaStatus::Pass
        } else {
            LemmaStatus::Fail
        };
        LemmaOutcome {
            lemma: lemma.into(),
            status,
            lhs,
            rhs,
            slack: rhs - lhs,
            eta,
            eta_max,
            instance: String::new(),
        }
    }

    pub fn with_instance(mut self, instance: impl Into<String>) -> Self {
        self.instance = instance.into();
        self
    }
}

/// Constants the lemma right-hand sides need.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaConstants {
    pub l: f64,
    pub l_max: f64,
    pub rho: f64,
    pub sigma: f64,
}

/// Random-reshuffling deviation bound, checked exactly over all orderings:
/// `E[Σ‖x_i − x_0‖²] ≤ 2η²n²(ρ + n)‖∇f(x_0)‖² + 2η²n²σ²` for `η ≤ 1/(√3 nL_max)`.
pub fn check_rr_deviation_bound(
    problem: &FiniteSumProblem,
    x0: &ParamVector,
    eta: f64,
    k: &LemmaConstants,
    budget: &EnumerationBudget,
) -> Result<LemmaOutcome> {
    let n = problem.n() as f64;
    let eta_max = 1.0 / (3f64.sqrt() * n * k.l_max);
    let g2 = vecops::norm_sq(&problem.mean_grad(x0.as_slice()));
    let lhs = exact_rr_deviation(problem, x0, eta, budget)?;
    let rhs = 2.0 * eta * eta * n * n * ((k.rho + n) * g2 + k.sigma * k.sigma);
    Ok(LemmaOutcome::build("rr_deviation", eta, eta_max, lhs, rhs, budget.tolerance))
}

/// Incremental-gradient deviation bound for one fixed order:
/// `Σ‖x_i − x_0‖² ≤ 2η²n³ρ‖∇f(x_0)‖² + 2η²n³σ²` for `η ≤ 1/(√2 nL_max)`.
pub fn check_ig_deviation_bound(
    problem: &FiniteSumProblem,
    x0: &ParamVector,
    eta: f64,
    order: &[usize],
    k: &LemmaConstants,
    tol: f64,
) -> Result<LemmaOutcome> {
    let n = problem.n() as f64;
    let eta_max = 1.0 / (std::f64::consts::SQRT_2 * n * k.l_max);
    let g2 = vecops::norm_sq(&problem.mean_grad(x0.as_slice()));
    let lhs = deviation_for_order(problem, x0, eta, order)?.deviation;
    let rhs = 2.0 * eta * eta * n * n * n * (k.rho * g2 + k.sigma * k.sigma);
    Ok(LemmaOutcome::build("ig_deviation", eta, eta_max, lhs, rhs, tol))
}

/// Epoch descent along any order, for `η ≤ 1/(nL)`:
/// `f(x_n) ≤ f(x_0) − (nη/2)‖∇f(x_0)‖² + (L_max²η/2)Σ_{i=0}^{n}‖x_i − x_0‖²`.
pub fn check_epoch_descent(
    problem: &FiniteSumProblem,
    x0: &ParamVector,
    eta: f64,
    order: &[usize],
    k: &LemmaConstants,
    tol: f64,
) -> Result<LemmaOutcome> {
    let n = problem.n() as f64;
    let eta_max = 1.0 / (n * k.l);
    let f0 = problem.mean_loss(x0.as_slice());
    let g2 = vecops::norm_sq(&problem.mean_grad(x0.as_slice()));
    let path = deviation_for_order(problem, x0, eta, order)?;
    let rhs = f0 - 0.5 * n * eta * g2 + 0.5 * k.l_max * k.l_max * eta * path.deviation_with_end;
    Ok(LemmaOutcome::build("epoch_descent", eta, eta_max, path.final_loss, rhs, tol))
}

/// One exact random-reshuffling epoch against the per-epoch recursion
/// `E[f(x_n)] − f* ≤ (1 − nμη/4)(f(x_0) − f*) + L_max²η³n²σ²`,
/// valid for `η ≤ min{1/(2nL_max), 1/(2√2 L_max√(nρ))}`.
pub fn check_rr_epoch_recursion(
    problem: &FiniteSumProblem,
    x0: &ParamVector,
    eta: f64,
    k: &LemmaConstants,
    mu: f64,
    f_star: f64,
    budget: &EnumerationBudget,
) -> Result<LemmaOutcome> {
    let n = problem.n() as f64;
    let eta_max = f64::min(
        1.0 / (2.0 * n * k.l_max),
        1.0 / (2.0 * std::f64::consts::SQRT_2 * k.l_max * (n * k.rho).sqrt()),
    );
    let f0 = problem.mean_loss(x0.as_slice());
    let lhs = exact_rr_epoch_expectation(problem, x0, eta, budget)?;
    let rhs = (1.0 - n * mu * eta / 4.0) * (f0 - f_star)
        + f_star
        + k.l_max * k.l_max * eta.powi(3) * n * n * k.sigma * k.sigma;
    Ok(LemmaOutcome::build("rr_epoch_recursion", eta, eta_max, lhs, rhs, budget.tolerance))
}

/// Central differences of `f(·; i)` at `x`.
pub fn fd_gradient(problem: &FiniteSumProblem, x: &ParamVector, i: usize, h: f64) -> Result<ParamVector> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("step h must be positive, got {h}")));
    }
    if i >= problem.n() {
        return Err(Error::IndexOutOfRange { index: i, n: problem.n() });
    }
    if x.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: x.len(),
        });
    }
    let mut probe = x.as_slice().to_vec();
    let mut g = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let orig = probe[j];
        probe[j] = orig + h;
        let up = problem.sample_loss(&probe, i);
        probe[j] = orig - h;
        let down = problem.sample_loss(&probe, i);
        probe[j] = orig;
        g.push((up - down) / (2.0 * h));
    }
    ParamVector::new(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub model: String,
    pub evaluated: usize,
    /// Largest `‖g_fd − g‖∞ / max(1, ‖g‖∞)`.
    pub max_rel_error: f64,
}

impl GradientCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Finite differences against the analytic gradient at each probe, for every sample.
pub fn gradient_check(problem: &FiniteSumProblem, probes: &[ParamVector], h: f64) -> Result<GradientCheck> {
    let mut worst: f64 = 0.0;
    let mut evaluated = 0;
    for x in probes {
        for i in 0..problem.n() {
            let fd = fd_gradient(problem, x, i, h)?;
            let g = problem.grad_at(x, i)?;
            let scale = g.as_slice().iter().fold(1.0_f64, |m, v| m.max(v.abs()));
            let err = fd
                .as_slice()
                .iter()
                .zip(g.as_slice())
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            worst = worst.max(err / scale);
            evaluated += 1;
        }
    }
    Ok(GradientCheck {
        model: problem.loss_model().name().into(),
        evaluated,
        max_rel_error: worst,
    })
}
