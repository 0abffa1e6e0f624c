//! Invariant suites behind `rrlab verify`.

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constants::{
    certify_relations, check_separable_rho_cap, check_strong_implies_weak,
    check_weak_growth_chain, estimate_rho, ProbeCheck, ProbePointSet, RelationStatus,
};
use crate::datagen::{gen_overparam_ls, gen_separable, rbf_featurize, SeparableSpec};
use crate::error::{Error, Result};
use crate::optim::{
    run, step_size_ig, step_size_rr, GrowthCondition, PermutationPlan, RunOptions, SchemeKind,
};
use crate::oracle::{
    check_epoch_descent, check_ig_deviation_bound, check_rr_deviation_bound,
    check_rr_epoch_recursion, enumerate_epochs, gradient_check, without_replacement_stats,
    EnumerationBudget, LemmaConstants, LemmaOutcome, LemmaStatus, LEMMA_SLACK,
};
use crate::problem::{analytic_constants, Constant, ConstantField, LossModel, ParamVector, ProblemConstants};
use crate::theory::{
    epochs_to_accuracy, lemma_epochs, predicted_curve, rate_bundle, sample_complexity, RateCondition,
};
use crate::vecops;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Lemmas,
    Propositions,
    Gradients,
    Optim,
    Theory,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lemmas" => Suite::Lemmas,
            "propositions" => Suite::Propositions,
            "gradients" => Suite::Gradients,
            "optim" => Suite::Optim,
            "theory" => Suite::Theory,
            "all" => Suite::All,
            other => return Err(Error::Config(format!("unknown suite {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// Multiplies every lemma step size; values above 1 leave the lemmas'
    /// admissible range and must surface as precondition violations.
    pub eta_scale: f64,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            eta_scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    PreconditionViolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub suite: String,
    pub name: String,
    pub status: CheckStatus,
    /// Smallest margin by which the inequality held (negative on failure).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slack: Option<f64>,
    pub evaluated: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub passed: usize,
    pub failed: usize,
    pub precondition_violations: usize,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    /// 0 all pass, 1 some invariant failed, 2 only precondition violations.
    pub fn exit_code(&self) -> i32 {
        if self.failed > 0 {
            1
        } else if self.precondition_violations > 0 {
            2
        } else {
            0
        }
    }
}

struct Collector {
    suite: &'static str,
    out: Vec<CheckResult>,
}

impl Collector {
    fn push(&mut self, name: &str, ok: bool, slack: Option<f64>, evaluated: usize, detail: String) {
        self.out.push(CheckResult {
            suite: self.suite.into(),
            name: name.into(),
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            slack,
            evaluated,
            detail,
        });
    }

    /// Folds many lemma outcomes into one entry: any precondition violation
    /// wins over pass/fail so an oversized step never reads as a lemma failure.
    fn lemma(&mut self, name: &str, outcomes: &[LemmaOutcome]) {
        let pre = outcomes
            .iter()
            .filter(|o| o.status == LemmaStatus::PreconditionViolated)
            .count();
        let fails: Vec<&LemmaOutcome> = outcomes
            .iter()
            .filter(|o| o.status == LemmaStatus::Fail)
            .collect();
        let slack = outcomes.iter().map(|o| o.slack).fold(f64::INFINITY, f64::min);
        let (status, detail) = if pre > 0 {
            let o = outcomes
                .iter()
                .find(|o| o.status == LemmaStatus::PreconditionViolated)
                .expect("counted above");
            (
                CheckStatus::PreconditionViolated,
                format!("{pre} instance(s) with η = {:.3e} above the admissible {:.3e}", o.eta, o.eta_max),
            )
        } else if let Some(f) = fails.first() {
            (
                CheckStatus::Fail,
                format!("{} failure(s); first: lhs {:.6e} > rhs {:.6e} ({})", fails.len(), f.lhs, f.rhs, f.instance),
            )
        } else {
            (CheckStatus::Pass, String::new())
        };
        self.out.push(CheckResult {
            suite: self.suite.into(),
            name: name.into(),
            status,
            slack: slack.is_finite().then_some(slack),
            evaluated: outcomes.len(),
            detail,
        });
    }

    fn probe(&mut self, chk: &ProbeCheck) {
        self.push(
            &chk.name,
            chk.passed(),
            Some(-chk.max_excess),
            chk.evaluated,
            format!("{} violation(s)", chk.violations),
        );
    }
}

fn rng(seed: u64, salt: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(salt);
    r
}

fn random_vectors(r: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<ParamVector> {
    (0..n)
        .map(|_| {
            ParamVector::new((0..d).map(|_| r.random_range(-1.0..1.0)).collect()).expect("finite")
        })
        .collect()
}

fn lemma_constants(c: &ProblemConstants) -> Result<LemmaConstants> {
    Ok(LemmaConstants {
        l: c.require_l()?,
        l_max: c.require_l_max()?,
        rho: c.require_rho()?,
        sigma: c.sigma_or_zero(),
    })
}

fn lemmas(opts: &VerifyOptions, col: &mut Collector) -> Result<()> {
    let mut r = rng(opts.seed, 1);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for _ in 0..5 {
        for n in 1..=8 {
            let v = random_vectors(&mut r, n, 3);
            for k in 1..=n {
                let s = without_replacement_stats(&v, k)?;
                worst = worst.max(s.mean_error).max(s.variance_error);
                count += 1;
            }
        }
    }
    col.push(
        "without-replacement mean and variance identities",
        worst <= 1e-12,
        Some(1e-12 - worst),
        count,
        format!("max error {worst:.3e}"),
    );

    let budget = EnumerationBudget::default();
    let (mut dev4, mut dev3, mut desc, mut rec) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut tight_ok = true;
    for inst in 0..10 {
        let n = 2 + inst % 5;
        let ds = gen_overparam_ls(n, n + 3, opts.seed.wrapping_add(inst as u64))?;
        let p = &ds.problem;
        let c = analytic_constants(p)?;
        let k = lemma_constants(&c)?;
        let x0 = random_vectors(&mut r, 1, p.dim()).remove(0);
        let nf = n as f64;
        let label = format!("least squares n={n} d={}", p.dim());

        let eta = opts.eta_scale / (3f64.sqrt() * nf * k.l_max);
        dev4.push(check_rr_deviation_bound(p, &x0, eta, &k, &budget)?.with_instance(&label));
        let sweep = enumerate_epochs(p, &x0, eta, &budget)?;
        tight_ok &= sweep.min_deviation <= sweep.mean_deviation * (1.0 + 1e-12) + 1e-300
            && sweep.mean_deviation <= sweep.max_deviation * (1.0 + 1e-12) + 1e-300;

        let eta_ig = opts.eta_scale / (std::f64::consts::SQRT_2 * nf * k.l_max);
        let eta_desc = opts.eta_scale / (nf * k.l);
        for order in (0..n).permutations(n) {
            dev3.push(check_ig_deviation_bound(p, &x0, eta_ig, &order, &k, LEMMA_SLACK)?.with_instance(&label));
            desc.push(check_epoch_descent(p, &x0, eta_desc, &order, &k, LEMMA_SLACK)?.with_instance(&label));
        }
        let eta_rr = opts.eta_scale * step_size_rr(&c, GrowthCondition::Sgc)?;
        rec.push(
            check_rr_epoch_recursion(p, &x0, eta_rr, &k, c.require_mu()?, 0.0, &budget)?
                .with_instance(&label),
        );
    }
    col.lemma("RR expected deviation bound (exact enumeration)", &dev4);
    col.lemma("IG deviation bound for every order", &dev3);
    col.lemma("epoch descent inequality for every order", &desc);
    col.lemma("RR one-epoch recursion (exact enumeration)", &rec);
    col.push(
        "min ≤ mean ≤ max over orderings",
        tight_ok,
        None,
        10,
        String::new(),
    );
    Ok(())
}

fn propositions(opts: &VerifyOptions, col: &mut Collector) -> Result<()> {
    let mut evaluated = 0;
    let mut violations = 0;
    let mut min_slack = f64::INFINITY;
    for (k, tau) in [0.05, 0.1, 0.25, 0.5].into_iter().enumerate() {
        for rep in 0..5u64 {
            let seed = opts.seed.wrapping_add(100 * k as u64 + rep);
            let ds = gen_separable(
                SeparableSpec { n: 50, d: 5, margin: tau, seed },
                LossModel::SquaredHinge,
            )?;
            let probes = ProbePointSet::random_ball(5, 200, 10.0, seed)?;
            let chk = check_separable_rho_cap(&ds.problem, &probes, ds.tau_actual)?;
            evaluated += chk.evaluated;
            violations += chk.violations;
            min_slack = min_slack.min(-chk.max_excess);
        }
    }
    col.push(
        "separable data: SGC ratio ≤ n/τ² at every probe",
        violations == 0,
        Some(min_slack),
        evaluated,
        format!("{violations} violation(s)"),
    );

    for inst in 0..5u64 {
        let n = 4 + inst as usize;
        let ds = gen_overparam_ls(n, 2 * n, opts.seed.wrapping_add(inst))?;
        let p = &ds.problem;
        let c = analytic_constants(p)?;
        let (l, rho, mu, alpha) = (c.require_l()?, c.require_rho()?, c.require_mu()?, c.require_alpha()?);
        let ball = ProbePointSet::random_ball(p.dim(), 200, 10.0, inst)?;
        let traj = run(
            p,
            &PermutationPlan::rr(inst),
            &ball.points()[0],
            step_size_rr(&c, GrowthCondition::Sgc)?,
            30,
            RunOptions {
                record_epoch_starts: true,
                ..RunOptions::default()
            },
        )?;
        let probes = ProbePointSet::mixed(ball, ProbePointSet::trajectory(&traj)?);
        col.probe(&check_strong_implies_weak(p, &probes, rho, l, 0.0)?);
        for chk in check_weak_growth_chain(p, &probes, mu, alpha, l, 0.0)? {
            col.probe(&chk);
        }
        let report = certify_relations(&c);
        col.push(
            "constant relations on analytic least squares",
            report
                .checks
                .iter()
                .all(|r| matches!(r.status, RelationStatus::Pass | RelationStatus::NotChecked)),
            None,
            report.checks.len(),
            String::new(),
        );
        let rho_hat = estimate_rho(p, &probes)?;
        col.push(
            "1 ≤ ρ̂ ≤ ρ",
            rho_hat >= 1.0 - 1e-12 && rho_hat <= rho * (1.0 + 1e-9),
            Some(rho - rho_hat),
            probes.len(),
            format!("ρ̂ = {rho_hat:.6}, ρ = {rho:.6}"),
        );
    }
    Ok(())
}

fn gradients(opts: &VerifyOptions, col: &mut Collector) -> Result<()> {
    let ds = gen_separable(
        SeparableSpec { n: 6, d: 4, margin: 0.05, seed: opts.seed },
        LossModel::SquaredHinge,
    )?;
    let probes = ProbePointSet::random_ball(4, 100, 2.0, opts.seed)?;
    let mut models = vec![
        ds.problem.with_loss(LossModel::LeastSquares)?,
        ds.problem.with_loss(LossModel::SquaredHinge)?,
        ds.problem.with_loss(LossModel::SquaredHingeL2 { lambda: 0.1 })?,
        ds.problem.with_loss(LossModel::Logistic)?,
    ];
    models.push(rbf_featurize(&ds.problem, 1.0)?);
    for p in &models {
        let pts: Vec<ParamVector> = if p.dim() == 4 {
            probes.points().to_vec()
        } else {
            ProbePointSet::random_ball(p.dim(), 100, 2.0, opts.seed)?.points().to_vec()
        };
        let chk = gradient_check(p, &pts, 1e-6)?;
        col.push(
            &format!("finite differences match gradients ({})", p.loss_model().name()),
            chk.passed(1e-5),
            Some(1e-5 - chk.max_rel_error),
            chk.evaluated,
            format!("max relative error {:.3e}", chk.max_rel_error),
        );
        let x = &pts[0];
        let mut mean = vec![0.0; p.dim()];
        for i in 0..p.n() {
            vecops::axpy(1.0 / p.n() as f64, p.grad_at(x, i)?.as_slice(), &mut mean);
        }
        let full = p.full_grad(x)?;
        let err = vecops::dist_sq(&mean, full.as_slice()).sqrt();
        let scale = vecops::norm_sq(&mean).sqrt().max(1e-300);
        col.push(
            &format!("full gradient is the mean of sample gradients ({})", p.loss_model().name()),
            err <= 1e-12 * scale.max(1.0),
            None,
            1,
            format!("difference {err:.3e}"),
        );
    }
    Ok(())
}

fn optim(opts: &VerifyOptions, col: &mut Collector) -> Result<()> {
    let mut coverage_ok = true;
    for seed in 0..20u64 {
        for plan in [PermutationPlan::rr(seed), PermutationPlan::ig_shuffled(17, seed)] {
            for t in 0..10 {
                let mut idx = plan.epoch_indices(17, t)?;
                idx.sort_unstable();
                coverage_ok &= idx == (0..17).collect::<Vec<_>>();
            }
        }
    }
    col.push("RR/IG epochs visit every index once", coverage_ok, None, 400, String::new());

    let ds = gen_overparam_ls(8, 16, opts.seed)?;
    let p = &ds.problem;
    let c = analytic_constants(p)?;
    let x0 = ParamVector::new(vec![1.0; 16])?;
    let eta_rr = step_size_rr(&c, GrowthCondition::Sgc)?;
    let a = run(p, &PermutationPlan::rr(opts.seed), &x0, eta_rr, 20, RunOptions::default())?;
    let b = run(p, &PermutationPlan::rr(opts.seed), &x0, eta_rr, 20, RunOptions::default())?;
    col.push("identical inputs give identical runs", a.same_trace(&b), None, 2, String::new());

    let (l, l_max) = (c.require_l()?, c.require_l_max()?);
    let eta = opts.eta_scale / (p.n() as f64 * l);
    let mut outcomes = Vec::new();
    for kind in [SchemeKind::Rr, SchemeKind::Ig] {
        let plan = PermutationPlan::for_kind(kind, p.n(), opts.seed);
        let rec = run(
            p,
            &plan,
            &x0,
            eta,
            30,
            RunOptions {
                record_deviations: true,
                ..RunOptions::default()
            },
        )?;
        let devs = rec.deviations.as_ref().expect("recorded");
        for t in 0..rec.epochs {
            let rhs = rec.losses[t] - 0.5 * p.n() as f64 * eta * rec.grad_norm_sq[t]
                + 0.5 * l_max * l_max * eta * devs[t].with_end;
            let lhs = rec.losses[t + 1];
            let status = if eta > 1.0 / (p.n() as f64 * l) * (1.0 + 1e-12) {
                LemmaStatus::PreconditionViolated
            } else if lhs <= rhs + LEMMA_SLACK {
                LemmaStatus::Pass
            } else {
                LemmaStatus::Fail
            };
            outcomes.push(LemmaOutcome {
                lemma: "epoch_descent".into(),
                status,
                lhs,
                rhs,
                slack: rhs - lhs,
                eta,
                eta_max: 1.0 / (p.n() as f64 * l),
                instance: format!("{kind} epoch {t}"),
            });
        }
    }
    col.lemma("pathwise epoch descent along RR and IG runs", &outcomes);

    let eta_ig = step_size_ig(&c, GrowthCondition::Sgc)?;
    let rec = run(p, &PermutationPlan::ig_shuffled(p.n(), opts.seed), &x0, eta_ig, 50, RunOptions::default())?;
    let worst = rec
        .losses
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    col.push(
        "IG loss is non-increasing at the theorem step",
        worst <= 1e-12,
        Some(1e-12 - worst),
        rec.epochs,
        format!("largest increase {worst:.3e}"),
    );
    Ok(())
}

fn theory(opts: &VerifyOptions, col: &mut Collector) -> Result<()> {
    let mut grid_ok = true;
    let mut count = 0;
    for i in 0..10 {
        for j in 0..10 {
            let n = 1 + 10 * i;
            let rho = 10f64.powf(j as f64 * 0.6);
            let c = ProblemConstants::new(n)
                .with(ConstantField::LMax, Constant::declared(3.0))
                .with(ConstantField::Mu, Constant::declared(0.1))
                .with(ConstantField::Rho, Constant::declared(rho));
            let rr = sample_complexity(&c, SchemeKind::Rr, RateCondition::Sgc)?;
            let ig = sample_complexity(&c, SchemeKind::Ig, RateCondition::Sgc)?;
            grid_ok &= rr <= ig * (1.0 + 1e-12);
            count += 1;
        }
    }
    col.push("RR complexity ≤ IG complexity on an (n, ρ) grid", grid_ok, None, count, String::new());

    let mut r = rng(opts.seed, 7);
    let mut ok = true;
    for _ in 0..50 {
        let c = random_bundle_constants(&mut r);
        for kind in [SchemeKind::Rr, SchemeKind::Ig] {
            let chk = epoch_bound_check(&c, kind, 1.0 + 10.0 * r.random::<f64>(), 10f64.powf(-r.random_range(2.0..8.0)))?;
            ok &= chk.consistent();
        }
    }
    col.push(
        "epochs to ε agree with the recursion count and the complexity",
        ok,
        None,
        100,
        String::new(),
    );

    let c = ProblemConstants::new(10)
        .with(ConstantField::LMax, Constant::declared(2.0))
        .with(ConstantField::Mu, Constant::declared(0.2))
        .with(ConstantField::Rho, Constant::declared(5.0))
        .with(ConstantField::Sigma, Constant::declared(0.3));
    let a = rate_bundle(&c, SchemeKind::Rr, RateCondition::Sgc, Some(1e-3))?;
    let b = rate_bundle(&c, SchemeKind::Rr, RateCondition::Sgc, Some(2e-3))?;
    col.push(
        "doubling η quadruples the noise ball",
        b.noise_ball == 4.0 * a.noise_ball,
        None,
        1,
        String::new(),
    );
    Ok(())
}

/// Random `(n, L_max, μ, ρ)` with `κ ≤ 100` and `1 ≤ ρ ≤ 10⁴`, which keeps
/// predicted curves to at most a few million epochs.
pub fn random_bundle_constants(r: &mut impl Rng) -> ProblemConstants {
    let n = r.random_range(1..500usize);
    let l_max = 10f64.powf(r.random_range(-1.0..2.0));
    let mu = l_max * 10f64.powf(r.random_range(-2.0..0.0));
    let rho = 10f64.powf(r.random_range(0.0..4.0));
    ProblemConstants::new(n)
        .with(ConstantField::LMax, Constant::declared(l_max))
        .with(ConstantField::L, Constant::declared(l_max))
        .with(ConstantField::Mu, Constant::declared(mu))
        .with(ConstantField::Rho, Constant::declared(rho))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochBoundCheck {
    /// First epoch where the predicted curve is ≤ ε.
    pub crossing: usize,
    /// Same, from [`epochs_to_accuracy`].
    pub epochs_to_accuracy: usize,
    /// `⌈log(gap/ε) / (1 − contraction)⌉`
    pub lemma_epochs: f64,
    /// `n · lemma_epochs`
    pub iterations: f64,
    /// `complexity · log(gap/ε)`
    pub complexity_log: f64,
    pub n: usize,
}

/// Constant absorbed by the dropped factors in the complexity expressions
/// (`8√2` for RR, `4` for IG).
pub const EPOCH_BOUND_CONSTANT: f64 = 16.0;

impl EpochBoundCheck {
    pub fn consistent(&self) -> bool {
        self.crossing == self.epochs_to_accuracy
            && (self.crossing as f64) <= self.lemma_epochs
            && self.iterations <= EPOCH_BOUND_CONSTANT * self.complexity_log + self.n as f64
    }
}

/// Compares the predicted-curve crossing with the recursion count and the
/// complexity expression, at the theorem step under the SGC.
pub fn epoch_bound_check(c: &ProblemConstants, scheme: SchemeKind, gap: f64, eps: f64) -> Result<EpochBoundCheck> {
    let b = rate_bundle(c, scheme, RateCondition::Sgc, None)?;
    let e2a = epochs_to_accuracy(b.contraction, gap, eps)?;
    let curve = predicted_curve(&b, gap, e2a + 1);
    let crossing = curve.iter().position(|&v| v <= eps).unwrap_or(usize::MAX);
    let le = lemma_epochs(&b, gap, eps);
    Ok(EpochBoundCheck {
        crossing,
        epochs_to_accuracy: e2a,
        lemma_epochs: le,
        iterations: c.n as f64 * le,
        complexity_log: b.sample_complexity * (gap / eps).ln(),
        n: c.n,
    })
}

pub fn verify(suite: Suite, opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    let parts: &[(Suite, &'static str, fn(&VerifyOptions, &mut Collector) -> Result<()>)] = &[
        (Suite::Gradients, "gradients", gradients),
        (Suite::Lemmas, "lemmas", lemmas),
        (Suite::Propositions, "propositions", propositions),
        (Suite::Optim, "optim", optim),
        (Suite::Theory, "theory", theory),
    ];
    for &(s, name, f) in parts {
        if suite == s || suite == Suite::All {
            let mut col = Collector {
                suite: name,
                out: Vec::new(),
            };
            f(opts, &mut col)?;
            checks.extend(col.out);
        }
    }
    let count = |st| checks.iter().filter(|c: &&CheckResult| c.status == st).count();
    Ok(VerifyReport {
        suite,
        passed: count(CheckStatus::Pass),
        failed: count(CheckStatus::Fail),
        precondition_violations: count(CheckStatus::PreconditionViolated),
        checks,
    })
}
