//! Constant-step single-sample methods: SGD (with replacement), random
//! reshuffling (fresh permutation each epoch) and incremental gradient
//! (one fixed permutation).

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{FiniteSumProblem, ParamVector, ProblemConstants};
use crate::vecops;

/// Runs abort once the epoch-start loss exceeds `DIVERGENCE_FACTOR·(1 + |f(x0)|)`.
pub const DIVERGENCE_FACTOR: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Sgd,
    Rr,
    Ig,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 3] = [SchemeKind::Sgd, SchemeKind::Rr, SchemeKind::Ig];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::Sgd => "SGD",
            SchemeKind::Rr => "RR",
            SchemeKind::Ig => "IG",
        }
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(SchemeKind::Sgd),
            "rr" => Ok(SchemeKind::Rr),
            "ig" => Ok(SchemeKind::Ig),
            other => Err(Error::Config(format!("unknown scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheme {
    Sgd,
    Rr,
    Ig { order: Vec<usize> },
}

/// Sample-ordering policy plus the seed that drives it.
///
/// Epoch `t` draws from a ChaCha stream keyed by `(seed, t)`, so any epoch's
/// ordering can be replayed without running the earlier ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationPlan {
    pub scheme: Scheme,
    pub seed: u64,
}

fn is_permutation(order: &[usize]) -> bool {
    let mut seen = vec![false; order.len()];
    order.iter().all(|&i| {
        i < seen.len() && !std::mem::replace(&mut seen[i], true)
    })
}

impl PermutationPlan {
    pub fn sgd(seed: u64) -> Self {
        PermutationPlan {
            scheme: Scheme::Sgd,
            seed,
        }
    }

    pub fn rr(seed: u64) -> Self {
        PermutationPlan {
            scheme: Scheme::Rr,
            seed,
        }
    }

    pub fn ig(order: Vec<usize>) -> Result<Self> {
        if !is_permutation(&order) {
            return Err(Error::InvalidInput(
                "IG order must be a permutation of 0..n".into(),
            ));
        }
        Ok(PermutationPlan {
            scheme: Scheme::Ig { order },
            seed: 0,
        })
    }

    /// IG with a fixed order drawn once from `seed`.
    pub fn ig_shuffled(n: usize, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        PermutationPlan {
            scheme: Scheme::Ig { order },
            seed,
        }
    }

    pub fn for_kind(kind: SchemeKind, n: usize, seed: u64) -> Self {
        match kind {
            SchemeKind::Sgd => Self::sgd(seed),
            SchemeKind::Rr => Self::rr(seed),
            SchemeKind::Ig => Self::ig_shuffled(n, seed),
        }
    }

    pub fn kind(&self) -> SchemeKind {
        match self.scheme {
            Scheme::Sgd => SchemeKind::Sgd,
            Scheme::Rr => SchemeKind::Rr,
            Scheme::Ig { .. } => SchemeKind::Ig,
        }
    }

    fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64);
        rng
    }

    /// Sample indices visited during epoch `epoch` (0-based), `n` of them.
    pub fn epoch_indices(&self, n: usize, epoch: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(n);
        self.fill_epoch(n, epoch, &mut out)?;
        Ok(out)
    }

    fn fill_epoch(&self, n: usize, epoch: usize, out: &mut Vec<usize>) -> Result<()> {
        out.clear();
        match &self.scheme {
            Scheme::Sgd => {
                let mut rng = self.epoch_rng(epoch);
                out.extend((0..n).map(|_| rng.random_range(0..n)));
            }
            Scheme::Rr => {
                out.extend(0..n);
                out.shuffle(&mut self.epoch_rng(epoch));
            }
            Scheme::Ig { order } => {
                if order.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: order.len(),
                    });
                }
                out.extend_from_slice(order);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Keep every inner iterate `x_0^t, …, x_n^t` (memory `n·d` per epoch).
    pub record_iterates: bool,
    /// Keep per-epoch sums of squared distances from the epoch start.
    pub record_deviations: bool,
    /// Keep the epoch-start iterates `x_0^0, …, x_0^T`.
    pub record_epoch_starts: bool,
}

/// Within-epoch drift from the epoch start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochDeviation {
    /// `Σ_{i=0}^{n−1} ‖x_i − x_0‖²`
    pub inner: f64,
    /// `Σ_{i=0}^{n} ‖x_i − x_0‖²`
    pub with_end: f64,
}

/// Per-epoch trace of one run. `losses[t]` and `grad_norm_sq[t]` are taken at
/// the epoch start `x_0^t`; index `epochs` is the final iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scheme: SchemeKind,
    pub seed: u64,
    pub eta: f64,
    pub epochs: usize,
    pub losses: Vec<f64>,
    pub grad_norm_sq: Vec<f64>,
    pub final_x: ParamVector,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deviations: Option<Vec<EpochDeviation>>,
    #[serde(skip)]
    pub iterates: Option<Vec<Vec<ParamVector>>>,
    #[serde(skip)]
    pub epoch_starts: Option<Vec<ParamVector>>,
    pub wall_time_secs: f64,
}

impl RunRecord {
    pub fn min_loss(&self) -> f64 {
        self.losses.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("a run has at least one loss")
    }

    /// Same trajectory, ignoring wall time.
    pub fn same_trace(&self, other: &RunRecord) -> bool {
        self.scheme == other.scheme
            && self.seed == other.seed
            && self.eta.to_bits() == other.eta.to_bits()
            && self.losses == other.losses
            && self.grad_norm_sq == other.grad_norm_sq
            && self.final_x == other.final_x
            && self.deviations == other.deviations
    }
}

/// Runs `epochs` epochs of `n` single-sample steps `x ← x − η∇f(x; i)`.
///
/// `η = 0` is allowed and leaves `x0` fixed.
pub fn run(
    problem: &FiniteSumProblem,
    plan: &PermutationPlan,
    x0: &ParamVector,
    eta: f64,
    epochs: usize,
    opts: RunOptions,
) -> Result<RunRecord> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "step size must be finite and non-negative, got {eta}"
        )));
    }
    if epochs == 0 {
        return Err(Error::InvalidInput("at least one epoch is required".into()));
    }
    if x0.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: x0.len(),
        });
    }
    let start = Instant::now();
    let n = problem.n();
    let mut x = x0.as_slice().to_vec();
    let mut epoch_start = x.clone();
    let mut order = Vec::with_capacity(n);

    let f0 = problem.mean_loss(&x);
    let threshold = DIVERGENCE_FACTOR * (1.0 + f0.abs());
    let mut losses = Vec::with_capacity(epochs + 1);
    let mut grad_norm_sq = Vec::with_capacity(epochs + 1);
    losses.push(f0);
    grad_norm_sq.push(vecops::norm_sq(&problem.mean_grad(&x)));

    let mut deviations = opts.record_deviations.then(|| Vec::with_capacity(epochs));
    let mut iterates = opts.record_iterates.then(|| Vec::with_capacity(epochs));
    let mut epoch_starts = opts.record_epoch_starts.then(|| vec![x0.clone()]);

    for t in 0..epochs {
        plan.fill_epoch(n, t, &mut order)?;
        epoch_start.copy_from_slice(&x);
        let mut inner = 0.0;
        let mut snaps = opts
            .record_iterates
            .then(|| vec![ParamVector::new(x.clone()).expect("finite iterate")]);
        for (j, &i) in order.iter().enumerate() {
            problem.step(&mut x, i, eta);
            if opts.record_deviations && j + 1 < n {
                inner += vecops::dist_sq(&x, &epoch_start);
            }
            if let Some(s) = snaps.as_mut() {
                if let Ok(p) = ParamVector::new(x.clone()) {
                    s.push(p);
                }
            }
        }
        let loss = problem.mean_loss(&x);
        if !loss.is_finite() || loss > threshold || !vecops::all_finite(&x) {
            return Err(Error::Divergence {
                epoch: t + 1,
                loss,
                threshold,
            });
        }
        if let Some(d) = deviations.as_mut() {
            d.push(EpochDeviation {
                inner,
                with_end: inner + vecops::dist_sq(&x, &epoch_start),
            });
        }
        if let (Some(all), Some(s)) = (iterates.as_mut(), snaps) {
            all.push(s);
        }
        if let Some(starts) = epoch_starts.as_mut() {
            starts.push(ParamVector::new(x.clone())?);
        }
        losses.push(loss);
        grad_norm_sq.push(vecops::norm_sq(&problem.mean_grad(&x)));
    }

    Ok(RunRecord {
        scheme: plan.kind(),
        seed: plan.seed,
        eta,
        epochs,
        losses,
        grad_norm_sq,
        final_x: ParamVector::new(x)?,
        deviations,
        iterates,
        epoch_starts,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Which growth condition a step-size rule is derived under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthCondition {
    Sgc,
    Wgc,
}

impl GrowthCondition {
    pub fn as_str(self) -> &'static str {
        match self {
            GrowthCondition::Sgc => "SGC",
            GrowthCondition::Wgc => "WGC",
        }
    }
}

fn positive(v: f64, name: &'static str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidInput(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

/// The growth factor shared by both rules: `ρ` under the SGC, `αL/μ` under the WGC.
pub fn growth_factor(c: &ProblemConstants, cond: GrowthCondition) -> Result<f64> {
    match cond {
        GrowthCondition::Sgc => positive(c.require_rho()?, "rho"),
        GrowthCondition::Wgc => {
            let alpha = positive(c.require_alpha()?, "alpha")?;
            let l = positive(c.require_l()?, "L")?;
            let mu = positive(c.require_mu()?, "mu")?;
            Ok(alpha * l / mu)
        }
    }
}

fn n_and_l_max(c: &ProblemConstants) -> Result<(f64, f64)> {
    if c.n == 0 {
        return Err(Error::InsufficientConstants("n"));
    }
    Ok((c.n as f64, positive(c.require_l_max()?, "L_max")?))
}

/// Largest constant step for random reshuffling:
/// `min{1/(2nL_max), 1/(2√2 L_max √(n g))}` with `g` the growth factor.
pub fn step_size_rr(c: &ProblemConstants, cond: GrowthCondition) -> Result<f64> {
    let (n, l_max) = n_and_l_max(c)?;
    let g = growth_factor(c, cond)?;
    Ok(f64::min(
        1.0 / (2.0 * n * l_max),
        1.0 / (2.0 * std::f64::consts::SQRT_2 * l_max * (n * g).sqrt()),
    ))
}

/// Largest constant step for incremental gradient:
/// `min{1/(√2 nL_max), 1/(2 L_max n √g)}`.
pub fn step_size_ig(c: &ProblemConstants, cond: GrowthCondition) -> Result<f64> {
    let (n, l_max) = n_and_l_max(c)?;
    let g = growth_factor(c, cond)?;
    Ok(f64::min(
        1.0 / (std::f64::consts::SQRT_2 * n * l_max),
        1.0 / (2.0 * l_max * n * g.sqrt()),
    ))
}

/// SGD step under the weak growth condition: `μ / (L² α)`.
pub fn step_size_sgd(c: &ProblemConstants) -> Result<f64> {
    let mu = positive(c.require_mu()?, "mu")?;
    let l = positive(c.require_l()?, "L")?;
    let alpha = positive(c.require_alpha()?, "alpha")?;
    Ok(mu / (l * l * alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Constant, ConstantField, LossModel, Sample};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn consts(n: usize, l_max: f64, rho: f64) -> ProblemConstants {
        ProblemConstants::new(n)
            .with(ConstantField::LMax, Constant::declared(l_max))
            .with(ConstantField::Rho, Constant::declared(rho))
    }

    #[test]
    fn rr_step_examples() {
        let eta = step_size_rr(&consts(100, 10.0, 400.0), GrowthCondition::Sgc).unwrap();
        assert_relative_eq!(eta, 1.0 / (2.0 * 2f64.sqrt() * 10.0 * 200.0), max_relative = 1e-15);
        assert_relative_eq!(eta, 1.7678e-4, max_relative = 1e-4);
        // √(nρ) = 4, so the second branch binds: 1/(8√2) < 1/8
        let eta = step_size_rr(&consts(4, 1.0, 4.0), GrowthCondition::Sgc).unwrap();
        assert_relative_eq!(eta, 1.0 / (8.0 * 2f64.sqrt()), max_relative = 1e-15);
        let eta = step_size_rr(&consts(1, 1.0, 1.0), GrowthCondition::Sgc).unwrap();
        assert_relative_eq!(eta, 0.35355, max_relative = 1e-5);
    }

    #[test]
    fn ig_step_examples() {
        let eta = step_size_ig(&consts(100, 10.0, 400.0), GrowthCondition::Sgc).unwrap();
        assert_relative_eq!(eta, 2.5e-5, max_relative = 1e-14);
        let eta = step_size_ig(&consts(7, 3.0, 1.0), GrowthCondition::Sgc).unwrap();
        assert_relative_eq!(eta, 1.0 / (2.0 * 7.0 * 3.0), max_relative = 1e-15);
        let eta = step_size_ig(&consts(1, 1.0, 1.0), GrowthCondition::Sgc).unwrap();
        assert_relative_eq!(eta, 0.5, max_relative = 1e-15);
    }

    #[test]
    fn wgc_branch_uses_alpha_l_over_mu() {
        let c = ProblemConstants::new(4)
            .with(ConstantField::LMax, Constant::declared(1.0))
            .with(ConstantField::L, Constant::declared(2.0))
            .with(ConstantField::Mu, Constant::declared(0.5))
            .with(ConstantField::Alpha, Constant::declared(1.0));
        let sgc = consts(4, 1.0, 4.0);
        assert_eq!(
            step_size_rr(&c, GrowthCondition::Wgc).unwrap(),
            step_size_rr(&sgc, GrowthCondition::Sgc).unwrap()
        );
        assert_eq!(
            step_size_ig(&c, GrowthCondition::Wgc).unwrap(),
            step_size_ig(&sgc, GrowthCondition::Sgc).unwrap()
        );
        assert!(matches!(
            step_size_rr(&c, GrowthCondition::Sgc),
            Err(Error::InsufficientConstants("rho"))
        ));
    }

    #[test]
    fn sgd_step_examples() {
        let mk = |mu, l, alpha| {
            ProblemConstants::new(1)
                .with(ConstantField::Mu, Constant::declared(mu))
                .with(ConstantField::L, Constant::declared(l))
                .with(ConstantField::Alpha, Constant::declared(alpha))
        };
        assert_eq!(step_size_sgd(&mk(1.0, 1.0, 1.0)).unwrap(), 1.0);
        assert_eq!(step_size_sgd(&mk(0.5, 2.0, 4.0)).unwrap(), 0.03125);
        assert_eq!(step_size_sgd(&mk(0.5, 2.0, 0.25)).unwrap(), 0.5);
        assert!(step_size_sgd(&ProblemConstants::new(1)).is_err());
    }

    fn orthonormal_pair() -> FiniteSumProblem {
        FiniteSumProblem::new(
            vec![
                Sample::new(vec![1.0, 0.0], 0.0),
                Sample::new(vec![0.0, 1.0], 0.0),
            ],
            LossModel::LeastSquares,
        )
        .unwrap()
    }

    #[test]
    fn ig_one_epoch_by_hand() {
        let p = orthonormal_pair();
        let x0 = ParamVector::new(vec![1.0, 1.0]).unwrap();
        let plan = PermutationPlan::ig(vec![0, 1]).unwrap();
        let rec = run(&p, &plan, &x0, 0.1, 1, RunOptions::default()).unwrap();
        assert_relative_eq!(rec.final_x.as_slice()[0], 0.9, epsilon = 1e-15);
        assert_relative_eq!(rec.final_x.as_slice()[1], 0.9, epsilon = 1e-15);
        assert_eq!(rec.losses.len(), 2);
    }

    #[test]
    fn zero_step_keeps_x() {
        let p = orthonormal_pair();
        let x0 = ParamVector::new(vec![0.3, -2.0]).unwrap();
        for kind in SchemeKind::ALL {
            let plan = PermutationPlan::for_kind(kind, 2, 5);
            let rec = run(&p, &plan, &x0, 0.0, 4, RunOptions::default()).unwrap();
            assert_eq!(rec.final_x, x0);
            assert!(rec.losses.iter().all(|&l| l == rec.losses[0]));
        }
    }

    #[test]
    fn single_sample_schemes_agree() {
        let p = FiniteSumProblem::new(
            vec![Sample::new(vec![0.6, -0.8], 1.0)],
            LossModel::SquaredHingeL2 { lambda: 0.05 },
        )
        .unwrap();
        let x0 = ParamVector::new(vec![0.1, 0.2]).unwrap();
        let recs: Vec<_> = SchemeKind::ALL
            .iter()
            .enumerate()
            .map(|(s, &k)| {
                let plan = PermutationPlan::for_kind(k, 1, s as u64 * 17);
                run(&p, &plan, &x0, 0.3, 5, RunOptions::default()).unwrap()
            })
            .collect();
        assert_eq!(recs[0].losses, recs[1].losses);
        assert_eq!(recs[1].losses, recs[2].losses);
    }

    #[test]
    fn divergence_is_reported() {
        let p = orthonormal_pair();
        let x0 = ParamVector::new(vec![1.0, 1.0]).unwrap();
        let err = run(&p, &PermutationPlan::rr(1), &x0, 50.0, 100, RunOptions::default());
        assert!(matches!(err, Err(Error::Divergence { .. })));
    }

    #[test]
    fn invalid_inputs() {
        let p = orthonormal_pair();
        let x0 = ParamVector::zeros(2);
        assert!(run(&p, &PermutationPlan::rr(1), &x0, -1.0, 1, RunOptions::default()).is_err());
        assert!(run(&p, &PermutationPlan::rr(1), &x0, 0.1, 0, RunOptions::default()).is_err());
        assert!(PermutationPlan::ig(vec![0, 0]).is_err());
        assert!(PermutationPlan::ig(vec![0, 2]).is_err());
        let plan = PermutationPlan::ig(vec![0, 1, 2]).unwrap();
        assert!(run(&p, &plan, &x0, 0.1, 1, RunOptions::default()).is_err());
    }

    #[test]
    fn iterates_and_deviations_agree() {
        let p = orthonormal_pair();
        let x0 = ParamVector::new(vec![1.0, -1.0]).unwrap();
        let opts = RunOptions {
            record_iterates: true,
            record_deviations: true,
            record_epoch_starts: true,
        };
        let rec = run(&p, &PermutationPlan::rr(3), &x0, 0.2, 3, opts).unwrap();
        let its = rec.iterates.as_ref().unwrap();
        let devs = rec.deviations.as_ref().unwrap();
        let starts = rec.epoch_starts.as_ref().unwrap();
        assert_eq!(starts.len(), 4);
        assert_eq!(starts[3], rec.final_x);
        for ((snap, dev), start) in its.iter().zip(devs).zip(starts) {
            assert_eq!(snap.len(), 3);
            assert_eq!(&snap[0], start);
            let inner: f64 = snap[..2].iter().map(|x| x.dist_sq(&snap[0])).sum();
            let with_end: f64 = snap.iter().map(|x| x.dist_sq(&snap[0])).sum();
            assert_relative_eq!(inner, dev.inner, epsilon = 1e-15);
            assert_relative_eq!(with_end, dev.with_end, epsilon = 1e-15);
        }
    }

    proptest! {
        #[test]
        fn rr_and_ig_epochs_cover_every_index(n in 1usize..40, seed in any::<u64>(), epoch in 0usize..50) {
            for plan in [PermutationPlan::rr(seed), PermutationPlan::ig_shuffled(n, seed)] {
                let mut idx = plan.epoch_indices(n, epoch).unwrap();
                idx.sort_unstable();
                prop_assert_eq!(idx, (0..n).collect::<Vec<_>>());
            }
        }

        #[test]
        fn epoch_orderings_replay(n in 1usize..30, seed in any::<u64>(), epoch in 0usize..20) {
            let plan = PermutationPlan::rr(seed);
            prop_assert_eq!(plan.epoch_indices(n, epoch).unwrap(), plan.epoch_indices(n, epoch).unwrap());
            let sgd = PermutationPlan::sgd(seed).epoch_indices(n, epoch).unwrap();
            prop_assert!(sgd.iter().all(|&i| i < n));
            prop_assert_eq!(sgd.len(), n);
        }
    }
}
