//! Synthetic datasets: separable binary data with a margin, consistent
//! least-squares systems, and Gaussian-kernel featurization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{FiniteSumProblem, LossModel, ParamVector};
use crate::vecops;

/// Rejection attempts allowed per requested sample.
pub const ATTEMPTS_PER_SAMPLE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparableSpec {
    pub n: usize,
    pub d: usize,
    pub margin: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SeparableDataset {
    pub problem: FiniteSumProblem,
    /// Unit-norm generating separator.
    pub separator: ParamVector,
    /// `min_i yᵢ aᵢᵀx̄` for the generating separator.
    pub tau_actual: f64,
}

#[derive(Debug, Clone)]
pub struct RegressionDataset {
    pub problem: FiniteSumProblem,
    /// Weights that generated the labels.
    pub truth: ParamVector,
}

/// Metadata written next to a generated CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub n: usize,
    pub d: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_requested: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_actual: Option<f64>,
    pub seed: u64,
}

pub(crate) fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian_vec(rng, d);
        let norm = vecops::norm_sq(&v).sqrt();
        if norm > 1e-12 {
            v.iter_mut().for_each(|x| *x /= norm);
            return v;
        }
    }
}

/// Uniform draw from the closed unit ball in `d` dimensions.
pub(crate) fn unit_ball(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let mut v = unit_vector(rng, d);
    let r = rng.random::<f64>().powf(1.0 / d as f64);
    v.iter_mut().for_each(|x| *x *= r);
    v
}

/// Linearly separable data with margin at least `spec.margin` around a
/// random unit separator. Points are uniform in the unit ball, labelled by
/// the side of the separator, and rejected inside the margin band.
pub fn gen_separable(spec: SeparableSpec, loss: LossModel) -> Result<SeparableDataset> {
    if spec.n < 2 || spec.d < 2 {
        return Err(Error::InvalidInput(format!(
            "separable data needs n >= 2 and d >= 2, got n = {}, d = {}",
            spec.n, spec.d
        )));
    }
    if !(spec.margin > 0.0 && spec.margin.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "margin must be positive, got {}",
            spec.margin
        )));
    }
    if !loss.is_margin_loss() {
        return Err(Error::InvalidInput(format!(
            "separable data needs a margin loss, got {}",
            loss.name()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let separator = unit_vector(&mut rng, spec.d);
    let budget = ATTEMPTS_PER_SAMPLE * spec.n;
    let mut features = Vec::with_capacity(spec.n * spec.d);
    let mut labels = Vec::with_capacity(spec.n);
    let mut attempts = 0;
    while labels.len() < spec.n {
        if attempts == budget {
            return Err(Error::GenerationFailed {
                attempts,
                reason: format!(
                    "accepted {} of {} samples with margin {}",
                    labels.len(),
                    spec.n,
                    spec.margin
                ),
            });
        }
        attempts += 1;
        let a = unit_ball(&mut rng, spec.d);
        let s = vecops::dot(&a, &separator);
        if s.abs() < spec.margin {
            continue;
        }
        labels.push(s.signum());
        features.extend_from_slice(&a);
    }
    let problem = FiniteSumProblem::from_flat(features, labels, spec.d, loss)?;
    let tau_actual = (0..problem.n())
        .map(|i| problem.label(i) * problem.score(&separator, i))
        .fold(f64::INFINITY, f64::min);
    Ok(SeparableDataset {
        problem,
        separator: ParamVector::new(separator)?,
        tau_actual,
    })
}

/// Least-squares problem with Gaussian features of variance `1/d` and labels
/// `yᵢ = aᵢᵀx̄`, so the system is consistent.
pub fn gen_consistent_ls(n: usize, d: usize, seed: u64) -> Result<RegressionDataset> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput(format!(
            "dimensions must be positive, got n = {n}, d = {d}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = gaussian_vec(&mut rng, d);
    let scale = 1.0 / (d as f64).sqrt();
    let features: Vec<f64> = gaussian_vec(&mut rng, n * d)
        .into_iter()
        .map(|v| v * scale)
        .collect();
    ls_from_truth(features, d, ParamVector::new(truth)?)
}

/// Over-parameterized (`d > n`) consistent least squares.
pub fn gen_overparam_ls(n: usize, d: usize, seed: u64) -> Result<RegressionDataset> {
    if !(d > n && n >= 1) {
        return Err(Error::InvalidInput(format!(
            "over-parameterized least squares needs d > n >= 1, got n = {n}, d = {d}"
        )));
    }
    gen_consistent_ls(n, d, seed)
}

/// Builds `yᵢ = aᵢᵀ truth` for row-major `features`.
pub fn ls_from_truth(features: Vec<f64>, d: usize, truth: ParamVector) -> Result<RegressionDataset> {
    if truth.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: truth.len(),
        });
    }
    let labels = features
        .chunks_exact(d)
        .map(|a| vecops::dot(a, truth.as_slice()))
        .collect();
    let problem = FiniteSumProblem::from_flat(features, labels, d, LossModel::LeastSquares)?;
    Ok(RegressionDataset { problem, truth })
}

/// Adds independent `N(0, noise²)` perturbations to every label.
pub fn perturb_labels(problem: &FiniteSumProblem, noise: f64, seed: u64) -> Result<FiniteSumProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = problem
        .labels()
        .iter()
        .map(|y| y + noise * rng.sample::<f64, _>(StandardNormal))
        .collect();
    FiniteSumProblem::from_flat(
        problem.feature_matrix().to_vec(),
        labels,
        problem.dim(),
        problem.loss_model().clone(),
    )
}

/// Gaussian kernel `exp(−‖u − v‖² / (2 bandwidth²))`.
pub fn rbf_kernel(u: &[f64], v: &[f64], bandwidth: f64) -> f64 {
    (-vecops::dist_sq(u, v) / (2.0 * bandwidth * bandwidth)).exp()
}

/// Replaces every feature vector by its kernel evaluations against all `n`
/// samples. Labels are kept and the loss is wrapped in
/// [`LossModel::LinearOverFeatures`].
pub fn rbf_featurize(problem: &FiniteSumProblem, bandwidth: f64) -> Result<FiniteSumProblem> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    let n = problem.n();
    let mut features = vec![0.0; n * n];
    for i in 0..n {
        features[i * n + i] = 1.0;
        for j in 0..i {
            let k = rbf_kernel(problem.features(i), problem.features(j), bandwidth);
            features[i * n + j] = k;
            features[j * n + i] = k;
        }
    }
    let base = problem.loss_model().scalar_loss().clone();
    FiniteSumProblem::from_flat(
        features,
        problem.labels().to_vec(),
        n,
        LossModel::LinearOverFeatures {
            base: Box::new(base),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn separable_margin_and_norms() {
        let spec = SeparableSpec {
            n: 4,
            d: 2,
            margin: 0.5,
            seed: 7,
        };
        let ds = gen_separable(spec, LossModel::SquaredHinge).unwrap();
        assert!(ds.tau_actual >= 0.5);
        for i in 0..4 {
            assert!(ds.problem.feature_norm_sq(i) <= 1.0);
            let s = ds.problem.label(i) * ds.problem.score(ds.separator.as_slice(), i);
            assert!(s >= 0.5);
        }
        assert_relative_eq!(ds.separator.norm_sq(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn margin_close_to_one_still_passes() {
        let spec = SeparableSpec {
            n: 5,
            d: 2,
            margin: 0.97,
            seed: 3,
        };
        let ds = gen_separable(spec, LossModel::SquaredHinge).unwrap();
        assert!(ds.tau_actual >= 0.97);
    }

    #[test]
    fn infeasible_margin_fails_after_bounded_retries() {
        let spec = SeparableSpec {
            n: 3,
            d: 2,
            margin: 1.5,
            seed: 1,
        };
        match gen_separable(spec, LossModel::SquaredHinge) {
            Err(Error::GenerationFailed { attempts, .. }) => assert_eq!(attempts, 3000),
            other => panic!("expected generation failure, got {other:?}"),
        }
    }

    #[test]
    fn separable_is_deterministic() {
        let spec = SeparableSpec {
            n: 20,
            d: 5,
            margin: 0.1,
            seed: 99,
        };
        let a = gen_separable(spec, LossModel::SquaredHinge).unwrap();
        let b = gen_separable(spec, LossModel::SquaredHinge).unwrap();
        assert_eq!(a.problem, b.problem);
        assert_eq!(a.tau_actual.to_bits(), b.tau_actual.to_bits());
    }

    #[test]
    fn rejects_non_margin_loss_and_bad_spec() {
        let spec = SeparableSpec {
            n: 4,
            d: 2,
            margin: 0.1,
            seed: 0,
        };
        assert!(gen_separable(spec, LossModel::LeastSquares).is_err());
        assert!(gen_separable(SeparableSpec { n: 1, ..spec }, LossModel::SquaredHinge).is_err());
        assert!(gen_overparam_ls(3, 3, 0).is_err());
    }

    #[test]
    fn truth_forces_label() {
        let ds = ls_from_truth(vec![1.0], 1, ParamVector::new(vec![2.0]).unwrap()).unwrap();
        assert_eq!(ds.problem.label(0), 2.0);
    }

    #[test]
    fn overparam_truth_is_stationary_for_every_sample() {
        let ds = gen_overparam_ls(3, 5, 11).unwrap();
        for i in 0..3 {
            let g = ds.problem.grad_at(&ds.truth, i).unwrap();
            assert!(g.norm_sq() < 1e-28);
        }
    }

    #[test]
    fn rbf_diagonal_and_equilateral_triangle() {
        let h = 3f64.sqrt() / 2.0;
        let p = FiniteSumProblem::new(
            vec![
                crate::Sample::new(vec![0.0, 0.0], 1.0),
                crate::Sample::new(vec![1.0, 0.0], -1.0),
                crate::Sample::new(vec![0.5, h], 1.0),
            ],
            LossModel::SquaredHinge,
        )
        .unwrap();
        let k = rbf_featurize(&p, 1.0).unwrap();
        assert_eq!(k.dim(), 3);
        for i in 0..3 {
            assert_eq!(k.features(i)[i], 1.0);
            for j in 0..3 {
                if i != j {
                    assert_relative_eq!(k.features(i)[j], 0.60653, epsilon = 1e-5);
                    assert_relative_eq!(k.features(i)[j], (-0.5f64).exp(), epsilon = 1e-12);
                }
            }
        }
        assert_eq!(k.labels(), p.labels());
        assert!(matches!(k.loss_model(), LossModel::LinearOverFeatures { .. }));
    }

    #[test]
    fn identical_points_get_identical_rows() {
        let p = FiniteSumProblem::new(
            vec![
                crate::Sample::new(vec![0.2, 0.3], 1.0),
                crate::Sample::new(vec![0.2, 0.3], 1.0),
                crate::Sample::new(vec![-0.5, 0.1], -1.0),
            ],
            LossModel::LeastSquares,
        )
        .unwrap();
        let k = rbf_featurize(&p, 0.7).unwrap();
        assert_eq!(k.features(0), k.features(1));
    }
}
