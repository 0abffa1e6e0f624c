//! Closed-form constants for models whose curvature is a function of the
//! feature Gram matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::constants::{Constant, ConstantField, ProblemConstants};
use super::{FiniteSumProblem, LossModel, ParamVector};
use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest one count as zero.
const RANK_TOL: f64 = 1e-10;
/// Largest n for which the sample-space growth constants are computed.
const MAX_GROWTH_N: usize = 2000;

fn design_matrix(p: &FiniteSumProblem) -> DMatrix<f64> {
    DMatrix::from_row_slice(p.n(), p.dim(), p.feature_matrix())
}

/// Eigen-decomposition of the sample-space Gram matrix `AAᵀ` (n × n).
fn sample_gram(p: &FiniteSumProblem) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let a = design_matrix(p);
    SymmetricEigen::new(&a * a.transpose())
}

/// Nonzero spectrum of `(1/n) AᵀA`, computed in whichever space is smaller.
fn hessian_spectrum(p: &FiniteSumProblem) -> Vec<f64> {
    let a = design_matrix(p);
    let gram = if p.n() <= p.dim() {
        &a * a.transpose()
    } else {
        a.transpose() * &a
    };
    let n = p.n() as f64;
    let eig = gram.symmetric_eigenvalues();
    let top = eig.iter().cloned().fold(0.0_f64, f64::max);
    eig.iter()
        .filter(|&&v| v > RANK_TOL * top && top > 0.0)
        .map(|v| v / n)
        .collect()
}

#[derive(Debug, Clone)]
pub struct LeastSquaresOptimum {
    /// Minimum-norm minimizer.
    pub x: ParamVector,
    pub f_star: f64,
    /// Labels lie in the range of the design matrix (the problem interpolates).
    pub consistent: bool,
}

/// Minimum-norm least-squares solution through the SVD pseudoinverse.
pub fn least_squares_optimum(p: &FiniteSumProblem) -> Result<LeastSquaresOptimum> {
    if !matches!(p.loss_model().scalar_loss(), LossModel::LeastSquares) {
        return Err(Error::AnalyticUnavailable(p.loss_model().name()));
    }
    let a = design_matrix(p);
    let y = DVector::from_column_slice(p.labels());
    let svd = a.clone().svd(true, true);
    let top = svd.singular_values.max();
    let x = svd
        .solve(&y, RANK_TOL.sqrt() * top)
        .map_err(|e| Error::Estimation(e.to_string()))?;
    let x = ParamVector::new(x.iter().cloned().collect())?;
    let f_star = p.mean_loss(x.as_slice());
    let scale = y.norm_squared() / p.n() as f64;
    Ok(LeastSquaresOptimum {
        x,
        f_star,
        consistent: f_star <= 1e-20 * (1.0 + scale),
    })
}

/// Exact SGC and WGC constants of a consistent least-squares problem.
///
/// Writing the residual as `u = A(x − x*) = W z` over the range of `AAᵀ`,
/// the growth ratios become Rayleigh quotients of small symmetric matrices.
fn least_squares_growth(p: &FiniteSumProblem, l: f64) -> Option<(f64, f64)> {
    if p.n() > MAX_GROWTH_N {
        return None;
    }
    let eig = sample_gram(p);
    let top = eig.eigenvalues.max();
    if top <= 0.0 {
        return None;
    }
    let keep: Vec<usize> = (0..p.n())
        .filter(|&k| eig.eigenvalues[k] > RANK_TOL * top)
        .collect();
    let r = keep.len();
    let w = DMatrix::from_fn(p.n(), r, |i, c| eig.eigenvectors[(i, keep[c])]);
    let d = DMatrix::from_diagonal(&DVector::from_fn(p.n(), |i, _| p.feature_norm_sq(i)));
    let b = w.transpose() * d * &w;
    let inv_sqrt = DMatrix::from_diagonal(&DVector::from_fn(r, |c, _| {
        1.0 / eig.eigenvalues[keep[c]].sqrt()
    }));
    let c = &inv_sqrt * &b * &inv_sqrt;
    let rho = p.n() as f64 * c.symmetric_eigenvalues().max();
    let alpha = b.symmetric_eigenvalues().max() / l;
    Some((rho.max(1.0), alpha))
}

/// Constants available in closed form for the problem's loss model.
///
/// Least squares gets `L`, `L_max`, `μ` (smallest nonzero eigenvalue of the
/// Hessian) and, when the labels are consistent, exact `ρ` and `α`. Squared
/// hinge with ridge gets an upper bound on `L` and `μ = 2λ`. Hinge and
/// logistic losses only get smoothness constants, and only through the
/// feature wrapper; unwrapped they report [`Error::AnalyticUnavailable`].
pub fn analytic_constants(p: &FiniteSumProblem) -> Result<ProblemConstants> {
    let model = p.loss_model();
    if matches!(model, LossModel::SquaredHinge | LossModel::Logistic) {
        return Err(Error::AnalyticUnavailable(model.name()));
    }
    let spectrum = hessian_spectrum(p);
    let top = spectrum.iter().cloned().fold(0.0_f64, f64::max);
    let bottom = spectrum.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_norm_sq = (0..p.n())
        .map(|i| p.feature_norm_sq(i))
        .fold(0.0_f64, f64::max);

    let mut c = ProblemConstants::new(p.n());
    match model.scalar_loss() {
        LossModel::LeastSquares => {
            c = c
                .with(ConstantField::L, Constant::analytic(top))
                .with(ConstantField::LMax, Constant::analytic(max_norm_sq));
            if bottom.is_finite() {
                c = c.with(ConstantField::Mu, Constant::analytic(bottom));
            }
            if top > 0.0 && least_squares_optimum(p)?.consistent {
                if let Some((rho, alpha)) = least_squares_growth(p, top) {
                    c = c
                        .with(ConstantField::Rho, Constant::analytic(rho))
                        .with(ConstantField::Alpha, Constant::analytic(alpha))
                        .with(ConstantField::Sigma, Constant::analytic(0.0));
                }
            }
        }
        LossModel::SquaredHingeL2 { lambda } => {
            c = c
                .with(ConstantField::L, Constant::analytic(2.0 * top + 2.0 * lambda))
                .with(
                    ConstantField::LMax,
                    Constant::analytic(2.0 * max_norm_sq + 2.0 * lambda),
                )
                .with(ConstantField::Mu, Constant::analytic(2.0 * lambda));
        }
        LossModel::SquaredHinge => {
            c = c
                .with(ConstantField::L, Constant::analytic(2.0 * top))
                .with(ConstantField::LMax, Constant::analytic(2.0 * max_norm_sq));
        }
        LossModel::Logistic => {
            c = c
                .with(ConstantField::L, Constant::analytic(0.25 * top))
                .with(ConstantField::LMax, Constant::analytic(0.25 * max_norm_sq));
        }
        LossModel::LinearOverFeatures { .. } => unreachable!(),
    }
    Ok(c)
}
