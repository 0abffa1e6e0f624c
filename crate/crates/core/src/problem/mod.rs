//! Finite-sum objectives `f(x) = (1/n) Σ f(x; i)` over a labelled dataset.
//!
//! Every loss model here is a function of the linear score `aᵢᵀx`, optionally
//! plus a ridge term, so a per-sample gradient is always
//! `feature_coef · aᵢ + ridge_coef · x`. The optimizers exploit that to take
//! steps without allocating.

mod analytic;
mod constants;

pub use analytic::{analytic_constants, least_squares_optimum, LeastSquaresOptimum};
pub use constants::{Constant, ConstantField, ProblemConstants, Provenance};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecops::{self, CompensatedSum};

/// Dense parameter vector with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if !vecops::all_finite(&values) {
            return Err(Error::NonFinite {
                what: "parameter vector",
            });
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_sq(&self) -> f64 {
        vecops::norm_sq(&self.0)
    }

    pub fn dist_sq(&self, other: &ParamVector) -> f64 {
        vecops::dist_sq(&self.0, &other.0)
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        ParamVector::new(v)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Vec<f64> {
        p.0
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: f64,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: f64) -> Self {
        Sample { features, label }
    }
}

/// Per-sample loss as a function of the score `t = aᵀx` and label `y`.
///
/// * `LeastSquares`: `½(t − y)²`
/// * `SquaredHinge`: `max(0, 1 − y t)²`
/// * `SquaredHingeL2`: squared hinge plus `λ‖x‖²` on every sample
/// * `Logistic`: `log(1 + exp(−y t))`
/// * `LinearOverFeatures`: the wrapped loss applied to kernel features
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum LossModel {
    LeastSquares,
    SquaredHinge,
    SquaredHingeL2 { lambda: f64 },
    Logistic,
    LinearOverFeatures { base: Box<LossModel> },
}

impl LossModel {
    pub fn name(&self) -> &'static str {
        match self {
            LossModel::LeastSquares => "least_squares",
            LossModel::SquaredHinge => "squared_hinge",
            LossModel::SquaredHingeL2 { .. } => "squared_hinge_l2",
            LossModel::Logistic => "logistic",
            LossModel::LinearOverFeatures { .. } => "linear_over_features",
        }
    }

    /// The loss actually evaluated on the score (strips the feature wrapper).
    pub fn scalar_loss(&self) -> &LossModel {
        match self {
            LossModel::LinearOverFeatures { base } => base.scalar_loss(),
            other => other,
        }
    }

    pub fn is_margin_loss(&self) -> bool {
        matches!(
            self.scalar_loss(),
            LossModel::SquaredHinge | LossModel::SquaredHingeL2 { .. } | LossModel::Logistic
        )
    }

    fn ridge(&self) -> f64 {
        match self.scalar_loss() {
            LossModel::SquaredHingeL2 { lambda } => *lambda,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossModel::SquaredHingeL2 { lambda } if !(*lambda > 0.0 && lambda.is_finite()) => {
                Err(Error::InvalidInput(format!(
                    "L2 regularization must be positive and finite, got {lambda}"
                )))
            }
            LossModel::LinearOverFeatures { base } => match **base {
                LossModel::LinearOverFeatures { .. } => Err(Error::InvalidInput(
                    "nested feature wrappers are not supported".into(),
                )),
                ref b => b.validate(),
            },
            _ => Ok(()),
        }
    }

    /// Loss value and derivative with respect to the score.
    #[inline]
    fn eval_score(&self, t: f64, y: f64) -> (f64, f64) {
        match self.scalar_loss() {
            LossModel::LeastSquares => {
                let r = t - y;
                (0.5 * r * r, r)
            }
            LossModel::SquaredHinge | LossModel::SquaredHingeL2 { .. } => {
                let gap = (1.0 - y * t).max(0.0);
                (gap * gap, -2.0 * gap * y)
            }
            LossModel::Logistic => {
                let z = y * t;
                (softplus(-z), -y * sigmoid(-z))
            }
            LossModel::LinearOverFeatures { .. } => unreachable!("scalar_loss strips wrappers"),
        }
    }
}

/// `log(1 + e^v)` without overflow.
#[inline]
fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Coefficients of a per-sample gradient: `∇f(x; i) = feature_coef·aᵢ + ridge_coef·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradParts {
    pub feature_coef: f64,
    pub ridge_coef: f64,
}

/// Loss, squared full-gradient norm and mean squared per-sample gradient norm at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthTerms {
    pub loss: f64,
    pub grad_norm_sq: f64,
    pub mean_sq_grad: f64,
}

const COMPENSATED_THRESHOLD: usize = 10_000;

/// A dataset paired with a loss model. Features are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteSumProblem {
    features: Vec<f64>,
    labels: Vec<f64>,
    feature_norms_sq: Vec<f64>,
    dim: usize,
    loss: LossModel,
}

impl FiniteSumProblem {
    pub fn new(samples: Vec<Sample>, loss: LossModel) -> Result<Self> {
        let dim = samples
            .first()
            .map(|s| s.features.len())
            .ok_or_else(|| Error::InvalidInput("a problem needs at least one sample".into()))?;
        let mut features = Vec::with_capacity(samples.len() * dim);
        let mut labels = Vec::with_capacity(samples.len());
        for s in samples {
            if s.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.features.len(),
                });
            }
            features.extend_from_slice(&s.features);
            labels.push(s.label);
        }
        Self::from_flat(features, labels, dim, loss)
    }

    pub fn from_flat(
        features: Vec<f64>,
        labels: Vec<f64>,
        dim: usize,
        loss: LossModel,
    ) -> Result<Self> {
        loss.validate()?;
        if labels.is_empty() {
            return Err(Error::InvalidInput(
                "a problem needs at least one sample".into(),
            ));
        }
        if dim == 0 {
            return Err(Error::InvalidInput("feature dimension must be positive".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                got: features.len(),
            });
        }
        if !vecops::all_finite(&features) {
            return Err(Error::NonFinite { what: "features" });
        }
        if !vecops::all_finite(&labels) {
            return Err(Error::NonFinite { what: "labels" });
        }
        let feature_norms_sq = features.chunks_exact(dim).map(vecops::norm_sq).collect();
        Ok(FiniteSumProblem {
            features,
            labels,
            feature_norms_sq,
            dim,
            loss,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn loss_model(&self) -> &LossModel {
        &self.loss
    }

    pub fn with_loss(&self, loss: LossModel) -> Result<Self> {
        Self::from_flat(self.features.clone(), self.labels.clone(), self.dim, loss)
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn feature_matrix(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn feature_norm_sq(&self, i: usize) -> f64 {
        self.feature_norms_sq[i]
    }

    pub fn samples(&self) -> impl Iterator<Item = Sample> + '_ {
        (0..self.n()).map(|i| Sample::new(self.features(i).to_vec(), self.labels[i]))
    }

    /// Restriction of the problem to a subset of sample indices.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            self.check_index(i)?;
            features.extend_from_slice(self.features(i));
            labels.push(self.labels[i]);
        }
        Self::from_flat(features, labels, self.dim, self.loss.clone())
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            Err(Error::IndexOutOfRange { index: i, n: self.n() })
        } else {
            Ok(())
        }
    }

    fn check_point(&self, x: &ParamVector) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn loss_at(&self, x: &ParamVector, i: usize) -> Result<f64> {
        self.check_point(x)?;
        self.check_index(i)?;
        Ok(self.sample_loss(x.as_slice(), i))
    }

    pub fn grad_at(&self, x: &ParamVector, i: usize) -> Result<ParamVector> {
        self.check_point(x)?;
        self.check_index(i)?;
        let mut g = vec![0.0; self.dim];
        self.add_sample_grad(x.as_slice(), i, 1.0, &mut g);
        ParamVector::new(g)
    }

    pub fn full_loss(&self, x: &ParamVector) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.mean_loss(x.as_slice()))
    }

    pub fn full_grad(&self, x: &ParamVector) -> Result<ParamVector> {
        self.check_point(x)?;
        ParamVector::new(self.mean_grad(x.as_slice()))
    }

    /// Loss, gradient norm and SGC numerator at `x`.
    pub fn growth_terms(&self, x: &ParamVector) -> Result<GrowthTerms> {
        self.check_point(x)?;
        Ok(self.growth_terms_raw(x.as_slice()))
    }

    // ---- unchecked kernels (x has length dim, i < n) ----

    #[inline]
    pub fn score(&self, x: &[f64], i: usize) -> f64 {
        vecops::dot(self.features(i), x)
    }

    #[inline]
    pub fn sample_loss(&self, x: &[f64], i: usize) -> f64 {
        let (l, _) = self.loss.eval_score(self.score(x, i), self.labels[i]);
        let ridge = self.loss.ridge();
        if ridge > 0.0 {
            l + ridge * vecops::norm_sq(x)
        } else {
            l
        }
    }

    #[inline]
    pub fn grad_parts(&self, x: &[f64], i: usize) -> GradParts {
        let (_, dl) = self.loss.eval_score(self.score(x, i), self.labels[i]);
        GradParts {
            feature_coef: dl,
            ridge_coef: 2.0 * self.loss.ridge(),
        }
    }

    /// `out += scale · ∇f(x; i)`
    #[inline]
    pub fn add_sample_grad(&self, x: &[f64], i: usize, scale: f64, out: &mut [f64]) {
        let parts = self.grad_parts(x, i);
        vecops::axpy(scale * parts.feature_coef, self.features(i), out);
        if parts.ridge_coef != 0.0 {
            vecops::axpy(scale * parts.ridge_coef, x, out);
        }
    }

    /// `‖∇f(x; i)‖²` from the gradient parts, without materializing the gradient.
    #[inline]
    pub fn sample_grad_norm_sq(&self, x: &[f64], i: usize) -> f64 {
        let p = self.grad_parts(x, i);
        if p.ridge_coef == 0.0 {
            p.feature_coef * p.feature_coef * self.feature_norms_sq[i]
        } else {
            let mut g = vec![0.0; self.dim];
            self.add_sample_grad(x, i, 1.0, &mut g);
            vecops::norm_sq(&g)
        }
    }

    /// One incremental step `x ← x − η ∇f(x; i)`, in place.
    #[inline]
    pub fn step(&self, x: &mut [f64], i: usize, eta: f64) {
        let p = self.grad_parts(x, i);
        if p.ridge_coef != 0.0 {
            let shrink = 1.0 - eta * p.ridge_coef;
            x.iter_mut().for_each(|v| *v *= shrink);
        }
        vecops::axpy(-eta * p.feature_coef, self.features(i), x);
    }

    pub fn mean_loss(&self, x: &[f64]) -> f64 {
        let n = self.n();
        if n >= COMPENSATED_THRESHOLD {
            let mut acc = CompensatedSum::default();
            (0..n).for_each(|i| acc.add(self.sample_loss(x, i)));
            acc.value() / n as f64
        } else {
            (0..n).map(|i| self.sample_loss(x, i)).sum::<f64>() / n as f64
        }
    }

    pub fn mean_grad(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let inv_n = 1.0 / n as f64;
        let mut g = vec![0.0; self.dim];
        let mut ridge_sum = 0.0;
        if n >= COMPENSATED_THRESHOLD {
            let mut acc = vec![CompensatedSum::default(); self.dim];
            for i in 0..n {
                let p = self.grad_parts(x, i);
                ridge_sum += p.ridge_coef;
                for (a, f) in acc.iter_mut().zip(self.features(i)) {
                    a.add(p.feature_coef * f);
                }
            }
            for (gj, a) in g.iter_mut().zip(&acc) {
                *gj = a.value() * inv_n;
            }
        } else {
            for i in 0..n {
                let p = self.grad_parts(x, i);
                ridge_sum += p.ridge_coef;
                vecops::axpy(p.feature_coef, self.features(i), &mut g);
            }
            g.iter_mut().for_each(|v| *v *= inv_n);
        }
        if ridge_sum != 0.0 {
            vecops::axpy(ridge_sum * inv_n, x, &mut g);
        }
        g
    }

    pub fn mean_sq_grad(&self, x: &[f64]) -> f64 {
        (0..self.n())
            .map(|i| self.sample_grad_norm_sq(x, i))
            .sum::<f64>()
            / self.n() as f64
    }

    pub fn growth_terms_raw(&self, x: &[f64]) -> GrowthTerms {
        GrowthTerms {
            loss: self.mean_loss(x),
            grad_norm_sq: vecops::norm_sq(&self.mean_grad(x)),
            mean_sq_grad: self.mean_sq_grad(x),
        }
    }
}
