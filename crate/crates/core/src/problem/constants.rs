use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a constant came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Closed form from the data (eigenvalues, feature norms).
    Analytic,
    /// Probe-based estimate; see the estimator for which side it bounds.
    Estimated,
    /// Supplied by the user and taken at face value.
    Declared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constant {
    pub value: f64,
    pub provenance: Provenance,
}

impl Constant {
    pub fn analytic(value: f64) -> Self {
        Constant {
            value,
            provenance: Provenance::Analytic,
        }
    }

    pub fn estimated(value: f64) -> Self {
        Constant {
            value,
            provenance: Provenance::Estimated,
        }
    }

    pub fn declared(value: f64) -> Self {
        Constant {
            value,
            provenance: Provenance::Declared,
        }
    }
}

/// Smoothness, PL and growth-condition constants of a finite-sum problem.
///
/// `l`: smoothness of the mean, `l_max`: max per-sample smoothness, `mu`: PL,
/// `rho`: strong growth, `alpha`: weak growth, `sigma`: relaxation noise,
/// `tau`: margin of a separable dataset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<Constant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_max: Option<Constant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Constant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Constant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Constant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Constant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Constant>,
}

macro_rules! require {
    ($name:ident, $field:ident, $label:literal) => {
        pub fn $name(&self) -> Result<f64> {
            self.$field
                .map(|c| c.value)
                .ok_or(Error::InsufficientConstants($label))
        }
    };
}

impl ProblemConstants {
    pub fn new(n: usize) -> Self {
        ProblemConstants {
            n,
            ..Default::default()
        }
    }

    require!(require_l, l, "L");
    require!(require_l_max, l_max, "L_max");
    require!(require_mu, mu, "mu");
    require!(require_rho, rho, "rho");
    require!(require_alpha, alpha, "alpha");
    require!(require_tau, tau, "tau");

    /// σ defaults to zero (exact interpolation) when absent.
    pub fn sigma_or_zero(&self) -> f64 {
        self.sigma.map_or(0.0, |c| c.value)
    }

    /// Range checks on each present field.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidInput("n must be at least 1".into()));
        }
        let nonneg = |c: Option<Constant>, name: &str| -> Result<()> {
            match c {
                Some(c) if !(c.value >= 0.0 && c.value.is_finite()) => Err(Error::InvalidInput(
                    format!("{name} must be finite and non-negative, got {}", c.value),
                )),
                _ => Ok(()),
            }
        };
        nonneg(self.l, "L")?;
        nonneg(self.l_max, "L_max")?;
        nonneg(self.mu, "mu")?;
        nonneg(self.alpha, "alpha")?;
        nonneg(self.sigma, "sigma")?;
        nonneg(self.rho, "rho")?;
        if let Some(t) = self.tau {
            if !(t.value > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "tau must be positive, got {}",
                    t.value
                )));
            }
        }
        Ok(())
    }

    pub fn with(mut self, field: ConstantField, c: Constant) -> Self {
        *self.slot(field) = Some(c);
        self
    }

    pub fn get(&self, field: ConstantField) -> Option<Constant> {
        match field {
            ConstantField::L => self.l,
            ConstantField::LMax => self.l_max,
            ConstantField::Mu => self.mu,
            ConstantField::Rho => self.rho,
            ConstantField::Alpha => self.alpha,
            ConstantField::Sigma => self.sigma,
            ConstantField::Tau => self.tau,
        }
    }

    fn slot(&mut self, field: ConstantField) -> &mut Option<Constant> {
        match field {
            ConstantField::L => &mut self.l,
            ConstantField::LMax => &mut self.l_max,
            ConstantField::Mu => &mut self.mu,
            ConstantField::Rho => &mut self.rho,
            ConstantField::Alpha => &mut self.alpha,
            ConstantField::Sigma => &mut self.sigma,
            ConstantField::Tau => &mut self.tau,
        }
    }

    /// Fill fields that are absent here from `other`.
    pub fn merge_missing(mut self, other: &ProblemConstants) -> Self {
        for f in ConstantField::ALL {
            if self.get(f).is_none() {
                *self.slot(f) = other.get(f);
            }
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantField {
    L,
    LMax,
    Mu,
    Rho,
    Alpha,
    Sigma,
    Tau,
}

impl ConstantField {
    pub const ALL: [ConstantField; 7] = [
        ConstantField::L,
        ConstantField::LMax,
        ConstantField::Mu,
        ConstantField::Rho,
        ConstantField::Alpha,
        ConstantField::Sigma,
        ConstantField::Tau,
    ];
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_keeps_provenance() {
        let c = ProblemConstants::new(3)
            .with(ConstantField::L, Constant::analytic(1.5))
            .with(ConstantField::Rho, Constant::estimated(2.0));
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"provenance\":\"analytic\""));
        assert!(s.contains("\"provenance\":\"estimated\""));
        assert!(!s.contains("alpha"));
        let back: ProblemConstants = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn missing_constant_is_reported() {
        let c = ProblemConstants::new(2);
        assert!(matches!(c.require_rho(), Err(Error::InsufficientConstants("rho"))));
        assert_eq!(c.sigma_or_zero(), 0.0);
    }

    #[test]
    fn validate_ranges() {
        assert!(ProblemConstants::new(0).validate().is_err());
        let bad = ProblemConstants::new(2).with(ConstantField::L, Constant::declared(-1.0));
        assert!(bad.validate().is_err());
        let ok = ProblemConstants::new(2).with(ConstantField::Tau, Constant::declared(0.1));
        assert!(ok.validate().is_ok());
    }
}
