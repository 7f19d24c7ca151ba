use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_buffer::NormOrder;

/// Which side of the translation task an attack touches: the images fed to
/// the generator, or the reference images the generator is judged against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackDomain {
    Input,
    Target,
}

impl fmt::Display for AttackDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackDomain::Input => "input",
            AttackDomain::Target => "target",
        })
    }
}

impl FromStr for AttackDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(AttackDomain::Input),
            "target" => Ok(AttackDomain::Target),
            other => Err(Error::InvalidArgument(format!(
                "unknown attack domain {other:?}; expected \"input\" or \"target\""
            ))),
        }
    }
}

/// Budget for the image-agnostic additive attack.
///
/// `xi` is expressed in 8-bit intensity units to match how such budgets are
/// usually quoted; it is divided by 255 when compared against perturbations
/// stored in `[0, 1]` scale. `delta` is the tolerated residual non-fooling
/// fraction: aggregation stops once at least `1 - delta` of the images flip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniversalBudget {
    pub xi: f64,
    pub p: NormOrder,
    pub delta: f64,
    #[serde(default = "default_max_passes")]
    pub max_passes: usize,
}

fn default_max_passes() -> usize {
    10
}

impl UniversalBudget {
    pub fn new(xi: f64, p: NormOrder, delta: f64) -> Result<Self> {
        let b = Self {
            xi,
            p,
            delta,
            max_passes: default_max_passes(),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.xi.is_finite() || self.xi <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "xi must be positive, got {}",
                self.xi
            )));
        }
        if !self.delta.is_finite() || !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::InvalidArgument(format!(
                "delta must lie in [0, 1], got {}",
                self.delta
            )));
        }
        if self.max_passes == 0 {
            return Err(Error::InvalidArgument("max_passes must be >= 1".into()));
        }
        Ok(())
    }

    /// Ball radius in `[0, 1]` pixel scale.
    pub fn xi_unit(&self) -> f64 {
        self.xi / 255.0
    }
}

/// Budget for the spatial flow attack. `xi_f` bounds each pixel's
/// displacement vector in l2 length (pixels); `lambda_flow` weighs the
/// smoothness term; `iters` is the optimizer iteration count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowBudget {
    pub xi_f: f64,
    #[serde(default = "default_lambda_flow")]
    pub lambda_flow: f64,
    #[serde(default = "default_flow_iters")]
    pub iters: usize,
}

fn default_lambda_flow() -> f64 {
    0.05
}

fn default_flow_iters() -> usize {
    200
}

impl FlowBudget {
    pub fn new(xi_f: f64) -> Result<Self> {
        let b = Self {
            xi_f,
            lambda_flow: default_lambda_flow(),
            iters: default_flow_iters(),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.xi_f.is_finite() || self.xi_f <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "xi_f must be positive, got {}",
                self.xi_f
            )));
        }
        if !self.lambda_flow.is_finite() || self.lambda_flow < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "lambda_flow must be >= 0, got {}",
                self.lambda_flow
            )));
        }
        Ok(())
    }

    /// Per-iteration step length of the sign-gradient optimizer.
    pub fn step(&self) -> f64 {
        self.xi_f / 20.0
    }

    /// `lambda_flow` is expressed in normalized units: it weighs the MEAN
    /// per-pixel roughness, so one value works across resolutions. The
    /// summed total-variation loss needs this converted weight.
    pub fn lambda_effective(&self, height: usize, width: usize) -> f64 {
        self.lambda_flow / (height * width) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn universal_budget_validates() {
        assert!(UniversalBudget::new(2000.0, NormOrder::LInf, 0.2).is_ok());
        assert!(UniversalBudget::new(0.0, NormOrder::L2, 0.2).is_err());
        assert!(UniversalBudget::new(10.0, NormOrder::L2, 1.5).is_err());
    }

    #[test]
    fn xi_unit_is_8bit_scaled() {
        let b = UniversalBudget::new(510.0, NormOrder::LInf, 0.2).unwrap();
        assert!((b.xi_unit() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn flow_budget_validates_and_steps() {
        let b = FlowBudget::new(2.0).unwrap();
        assert!((b.step() - 0.1).abs() < 1e-12);
        assert_eq!(b.iters, 200);
        assert!(FlowBudget::new(-1.0).is_err());
    }
}
