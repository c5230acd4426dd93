//! Link functions mapping intensities to linear predictors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Link `eta` with `eta(intensity) = linear predictor`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkFunction {
    Identity,
    Log,
    /// `x` for `x >= 1`, `log(x) + 1` below.
    #[default]
    PiecewiseLogLinear,
}

impl LinkFunction {
    pub const ALL: [LinkFunction; 3] = [
        LinkFunction::Identity,
        LinkFunction::Log,
        LinkFunction::PiecewiseLogLinear,
    ];

    pub fn eval(self, x: f64) -> Result<f64> {
        match self {
            LinkFunction::Identity => Ok(x),
            _ if !(x > 0.0) => Err(Error::DomainError { x }),
            LinkFunction::Log => Ok(x.ln()),
            LinkFunction::PiecewiseLogLinear => Ok(if x >= 1.0 { x } else { x.ln() + 1.0 }),
        }
    }

    pub fn inverse(self, y: f64) -> f64 {
        match self {
            LinkFunction::Identity => y,
            LinkFunction::Log => y.exp(),
            LinkFunction::PiecewiseLogLinear => {
                if y >= 1.0 {
                    y
                } else {
                    (y - 1.0).exp()
                }
            }
        }
    }

    pub fn inverse_derivative(self, y: f64) -> f64 {
        match self {
            LinkFunction::Identity => 1.0,
            LinkFunction::Log => y.exp(),
            LinkFunction::PiecewiseLogLinear => {
                if y >= 1.0 {
                    1.0
                } else {
                    (y - 1.0).exp()
                }
            }
        }
    }

    /// Second derivative of the inverse; the piecewise variant jumps at 1
    /// and takes the right-hand value there.
    pub fn inverse_second_derivative(self, y: f64) -> f64 {
        match self {
            LinkFunction::Identity => 0.0,
            LinkFunction::Log => y.exp(),
            LinkFunction::PiecewiseLogLinear => {
                if y >= 1.0 {
                    0.0
                } else {
                    (y - 1.0).exp()
                }
            }
        }
    }

    /// `(value, first, second)` derivatives of the inverse link at `y`.
    #[inline]
    pub(crate) fn inverse_with_derivatives(self, y: f64) -> (f64, f64, f64) {
        match self {
            LinkFunction::Identity => (y, 1.0, 0.0),
            LinkFunction::Log => {
                let e = y.exp();
                (e, e, e)
            }
            LinkFunction::PiecewiseLogLinear => {
                if y >= 1.0 {
                    (y, 1.0, 0.0)
                } else {
                    let e = (y - 1.0).exp();
                    (e, e, e)
                }
            }
        }
    }
}

impl fmt::Display for LinkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkFunction::Identity => "identity",
            LinkFunction::Log => "log",
            LinkFunction::PiecewiseLogLinear => "piecewise-log-linear",
        })
    }
}

impl FromStr for LinkFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "log" => Ok(Self::Log),
            "piecewise" | "piecewise-log-linear" => Ok(Self::PiecewiseLogLinear),
            other => Err(Error::Parse(format!(
                "unknown link `{other}` (expected identity, log, piecewise-log-linear)"
            ))),
        }
    }
}
