//! Scalar link functions.
//!
//! Every link the solver can work with, learned or fixed, is exposed through
//! the [`Link`] trait: a value, a derivative, and the squared RKHS norm that
//! enters the Tikhonov term.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// A scalar function `phi` applied entrywise to the low-rank matrix.
pub trait Link: Sync {
    fn value(&self, x: f64) -> f64;

    fn derivative(&self, x: f64) -> f64;

    fn value_and_derivative(&self, x: f64) -> (f64, f64) {
        (self.value(x), self.derivative(x))
    }

    /// Squared RKHS norm of the function, excluding any norm-free offset.
    ///
    /// Analytic links are not dictionary elements and contribute nothing.
    fn norm_sq(&self) -> f64 {
        0.0
    }
}

/// Closed-form monotone links used for ground truth and for frozen-link runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalyticLink {
    Identity,
    /// Logistic function `1 / (1 + e^{-x})`.
    Sigmoid,
    /// Continuous three-piece linear link: slope 1 on `[-1, 1]`, slope 1/4 outside.
    Piecewise,
}

impl AnalyticLink {
    pub const ALL: [AnalyticLink; 3] = [AnalyticLink::Identity, AnalyticLink::Sigmoid, AnalyticLink::Piecewise];

    pub fn name(&self) -> &'static str {
        match self {
            AnalyticLink::Identity => "identity",
            AnalyticLink::Sigmoid => "sigmoid",
            AnalyticLink::Piecewise => "piecewise",
        }
    }
}

const PIECEWISE_OUTER_SLOPE: f64 = 0.25;

impl Link for AnalyticLink {
    fn value(&self, x: f64) -> f64 {
        match self {
            AnalyticLink::Identity => x,
            AnalyticLink::Sigmoid => {
                // split on sign so exp never overflows
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            AnalyticLink::Piecewise => {
                if x.abs() <= 1.0 {
                    x
                } else {
                    x.signum() * (1.0 + PIECEWISE_OUTER_SLOPE * (x.abs() - 1.0))
                }
            }
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        match self {
            AnalyticLink::Identity => 1.0,
            AnalyticLink::Sigmoid => {
                let s = self.value(x);
                s * (1.0 - s)
            }
            AnalyticLink::Piecewise => {
                if x.abs() <= 1.0 {
                    1.0
                } else {
                    PIECEWISE_OUTER_SLOPE
                }
            }
        }
    }
}

impl fmt::Display for AnalyticLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnalyticLink {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" | "id" => Ok(AnalyticLink::Identity),
            "sigmoid" | "logistic" => Ok(AnalyticLink::Sigmoid),
            "piecewise" => Ok(AnalyticLink::Piecewise),
            other => Err(Error::InvalidConfig(format!("unknown link `{other}`"))),
        }
    }
}
