//! f-divergence catalogue.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Generator `f`, its derivative, the inverse derivative and the convex
/// conjugate of an f-divergence.
///
/// Implemented by [`FDivergence`]; the trait exists so verification code can
/// be exercised against deliberately broken generators.
pub trait Divergence: Send + Sync {
    fn name(&self) -> &'static str;
    fn generator(&self, x: f64) -> Result<f64>;
    fn derivative(&self, x: f64) -> Result<f64>;
    fn derivative_inverse(&self, y: f64) -> Result<f64>;
    fn conjugate(&self, y: f64) -> Result<f64>;
    /// `(f*)'(y)`.
    fn conjugate_derivative(&self, y: f64) -> Result<f64>;
    /// `(f*)''(y)`; central differences of the first derivative by default.
    fn conjugate_second_derivative(&self, y: f64) -> Result<f64> {
        let h = 1e-6 * y.abs().max(1.0);
        Ok((self.conjugate_derivative(y + h)? - self.conjugate_derivative(y - h)?) / (2.0 * h))
    }
    fn conjugate_domain(&self) -> &'static str;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FDivergence {
    /// `f(x) = x log x`.
    KlReverse,
    /// `f(x) = (x - 1)^2`.
    Chi2,
    /// `f(x) = |x - 1| / 2`.
    TotalVariation,
    JensenShannon,
    /// `f(x) = (sqrt(x) - 1)^2`.
    SquaredHellinger,
}

impl FDivergence {
    pub const ALL: [FDivergence; 5] = [
        FDivergence::KlReverse,
        FDivergence::Chi2,
        FDivergence::TotalVariation,
        FDivergence::JensenShannon,
        FDivergence::SquaredHellinger,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FDivergence::KlReverse => "kl_reverse",
            FDivergence::Chi2 => "chi2",
            FDivergence::TotalVariation => "total_variation",
            FDivergence::JensenShannon => "jensen_shannon",
            FDivergence::SquaredHellinger => "squared_hellinger",
        }
    }

    fn domain_err(self, value: f64, domain: &'static str) -> Error {
        Error::Domain {
            divergence: self.as_str(),
            value,
            domain,
        }
    }
}

impl fmt::Display for FDivergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FDivergence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FDivergence::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown divergence '{s}'")))
    }
}

fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

const LN_2: f64 = std::f64::consts::LN_2;

impl Divergence for FDivergence {
    fn name(&self) -> &'static str {
        self.as_str()
    }

    fn generator(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) || !x.is_finite() {
            return Err(self.domain_err(x, "x >= 0"));
        }
        Ok(match self {
            FDivergence::KlReverse => xlogx(x),
            FDivergence::Chi2 => (x - 1.0) * (x - 1.0),
            FDivergence::TotalVariation => 0.5 * (x - 1.0).abs(),
            FDivergence::JensenShannon => -(x + 1.0) * ((x + 1.0) / 2.0).ln() + xlogx(x),
            FDivergence::SquaredHellinger => {
                let r = x.sqrt() - 1.0;
                r * r
            }
        })
    }

    fn derivative(&self, x: f64) -> Result<f64> {
        match self {
            FDivergence::Chi2 if x >= 0.0 => Ok(2.0 * (x - 1.0)),
            // Subgradient; zero at the kink.
            FDivergence::TotalVariation if x >= 0.0 => Ok(if x > 1.0 {
                0.5
            } else if x < 1.0 {
                -0.5
            } else {
                0.0
            }),
            FDivergence::KlReverse if x > 0.0 => Ok(x.ln() + 1.0),
            FDivergence::JensenShannon if x > 0.0 => Ok((2.0 * x / (x + 1.0)).ln()),
            FDivergence::SquaredHellinger if x > 0.0 => Ok(1.0 - 1.0 / x.sqrt()),
            FDivergence::Chi2 | FDivergence::TotalVariation => Err(self.domain_err(x, "x >= 0")),
            _ => Err(self.domain_err(x, "x > 0")),
        }
        .and_then(|v| if v.is_finite() { Ok(v) } else { Err(self.domain_err(x, "x finite")) })
    }

    fn derivative_inverse(&self, y: f64) -> Result<f64> {
        if y.is_nan() {
            return Err(self.domain_err(y, "y not NaN"));
        }
        match self {
            FDivergence::KlReverse => Ok((y - 1.0).exp()),
            // The affine formula is the inverse on all of R.
            FDivergence::Chi2 => Ok(y / 2.0 + 1.0),
            FDivergence::TotalVariation => Err(self.domain_err(y, "f' is not invertible")),
            FDivergence::JensenShannon if y < LN_2 => {
                let e = y.exp();
                Ok(e / (2.0 - e))
            }
            FDivergence::JensenShannon => Err(self.domain_err(y, "y < log 2")),
            FDivergence::SquaredHellinger if y < 1.0 => Ok(1.0 / ((1.0 - y) * (1.0 - y))),
            FDivergence::SquaredHellinger => Err(self.domain_err(y, "y < 1")),
        }
    }

    fn conjugate(&self, y: f64) -> Result<f64> {
        if y.is_nan() {
            return Err(self.domain_err(y, "y not NaN"));
        }
        match self {
            FDivergence::KlReverse => Ok((y - 1.0).exp()),
            FDivergence::Chi2 => Ok(y + y * y / 4.0),
            FDivergence::TotalVariation if (-0.5..=0.5).contains(&y) => Ok(y),
            FDivergence::TotalVariation => Err(self.domain_err(y, "[-1/2, 1/2]")),
            FDivergence::JensenShannon if y < LN_2 => Ok(-(2.0 - y.exp()).ln()),
            FDivergence::JensenShannon => Err(self.domain_err(y, "y < log 2")),
            FDivergence::SquaredHellinger if y < 1.0 => Ok(y / (1.0 - y)),
            FDivergence::SquaredHellinger => Err(self.domain_err(y, "y < 1")),
        }
    }

    fn conjugate_derivative(&self, y: f64) -> Result<f64> {
        match self {
            FDivergence::TotalVariation => self.conjugate(y).map(|_| 1.0),
            _ => self.derivative_inverse(y),
        }
    }

    fn conjugate_second_derivative(&self, y: f64) -> Result<f64> {
        self.conjugate(y)?;
        Ok(match self {
            FDivergence::KlReverse => (y - 1.0).exp(),
            FDivergence::Chi2 => 0.5,
            FDivergence::TotalVariation => 0.0,
            FDivergence::JensenShannon => {
                let e = y.exp();
                2.0 * e / ((2.0 - e) * (2.0 - e))
            }
            FDivergence::SquaredHellinger => 2.0 / (1.0 - y).powi(3),
        })
    }

    fn conjugate_domain(&self) -> &'static str {
        match self {
            FDivergence::KlReverse | FDivergence::Chi2 => "R",
            FDivergence::TotalVariation => "[-1/2, 1/2]",
            FDivergence::JensenShannon => "y < log 2",
            FDivergence::SquaredHellinger => "y < 1",
        }
    }
}

pub fn generator_value(div: &dyn Divergence, x: f64) -> Result<f64> {
    div.generator(x)
}

pub fn conjugate_value(div: &dyn Divergence, y: f64) -> Result<f64> {
    div.conjugate(y)
}

pub fn derivative_inverse(div: &dyn Divergence, y: f64) -> Result<f64> {
    div.derivative_inverse(y)
}

/// Probability vector, nonnegative and summing to one within 1e-9.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteDistribution {
    mass: Vec<f64>,
}

impl FiniteDistribution {
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::invalid("distribution over an empty index set"));
        }
        if let Some(i) = mass.iter().position(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(Error::invalid(format!("mass[{i}] = {} is not a probability", mass[i])));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("masses sum to {total}, expected 1")));
        }
        Ok(Self { mass })
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::invalid("weights must have positive finite total"));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }
}

/// `sum_i Q_i f(P_i / Q_i)` with `0 f(0/0) = 0`.
pub fn divergence(div: &dyn Divergence, p: &FiniteDistribution, q: &FiniteDistribution) -> Result<f64> {
    divergence_raw(div, p.mass(), q.mass())
}

/// [`divergence`] on unvalidated slices.
pub fn divergence_raw(div: &dyn Divergence, p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape(format!("P has {} entries, Q has {}", p.len(), q.len())));
    }
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if qi == 0.0 {
            if pi > 0.0 {
                return Err(Error::Support { index: i, p: pi });
            }
            continue;
        }
        total += qi * div.generator(pi / qi)?;
    }
    Ok(total)
}
