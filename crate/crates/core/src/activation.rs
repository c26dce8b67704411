//! Activation laws for the i.i.d. coordinates of the activation maps.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};

use crate::error::{invalid, Error, Result};

/// Distribution of every activation coordinate, with its first three
/// cumulants in closed form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActivationSpec {
    /// Poisson counts with the given mean. Third cumulant equals the mean.
    Poisson { mean: f64 },
    /// Sparse activations `B * E` with `B ~ Bernoulli(p)` and `E`
    /// exponential with the given scale (mean).
    BernoulliExponential { p: f64, scale: f64 },
}

impl ActivationSpec {
    pub fn poisson(mean: f64) -> Result<Self> {
        Self::Poisson { mean }.validated()
    }

    pub fn bernoulli_exponential(p: f64, scale: f64) -> Result<Self> {
        Self::BernoulliExponential { p, scale }.validated()
    }

    fn validated(self) -> Result<Self> {
        match self {
            Self::Poisson { mean } => {
                if !mean.is_finite() || mean < 0.0 {
                    return Err(invalid(format!("poisson mean must be finite and >= 0, got {mean}")));
                }
                if mean == 0.0 {
                    return Err(Error::ZeroThirdCumulant(self.to_string()));
                }
            }
            Self::BernoulliExponential { p, scale } => {
                if !(0.0..=1.0).contains(&p) || !scale.is_finite() || scale < 0.0 {
                    return Err(invalid(format!(
                        "bernoulli-exponential needs p in [0, 1] and scale >= 0, got p={p} scale={scale}"
                    )));
                }
                if p == 0.0 || scale == 0.0 {
                    return Err(Error::ZeroThirdCumulant(self.to_string()));
                }
            }
        }
        Ok(self)
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Poisson { mean } => mean,
            Self::BernoulliExponential { p, scale } => p * scale,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Self::Poisson { mean } => mean,
            Self::BernoulliExponential { p, scale } => p * (2.0 - p) * scale * scale,
        }
    }

    /// Third cumulant of one coordinate.
    pub fn third_cumulant(&self) -> f64 {
        match *self {
            Self::Poisson { mean } => mean,
            // raw moments E[w^k] = p k! scale^k
            Self::BernoulliExponential { p, scale } => p * (6.0 - 6.0 * p + 2.0 * p * p) * scale.powi(3),
        }
    }

    pub fn sampler(&self) -> ActivationSampler {
        match *self {
            Self::Poisson { mean } => ActivationSampler::Poisson(Poisson::new(mean).expect("validated poisson mean")),
            Self::BernoulliExponential { p, scale } => ActivationSampler::BernoulliExponential {
                p,
                exp: Exp::new(1.0 / scale).expect("validated exponential scale"),
            },
        }
    }
}

impl Default for ActivationSpec {
    fn default() -> Self {
        Self::Poisson { mean: 1.0 }
    }
}

impl fmt::Display for ActivationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Poisson { mean } => write!(f, "poisson:{mean}"),
            Self::BernoulliExponential { p, scale } => write!(f, "bernexp:{p}:{scale}"),
        }
    }
}

impl FromStr for ActivationSpec {
    type Err = Error;

    /// Accepts `poisson[:mean]` and `bernexp:p[:scale]`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let kind = parts.next().unwrap_or_default().to_ascii_lowercase();
        let nums: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| invalid(format!("bad number {p:?} in activation {s:?}")))
            })
            .collect::<Result<_>>()?;
        match (kind.as_str(), nums.as_slice()) {
            ("poisson", []) => Self::poisson(1.0),
            ("poisson", [m]) => Self::poisson(*m),
            ("bernexp", [p]) => Self::bernoulli_exponential(*p, 1.0),
            ("bernexp", [p, scale]) => Self::bernoulli_exponential(*p, *scale),
            ("gaussian" | "normal" | "zero", _) => Err(Error::ZeroThirdCumulant(s.to_string())),
            _ => Err(invalid(format!("unknown activation {s:?}"))),
        }
    }
}

/// Prepared sampler for an [`ActivationSpec`].
#[derive(Clone, Debug)]
pub enum ActivationSampler {
    Poisson(Poisson<f64>),
    BernoulliExponential { p: f64, exp: Exp<f64> },
}

impl ActivationSampler {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Poisson(d) => d.sample(rng),
            Self::BernoulliExponential { p, exp } => {
                if rng.random_bool(*p) {
                    exp.sample(rng)
                } else {
                    0.0
                }
            }
        }
    }
}
