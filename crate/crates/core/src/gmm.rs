//! Scalar Gaussian mixtures and their reduction to a single Gaussian by
//! moment matching.
//!
//! Every grade quantity in the pipeline is a scalar (Fe wt%), so components
//! are one-dimensional. Reduction preserves the mixture's first and second
//! moments exactly: the matched mean is the weighted component mean and the
//! matched variance adds the weighted spread of component means to the
//! weighted component variances.

use crate::error::{Error, Result};

/// A scalar Gaussian described by its first two moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMoment {
    /// Mean, Fe wt%.
    pub mean: f64,
    /// Variance, (Fe wt%)^2.
    pub variance: f64,
}

impl GaussianMoment {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() || !variance.is_finite() {
            return Err(Error::InvalidData(format!(
                "non-finite Gaussian moment ({mean}, {variance})"
            )));
        }
        if variance < 0.0 {
            return Err(Error::InvalidData(format!(
                "negative variance {variance}"
            )));
        }
        Ok(Self { mean, variance })
    }

    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// A weighted list of Gaussian components. Weights are normalized to sum to
/// one at construction; an empty component list is rejected.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    components: Vec<(f64, GaussianMoment)>,
}

impl GaussianMixture {
    pub fn new(components: Vec<(f64, GaussianMoment)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("empty mixture".into()));
        }
        for (w, _) in &components {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::InvalidData(format!("invalid mixture weight {w}")));
            }
        }
        let total = kahan_sum(components.iter().map(|(w, _)| *w));
        if total <= 0.0 {
            return Err(Error::InvalidData("mixture weights sum to zero".into()));
        }
        let components = components
            .into_iter()
            .map(|(w, m)| (w / total, m))
            .collect();
        Ok(Self { components })
    }

    /// Mixture of equally weighted components.
    pub fn equally_weighted(moments: Vec<GaussianMoment>) -> Result<Self> {
        let n = moments.len();
        Self::new(moments.into_iter().map(|m| (1.0 / n as f64, m)).collect())
    }

    pub fn components(&self) -> &[(f64, GaussianMoment)] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Replace a mixture by the single Gaussian carrying its exact first and
/// second moments.
pub fn moment_match(mix: &GaussianMixture) -> GaussianMoment {
    let mean = kahan_sum(mix.components.iter().map(|(w, m)| w * m.mean));
    let variance = kahan_sum(
        mix.components
            .iter()
            .map(|(w, m)| w * (m.variance + (m.mean - mean) * (m.mean - mean))),
    );
    GaussianMoment {
        mean,
        // All summands are nonnegative; guard against a compensated sum
        // landing a hair below zero.
        variance: variance.max(0.0),
    }
}

/// Mixture density at `x`. Components must have strictly positive variance;
/// this is only used on the plot-emission path.
pub fn pdf(mix: &GaussianMixture, x: f64) -> Result<f64> {
    for (_, m) in &mix.components {
        if m.variance <= 0.0 {
            return Err(Error::InvalidArgument(
                "pdf of a zero-variance component".into(),
            ));
        }
    }
    Ok(kahan_sum(
        mix.components
            .iter()
            .map(|(w, m)| w * normal_pdf(x, m.mean, m.variance)),
    ))
}

/// Mixture cumulative distribution at `x`. Zero-variance components
/// degenerate to a step at their mean.
pub fn cdf(mix: &GaussianMixture, x: f64) -> f64 {
    kahan_sum(
        mix.components
            .iter()
            .map(|(w, m)| w * normal_cdf(x, m.mean, m.variance)),
    )
}

fn normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let z = (x - mean) / variance.sqrt();
    (-0.5 * z * z).exp() / (variance * 2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(x: f64, mean: f64, variance: f64) -> f64 {
    if variance == 0.0 {
        return if x < mean {
            0.0
        } else if x > mean {
            1.0
        } else {
            0.5
        };
    }
    let z = (x - mean) / (variance.sqrt() * std::f64::consts::SQRT_2);
    0.5 * (1.0 + libm::erf(z))
}

/// Neumaier-compensated summation; keeps weight and moment accumulation
/// accurate independently of component count.
pub(crate) fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
