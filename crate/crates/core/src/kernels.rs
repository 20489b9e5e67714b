//! Smoothing kernel `G` and variance kernel `K`.
//!
//! `G: [-1, 1] → [0, ∞)` weights the Nadaraya–Watson window and must satisfy
//! `G(0) = 1`, symmetry, continuity and monotone decay on `[0, 1]`.
//! `K: ℝ → [0, 1]` weights covariance lags; besides `K(0) = 1`, symmetry and
//! monotone decay it needs a nonnegative Fourier transform so that every
//! Toeplitz matrix `{K((i − j)/ℬ)}` is positive semi-definite.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};

/// Smoothing kernel `G`, supported on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub enum SmoothingKernel {
    /// `(1 − x²)²`
    Quartic,
    /// `1 − |x|`
    Triangular,
    /// `1`
    Uniform,
    /// Piecewise-linear interpolation of samples on an even grid over `[0, 1]`.
    Tabulated(Vec<f64>),
}

impl SmoothingKernel {
    pub fn tabulated(samples: Vec<f64>) -> Result<Self> {
        let valid = samples.len() >= 2
            && samples[0] == 1.0
            && samples.iter().all(|v| v.is_finite() && *v >= 0.0)
            && samples.windows(2).all(|w| w[1] <= w[0]);
        if !valid {
            return Err(Error::InvalidArgument(
                "tabulated kernel needs ≥ 2 samples starting at 1, nonnegative and non-increasing"
                    .into(),
            ));
        }
        Ok(Self::Tabulated(samples))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Quartic => "quartic",
            Self::Triangular => "triangular",
            Self::Uniform => "uniform",
            Self::Tabulated(_) => "tabulated",
        }
    }

    /// `G(x)`, zero outside `[-1, 1]`.
    pub fn eval(&self, x: f64) -> f64 {
        let a = x.abs();
        if a > 1.0 {
            return 0.0;
        }
        match self {
            Self::Quartic => {
                let u = 1.0 - a * a;
                u * u
            }
            Self::Triangular => 1.0 - a,
            Self::Uniform => 1.0,
            Self::Tabulated(s) => {
                let pos = a * (s.len() - 1) as f64;
                let lo = (pos.floor() as usize).min(s.len() - 2);
                let t = pos - lo as f64;
                s[lo] * (1.0 - t) + s[lo + 1] * t
            }
        }
    }

    /// `G(u/𝒦)` for `u = −𝒦..=𝒦`.
    pub fn window(&self, k: usize) -> Vec<f64> {
        let kf = k as f64;
        (-(k as i64)..=k as i64)
            .map(|u| self.eval(u as f64 / kf))
            .collect()
    }
}

impl fmt::Display for SmoothingKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SmoothingKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "quartic" | "biweight" => Ok(Self::Quartic),
            "triangular" => Ok(Self::Triangular),
            "uniform" => Ok(Self::Uniform),
            other => Err(Error::InvalidArgument(format!("unknown smoothing kernel {other:?}"))),
        }
    }
}

pub fn eval_smoothing(g: &SmoothingKernel, x: f64) -> f64 {
    g.eval(x)
}

type KernelFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Variance kernel `K`.
#[derive(Clone)]
pub enum VarianceKernel {
    /// `exp(−x²/2)`
    Gaussian,
    /// `max(0, 1 − |x|)`; its transform is a squared sinc.
    Bartlett,
    Custom { name: String, f: KernelFn },
}

impl VarianceKernel {
    pub fn custom(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Custom {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Self::Gaussian => "gaussian",
            Self::Bartlett => "bartlett",
            Self::Custom { name, .. } => name,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Gaussian => (-0.5 * x * x).exp(),
            Self::Bartlett => (1.0 - x.abs()).max(0.0),
            Self::Custom { f, .. } => f(x),
        }
    }

    /// Smallest `x ≥ 0` beyond which `K(x) ≤ threshold`, when known in closed form.
    pub(crate) fn effective_range(&self, threshold: f64) -> Option<f64> {
        match self {
            Self::Gaussian => Some((-2.0 * threshold.ln()).sqrt()),
            Self::Bartlett => Some(1.0),
            Self::Custom { .. } => None,
        }
    }
}

impl PartialEq for VarianceKernel {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::Gaussian, Self::Gaussian) | (Self::Bartlett, Self::Bartlett) => true,
            (Self::Custom { name: a, f: fa }, Self::Custom { name: b, f: fb }) => {
                a == b && Arc::ptr_eq(fa, fb)
            }
            _ => false,
        }
    }
}

impl fmt::Debug for VarianceKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VarianceKernel({})", self.name())
    }
}

impl fmt::Display for VarianceKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VarianceKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Self::Gaussian),
            "bartlett" | "triangular" => Ok(Self::Bartlett),
            other => Err(Error::InvalidArgument(format!("unknown variance kernel {other:?}"))),
        }
    }
}

pub fn eval_variance(k: &VarianceKernel, x: f64) -> f64 {
    k.eval(x)
}

/// Outcome of the numerical checks in [`validate_variance_kernel`].
#[derive(Debug, Clone, Serialize)]
pub struct ValidityReport {
    /// Smallest real part of the step-scaled DFT of the sampled kernel.
    pub min_fourier_coefficient: f64,
    pub fourier_nonnegative: bool,
    pub unit_at_zero: bool,
    pub symmetric: bool,
    pub monotone: bool,
    pub in_unit_range: bool,
    /// `x²·K(x)` is negligible at the edge of the sampled range, so the
    /// integrals of `K²` and `x·K` converge.
    pub tail_integrable: bool,
    pub pass: bool,
}

pub const FOURIER_TOLERANCE: f64 = -1e-8;

/// Samples `K` on `[−extent, extent]` with `grid_points` points and checks the
/// variance-kernel conditions. Nonnegativity of the transform is tested on the
/// DFT of the evenly extended samples, which by Poisson summation equals the
/// periodized continuous transform.
pub fn validate_variance_kernel(
    k: &VarianceKernel,
    grid_points: usize,
    extent: f64,
) -> Result<ValidityReport> {
    if grid_points < 256 || extent.is_nan() || extent <= 0.0 {
        return Err(Error::InvalidArgument(
            "validation needs grid_points ≥ 256 and extent > 0".into(),
        ));
    }
    let half = grid_points / 2;
    let n = 2 * half;
    let h = extent / half as f64;
    let pos: Vec<f64> = (0..=half).map(|t| k.eval(t as f64 * h)).collect();
    let neg: Vec<f64> = (0..=half).map(|t| k.eval(-(t as f64) * h)).collect();

    let scale = pos[0].abs().max(1.0);
    let symmetric = pos
        .iter()
        .zip(&neg)
        .all(|(a, b)| (a - b).abs() <= 1e-12 * scale);
    let monotone = pos.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let in_unit_range = pos.iter().chain(&neg).all(|v| (0.0..=1.0).contains(v));
    let unit_at_zero = (pos[0] - 1.0).abs() <= 1e-12;
    let tail_integrable = extent * extent * pos[half].abs() <= 1e-3;

    let mut buf: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); n];
    buf[0] = Complex64::new(pos[0], 0.0);
    for t in 1..half {
        buf[t] = Complex64::new(pos[t], 0.0);
        buf[n - t] = Complex64::new(neg[t], 0.0);
    }
    buf[half] = Complex64::new(0.5 * (pos[half] + neg[half]), 0.0);
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let min_fourier_coefficient = buf.iter().map(|c| c.re * h).fold(f64::INFINITY, f64::min);
    let fourier_nonnegative = min_fourier_coefficient >= FOURIER_TOLERANCE;

    Ok(ValidityReport {
        min_fourier_coefficient,
        fourier_nonnegative,
        unit_at_zero,
        symmetric,
        monotone,
        in_unit_range,
        tail_integrable,
        pass: fourier_nonnegative
            && unit_at_zero
            && symmetric
            && monotone
            && in_unit_range
            && tail_integrable,
    })
}
