//! One-dimensional regularized delta kernels and their tensor products.
//!
//! Every kernel is written in terms of the dimensionless offset
//! `r = (x - X) / h`. Multi-dimensional weights are plain products of the
//! one-dimensional values; the `1/h^d` scaling is left to the caller.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Base kernel families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    /// Smoothed three-point kernel, support `|r| < 1.5`.
    ThreePoint,
    /// Peskin's four-point kernel, support `|r| < 2`.
    PeskinFour,
    /// Gaussian `exp(-2 r^2)` truncated at `|r| = 2`, not renormalized.
    Rbf,
    /// Cubic B-spline stretched over `|r| < 1.2`.
    CubicSplineTwo,
    /// Quartic B-spline, support `|r| < 2.5`.
    SplineFive,
    /// Quintic B-spline, support `|r| < 3`.
    SplineSix,
    /// Five-point kernel with the weakened second moment. Not available.
    NewFivePoint,
    /// Six-point kernel with the weakened second moment. Not available.
    NewSixPoint,
}

impl KernelKind {
    pub const IMPLEMENTED: [KernelKind; 6] = [
        KernelKind::ThreePoint,
        KernelKind::PeskinFour,
        KernelKind::Rbf,
        KernelKind::CubicSplineTwo,
        KernelKind::SplineFive,
        KernelKind::SplineSix,
    ];

    /// Config-file spelling.
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::ThreePoint => "smoothed3",
            KernelKind::PeskinFour => "peskin4",
            KernelKind::Rbf => "rbf",
            KernelKind::CubicSplineTwo => "spline2",
            KernelKind::SplineFive => "spline5",
            KernelKind::SplineSix => "spline6",
            KernelKind::NewFivePoint => "new5",
            KernelKind::NewSixPoint => "new6",
        }
    }

    pub fn is_implemented(self) -> bool {
        !matches!(self, KernelKind::NewFivePoint | KernelKind::NewSixPoint)
    }

    /// True for kernels built to satisfy the zeroth and first discrete
    /// moment conditions on a full stencil.
    pub fn satisfies_moments(self) -> bool {
        matches!(
            self,
            KernelKind::PeskinFour | KernelKind::SplineFive | KernelKind::SplineSix
        )
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "smoothed3" => KernelKind::ThreePoint,
            "peskin4" => KernelKind::PeskinFour,
            "rbf" => KernelKind::Rbf,
            "spline2" => KernelKind::CubicSplineTwo,
            "spline5" => KernelKind::SplineFive,
            "spline6" => KernelKind::SplineSix,
            "new5" => KernelKind::NewFivePoint,
            "new6" => KernelKind::NewSixPoint,
            other => {
                return Err(Error::config(format!(
                    "unknown kernel \"{other}\" (expected peskin4, spline5, spline6, spline2, smoothed3 or rbf)"
                )))
            }
        })
    }
}

/// Half-width of the support in grid cells.
pub fn half_support(kind: KernelKind) -> f64 {
    match kind {
        KernelKind::ThreePoint => 1.5,
        KernelKind::PeskinFour => 2.0,
        KernelKind::Rbf => 2.0,
        KernelKind::CubicSplineTwo => SPLINE2_STRETCH,
        KernelKind::SplineFive => 2.5,
        KernelKind::SplineSix => 3.0,
        KernelKind::NewFivePoint => 2.5,
        KernelKind::NewSixPoint => 3.0,
    }
}

const SPLINE2_STRETCH: f64 = 1.2;

/// A validated kernel. Construction fails for the kernels whose closed form
/// is not available, so evaluation itself is infallible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Kernel {
    kind: KernelKind,
}

impl Kernel {
    pub fn new(kind: KernelKind) -> Result<Self> {
        if !kind.is_implemented() {
            return Err(Error::config(format!(
                "kernel {kind} has no closed form available in this build"
            )));
        }
        Ok(Kernel { kind })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn half_support(&self) -> f64 {
        half_support(self.kind)
    }

    #[inline]
    pub fn eval1d(&self, r: f64) -> f64 {
        let a = r.abs();
        match self.kind {
            KernelKind::ThreePoint => three_point(a),
            KernelKind::PeskinFour => peskin_four(a),
            KernelKind::Rbf => {
                if a < 2.0 {
                    (-2.0 * a * a).exp()
                } else {
                    0.0
                }
            }
            KernelKind::CubicSplineTwo => cubic_spline_two(a / SPLINE2_STRETCH),
            KernelKind::SplineFive => spline_five(a),
            KernelKind::SplineSix => spline_six(a),
            KernelKind::NewFivePoint | KernelKind::NewSixPoint => {
                unreachable!("unimplemented kernels are rejected by Kernel::new")
            }
        }
    }

    /// Product of one-dimensional weights over the given offsets.
    #[inline]
    pub fn eval_tensor(&self, offsets: &[f64]) -> f64 {
        offsets.iter().map(|&r| self.eval1d(r)).product()
    }
}

pub fn eval1d(kind: KernelKind, r: f64) -> Result<f64> {
    if !r.is_finite() {
        return Err(Error::InvalidArgument(format!("kernel offset {r} is not finite")));
    }
    Ok(Kernel::new(kind)?.eval1d(r))
}

pub fn eval_tensor(kind: KernelKind, offsets: &[f64]) -> Result<f64> {
    if offsets.is_empty() || offsets.len() > 3 {
        return Err(Error::InvalidArgument(format!(
            "tensor kernel needs 1 to 3 offsets, got {}",
            offsets.len()
        )));
    }
    if let Some(r) = offsets.iter().find(|r| !r.is_finite()) {
        return Err(Error::InvalidArgument(format!("kernel offset {r} is not finite")));
    }
    Ok(Kernel::new(kind)?.eval_tensor(offsets))
}

#[inline]
fn three_point(a: f64) -> f64 {
    if a < 0.5 {
        0.75 - a * a
    } else if a < 1.5 {
        0.5 * (2.25 - 3.0 * a + a * a)
    } else {
        0.0
    }
}

#[inline]
fn peskin_four(a: f64) -> f64 {
    if a < 1.0 {
        0.125 * (3.0 - 2.0 * a + (1.0 + 4.0 * a - 4.0 * a * a).sqrt())
    } else if a < 2.0 {
        // The radicand vanishes at a = 2 and can dip below zero by rounding.
        let rad = (-7.0 + 12.0 * a - 4.0 * a * a).max(0.0);
        0.125 * (5.0 - 2.0 * a - rad.sqrt())
    } else {
        0.0
    }
}

/// `b` is the stretched offset `|r| / 1.2`.
#[inline]
fn cubic_spline_two(b: f64) -> f64 {
    if b < 0.5 {
        2.0 / 3.0 - 4.0 * b * b + 4.0 * b * b * b
    } else if b < 1.0 {
        4.0 / 3.0 - 4.0 * b + 4.0 * b * b - 4.0 / 3.0 * b * b * b
    } else {
        0.0
    }
}

#[inline]
fn spline_five(a: f64) -> f64 {
    let k = a + 2.5;
    if a < 0.5 {
        (((6.0 * k - 60.0) * k + 210.0) * k - 300.0) * k / 24.0 + 155.0 / 24.0
    } else if a < 1.5 {
        ((((-4.0 * k + 60.0) * k - 330.0) * k + 780.0) * k - 655.0) / 24.0
    } else if a < 2.5 {
        ((((k - 20.0) * k + 150.0) * k - 500.0) * k + 625.0) / 24.0
    } else {
        0.0
    }
}

#[inline]
fn spline_six(a: f64) -> f64 {
    let k = a + 3.0;
    if a < 1.0 {
        (((((-5.0 * k + 90.0) * k - 630.0) * k + 2130.0) * k - 3465.0) * k + 2193.0) / 60.0
    } else if a < 2.0 {
        (((((5.0 * k - 120.0) * k + 1140.0) * k - 5340.0) * k + 12270.0) * k - 10974.0) / 120.0
    } else if a < 3.0 {
        (((((-k + 30.0) * k - 360.0) * k + 2160.0) * k - 6480.0) * k + 7776.0) / 120.0
    } else {
        0.0
    }
}
