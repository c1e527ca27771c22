//! Backus–Gilbert moving least squares on masked kernel stencils.
//!
//! For one marker at `X` with interpolation points `x_i`, base weights `W_i`
//! and mask bits `H_i`, the generating functions are
//!
//! ```text
//! W_mls = W ⊙ H,   G = A diag(W_mls) Aᵀ,   λ = G⁻¹ P,   L = Aᵀ λ,   Ψ = W_mls ⊙ L
//! ```
//!
//! with the linear basis `(1, x - X, y - Y[, z - Z])` and `P = e₁`. Masked
//! points keep an exact zero in `Ψ` because their restricted weight is zero.
//! The CVS and NCVS shifts then lift negative entries on the active side and
//! renormalize.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Gram matrices whose reciprocal condition falls below this are rejected.
pub const GRAM_RCOND_MIN: f64 = 1e-12;
/// Tolerance on `‖AΨ - P‖∞` checked after every solve.
pub const REPRODUCTION_TOL: f64 = 1e-9;
/// Smallest admissible normalizer for a shifted weight vector.
pub const NORMALIZER_MIN: f64 = 1e-14;

/// Interpolation points of one marker together with their base weights and
/// mask bits.
#[derive(Debug, Clone)]
pub struct Stencil {
    pub dim: usize,
    /// Evaluation point (marker position).
    pub center: [f64; 3],
    /// Cell-center coordinates, unwrapped across periodic boundaries.
    pub points: Vec<[f64; 3]>,
    /// Grid indices of the points (wrapped).
    pub indices: Vec<[usize; 3]>,
    /// Base kernel weights.
    pub weights: Vec<f64>,
    /// Active-side mask: `true` where `H = 1`.
    pub mask: Vec<bool>,
    /// Grid spacing per axis.
    pub spacing: [f64; 3],
}

impl Stencil {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `W ⊙ H`.
    pub fn restricted_weights(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.mask)
            .map(|(&w, &h)| if h { w } else { 0.0 })
            .collect()
    }

    /// Offsets `(x_i - X) / h` per axis.
    fn scaled_offsets(&self) -> Vec<[f64; 3]> {
        self.points
            .iter()
            .map(|p| {
                let mut o = [0.0; 3];
                for a in 0..self.dim {
                    o[a] = (p[a] - self.center[a]) / self.spacing[a];
                }
                o
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftMode {
    None,
    Cvs,
    Ncvs,
}

/// What to do when a marker's Gram matrix is near-singular or its weights
/// fail the reproduction check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramFallback {
    Error,
    /// Use the unmasked base kernel for that marker and log a warning.
    TwoSided,
}

impl FromStr for GramFallback {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error" => Ok(GramFallback::Error),
            "two_sided" => Ok(GramFallback::TwoSided),
            other => Err(Error::config(format!(
                "unknown gram_fallback \"{other}\" (expected error or two_sided)"
            ))),
        }
    }
}

/// Generating functions of one marker.
#[derive(Debug, Clone)]
pub struct GeneratingWeights {
    pub marker: usize,
    /// Restricted base weights `W ⊙ H`.
    pub w_mls: Vec<f64>,
    /// Moment-reproducing weights Ψ.
    pub psi: Vec<f64>,
    /// Lagrange multipliers for the grid-scaled basis `(1, (x-X)/h, ...)`.
    pub lambda: Vec<f64>,
    /// `Aᵀλ`, the pointwise multiplier turning `W_mls` into Ψ.
    pub l: Vec<f64>,
    /// Shifted weights Ψᵐ, set by [`shift_cvs`] or [`shift_ncvs`].
    pub psi_m: Option<Vec<f64>>,
    pub shift_mode: ShiftMode,
    /// Shift magnitude.
    pub c: f64,
}

/// Polynomial matrix for the linear basis centred at `x`, in physical
/// coordinates: row 0 is all ones, row `a+1` holds `points[j][a] - x[a]`.
pub fn polynomial_matrix(points: &[[f64; 3]], x: [f64; 3], dim: usize) -> DMatrix<f64> {
    let m = dim + 1;
    DMatrix::from_fn(m, points.len(), |i, j| {
        if i == 0 {
            1.0
        } else {
            points[j][i - 1] - x[i - 1]
        }
    })
}

/// `A diag(W) Aᵀ`.
pub fn gram_matrix(a: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    assert_eq!(a.ncols(), w.len(), "one weight per interpolation point");
    let m = a.nrows();
    let mut g = DMatrix::zeros(m, m);
    for (j, &wj) in w.iter().enumerate() {
        if wj == 0.0 {
            continue;
        }
        for r in 0..m {
            let arw = a[(r, j)] * wj;
            for s in r..m {
                g[(r, s)] += arw * a[(s, j)];
            }
        }
    }
    for r in 0..m {
        for s in 0..r {
            g[(r, s)] = g[(s, r)];
        }
    }
    g
}

/// Reciprocal spectral condition number of a symmetric matrix; zero when it
/// is not positive definite.
pub fn reciprocal_condition(g: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(g.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || !min.is_finite() {
        return 0.0;
    }
    (min / max).max(0.0)
}

/// Solves the constrained least-squares problem for one stencil.
pub fn generating_weights(stencil: &Stencil, marker: usize) -> Result<GeneratingWeights> {
    let dim = stencil.dim;
    let m = dim + 1;
    let w_mls = stencil.restricted_weights();
    let offsets = stencil.scaled_offsets();
    let a = polynomial_matrix(&offsets, [0.0; 3], dim);
    let g = gram_matrix(&a, &w_mls);

    let rcond = reciprocal_condition(&g);
    if rcond < GRAM_RCOND_MIN {
        return Err(Error::NearSingularGram { marker, rcond });
    }
    let chol = g
        .clone()
        .cholesky()
        .ok_or(Error::NearSingularGram { marker, rcond })?;
    let mut p = DVector::zeros(m);
    p[0] = 1.0;
    let lambda = chol.solve(&p);
    let l: Vec<f64> = (0..stencil.len())
        .map(|j| (0..m).map(|i| a[(i, j)] * lambda[i]).sum())
        .collect();
    let psi: Vec<f64> = w_mls.iter().zip(&l).map(|(w, l)| w * l).collect();

    let residual = reproduction_residual(&a, &psi);
    if !(residual < REPRODUCTION_TOL) {
        return Err(Error::ReproductionFailure { marker, residual });
    }

    Ok(GeneratingWeights {
        marker,
        w_mls,
        psi,
        lambda: lambda.iter().copied().collect(),
        l,
        psi_m: None,
        shift_mode: ShiftMode::None,
        c: 0.0,
    })
}

/// `‖AΨ - e₁‖∞`.
pub fn reproduction_residual(a: &DMatrix<f64>, psi: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.nrows() {
        let s: f64 = (0..a.ncols()).map(|j| a[(i, j)] * psi[j]).sum();
        let target = if i == 0 { 1.0 } else { 0.0 };
        worst = worst.max((s - target).abs());
    }
    worst
}

/// Constant shift restricted to the active side:
/// `Ψᵐ = (Ψ + c H) / Σ(Ψ + c H)` with the smallest `c` making it nonnegative.
pub fn shift_cvs(gw: &GeneratingWeights, mask: &[bool]) -> Result<GeneratingWeights> {
    assert_eq!(gw.psi.len(), mask.len());
    let c = active_min(&gw.psi, mask).min(0.0).abs();
    let shifted: Vec<f64> = gw
        .psi
        .iter()
        .zip(mask)
        .map(|(&p, &h)| if h { p + c } else { p })
        .collect();
    let norm: f64 = shifted.iter().sum();
    if !(norm > NORMALIZER_MIN) {
        return Err(Error::DegenerateNormalizer {
            marker: gw.marker,
            value: norm,
        });
    }
    let psi_m = shifted.into_iter().map(|v| clamp_roundoff(v / norm)).collect();
    Ok(GeneratingWeights {
        psi_m: Some(psi_m),
        shift_mode: ShiftMode::Cvs,
        c,
        ..gw.clone()
    })
}

/// Shift proportional to the restricted weights:
/// `Ψᵐ = W_mls ⊙ (L + c) / Σ(Ψ + c W_mls)` with `c = |min(0, min L)|` over
/// the active side.
pub fn shift_ncvs(gw: &GeneratingWeights, mask: &[bool]) -> Result<GeneratingWeights> {
    assert_eq!(gw.l.len(), mask.len());
    let c = active_min(&gw.l, mask).min(0.0).abs();
    let numer: Vec<f64> = gw
        .w_mls
        .iter()
        .zip(&gw.l)
        .map(|(&w, &l)| w * (l + c))
        .collect();
    let norm: f64 = gw.psi.iter().zip(&gw.w_mls).map(|(p, w)| p + c * w).sum();
    if !(norm > NORMALIZER_MIN) {
        return Err(Error::DegenerateNormalizer {
            marker: gw.marker,
            value: norm,
        });
    }
    let psi_m = numer.into_iter().map(|v| clamp_roundoff(v / norm)).collect();
    Ok(GeneratingWeights {
        psi_m: Some(psi_m),
        shift_mode: ShiftMode::Ncvs,
        c,
        ..gw.clone()
    })
}

/// Unrestricted constant shift `(Ψ + c) / (1 + N c)`. It breaks
/// one-sidedness and only serves to probe the constant-shift nullspace.
pub fn constant_shift(psi: &[f64], c: f64) -> Vec<f64> {
    let norm = 1.0 + psi.len() as f64 * c;
    psi.iter().map(|p| (p + c) / norm).collect()
}

fn active_min(values: &[f64], mask: &[bool]) -> f64 {
    values
        .iter()
        .zip(mask)
        .filter(|(_, &h)| h)
        .map(|(&v, _)| v)
        .fold(f64::INFINITY, f64::min)
}

// `W (L + c)` with `c = -min L` is exactly zero at the minimizer in exact
// arithmetic; rounding can leave a value of order 1e-17 below zero.
#[inline]
fn clamp_roundoff(v: f64) -> f64 {
    if v < 0.0 && v > -1e-15 {
        0.0
    } else {
        v
    }
}
