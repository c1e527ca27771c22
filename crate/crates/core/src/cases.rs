//! Benchmark scenarios, exact solutions, error norms and flow diagnostics.

use std::f64::consts::PI;
use std::str::FromStr;
use std::sync::Arc;

use log::info;

use crate::coupling::{CouplingMode, CouplingSpec, ImmersedBody};
use crate::error::{Error, Result};
use crate::fluid::{Boundary, FaceBc, Fluid, FluidParams, VelocityBc, VelocityFn};
use crate::geometry::{heaviside_field, taylor_green, Body, MarkerSet, Motion, Orientation, Shape, Sides};
use crate::grid::{Field, Grid};
use crate::kernel::KernelKind;
use crate::linsolve::Preconditioner;
use crate::mls::GramFallback;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseKind {
    TaylorGreenCylinder,
    StokesFirst,
    ImpulsiveCylinder,
    OscillatingCylinder,
    ImpulsivePlate,
}

impl CaseKind {
    pub fn name(&self) -> &'static str {
        match self {
            CaseKind::TaylorGreenCylinder => "taylor_green_cylinder",
            CaseKind::StokesFirst => "stokes_first",
            CaseKind::ImpulsiveCylinder => "impulsive_cylinder",
            CaseKind::OscillatingCylinder => "oscillating_cylinder",
            CaseKind::ImpulsivePlate => "impulsive_plate",
        }
    }
}

impl FromStr for CaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "taylor_green_cylinder" => CaseKind::TaylorGreenCylinder,
            "stokes_first" => CaseKind::StokesFirst,
            "impulsive_cylinder" => CaseKind::ImpulsiveCylinder,
            "oscillating_cylinder" => CaseKind::OscillatingCylinder,
            "impulsive_plate" => CaseKind::ImpulsivePlate,
            other => return Err(Error::config(format!("unknown case \"{other}\""))),
        })
    }
}

// ---------------------------------------------------------------------------
// Exact solutions and diagnostics

/// Decaying Taylor–Green vortex `(u, v, p)`.
pub fn taylor_green_exact(x: f64, y: f64, t: f64, re: f64) -> (f64, f64, f64) {
    taylor_green(x, y, t, re)
}

/// Impulsively started plate: `u = U_p erfc(y / 2√(νt))` with `ν = U_p / Re`
/// for a unit length scale.
pub fn stokes_exact(y: f64, t: f64, re: f64, up: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("time must be positive, got {t}")));
    }
    let nu = up / re;
    Ok(up * libm::erfc(y.abs() / (2.0 * (nu * t).sqrt())))
}

/// Skin-friction drag coefficient of the impulsively started plate.
pub fn stokes_cd(t: f64, re: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("time must be positive, got {t}")));
    }
    Ok(2.0 / (PI * t * re).sqrt())
}

/// `F / (½ ρ U² L)`.
pub fn drag_coefficient(fx: f64, rho: f64, u_ref: f64, l_ref: f64) -> f64 {
    fx / (0.5 * rho * u_ref * u_ref * l_ref)
}

/// Volume-weighted `(L1, L2, L∞)` of `numeric - exact` over cells with
/// `mask = true`, normalized by the masked volume.
pub fn error_norms(numeric: &[f64], exact: &[f64], mask: &[bool]) -> Result<(f64, f64, f64)> {
    assert_eq!(numeric.len(), exact.len());
    assert_eq!(numeric.len(), mask.len());
    let (mut l1, mut l2, mut linf, mut count) = (0.0, 0.0, 0.0f64, 0usize);
    for ((a, b), m) in numeric.iter().zip(exact).zip(mask) {
        if *m {
            let e = (a - b).abs();
            l1 += e;
            l2 += e * e;
            linf = linf.max(e);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("error norms over an empty mask".into()));
    }
    let c = count as f64;
    Ok((l1 / c, (l2 / c).sqrt(), linf))
}

/// Least-squares slope of `log(err)` against `log(h)`.
pub fn fitted_order(h: &[f64], err: &[f64]) -> f64 {
    assert_eq!(h.len(), err.len());
    let n = h.len() as f64;
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// RMS velocity magnitude over cells with `inside = true`.
pub fn interior_rms(u: &[Field], grid: &Grid, inside: &[bool]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for k in 0..grid.n[2] {
        for j in 0..grid.n[1] {
            for i in 0..grid.n[0] {
                if inside[grid.lin(i, j, k)] {
                    sum += u.iter().map(|c| c.at(i, j, k).powi(2)).sum::<f64>();
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("no interior cells".into()));
    }
    Ok((sum / count as f64).sqrt())
}

/// Wake bubble length from centerline samples `(s, w)`, where `s` is the
/// distance from the plate (increasing) and `w` the relative velocity
/// along the wake direction. Reverse flow is `w < 0`; the farthest reverse
/// sample is interpolated to the zero crossing with its successor.
pub fn wake_bubble_length(samples: &[(f64, f64)]) -> f64 {
    let Some(k) = samples.iter().rposition(|(_, w)| *w < 0.0) else {
        return 0.0;
    };
    let (s0, w0) = samples[k];
    match samples.get(k + 1) {
        Some(&(s1, w1)) if w1 > w0 => s0 + (s1 - s0) * (-w0) / (w1 - w0),
        _ => s0,
    }
}

// ---------------------------------------------------------------------------
// Case setup

/// Fully resolved parameters of one run.
#[derive(Debug, Clone)]
pub struct CaseParams {
    pub kind: CaseKind,
    /// Cells per axis.
    pub n: Vec<usize>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub re: f64,
    pub rho: f64,
    pub cfl: f64,
    pub dt_max: f64,
    pub t_end: f64,
    pub kernel: KernelKind,
    pub interp: CouplingMode,
    pub spread: CouplingMode,
    pub fallback: GramFallback,
    pub sides: Sides,
    pub center: [f64; 3],
    /// Radius for cylinders, length for plates.
    pub size: f64,
    pub rtol: f64,
    pub max_iter: Option<usize>,
    pub precond: Preconditioner,
    pub tangential_correction: bool,
    /// Face conditions replacing the case defaults: `(axis, side, bc)`.
    pub bc_overrides: Vec<(usize, usize, BcSpec)>,
    pub output_every: usize,
}

/// Face condition as written in a config file.
#[derive(Debug, Clone, PartialEq)]
pub enum BcSpec {
    Periodic,
    Outflow,
    FreeSlip,
    Velocity([f64; 3]),
    /// Taylor–Green exact solution; only meaningful for that case.
    Exact,
}

impl CaseParams {
    /// Reference setup of each case at desk resolution.
    pub fn defaults(kind: CaseKind) -> CaseParams {
        let base = CaseParams {
            kind,
            n: vec![64, 64],
            lo: vec![-2.0, -2.0],
            hi: vec![2.0, 2.0],
            re: 100.0,
            rho: 1.0,
            cfl: 0.1,
            dt_max: 0.01,
            t_end: 1.0,
            kernel: KernelKind::PeskinFour,
            interp: CouplingMode::Standard,
            spread: CouplingMode::Standard,
            fallback: GramFallback::TwoSided,
            sides: Sides::Both,
            center: [0.0; 3],
            size: 1.0,
            rtol: 1e-9,
            max_iter: None,
            precond: Preconditioner::Multigrid,
            tangential_correction: true,
            bc_overrides: Vec::new(),
            output_every: 0,
        };
        match kind {
            CaseKind::TaylorGreenCylinder => CaseParams { cfl: 0.05, ..base },
            CaseKind::StokesFirst => CaseParams {
                n: vec![400, 400],
                lo: vec![0.0, 0.0],
                hi: vec![4.0, 4.0],
                re: 500.0,
                t_end: 5.0,
                interp: CouplingMode::MlsNcvs,
                spread: CouplingMode::MlsNcvs,
                center: [2.0, 2.0, 0.0],
                size: 4.0,
                ..base
            },
            CaseKind::ImpulsiveCylinder => CaseParams {
                n: vec![400, 256],
                lo: vec![-3.0, -2.56],
                hi: vec![5.0, 2.56],
                t_end: 10.0,
                interp: CouplingMode::MlsNcvs,
                spread: CouplingMode::MlsNcvs,
                size: 0.5,
                ..base
            },
            CaseKind::OscillatingCylinder => CaseParams {
                n: vec![384, 384],
                lo: vec![-3.84, -3.84],
                hi: vec![3.84, 3.84],
                t_end: 15.0,
                interp: CouplingMode::MlsNcvs,
                spread: CouplingMode::MlsNcvs,
                size: 0.5,
                ..base
            },
            CaseKind::ImpulsivePlate => CaseParams {
                n: vec![256, 256],
                lo: vec![-5.12, -5.12],
                hi: vec![5.12, 5.12],
                re: 20.0,
                t_end: 2.0,
                interp: CouplingMode::MlsNcvs,
                spread: CouplingMode::MlsNcvs,
                size: 1.0,
                ..base
            },
        }
    }

    pub fn mu(&self) -> f64 {
        // Unit velocity and length scales throughout.
        self.rho / self.re
    }

    /// Grid spacing along x.
    pub fn h(&self) -> f64 {
        (self.hi[0] - self.lo[0]) / self.n[0] as f64
    }

    /// Same setup with `nx` cells along x and the other axes scaled to
    /// keep the spacing isotropic.
    pub fn with_resolution(&self, nx: usize) -> CaseParams {
        let mut p = self.clone();
        let ratio = nx as f64 / self.n[0] as f64;
        p.n = self.n.iter().map(|&m| ((m as f64) * ratio).round() as usize).collect();
        p.n[0] = nx;
        p
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.n.len() != self.lo.len() || self.n.len() != self.hi.len() {
            return bad("grid.dims and grid.extent disagree in dimension".into());
        }
        if self.n.iter().any(|&m| m < 8) {
            return bad(format!("grid.dims must be at least 8 per axis, got {:?}", self.n));
        }
        if !(self.re > 0.0) {
            return bad(format!("Reynolds number must be positive, got {}", self.re));
        }
        if !(self.cfl > 0.0) {
            return bad(format!("time.cfl must be positive, got {}", self.cfl));
        }
        if !(self.dt_max > 0.0) {
            return bad(format!("time.dt_max must be positive, got {}", self.dt_max));
        }
        if !(self.t_end > 0.0) {
            return bad(format!("time.t_end must be positive, got {}", self.t_end));
        }
        if !(self.size > 0.0) {
            return bad(format!("body size must be positive, got {}", self.size));
        }
        crate::kernel::Kernel::new(self.kernel)?;
        Ok(())
    }
}

/// Everything needed to run a case.
pub struct CaseSetup {
    pub params: CaseParams,
    pub fluid: Fluid,
    pub body: Option<ImmersedBody>,
    pub u_ref: f64,
    pub l_ref: f64,
}

fn tg_bc(re: f64) -> VelocityFn {
    Arc::new(move |x, t| {
        let (u, v, _) = taylor_green(x[0], x[1], t, re);
        [u, v, 0.0]
    })
}

/// Equispaced circle markers with an even count, so the set is mirror
/// symmetric about both axes through the center.
fn even_circle_markers(center: [f64; 3], radius: f64, h: f64) -> MarkerSet {
    let perimeter = 2.0 * PI * radius;
    let mut n = (perimeter / h).round() as usize;
    if n % 2 == 1 {
        n += 1;
    }
    let x = (0..n)
        .map(|k| {
            let th = 2.0 * PI * k as f64 / n as f64;
            [center[0] + radius * th.cos(), center[1] + radius * th.sin(), 0.0]
        })
        .collect();
    MarkerSet::new(2, x, vec![perimeter / n as f64; n])
}

/// Case boundary conditions with config overrides applied.
pub fn boundary(p: &CaseParams) -> Result<Boundary> {
    let noslip = || FaceBc::Dirichlet(VelocityBc::Constant([0.0; 3]));
    let mut bc = match p.kind {
        CaseKind::TaylorGreenCylinder => Boundary::all(FaceBc::Dirichlet(VelocityBc::Function(tg_bc(p.re)))),
        CaseKind::StokesFirst => Boundary::periodic(),
        CaseKind::ImpulsiveCylinder => {
            let mut bc = Boundary::all(FaceBc::FreeSlip);
            bc.faces[0][0] = FaceBc::Dirichlet(VelocityBc::Constant([1.0, 0.0, 0.0]));
            bc.faces[0][1] = FaceBc::NeumannOutflow;
            bc
        }
        CaseKind::OscillatingCylinder => Boundary::all(noslip()),
        CaseKind::ImpulsivePlate => {
            let mut bc = Boundary::all(noslip());
            bc.faces[0] = [FaceBc::Periodic, FaceBc::Periodic];
            bc
        }
    };
    for (axis, side, spec) in &p.bc_overrides {
        bc.faces[*axis][*side] = match spec {
            BcSpec::Periodic => FaceBc::Periodic,
            BcSpec::Outflow => FaceBc::NeumannOutflow,
            BcSpec::FreeSlip => FaceBc::FreeSlip,
            BcSpec::Velocity(v) => FaceBc::Dirichlet(VelocityBc::Constant(*v)),
            BcSpec::Exact => FaceBc::Dirichlet(VelocityBc::Function(tg_bc(p.re))),
        };
    }
    bc.validate(p.n.len())?;
    Ok(bc)
}

pub fn build_case(params: &CaseParams) -> Result<CaseSetup> {
    params.validate()?;
    let p = params;
    let grid = Grid::new(&p.n, &p.lo, &p.hi)?;
    let h = grid.h_min();
    let fparams = FluidParams {
        rho: p.rho,
        mu: p.mu(),
        rtol: p.rtol,
        max_iter: p.max_iter,
        cycles: 2,
        poisson_precond: p.precond,
        tangential_correction: p.tangential_correction,
    };
    let spec = |periodic: [bool; 3]| CouplingSpec {
        kernel: p.kernel,
        interp: p.interp,
        spread: p.spread,
        fallback: p.fallback,
        periodic,
    };
    let circle = Shape::Circle {
        center: [p.center[0], p.center[1]],
        radius: p.size,
    };
    let (body, init, u_ref, l_ref): (Option<Body>, Box<dyn Fn([f64; 3]) -> [f64; 3]>, f64, f64) =
        match p.kind {
            CaseKind::TaylorGreenCylinder => {
                let re = p.re;
                let body = Body::new(circle, p.sides, Motion::ExactTaylorGreen { re }, h)?;
                let init = Box::new(move |x: [f64; 3]| {
                    let (u, v, _) = taylor_green(x[0], x[1], 0.0, re);
                    [u, v, 0.0]
                });
                (Some(body), init, 1.0, 2.0 * p.size)
            }
            CaseKind::StokesFirst => {
                let y0 = p.center[1];
                let (x0, x1) = (p.lo[0], p.hi[0]);
                let len = x1 - x0;
                let n = (len / grid.h[0]).round() as usize;
                let ds = len / n as f64;
                let x = (0..n).map(|k| [x0 + (k as f64 + 0.5) * ds, y0, 0.0]).collect();
                let markers = MarkerSet::new(2, x, vec![ds; n]);
                let shape = Shape::Plate {
                    a: [x0, y0, 0.0],
                    b: [x1, y0, 0.0],
                    normal: [0.0, 1.0, 0.0],
                };
                let motion = Motion::ImpulsiveTranslation {
                    velocity: [1.0, 0.0, 0.0],
                };
                let body = Body::with_markers(shape, Sides::Both, motion, markers)?;
                // Wetted area: both faces of the plate per unit depth.
                (Some(body), Box::new(|_| [0.0; 3]), 1.0, 2.0 * len)
            }
            CaseKind::ImpulsiveCylinder => {
                let body = Body::with_markers(
                    circle.clone(),
                    p.sides,
                    Motion::Static,
                    even_circle_markers(p.center, p.size, h),
                )?;
                let c = p.center;
                let r = p.size;
                let init = Box::new(move |x: [f64; 3]| {
                    let inside = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) < r * r;
                    if inside {
                        [0.0; 3]
                    } else {
                        [1.0, 0.0, 0.0]
                    }
                });
                (Some(body), init, 1.0, 2.0 * p.size)
            }
            CaseKind::OscillatingCylinder => {
                let d = 2.0 * p.size;
                // KC = U_m T / D = 5 with U_m = 1.
                let motion = Motion::Oscillation {
                    um: 1.0,
                    period: 5.0 * d,
                    axis: [1.0, 0.0, 0.0],
                };
                let body = Body::with_markers(
                    circle.clone(),
                    p.sides,
                    motion,
                    even_circle_markers(p.center, p.size, h),
                )?;
                (Some(body), Box::new(|_| [0.0; 3]), 1.0, d)
            }
            CaseKind::ImpulsivePlate => {
                let half = 0.5 * p.size;
                let shape = Shape::Plate {
                    a: [p.center[0], p.center[1] - half, 0.0],
                    b: [p.center[0], p.center[1] + half, 0.0],
                    normal: [1.0, 0.0, 0.0],
                };
                let motion = Motion::ImpulsiveTranslation {
                    velocity: [1.0, 0.0, 0.0],
                };
                let body = Body::new(shape, p.sides, motion, h)?;
                (Some(body), Box::new(|_| [0.0; 3]), 1.0, p.size)
            }
        };
    let bc = boundary(p)?;
    let periodic = std::array::from_fn(|a| matches!(bc.faces[a][0], FaceBc::Periodic));
    let mut fluid = Fluid::new(grid, bc, fparams)?;
    fluid.set_velocity(init);
    let body = match body {
        Some(b) => Some(ImmersedBody::new(b, spec(periodic))?),
        None => None,
    };
    Ok(CaseSetup {
        params: params.clone(),
        fluid,
        body,
        u_ref,
        l_ref,
    })
}

// ---------------------------------------------------------------------------
// Running

/// One row of `timeseries.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeRow {
    pub t: f64,
    pub fx: f64,
    pub fy: f64,
    pub cd: f64,
    pub cl: f64,
    pub interior_rms: f64,
}

/// Cell data for `fields_<step>.csv`: x, y, u, v, p, H.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub rows: Vec<[f64; 6]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub h: f64,
    pub l1_u: f64,
    pub l2_u: f64,
    pub linf_u: f64,
    pub l1_p: f64,
    pub l2_p: f64,
    pub linf_p: f64,
}

#[derive(Debug, Clone)]
pub struct CaseReport {
    pub kind: CaseKind,
    pub h: f64,
    pub steps: usize,
    pub t: f64,
    /// Every step, for analysis.
    pub history: Vec<TimeRow>,
    /// Rows sampled every `output_every` steps (all steps when 0).
    pub timeseries: Vec<TimeRow>,
    pub norms: Option<Norms>,
    pub fallback_markers: usize,
    pub max_divergence: f64,
}

/// Active-side mask of the body's exterior at time `t`; all true without a
/// closed body.
fn exterior_mask(setup: &CaseSetup, t: f64) -> Vec<bool> {
    let g = &setup.fluid.grid;
    match &setup.body {
        Some(ib) => heaviside_field(&ib.body.interface_at(t, Orientation::ExteriorActive), g),
        None => vec![true; g.ncells()],
    }
}

fn has_interior(setup: &CaseSetup) -> bool {
    setup.body.as_ref().is_some_and(|ib| {
        matches!(ib.body.shape, Shape::Circle { .. } | Shape::Sphere { .. } | Shape::Polygon { .. })
    })
}

pub fn snapshot(setup: &CaseSetup) -> Snapshot {
    let f = &setup.fluid;
    let g = &f.grid;
    let mask = exterior_mask(setup, f.state.t);
    let mut rows = Vec::with_capacity(g.ncells());
    for k in 0..g.n[2] {
        for j in 0..g.n[1] {
            for i in 0..g.n[0] {
                let x = g.center(i, j, k);
                rows.push([
                    x[0],
                    x[1],
                    f.state.u[0].at(i, j, k),
                    f.state.u[1].at(i, j, k),
                    f.state.p.at(i, j, k),
                    if mask[g.lin(i, j, k)] { 1.0 } else { 0.0 },
                ]);
            }
        }
    }
    Snapshot {
        step: f.state.step,
        t: f.state.t,
        rows,
    }
}

fn time_row(setup: &CaseSetup) -> Result<TimeRow> {
    let f = &setup.fluid;
    let force = setup.body.as_ref().map_or([0.0; 3], |b| b.hydrodynamic_force());
    let rho = f.params.rho;
    let irms = if has_interior(setup) {
        let inside: Vec<bool> = exterior_mask(setup, f.state.t).iter().map(|h| !h).collect();
        if inside.iter().any(|v| *v) {
            interior_rms(&f.state.u, &f.grid, &inside)?
        } else {
            0.0
        }
    } else {
        0.0
    };
    Ok(TimeRow {
        t: f.state.t,
        fx: force[0],
        fy: force[1],
        cd: drag_coefficient(force[0], rho, setup.u_ref, setup.l_ref),
        cl: drag_coefficient(force[1], rho, setup.u_ref, setup.l_ref),
        interior_rms: irms,
    })
}

/// Taylor–Green error norms over the body exterior; pressure is compared at
/// the half step with means removed.
pub fn taylor_green_norms(setup: &CaseSetup, dt_last: f64) -> Result<Norms> {
    let f = &setup.fluid;
    let g = &f.grid;
    let re = setup.params.re;
    let t = f.state.t;
    let tp = t - 0.5 * dt_last;
    let mask = exterior_mask(setup, t);
    let mut un = Vec::new();
    let mut ue = Vec::new();
    let mut pn = Vec::new();
    let mut pe = Vec::new();
    for k in 0..g.n[2] {
        for j in 0..g.n[1] {
            for i in 0..g.n[0] {
                let x = g.center(i, j, k);
                un.push(f.state.u[0].at(i, j, k));
                ue.push(taylor_green(x[0], x[1], t, re).0);
                pn.push(f.state.p.at(i, j, k));
                pe.push(taylor_green(x[0], x[1], tp, re).2);
            }
        }
    }
    let remove_mean = |v: &mut Vec<f64>| {
        let (s, c) = v
            .iter()
            .zip(&mask)
            .filter(|(_, m)| **m)
            .fold((0.0, 0usize), |(s, c), (x, _)| (s + x, c + 1));
        let m = s / c.max(1) as f64;
        v.iter_mut().for_each(|x| *x -= m);
    };
    remove_mean(&mut pn);
    remove_mean(&mut pe);
    let (l1_u, l2_u, linf_u) = error_norms(&un, &ue, &mask)?;
    let (l1_p, l2_p, linf_p) = error_norms(&pn, &pe, &mask)?;
    Ok(Norms {
        h: g.h[0],
        l1_u,
        l2_u,
        linf_u,
        l1_p,
        l2_p,
        linf_p,
    })
}

/// Runs a case to `t_end`, calling `on_snapshot` at step 0 and every
/// `output_every` steps (never when 0).
pub fn run_case(
    setup: &mut CaseSetup,
    on_snapshot: &mut dyn FnMut(&Snapshot) -> Result<()>,
) -> Result<CaseReport> {
    let p = setup.params.clone();
    let every = p.output_every;
    if every > 0 {
        on_snapshot(&snapshot(setup))?;
    }
    let mut history = vec![time_row(setup)?];
    let mut timeseries = history.clone();
    let mut dt_last = 0.0;
    let mut max_div: f64 = 0.0;
    while setup.fluid.state.t < p.t_end * (1.0 - 1e-12) {
        let remaining = p.t_end - setup.fluid.state.t;
        // Equal steps to t_end: abrupt step changes perturb the force.
        let dt_cfl = setup.fluid.compute_dt(p.cfl, p.dt_max);
        let dt = remaining / (remaining / dt_cfl * (1.0 - 1e-12)).ceil().max(1.0);
        let forcing = setup.body.as_mut().map(|b| b as &mut dyn crate::fluid::Forcing);
        let st = setup.fluid.step(dt, forcing)?;
        max_div = max_div.max(st.max_divergence);
        dt_last = dt;
        let row = time_row(setup)?;
        history.push(row);
        let step = setup.fluid.state.step;
        if every == 0 || step % every == 0 {
            timeseries.push(row);
        }
        if every > 0 && step % every == 0 {
            on_snapshot(&snapshot(setup))?;
        }
        if step % 500 == 0 {
            info!(
                "{} step {step} t = {:.4} dt = {dt:.3e} poisson iterations {}",
                p.kind.name(),
                setup.fluid.state.t,
                st.poisson_iterations
            );
        }
    }
    let norms = match p.kind {
        CaseKind::TaylorGreenCylinder => Some(taylor_green_norms(setup, dt_last)?),
        _ => None,
    };
    Ok(CaseReport {
        kind: p.kind,
        h: setup.fluid.grid.h[0],
        steps: setup.fluid.state.step,
        t: setup.fluid.state.t,
        history,
        timeseries,
        norms,
        fallback_markers: setup.body.as_ref().map_or(0, |b| b.fallback_count()),
        max_divergence: max_div,
    })
}

/// Fitted orders `(L1_u, L2_u, Linf_u, L1_p, L2_p, Linf_p)` from a
/// refinement study.
pub fn convergence_orders(norms: &[Norms]) -> [f64; 6] {
    let h: Vec<f64> = norms.iter().map(|n| n.h).collect();
    let pick = |f: fn(&Norms) -> f64| fitted_order(&h, &norms.iter().map(f).collect::<Vec<_>>());
    [
        pick(|n| n.l1_u),
        pick(|n| n.l2_u),
        pick(|n| n.linf_u),
        pick(|n| n.l1_p),
        pick(|n| n.l2_p),
        pick(|n| n.linf_p),
    ]
}

/// Velocity along `y` averaged over `x`, for one-dimensional profiles.
pub fn x_averaged_profile(fluid: &Fluid) -> Vec<(f64, f64)> {
    let g = &fluid.grid;
    (0..g.n[1])
        .map(|j| {
            let s: f64 = (0..g.n[0]).map(|i| fluid.state.u[0].at(i, j, 0)).sum();
            (g.center(0, j, 0)[1], s / g.n[0] as f64)
        })
        .collect()
}

/// Centerline samples behind a plate: distance from the plate along
/// `e_wake` and the relative velocity projected on it.
pub fn wake_samples(fluid: &Fluid, plate: [f64; 3], e_wake: [f64; 3], frame: [f64; 3]) -> Vec<(f64, f64)> {
    let g = &fluid.grid;
    let axis = if e_wake[0].abs() >= e_wake[1].abs() { 0 } else { 1 };
    let other = 1 - axis;
    let sign = e_wake[axis].signum();
    let j = (((plate[other] - g.lo[other]) / g.h[other]) as usize).min(g.n[other] - 1);
    let mut out = Vec::new();
    for m in 0..g.n[axis] {
        let (i, jj) = if axis == 0 { (m, j) } else { (j, m) };
        let x = g.center(i, jj, 0);
        let s = (x[axis] - plate[axis]) * sign;
        if s <= 0.0 {
            continue;
        }
        let w = (fluid.state.u[axis].at(i, jj, 0) - frame[axis]) * sign;
        out.push((s, w));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}
