//! Collocated finite-difference incompressible Navier–Stokes solver.
//!
//! Each step runs fixed-point cycles of
//!
//! 1. a Crank–Nicolson Helmholtz solve for `ũ*` with an Adams–Bashforth
//!    (first cycle) or midpoint (later cycles) convective term,
//! 2. the immersed-boundary velocity correction supplied by a [`Forcing`],
//! 3. an approximate projection through face-centered velocities.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{FaceField, Field, Ghost, GhostRules, Grid};
use crate::linsolve::{default_max_iter, LinearSolver, Operator, Preconditioner, SolveOptions};

/// Time-dependent velocity on a domain face: `f(x, t)`.
pub type VelocityFn = Arc<dyn Fn([f64; 3], f64) -> [f64; 3] + Send + Sync>;

#[derive(Clone)]
pub enum VelocityBc {
    Constant([f64; 3]),
    Function(VelocityFn),
}

impl VelocityBc {
    #[inline]
    pub fn eval(&self, x: [f64; 3], t: f64) -> [f64; 3] {
        match self {
            VelocityBc::Constant(v) => *v,
            VelocityBc::Function(f) => f(x, t),
        }
    }
}

impl fmt::Debug for VelocityBc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VelocityBc::Constant(v) => write!(f, "Constant({v:?})"),
            VelocityBc::Function(_) => write!(f, "Function(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub enum FaceBc {
    Periodic,
    Dirichlet(VelocityBc),
    NeumannOutflow,
    FreeSlip,
}

/// Boundary conditions indexed by `[axis][side]`.
#[derive(Debug, Clone)]
pub struct Boundary {
    pub faces: [[FaceBc; 2]; 3],
}

impl Boundary {
    pub fn periodic() -> Boundary {
        Boundary {
            faces: std::array::from_fn(|_| [FaceBc::Periodic, FaceBc::Periodic]),
        }
    }

    /// Same condition on every face.
    pub fn all(bc: FaceBc) -> Boundary {
        Boundary {
            faces: std::array::from_fn(|_| [bc.clone(), bc.clone()]),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        for a in 0..dim {
            let p0 = matches!(self.faces[a][0], FaceBc::Periodic);
            let p1 = matches!(self.faces[a][1], FaceBc::Periodic);
            if p0 != p1 {
                return Err(Error::config(format!(
                    "axis {a}: periodic boundaries must pair opposing faces"
                )));
            }
        }
        Ok(())
    }

    /// Homogeneous ghost rules for velocity component `c`.
    pub fn velocity_rules(&self, c: usize) -> GhostRules {
        std::array::from_fn(|a| {
            std::array::from_fn(|s| match &self.faces[a][s] {
                FaceBc::Periodic => Ghost::Periodic,
                FaceBc::Dirichlet(_) => Ghost::Odd,
                FaceBc::NeumannOutflow => Ghost::Even,
                FaceBc::FreeSlip if c == a => Ghost::Odd,
                FaceBc::FreeSlip => Ghost::Even,
            })
        })
    }

    /// Ghost rules for the projection potential: zero normal gradient where
    /// the normal velocity is prescribed, zero value at outflow faces.
    pub fn potential_rules(&self) -> GhostRules {
        std::array::from_fn(|a| {
            std::array::from_fn(|s| match &self.faces[a][s] {
                FaceBc::Periodic => Ghost::Periodic,
                FaceBc::Dirichlet(_) | FaceBc::FreeSlip => Ghost::Even,
                FaceBc::NeumannOutflow => Ghost::Odd,
            })
        })
    }
}

#[derive(Debug, Clone)]
pub struct FluidParams {
    pub rho: f64,
    pub mu: f64,
    /// Linear-solver tolerance; also the bound on face divergence.
    pub rtol: f64,
    /// Iteration cap; `None` uses `10 · cells^(1/d)`.
    pub max_iter: Option<usize>,
    pub cycles: usize,
    pub poisson_precond: Preconditioner,
    /// Offset tangential Dirichlet data by `(Δt/ρ)∂τφ` so that the
    /// projected velocity meets the wall value.
    pub tangential_correction: bool,
}

impl Default for FluidParams {
    fn default() -> Self {
        FluidParams {
            rho: 1.0,
            mu: 0.01,
            rtol: 1e-9,
            max_iter: None,
            cycles: 2,
            poisson_precond: Preconditioner::Multigrid,
            tangential_correction: true,
        }
    }
}

impl FluidParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) {
            return Err(Error::config(format!("fluid.rho must be positive, got {}", self.rho)));
        }
        if !(self.mu >= 0.0) {
            return Err(Error::config(format!("fluid.mu must be nonnegative, got {}", self.mu)));
        }
        if !(self.rtol > 0.0 && self.rtol < 1.0) {
            return Err(Error::config(format!("solver.rtol must lie in (0, 1), got {}", self.rtol)));
        }
        if self.cycles == 0 {
            return Err(Error::config("at least one cycle per step is required"));
        }
        Ok(())
    }
}

/// Immersed-boundary velocity correction hooked into each cycle.
pub trait Forcing {
    /// Called once per step before the cycles.
    fn begin_step(&mut self, grid: &Grid, t: f64, dt: f64) -> Result<()>;

    /// Turns `ũ*` into `ũ` given `uⁿ`.
    fn apply(&mut self, u_star: &mut [Field], u_n: &[Field], dt: f64, rho: f64) -> Result<()>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub helmholtz_iterations: usize,
    pub poisson_iterations: usize,
    pub max_divergence: f64,
}

/// Solution fields and time-stepping history.
#[derive(Debug, Clone)]
pub struct SimState {
    pub u: Vec<Field>,
    /// Pressure at the last half step.
    pub p: Field,
    pub phi: Field,
    pub u_fc: Vec<FaceField>,
    pub n_prev: Option<Vec<Field>>,
    pub dt_prev: f64,
    pub t: f64,
    pub step: usize,
}

pub struct Fluid {
    pub grid: Grid,
    pub bc: Boundary,
    pub params: FluidParams,
    pub state: SimState,
    helmholtz: Vec<LinearSolver>,
    poisson: LinearSolver,
    vel_rules: Vec<GhostRules>,
    phi_rules: GhostRules,
}

impl Fluid {
    pub fn new(grid: Grid, bc: Boundary, params: FluidParams) -> Result<Fluid> {
        params.validate()?;
        bc.validate(grid.dim)?;
        let dim = grid.dim;
        let vel_rules: Vec<GhostRules> = (0..dim).map(|c| bc.velocity_rules(c)).collect();
        let phi_rules = bc.potential_rules();
        let helmholtz = vel_rules
            .iter()
            .map(|r| {
                // The shift is refreshed on every solve; any positive value
                // works for construction.
                LinearSolver::new(Operator::new(grid.clone(), 1.0, *r), Preconditioner::Jacobi, "helmholtz")
            })
            .collect();
        let poisson = LinearSolver::new(
            Operator::new(grid.clone(), 0.0, phi_rules),
            params.poisson_precond,
            "poisson",
        );
        let state = SimState {
            u: (0..dim).map(|_| Field::zeros(&grid)).collect(),
            p: Field::zeros(&grid),
            phi: Field::zeros(&grid),
            u_fc: (0..dim).map(|a| FaceField::zeros(&grid, a)).collect(),
            n_prev: None,
            dt_prev: 0.0,
            t: 0.0,
            step: 0,
        };
        let mut f = Fluid {
            grid,
            bc,
            params,
            state,
            helmholtz,
            poisson,
            vel_rules,
            phi_rules,
        };
        f.refresh_velocity_ghosts();
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    /// Sets the cell velocity from `f(x)` and derives face velocities.
    pub fn set_velocity(&mut self, f: impl Fn([f64; 3]) -> [f64; 3]) {
        let g = self.grid.clone();
        for c in 0..g.dim {
            self.state.u[c].set_from(|i, j, k| f(g.center(i, j, k))[c]);
        }
        self.refresh_velocity_ghosts();
        let t = self.state.t;
        let u = self.state.u.clone();
        self.state.u_fc = self.face_average(&u, t);
    }

    pub fn refresh_velocity_ghosts(&mut self) {
        let t = self.state.t;
        let mut u = std::mem::take(&mut self.state.u);
        self.fill_velocity_ghosts(&mut u, t, None);
        self.state.u = u;
    }

    /// Convective CFL time step, capped by `dt_max`.
    pub fn compute_dt(&self, cfl: f64, dt_max: f64) -> f64 {
        let mut rate: f64 = 0.0;
        for c in 0..self.dim() {
            rate = rate.max(self.state.u[c].max_abs() / self.grid.h[c]);
        }
        if rate == 0.0 {
            dt_max
        } else {
            (cfl / rate).min(dt_max)
        }
    }

    /// Fills velocity ghosts from the boundary data at time `t`. With `phi`
    /// given, tangential Dirichlet data is offset by `dt_over_rho · ∂τφ`.
    fn fill_velocity_ghosts(&self, u: &mut [Field], t: f64, phi: Option<(&Field, f64)>) {
        let g = &self.grid;
        for (c, uc) in u.iter_mut().enumerate() {
            uc.fill_ghosts(&self.vel_rules[c]);
            for a in 0..g.dim {
                for s in 0..2 {
                    let FaceBc::Dirichlet(bc) = &self.bc.faces[a][s] else {
                        continue;
                    };
                    let mut writes = Vec::new();
                    uc.for_each_face_cell(a, s, |gi, _ci, ijk| {
                        let mut x = g.center(ijk[0], ijk[1], ijk[2]);
                        x[a] = if s == 0 { g.lo[a] } else { g.hi(a) };
                        let mut val = bc.eval(x, t)[c];
                        if let (Some((ph, scale)), true) = (phi, c != a) {
                            let ps = ph.stride[c] as isize;
                            let pi = ph.idx(ijk[0] as isize, ijk[1] as isize, ijk[2] as isize) as isize;
                            let d = (ph.data[(pi + ps) as usize] - ph.data[(pi - ps) as usize])
                                / (2.0 * g.h[c]);
                            val += scale * d;
                        }
                        writes.push((gi, 2.0 * val));
                    });
                    for (gi, v) in writes {
                        uc.data[gi] += v;
                    }
                }
            }
        }
    }

    /// `(u·∇)u` with centered differences; ghosts of `u` must be current.
    pub fn convective_term(&self, u: &[Field]) -> Vec<Field> {
        let g = &self.grid;
        let dim = g.dim;
        let mut out: Vec<Field> = (0..dim).map(|_| Field::zeros(g)).collect();
        let inv2h: Vec<f64> = (0..dim).map(|a| 0.5 / g.h[a]).collect();
        let s = u[0].stride;
        let n = g.n;
        for c in 0..dim {
            let uc = &u[c].data;
            let oc = &mut out[c].data;
            for k in 0..n[2] {
                for j in 0..n[1] {
                    let r = u[0].row(j, k);
                    for p in r..r + n[0] {
                        let mut v = 0.0;
                        for a in 0..dim {
                            v += u[a].data[p] * (uc[p + s[a]] - uc[p - s[a]]) * inv2h[a];
                        }
                        oc[p] = v;
                    }
                }
            }
        }
        out
    }

    /// Two-cell face average `𝕀(u)` with boundary-face values from the BCs.
    fn face_average(&self, u: &[Field], t: f64) -> Vec<FaceField> {
        let g = &self.grid;
        let dim = g.dim;
        let mut out = Vec::with_capacity(dim);
        for a in 0..dim {
            let mut f = FaceField::zeros(g, a);
            let ua = &u[a];
            let sa = ua.stride[a];
            let n = f.n;
            for k in 0..n[2] {
                for j in 0..n[1] {
                    for i in 0..n[0] {
                        let ijk = [i, j, k];
                        let fi = f.idx(i, j, k);
                        let m = ijk[a];
                        let v = if m > 0 && m < g.n[a] {
                            let p = ua.idx(i as isize, j as isize, k as isize);
                            0.5 * (ua.data[p] + ua.data[p - sa])
                        } else {
                            let s = if m == 0 { 0 } else { 1 };
                            let mut cell = ijk;
                            cell[a] = if s == 0 { 0 } else { g.n[a] - 1 };
                            let p = ua.idx(cell[0] as isize, cell[1] as isize, cell[2] as isize);
                            match &self.bc.faces[a][s] {
                                FaceBc::Periodic => {
                                    let mut other = cell;
                                    other[a] = if s == 0 { g.n[a] - 1 } else { 0 };
                                    let q = ua.idx(other[0] as isize, other[1] as isize, other[2] as isize);
                                    0.5 * (ua.data[p] + ua.data[q])
                                }
                                FaceBc::Dirichlet(bc) => {
                                    let mut x = g.center(cell[0], cell[1], cell[2]);
                                    x[a] = if s == 0 { g.lo[a] } else { g.hi(a) };
                                    bc.eval(x, t)[a]
                                }
                                FaceBc::NeumannOutflow => ua.data[p],
                                FaceBc::FreeSlip => 0.0,
                            }
                        };
                        f.data[fi] = v;
                    }
                }
            }
            out.push(f);
        }
        out
    }

    /// Cell divergence of face velocities.
    pub fn face_divergence(&self, u_fc: &[FaceField]) -> Field {
        let g = &self.grid;
        let mut d = Field::zeros(g);
        for a in 0..g.dim {
            let f = &u_fc[a];
            let inv = 1.0 / g.h[a];
            let mut off = [0usize; 3];
            off[a] = 1;
            for k in 0..g.n[2] {
                for j in 0..g.n[1] {
                    for i in 0..g.n[0] {
                        let lo = f.data[f.idx(i, j, k)];
                        let hi = f.data[f.idx(i + off[0], j + off[1], k + off[2])];
                        let p = d.idx(i as isize, j as isize, k as isize);
                        d.data[p] += (hi - lo) * inv;
                    }
                }
            }
        }
        d
    }

    /// Maximum face divergence of the current state.
    pub fn max_divergence(&self) -> f64 {
        self.face_divergence(&self.state.u_fc).max_abs()
    }

    fn opts(&self) -> SolveOptions {
        SolveOptions {
            rtol: self.params.rtol,
            atol: 0.0,
            max_iter: self.params.max_iter.unwrap_or_else(|| default_max_iter(&self.grid)),
        }
    }

    /// Crank–Nicolson momentum solve without pressure or forcing.
    pub fn helmholtz_solve(&mut self, u_n: &[Field], nconv: &[Field], dt: f64) -> Result<(Vec<Field>, usize)> {
        let dim = self.dim();
        let rho = self.params.rho;
        let mu = self.params.mu;
        let t1 = self.state.t + dt;
        let mut us: Vec<Field> = u_n.to_vec();
        if mu == 0.0 {
            for c in 0..dim {
                us[c].axpy(-dt, &nconv[c]);
            }
            self.fill_velocity_ghosts(&mut us, t1, None);
            return Ok((us, 0));
        }
        let phi = self.state.phi.clone();
        let corr = if self.params.tangential_correction {
            Some((&phi, dt / rho))
        } else {
            None
        };
        self.fill_velocity_ghosts(&mut us, t1, corr);
        let sigma = 2.0 * rho / (dt * mu);
        let mut opts = self.opts();
        let mut iters = 0;
        for c in 0..dim {
            // rhs = σ uⁿ - (2ρ/μ) N + ∇²uⁿ, residual against the guess uⁿ
            // carrying the new boundary data.
            let mut lap_n = Field::zeros(&self.grid);
            laplacian(&self.grid, &u_n[c], &mut lap_n);
            let mut lap_s = Field::zeros(&self.grid);
            laplacian(&self.grid, &us[c], &mut lap_s);
            let mut r = Field::zeros(&self.grid);
            let scale_n = 2.0 * rho / mu;
            let n = self.grid.n;
            let mut bnorm2 = 0.0;
            for k in 0..n[2] {
                for j in 0..n[1] {
                    let row = r.row(j, k);
                    for p in row..row + n[0] {
                        let b = sigma * u_n[c].data[p] - scale_n * nconv[c].data[p] + lap_n.data[p];
                        bnorm2 += b * b;
                        r.data[p] = b - (sigma * us[c].data[p] - lap_s.data[p]);
                    }
                }
            }
            // Tolerance relative to the full right-hand side.
            let rnorm = r.dot(&r).sqrt();
            if rnorm > 0.0 {
                opts.rtol = (self.params.rtol * bnorm2.sqrt() / rnorm).min(1.0);
                let solver = &mut self.helmholtz[c];
                let mut op = solver.operator().clone();
                if op.sigma != sigma {
                    op.sigma = sigma;
                    *solver = LinearSolver::new(op, Preconditioner::Jacobi, "helmholtz");
                }
                let mut delta = Field::zeros(&self.grid);
                let st = solver.solve(&r, &mut delta, &opts)?;
                iters += st.iterations;
                us[c].axpy(1.0, &delta);
            }
        }
        self.fill_velocity_ghosts(&mut us, t1, corr);
        Ok((us, iters))
    }

    /// Projects `ũ` onto discretely divergence-free face velocities and
    /// updates `u`, `u_fc`, `φ` and `p` in the state.
    pub fn project(&mut self, mut ut: Vec<Field>, dt: f64) -> Result<usize> {
        let g = self.grid.clone();
        let dim = g.dim;
        let rho = self.params.rho;
        let t1 = self.state.t + dt;
        self.fill_velocity_ghosts(&mut ut, t1, None);
        let mut uf = self.face_average(&ut, t1);
        let div = self.face_divergence(&uf);
        let mut b = div.clone();
        for v in b.data.iter_mut() {
            *v *= -rho / dt;
        }
        // The residual maps to face divergence by Δt/ρ, so an absolute
        // tolerance bounds the divergence directly; the relative test only
        // guards against stalling at round-off.
        let mut opts = self.opts();
        opts.atol = self.params.rtol * rho / dt;
        opts.rtol = 1e-13;
        let mut phi = self.state.phi.clone();
        let st = self.poisson.solve(&b, &mut phi, &opts)?;
        phi.fill_ghosts(&self.phi_rules);

        // Face gradients consistent with the Poisson operator.
        let scale = dt / rho;
        for a in 0..dim {
            let f = &mut uf[a];
            let sa = phi.stride[a] as isize;
            let inv = 1.0 / g.h[a];
            let n = f.n;
            let mut grad = FaceField::zeros(&g, a);
            for k in 0..n[2] {
                for j in 0..n[1] {
                    for i in 0..n[0] {
                        let ijk = [i, j, k];
                        let m = ijk[a];
                        let fi = f.idx(i, j, k);
                        let gr = if m > 0 && m < g.n[a] {
                            let p = phi.idx(i as isize, j as isize, k as isize) as isize;
                            (phi.data[p as usize] - phi.data[(p - sa) as usize]) * inv
                        } else {
                            let s = if m == 0 { 0 } else { 1 };
                            let mut cell = ijk;
                            cell[a] = if s == 0 { 0 } else { g.n[a] - 1 };
                            let p = phi.idx(cell[0] as isize, cell[1] as isize, cell[2] as isize) as isize;
                            let ghost = if s == 0 { p - sa } else { p + sa };
                            match self.phi_rules[a][s] {
                                Ghost::Even => 0.0,
                                _ => {
                                    let d = phi.data[p as usize] - phi.data[ghost as usize];
                                    if s == 0 {
                                        d * inv
                                    } else {
                                        -d * inv
                                    }
                                }
                            }
                        };
                        grad.data[fi] = gr;
                        f.data[fi] -= scale * gr;
                    }
                }
            }
            // Cell velocity correction from the average of the two faces.
            let mut off = [0usize; 3];
            off[a] = 1;
            let ua = &mut ut[a];
            for k in 0..g.n[2] {
                for j in 0..g.n[1] {
                    for i in 0..g.n[0] {
                        let gc = 0.5
                            * (grad.data[grad.idx(i, j, k)]
                                + grad.data[grad.idx(i + off[0], j + off[1], k + off[2])]);
                        let p = ua.idx(i as isize, j as isize, k as isize);
                        ua.data[p] -= scale * gc;
                    }
                }
            }
        }
        self.fill_velocity_ghosts(&mut ut, t1, None);

        // p = φ - (Δt μ / 2ρ) ∇²φ.
        let mut lap = Field::zeros(&g);
        laplacian(&g, &phi, &mut lap);
        let mut p = phi.clone();
        p.axpy(-dt * self.params.mu / (2.0 * rho), &lap);

        for (c, uc) in ut.iter().enumerate() {
            if let Some(loc) = uc.first_non_finite() {
                return Err(Error::NonFinite {
                    what: format!("velocity component {c}"),
                    location: format!("{loc:?}"),
                });
            }
        }
        self.state.u = ut;
        self.state.u_fc = uf;
        self.state.phi = phi;
        self.state.p = p;
        Ok(st.iterations)
    }

    /// Advances one step of size `dt`.
    pub fn step(&mut self, dt: f64, mut forcing: Option<&mut dyn Forcing>) -> Result<StepStats> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        let dim = self.dim();
        let rho = self.params.rho;
        let t0 = self.state.t;
        if let Some(f) = forcing.as_deref_mut() {
            f.begin_step(&self.grid, t0, dt)?;
        }
        let u_n = self.state.u.clone();
        let n_n = self.convective_term(&u_n);
        let mut stats = StepStats::default();
        for k in 0..self.params.cycles {
            let nconv = if k == 0 {
                match &self.state.n_prev {
                    None => n_n.clone(),
                    Some(prev) => {
                        // Variable-step Adams–Bashforth extrapolation to t + dt/2.
                        let r = dt / self.state.dt_prev;
                        let mut out = n_n.clone();
                        for c in 0..dim {
                            for (o, (a, b)) in out[c]
                                .data
                                .iter_mut()
                                .zip(n_n[c].data.iter().zip(&prev[c].data))
                            {
                                *o = (1.0 + 0.5 * r) * a - 0.5 * r * b;
                            }
                        }
                        out
                    }
                }
            } else {
                let mut mid = self.state.u.clone();
                for c in 0..dim {
                    for (m, a) in mid[c].data.iter_mut().zip(&u_n[c].data) {
                        *m = 0.5 * (*m + a);
                    }
                }
                self.convective_term(&mid)
            };
            let (mut ut, hi) = self.helmholtz_solve(&u_n, &nconv, dt)?;
            stats.helmholtz_iterations += hi;
            if let Some(f) = forcing.as_deref_mut() {
                f.apply(&mut ut, &u_n, dt, rho)?;
            }
            stats.poisson_iterations += self.project(ut, dt)?;
        }
        self.state.n_prev = Some(n_n);
        self.state.dt_prev = dt;
        self.state.t = t0 + dt;
        self.state.step += 1;
        stats.max_divergence = self.max_divergence();
        Ok(stats)
    }

    /// Total momentum `ρ Σ u ΔV` per component.
    pub fn momentum(&self) -> [f64; 3] {
        let mut m = [0.0; 3];
        let w = self.params.rho * self.grid.cell_volume();
        for c in 0..self.dim() {
            m[c] = self.state.u[c].sum() * w;
        }
        m
    }
}

/// Standard 2d+1 point Laplacian using the current ghosts of `x`.
pub fn laplacian(g: &Grid, x: &Field, y: &mut Field) {
    let s = x.stride;
    let c: Vec<f64> = (0..g.dim).map(|a| 1.0 / (g.h[a] * g.h[a])).collect();
    for k in 0..g.n[2] {
        for j in 0..g.n[1] {
            let r = x.row(j, k);
            for p in r..r + g.n[0] {
                let mut v = 0.0;
                for a in 0..g.dim {
                    v += c[a] * (x.data[p + s[a]] - 2.0 * x.data[p] + x.data[p - s[a]]);
                }
                y.data[p] = v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::taylor_green;
    use std::f64::consts::PI;

    fn periodic_tg(n: usize, re: f64) -> Fluid {
        let g = Grid::new(&[n, n], &[0.0, 0.0], &[2.0, 2.0]).unwrap();
        let params = FluidParams {
            mu: 1.0 / re,
            ..Default::default()
        };
        let mut f = Fluid::new(g, Boundary::periodic(), params).unwrap();
        f.set_velocity(|x| {
            let (u, v, _) = taylor_green(x[0], x[1], 0.0, re);
            [u, v, 0.0]
        });
        f
    }

    #[test]
    fn convective_term_cases() {
        let g = Grid::new(&[16, 16], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let bc = Boundary::all(FaceBc::NeumannOutflow);
        let mut f = Fluid::new(g, bc, FluidParams::default()).unwrap();
        f.set_velocity(|_| [1.5, -0.5, 0.0]);
        let n = f.convective_term(&f.state.u);
        assert_eq!(n[0].max_abs() + n[1].max_abs(), 0.0);
        f.set_velocity(|x| [x[1], 0.0, 0.0]);
        let n = f.convective_term(&f.state.u);
        assert_eq!(n[0].max_abs() + n[1].max_abs(), 0.0);
    }

    #[test]
    fn convective_term_converges_for_taylor_green() {
        let mut errs = vec![];
        for n in [32, 64] {
            let f = periodic_tg(n, 100.0);
            let nn = f.convective_term(&f.state.u);
            let mut e: f64 = 0.0;
            nn[0].for_each_interior(|p, i, j, k| {
                let x = f.grid.center(i, j, k);
                let exact = -PI * 0.5 * (2.0 * PI * x[0]).sin();
                e = e.max((nn[0].data[p] - exact).abs());
            });
            errs.push(e);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.8, "order {order}");
    }

    #[test]
    fn quiescent_fluid_stays_at_rest() {
        let g = Grid::new(&[16, 16], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let bc = Boundary::all(FaceBc::Dirichlet(VelocityBc::Constant([0.0; 3])));
        let mut f = Fluid::new(g, bc, FluidParams::default()).unwrap();
        for _ in 0..3 {
            let dt = f.compute_dt(0.1, 0.01);
            assert_eq!(dt, 0.01);
            f.step(dt, None).unwrap();
        }
        assert!(f.state.u[0].max_abs() < 1e-12 && f.state.u[1].max_abs() < 1e-12);
    }

    #[test]
    fn inviscid_translation_is_preserved() {
        let g = Grid::new(&[16, 16], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let params = FluidParams {
            mu: 0.0,
            ..Default::default()
        };
        let mut f = Fluid::new(g, Boundary::periodic(), params).unwrap();
        f.set_velocity(|_| [0.3, -0.2, 0.0]);
        f.step(0.01, None).unwrap();
        f.state.u[0].for_each_interior(|p, _, _, _| assert!((f.state.u[0].data[p] - 0.3).abs() < 1e-12));
        f.state.u[1].for_each_interior(|p, _, _, _| assert!((f.state.u[1].data[p] + 0.2).abs() < 1e-12));
    }

    #[test]
    fn projection_removes_gradients() {
        let g = Grid::new(&[32, 32], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let mut f = Fluid::new(g.clone(), Boundary::periodic(), FluidParams::default()).unwrap();
        // Discrete gradient of a periodic potential, built on faces then
        // averaged to cells.
        let psi = |x: [f64; 3]| (2.0 * PI * x[0]).sin() * (4.0 * PI * x[1]).cos();
        let h = g.h[0];
        let ut: Vec<Field> = (0..2)
            .map(|c| {
                let mut fc = Field::zeros(&g);
                fc.set_from(|i, j, k| {
                    let x = g.center(i, j, k);
                    let mut xp = x;
                    let mut xm = x;
                    xp[c] += h;
                    xm[c] -= h;
                    (psi(xp) - psi(xm)) / (2.0 * h)
                });
                fc
            })
            .collect();
        f.project(ut, 0.01).unwrap();
        assert!(f.max_divergence() <= 10.0 * f.params.rtol);
        // Cell-centered gradients are only approximately removed.
        assert!(f.state.u[0].max_abs() < 0.2 * 2.0 * PI);
    }

    #[test]
    fn taylor_green_without_body_converges() {
        let re = 100.0;
        let t_end = 0.25;
        let mut errs = vec![];
        for n in [16usize, 32, 64] {
            let mut f = periodic_tg(n, re);
            while f.state.t < t_end - 1e-12 {
                let dt = f.compute_dt(0.1, 1.0).min(t_end - f.state.t);
                let st = f.step(dt, None).unwrap();
                assert!(st.max_divergence <= 10.0 * f.params.rtol);
            }
            let mut e2 = 0.0;
            let g = f.grid.clone();
            f.state.u[0].for_each_interior(|p, i, j, k| {
                let x = g.center(i, j, k);
                let (u, _, _) = taylor_green(x[0], x[1], f.state.t, re);
                e2 += (f.state.u[0].data[p] - u).powi(2) * g.cell_volume();
            });
            errs.push((e2 / 4.0).sqrt());
        }
        let o1 = (errs[0] / errs[1]).log2();
        let o2 = (errs[1] / errs[2]).log2();
        assert!(o1 > 1.7 && o2 > 1.7, "orders {o1} {o2} errs {errs:?}");
    }

    #[test]
    fn dirichlet_taylor_green_box() {
        // Exact data on a non-periodic box exercises the boundary paths.
        let re = 100.0;
        let bcf: VelocityFn = Arc::new(move |x, t| {
            let (u, v, _) = taylor_green(x[0], x[1], t, re);
            [u, v, 0.0]
        });
        let mut errs = vec![];
        for n in [16usize, 32, 64] {
            let g = Grid::new(&[n, n], &[-0.7, -0.4], &[0.9, 1.2]).unwrap();
            let bc = Boundary::all(FaceBc::Dirichlet(VelocityBc::Function(bcf.clone())));
            let params = FluidParams {
                mu: 1.0 / re,
                ..Default::default()
            };
            let mut f = Fluid::new(g.clone(), bc, params).unwrap();
            f.set_velocity(|x| {
                let (u, v, _) = taylor_green(x[0], x[1], 0.0, re);
                [u, v, 0.0]
            });
            let t_end = 0.2;
            while f.state.t < t_end - 1e-12 {
                let dt = f.compute_dt(0.1, 1.0).min(t_end - f.state.t);
                f.step(dt, None).unwrap();
            }
            let mut e: f64 = 0.0;
            f.state.u[1].for_each_interior(|p, i, j, k| {
                let x = g.center(i, j, k);
                let (_, v, _) = taylor_green(x[0], x[1], f.state.t, re);
                e = e.max((f.state.u[1].data[p] - v).abs());
            });
            errs.push(e);
        }
        let o = (errs[1] / errs[2]).log2();
        assert!(o > 1.5, "order {o} errs {errs:?}");
    }

    #[test]
    fn compute_dt_rules() {
        let g = Grid::new(&[20, 20], &[0.0, 0.0], &[2.0, 2.0]).unwrap();
        let mut f = Fluid::new(g, Boundary::periodic(), FluidParams::default()).unwrap();
        f.set_velocity(|_| [2.0, 0.0, 0.0]);
        assert!((f.compute_dt(0.1, 1.0) - 0.005).abs() < 1e-15);
        assert!((f.compute_dt(0.2, 1.0) - 0.01).abs() < 1e-15);
        assert_eq!(f.compute_dt(0.1, 0.001), 0.001);
    }

    #[test]
    fn mismatched_periodic_faces_rejected() {
        let g = Grid::new(&[8, 8], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let mut bc = Boundary::periodic();
        bc.faces[0][1] = FaceBc::NeumannOutflow;
        assert!(Fluid::new(g, bc, FluidParams::default()).is_err());
    }
}
