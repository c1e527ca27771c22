//! Krylov solvers for the constant-coefficient operator `σI - ∇²_h` with
//! homogeneous ghost-cell boundary rules.
//!
//! The operator is symmetric positive (semi-)definite on the interior cells.
//! Preconditioned conjugate gradients runs with either a Jacobi scaling or a
//! symmetric geometric multigrid V-cycle.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{Field, Ghost, GhostRules, Grid};

/// `σI - ∇²_h` on `grid` with homogeneous boundary rules.
#[derive(Debug, Clone)]
pub struct Operator {
    pub grid: Grid,
    pub sigma: f64,
    pub rules: GhostRules,
}

impl Operator {
    pub fn new(grid: Grid, sigma: f64, rules: GhostRules) -> Operator {
        assert!(sigma >= 0.0, "shift must be nonnegative");
        Operator { grid, sigma, rules }
    }

    /// True when constants lie in the nullspace.
    pub fn is_singular(&self) -> bool {
        self.sigma == 0.0
            && self.rules[..self.grid.dim]
                .iter()
                .flatten()
                .all(|r| *r != Ghost::Odd)
    }

    fn inv_h2(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for a in 0..self.grid.dim {
            c[a] = 1.0 / (self.grid.h[a] * self.grid.h[a]);
        }
        c
    }

    fn center_coeff(&self) -> f64 {
        self.sigma + 2.0 * self.inv_h2().iter().sum::<f64>()
    }

    /// `y = A x`; refreshes the ghosts of `x`.
    pub fn apply(&self, x: &mut Field, y: &mut Field) {
        x.fill_ghosts(&self.rules);
        let c = self.inv_h2();
        let d = self.center_coeff();
        let s = x.stride;
        let n = x.n;
        let three = self.grid.dim == 3;
        for k in 0..n[2] {
            for j in 0..n[1] {
                let r = x.row(j, k);
                for p in r..r + n[0] {
                    let mut v = d * x.data[p]
                        - c[0] * (x.data[p - 1] + x.data[p + 1])
                        - c[1] * (x.data[p - s[1]] + x.data[p + s[1]]);
                    if three {
                        v -= c[2] * (x.data[p - s[2]] + x.data[p + s[2]]);
                    }
                    y.data[p] = v;
                }
            }
        }
    }

    /// One Gauss–Seidel pass over the cells of one color.
    fn gs_color(&self, x: &mut Field, b: &Field, color: usize) {
        x.fill_ghosts(&self.rules);
        let c = self.inv_h2();
        let inv_d = 1.0 / self.center_coeff();
        let s = x.stride;
        let n = x.n;
        let three = self.grid.dim == 3;
        for k in 0..n[2] {
            for j in 0..n[1] {
                let r = x.row(j, k);
                let start = (color + j + k) % 2;
                let mut p = r + start;
                while p < r + n[0] {
                    let mut v = b.data[p]
                        + c[0] * (x.data[p - 1] + x.data[p + 1])
                        + c[1] * (x.data[p - s[1]] + x.data[p + s[1]]);
                    if three {
                        v += c[2] * (x.data[p - s[2]] + x.data[p + s[2]]);
                    }
                    x.data[p] = v * inv_d;
                    p += 2;
                }
            }
        }
        // Boundary cells see their ghosts; a color pass that touched cells
        // next to the face leaves ghosts stale, so refresh for the caller.
        x.fill_ghosts(&self.rules);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioner {
    Jacobi,
    Multigrid,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Stop when `‖r‖₂ ≤ rtol ‖b‖₂`.
    pub rtol: f64,
    /// Or when `‖r‖∞ ≤ atol`.
    pub atol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final `‖r‖₂ / ‖b‖₂`.
    pub relative_residual: f64,
    pub max_residual: f64,
}

struct Level {
    op: Operator,
    x: Field,
    b: Field,
    r: Field,
}

enum CoarseSolve {
    Dense(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Sweeps(usize),
}

/// Symmetric V-cycle: red-black Gauss–Seidel (red then black before the
/// coarse correction, reversed after), full-weighting restriction and its
/// bilinear transpose for prolongation.
pub struct Multigrid {
    levels: Vec<Level>,
    coarse: CoarseSolve,
    sweeps: usize,
}

/// Largest coarsest level factored densely.
const DENSE_COARSE_MAX: usize = 1024;

impl Multigrid {
    pub fn new(op: &Operator) -> Multigrid {
        let mut levels = Vec::new();
        let mut g = op.grid.clone();
        loop {
            let lop = Operator::new(g.clone(), op.sigma, op.rules);
            levels.push(Level {
                op: lop,
                x: Field::zeros(&g),
                b: Field::zeros(&g),
                r: Field::zeros(&g),
            });
            match g.coarsen() {
                Some(c) if g.ncells() > 64 => g = c,
                _ => break,
            }
        }
        let last = &levels[levels.len() - 1].op;
        let coarse = if last.grid.ncells() <= DENSE_COARSE_MAX {
            CoarseSolve::Dense(dense_factor(last))
        } else {
            CoarseSolve::Sweeps(40)
        };
        Multigrid {
            levels,
            coarse,
            sweeps: 2,
        }
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// `z ≈ A⁻¹ r` by one V-cycle from a zero guess.
    pub fn apply(&mut self, r: &Field, z: &mut Field) {
        self.levels[0].b.data.copy_from_slice(&r.data);
        self.vcycle(0);
        z.data.copy_from_slice(&self.levels[0].x.data);
    }

    fn vcycle(&mut self, l: usize) {
        let nlev = self.levels.len();
        if l + 1 == nlev {
            let lev = &mut self.levels[l];
            lev.x.data.fill(0.0);
            match &self.coarse {
                CoarseSolve::Dense(ch) => {
                    let rhs = DVector::from_vec(lev.b.interior());
                    let sol = ch.solve(&rhs);
                    lev.x.set_interior(sol.as_slice());
                    if lev.op.is_singular() {
                        let m = lev.x.mean();
                        lev.x.add_constant(-m);
                    }
                }
                CoarseSolve::Sweeps(n) => {
                    for _ in 0..*n {
                        lev.op.gs_color(&mut lev.x, &lev.b, 0);
                        lev.op.gs_color(&mut lev.x, &lev.b, 1);
                    }
                    for _ in 0..*n {
                        lev.op.gs_color(&mut lev.x, &lev.b, 1);
                        lev.op.gs_color(&mut lev.x, &lev.b, 0);
                    }
                }
            }
            return;
        }
        {
            let lev = &mut self.levels[l];
            lev.x.data.fill(0.0);
            for _ in 0..self.sweeps {
                lev.op.gs_color(&mut lev.x, &lev.b, 0);
                lev.op.gs_color(&mut lev.x, &lev.b, 1);
            }
            let Level { op, x, b, r } = lev;
            op.apply(x, r);
            let n = r.n;
            for k in 0..n[2] {
                for j in 0..n[1] {
                    let row = r.row(j, k);
                    for p in row..row + n[0] {
                        r.data[p] = b.data[p] - r.data[p];
                    }
                }
            }
        }
        let (fine, coarse) = self.levels.split_at_mut(l + 1);
        restrict(&fine[l].r, &mut coarse[0].b, &fine[l].op.rules);
        self.vcycle(l + 1);
        let (fine, coarse) = self.levels.split_at_mut(l + 1);
        let cl = &mut coarse[0];
        cl.x.fill_ghosts(&cl.op.rules);
        prolong_add(&cl.x, &mut fine[l].x);
        let lev = &mut self.levels[l];
        for _ in 0..self.sweeps {
            lev.op.gs_color(&mut lev.x, &lev.b, 1);
            lev.op.gs_color(&mut lev.x, &lev.b, 0);
        }
    }
}

fn dense_factor(op: &Operator) -> nalgebra::Cholesky<f64, nalgebra::Dyn> {
    let g = &op.grid;
    let m = g.ncells();
    let mut a = DMatrix::zeros(m, m);
    let mut e = Field::zeros(g);
    let mut y = Field::zeros(g);
    let mut unit = vec![0.0; m];
    for col in 0..m {
        unit[col] = 1.0;
        e.data.fill(0.0);
        e.set_interior(&unit);
        op.apply(&mut e, &mut y);
        for (row, v) in y.interior().into_iter().enumerate() {
            a[(row, col)] = v;
        }
        unit[col] = 0.0;
    }
    if op.is_singular() {
        // Lift the constant nullspace; the shift only touches the mean.
        let shift = op.center_coeff() / m as f64;
        a.add_scalar_mut(shift);
    }
    a.cholesky().expect("coarse operator is positive definite")
}

/// Per-axis bilinear weights from the coarse cell `I` and its neighbor on
/// the side of fine child `di`.
const NEAR: f64 = 0.75;
const FAR: f64 = 0.25;

/// Coarse `b = Pᵀ r / 2^d`, the exact transpose of [`prolong_add`] scaled
/// by the child count.
fn restrict(r: &Field, cb: &mut Field, rules: &GhostRules) {
    let dim = r.dim;
    let scale = 1.0 / (1usize << dim) as f64;
    cb.data.fill(0.0);
    let n = r.n;
    let kz = if dim == 3 { 2 } else { 1 };
    for k in 0..n[2] {
        for j in 0..n[1] {
            for i in 0..n[0] {
                let v = r.at(i, j, k) * scale;
                let (ci, cj, ck) = ((i / 2) as isize, (j / 2) as isize, (k / kz) as isize);
                let oi = if i % 2 == 0 { -1 } else { 1 };
                let oj = if j % 2 == 0 { -1 } else { 1 };
                let ok = if k % 2 == 0 { -1 } else { 1 };
                for (di, wi) in [(0, NEAR), (oi, FAR)] {
                    for (dj, wj) in [(0, NEAR), (oj, FAR)] {
                        if dim == 3 {
                            for (dk, wk) in [(0, NEAR), (ok, FAR)] {
                                let q = cb.idx(ci + di, cj + dj, ck + dk);
                                cb.data[q] += wi * wj * wk * v;
                            }
                        } else {
                            let q = cb.idx(ci + di, cj + dj, 0);
                            cb.data[q] += wi * wj * v;
                        }
                    }
                }
            }
        }
    }
    cb.fold_ghosts(rules);
}

/// Fine `x += P xc`; `xc` must have its ghosts (including corners) filled.
fn prolong_add(xc: &Field, x: &mut Field) {
    let dim = x.dim;
    let n = x.n;
    let kz = if dim == 3 { 2 } else { 1 };
    for k in 0..n[2] {
        for j in 0..n[1] {
            for i in 0..n[0] {
                let (ci, cj, ck) = ((i / 2) as isize, (j / 2) as isize, (k / kz) as isize);
                let oi = if i % 2 == 0 { -1 } else { 1 };
                let oj = if j % 2 == 0 { -1 } else { 1 };
                let ok = if k % 2 == 0 { -1 } else { 1 };
                let mut v = 0.0;
                for (di, wi) in [(0, NEAR), (oi, FAR)] {
                    for (dj, wj) in [(0, NEAR), (oj, FAR)] {
                        if dim == 3 {
                            for (dk, wk) in [(0, NEAR), (ok, FAR)] {
                                v += wi * wj * wk * xc.data[xc.idx(ci + di, cj + dj, ck + dk)];
                            }
                        } else {
                            v += wi * wj * xc.data[xc.idx(ci + di, cj + dj, 0)];
                        }
                    }
                }
                let p = x.idx(i as isize, j as isize, k as isize);
                x.data[p] += v;
            }
        }
    }
}

/// Preconditioned conjugate gradients with owned work storage.
pub struct LinearSolver {
    op: Operator,
    mg: Option<Multigrid>,
    r: Field,
    z: Field,
    p: Field,
    q: Field,
    name: &'static str,
}

impl LinearSolver {
    pub fn new(op: Operator, precond: Preconditioner, name: &'static str) -> LinearSolver {
        let mg = match precond {
            Preconditioner::Multigrid => Some(Multigrid::new(&op)),
            Preconditioner::Jacobi => None,
        };
        let g = &op.grid;
        LinearSolver {
            r: Field::zeros(g),
            z: Field::zeros(g),
            p: Field::zeros(g),
            q: Field::zeros(g),
            mg,
            op,
            name,
        }
    }

    pub fn operator(&self) -> &Operator {
        &self.op
    }

    /// Solves `A x = b` starting from the contents of `x`. On singular
    /// operators the mean of `b` is removed and `x` is returned with zero
    /// mean.
    pub fn solve(&mut self, b: &Field, x: &mut Field, opts: &SolveOptions) -> Result<SolveStats> {
        let singular = self.op.is_singular();
        let mut bb = b.clone();
        if singular {
            let m = bb.mean();
            bb.add_constant(-m);
        }
        let bnorm = bb.dot(&bb).sqrt();
        if bnorm == 0.0 {
            x.data.fill(0.0);
            return Ok(SolveStats {
                iterations: 0,
                relative_residual: 0.0,
                max_residual: 0.0,
            });
        }

        self.op.apply(x, &mut self.q);
        copy_interior(&bb, &mut self.r);
        self.r.axpy(-1.0, &self.q);
        let converged = |r: &Field| {
            let rn = r.dot(r).sqrt();
            rn <= opts.rtol * bnorm || r.max_abs() <= opts.atol
        };
        let mut it = 0;
        if !converged(&self.r) {
            self.precondition();
            copy_interior(&self.z, &mut self.p);
            let mut rz = self.r.dot(&self.z);
            loop {
                if it >= opts.max_iter {
                    let rel = self.r.dot(&self.r).sqrt() / bnorm;
                    return Err(Error::SolverDiverged {
                        solver: self.name,
                        iterations: it,
                        residual: rel,
                    });
                }
                it += 1;
                self.op.apply(&mut self.p, &mut self.q);
                let pq = self.p.dot(&self.q);
                if !(pq > 0.0) {
                    let rel = self.r.dot(&self.r).sqrt() / bnorm;
                    return Err(Error::SolverDiverged {
                        solver: self.name,
                        iterations: it,
                        residual: rel,
                    });
                }
                let alpha = rz / pq;
                x.axpy(alpha, &self.p);
                self.r.axpy(-alpha, &self.q);
                if converged(&self.r) {
                    break;
                }
                self.precondition();
                let rz_new = self.r.dot(&self.z);
                let beta = rz_new / rz;
                rz = rz_new;
                xpby(&self.z, beta, &mut self.p);
            }
        }
        if singular {
            let m = x.mean();
            x.add_constant(-m);
        }
        if let Some(loc) = x.first_non_finite() {
            return Err(Error::NonFinite {
                what: format!("{} solution", self.name),
                location: format!("{loc:?}"),
            });
        }
        Ok(SolveStats {
            iterations: it,
            relative_residual: self.r.dot(&self.r).sqrt() / bnorm,
            max_residual: self.r.max_abs(),
        })
    }

    fn precondition(&mut self) {
        match &mut self.mg {
            Some(mg) => {
                mg.apply(&self.r, &mut self.z);
                if self.op.is_singular() {
                    let m = self.z.mean();
                    self.z.add_constant(-m);
                }
            }
            None => {
                let inv = 1.0 / self.op.center_coeff();
                let n = self.r.n;
                for k in 0..n[2] {
                    for j in 0..n[1] {
                        let row = self.r.row(j, k);
                        for p in row..row + n[0] {
                            self.z.data[p] = self.r.data[p] * inv;
                        }
                    }
                }
            }
        }
    }
}

fn copy_interior(src: &Field, dst: &mut Field) {
    let n = src.n;
    for k in 0..n[2] {
        for j in 0..n[1] {
            let r = src.row(j, k);
            dst.data[r..r + n[0]].copy_from_slice(&src.data[r..r + n[0]]);
        }
    }
}

/// `p = z + beta p`.
fn xpby(z: &Field, beta: f64, p: &mut Field) {
    let n = z.n;
    for k in 0..n[2] {
        for j in 0..n[1] {
            let r = z.row(j, k);
            for q in r..r + n[0] {
                p.data[q] = z.data[q] + beta * p.data[q];
            }
        }
    }
}

/// Default iteration cap: `10 · (cells)^(1/d)`.
pub fn default_max_iter(grid: &Grid) -> usize {
    (10.0 * (grid.ncells() as f64).powf(1.0 / grid.dim as f64)).ceil() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn opts(rtol: f64) -> SolveOptions {
        SolveOptions {
            rtol,
            atol: 0.0,
            max_iter: 500,
        }
    }

    fn periodic2() -> GhostRules {
        [[Ghost::Periodic; 2], [Ghost::Periodic; 2], [Ghost::Even; 2]]
    }

    #[test]
    fn manufactured_periodic_poisson() {
        let mut errs = vec![];
        for n in [32usize, 64] {
            let g = Grid::new(&[n, n], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
            let op = Operator::new(g.clone(), 0.0, periodic2());
            let mut b = Field::zeros(&g);
            let mut exact = Field::zeros(&g);
            b.set_from(|i, j, k| {
                let x = g.center(i, j, k);
                8.0 * PI * PI * (2.0 * PI * x[0]).cos() * (2.0 * PI * x[1]).cos()
            });
            exact.set_from(|i, j, k| {
                let x = g.center(i, j, k);
                (2.0 * PI * x[0]).cos() * (2.0 * PI * x[1]).cos()
            });
            for pc in [Preconditioner::Jacobi, Preconditioner::Multigrid] {
                let mut s = LinearSolver::new(op.clone(), pc, "poisson");
                let mut x = Field::zeros(&g);
                let st = s.solve(&b, &mut x, &opts(1e-10)).unwrap();
                assert!(st.relative_residual <= 1e-10);
                x.axpy(-1.0, &exact);
                errs.push(x.max_abs());
                if pc == Preconditioner::Multigrid {
                    assert!(st.iterations < 15, "mg iterations {}", st.iterations);
                }
            }
        }
        // Second-order convergence of the discrete solution.
        let ratio = errs[0] / errs[2];
        assert!(ratio > 3.8 && ratio < 4.2, "ratio {ratio}");
        assert!((errs[0] - errs[1]).abs() < 1e-8);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let g = Grid::new(&[16, 16], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let mut s = LinearSolver::new(
            Operator::new(g.clone(), 0.0, periodic2()),
            Preconditioner::Multigrid,
            "poisson",
        );
        let mut x = Field::zeros(&g);
        x.fill_interior(3.0);
        s.solve(&Field::zeros(&g), &mut x, &opts(1e-9)).unwrap();
        assert_eq!(x.max_abs(), 0.0);
    }

    #[test]
    fn mixed_boundaries_and_helmholtz() {
        // Odd/even/periodic mix with a shift, checked against the operator.
        let g = Grid::new(&[48, 32], &[0.0, 0.0], &[1.5, 1.0]).unwrap();
        let rules = [
            [Ghost::Odd, Ghost::Even],
            [Ghost::Periodic, Ghost::Periodic],
            [Ghost::Even; 2],
        ];
        for sigma in [0.0, 50.0] {
            let op = Operator::new(g.clone(), sigma, rules);
            let mut b = Field::zeros(&g);
            b.set_from(|i, j, _| ((i * 31 + j * 17) % 11) as f64 - 5.0);
            for pc in [Preconditioner::Jacobi, Preconditioner::Multigrid] {
                let mut s = LinearSolver::new(op.clone(), pc, "helmholtz");
                let mut x = Field::zeros(&g);
                s.solve(&b, &mut x, &opts(1e-11)).unwrap();
                let mut ax = Field::zeros(&g);
                op.apply(&mut x, &mut ax);
                ax.axpy(-1.0, &b);
                assert!(ax.dot(&ax).sqrt() <= 1e-10 * b.dot(&b).sqrt() * 1.01);
            }
        }
    }

    #[test]
    fn multigrid_preconditioner_is_symmetric() {
        let g = Grid::new(&[16, 16, 16], &[0.0; 3], &[1.0; 3]).unwrap();
        let rules = [
            [Ghost::Odd, Ghost::Even],
            [Ghost::Periodic, Ghost::Periodic],
            [Ghost::Even, Ghost::Odd],
        ];
        let op = Operator::new(g.clone(), 0.0, rules);
        let mut mg = Multigrid::new(&op);
        assert!(mg.depth() >= 2);
        let mut a = Field::zeros(&g);
        let mut b = Field::zeros(&g);
        a.set_from(|i, j, k| ((i * 7 + j * 3 + k * 5) % 13) as f64 - 6.0);
        b.set_from(|i, j, k| ((i * 5 + j * 11 + k) % 7) as f64 - 3.0);
        let mut ma = Field::zeros(&g);
        let mut mb = Field::zeros(&g);
        mg.apply(&a, &mut ma);
        mg.apply(&b, &mut mb);
        let (l, r) = (b.dot(&ma), a.dot(&mb));
        assert!((l - r).abs() <= 1e-10 * l.abs().max(r.abs()), "{l} vs {r}");
    }

    #[test]
    fn iteration_cap_reports_divergence() {
        let g = Grid::new(&[32, 32], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let mut s = LinearSolver::new(
            Operator::new(g.clone(), 0.0, periodic2()),
            Preconditioner::Jacobi,
            "poisson",
        );
        let mut b = Field::zeros(&g);
        b.set_from(|i, j, _| ((i * 3 + j * 7) % 5) as f64);
        let mut x = Field::zeros(&g);
        let o = SolveOptions {
            rtol: 1e-12,
            atol: 0.0,
            max_iter: 3,
        };
        assert!(matches!(
            s.solve(&b, &mut x, &o),
            Err(Error::SolverDiverged { iterations: 3, .. })
        ));
    }
}
