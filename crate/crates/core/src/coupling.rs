//! Lagrangian–Eulerian coupling: per-marker weight tables, interpolation,
//! spreading and direct-forcing constraint forces.
//!
//! Stored weights are dimensionless. Interpolation is `U = Σ w u`; spreading
//! adds `value · w · dv / ΔV` to each stencil cell, where `dv = ds · ΔV^(1/d)`
//! is the volume a marker represents.

use std::str::FromStr;

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fluid::Forcing;
use crate::geometry::{heaviside_field, Body, MarkerSet, Orientation};
use crate::grid::{Field, Grid};
use crate::kernel::{Kernel, KernelKind};
use crate::mls::{generating_weights, shift_cvs, shift_ncvs, GeneratingWeights, GramFallback, Stencil};

/// How a weight vector is produced from the base kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingMode {
    /// Tensor-product kernel, two-sided.
    Standard,
    /// Unshifted one-sided MLS weights Ψ.
    Mls,
    MlsCvs,
    MlsNcvs,
}

impl CouplingMode {
    pub fn name(&self) -> &'static str {
        match self {
            CouplingMode::Standard => "standard",
            CouplingMode::Mls => "mls",
            CouplingMode::MlsCvs => "mls_cvs",
            CouplingMode::MlsNcvs => "mls_ncvs",
        }
    }

    pub fn is_one_sided(&self) -> bool {
        !matches!(self, CouplingMode::Standard)
    }
}

impl FromStr for CouplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(CouplingMode::Standard),
            "mls" => Ok(CouplingMode::Mls),
            "mls_cvs" => Ok(CouplingMode::MlsCvs),
            "mls_ncvs" => Ok(CouplingMode::MlsNcvs),
            other => Err(Error::config(format!(
                "unknown coupling mode \"{other}\" (expected standard, mls, mls_cvs or mls_ncvs)"
            ))),
        }
    }
}

/// Everything needed to turn markers into weight tables.
#[derive(Debug, Clone, Copy)]
pub struct CouplingSpec {
    pub kernel: KernelKind,
    pub interp: CouplingMode,
    pub spread: CouplingMode,
    pub fallback: GramFallback,
    /// Axes on which stencils wrap around.
    pub periodic: [bool; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkerWeights {
    /// Cells in [`Grid::lin`] order.
    pub cells: Vec<usize>,
    /// Storage indices of the same cells in a [`Field`].
    pub slots: Vec<usize>,
    pub interp: Vec<f64>,
    pub spread: Vec<f64>,
    /// Whether the two-sided fallback replaced a near-singular solve.
    pub fell_back: bool,
}

#[derive(Debug, Clone)]
pub struct CouplingTable {
    pub dim: usize,
    pub markers: Vec<MarkerWeights>,
    pub ds: Vec<f64>,
    /// Marker volume `ds · ΔV^(1/d)`.
    pub dv: Vec<f64>,
    pub cell_volume: f64,
}

/// Cells whose centers lie strictly inside the kernel support around `x`,
/// with base weights and mask bits. Periodic axes wrap; other axes clip.
pub fn build_stencil(
    x: [f64; 3],
    grid: &Grid,
    kernel: &Kernel,
    heaviside: Option<&[bool]>,
    periodic: [bool; 3],
) -> Stencil {
    let dim = grid.dim;
    let hw = kernel.half_support();
    // Per-axis candidate (wrapped index, unwrapped coordinate, 1D weight).
    let mut axes: [Vec<(usize, f64, f64)>; 3] = Default::default();
    for a in 0..3 {
        if a >= dim {
            axes[a].push((0, 0.0, 1.0));
            continue;
        }
        let h = grid.h[a];
        let s = (x[a] - grid.lo[a]) / h - 0.5;
        let m0 = (s - hw).floor() as i64;
        let m1 = (s + hw).ceil() as i64;
        let n = grid.n[a] as i64;
        for m in m0..=m1 {
            let r = (m as f64 - s).abs();
            if r >= hw {
                continue;
            }
            let wrapped = if periodic[a] {
                m.rem_euclid(n)
            } else if m < 0 || m >= n {
                continue;
            } else {
                m
            };
            let coord = grid.lo[a] + (m as f64 + 0.5) * h;
            axes[a].push((wrapped as usize, coord, kernel.eval1d(m as f64 - s)));
        }
    }
    let mut st = Stencil {
        dim,
        center: x,
        points: vec![],
        indices: vec![],
        weights: vec![],
        mask: vec![],
        spacing: grid.h,
    };
    for &(k, zc, wz) in &axes[2] {
        for &(j, yc, wy) in &axes[1] {
            for &(i, xc, wx) in &axes[0] {
                let lin = grid.lin(i, j, k);
                st.points.push([xc, yc, zc]);
                st.indices.push([i, j, k]);
                st.weights.push(wx * wy * wz);
                st.mask.push(heaviside.map_or(true, |h| h[lin]));
            }
        }
    }
    st
}

/// Base weights renormalized to unit sum (clipped stencils lose mass).
fn standard_weights(st: &Stencil) -> Vec<f64> {
    let sum: f64 = st.weights.iter().sum();
    st.weights.iter().map(|w| w / sum).collect()
}

fn mode_weights(mode: CouplingMode, gw: &GeneratingWeights, st: &Stencil) -> Result<Vec<f64>> {
    Ok(match mode {
        CouplingMode::Standard => standard_weights(st),
        CouplingMode::Mls => gw.psi.clone(),
        CouplingMode::MlsCvs => shift_cvs(gw, &st.mask)?.psi_m.expect("shift sets psi_m"),
        CouplingMode::MlsNcvs => shift_ncvs(gw, &st.mask)?.psi_m.expect("shift sets psi_m"),
    })
}

/// Weights of one marker for the given modes.
pub fn marker_weights(
    marker: usize,
    st: &Stencil,
    grid: &Grid,
    spec: &CouplingSpec,
) -> Result<MarkerWeights> {
    let slots = st.indices.iter().map(|c| grid.slot(c[0], c[1], c[2])).collect();
    let cells = st.indices.iter().map(|c| grid.lin(c[0], c[1], c[2])).collect();
    let one_sided = spec.interp.is_one_sided() || spec.spread.is_one_sided();
    let mut out = MarkerWeights {
        cells,
        slots,
        interp: vec![],
        spread: vec![],
        fell_back: false,
    };
    if !one_sided {
        let w = standard_weights(st);
        out.interp = w.clone();
        out.spread = w;
        return Ok(out);
    }
    match generating_weights(st, marker) {
        Ok(gw) => {
            out.interp = mode_weights(spec.interp, &gw, st)?;
            out.spread = if spec.spread == spec.interp {
                out.interp.clone()
            } else {
                mode_weights(spec.spread, &gw, st)?
            };
        }
        Err(e @ (Error::NearSingularGram { .. } | Error::ReproductionFailure { .. })) => match spec.fallback {
            GramFallback::Error => return Err(e),
            GramFallback::TwoSided => {
                warn!("{e}; using the two-sided kernel for this marker");
                let w = standard_weights(st);
                out.interp = w.clone();
                out.spread = w;
                out.fell_back = true;
            }
        },
        Err(e) => return Err(e),
    }
    Ok(out)
}

/// Builds the coupling table of one marker family. `heaviside` masks the
/// stencils of one-sided modes and is ignored by standard mode.
pub fn build_coupling_table(
    markers: &MarkerSet,
    grid: &Grid,
    heaviside: Option<&[bool]>,
    spec: &CouplingSpec,
) -> Result<CouplingTable> {
    let kernel = Kernel::new(spec.kernel)?;
    if markers.dim != grid.dim {
        return Err(Error::Geometry(format!(
            "{}D markers on a {}D grid",
            markers.dim, grid.dim
        )));
    }
    let weights: Vec<MarkerWeights> = markers
        .x
        .par_iter()
        .enumerate()
        .map(|(m, x)| {
            let st = build_stencil(*x, grid, &kernel, heaviside, spec.periodic);
            if st.is_empty() {
                return Err(Error::Geometry(format!("marker {m} at {x:?} has no stencil cells")));
            }
            marker_weights(m, &st, grid, spec)
        })
        .collect::<Result<_>>()?;
    let cell_volume = grid.cell_volume();
    let h_eff = cell_volume.powf(1.0 / grid.dim as f64);
    Ok(CouplingTable {
        dim: grid.dim,
        markers: weights,
        ds: markers.ds.clone(),
        dv: markers.ds.iter().map(|d| d * h_eff).collect(),
        cell_volume,
    })
}

/// `U_m = Σ w u` for every marker.
pub fn interpolate(table: &CouplingTable, u: &[Field]) -> Vec<[f64; 3]> {
    table
        .markers
        .iter()
        .map(|mw| {
            let mut v = [0.0; 3];
            for (c, uc) in u.iter().enumerate() {
                v[c] = mw.slots.iter().zip(&mw.interp).map(|(&s, &w)| uc.data[s] * w).sum();
            }
            v
        })
        .collect()
}

/// `target += value · w · dv / ΔV`, accumulated serially in marker order.
pub fn spread(table: &CouplingTable, values: &[[f64; 3]], target: &mut [Field]) {
    assert_eq!(values.len(), table.markers.len());
    for ((mw, val), dv) in table.markers.iter().zip(values).zip(&table.dv) {
        let f = dv / table.cell_volume;
        for (c, tc) in target.iter_mut().enumerate() {
            let a = val[c] * f;
            if a == 0.0 {
                continue;
            }
            for (&s, &w) in mw.slots.iter().zip(&mw.spread) {
                tc.data[s] += a * w;
            }
        }
    }
}

/// `ΔU = U_b - U_interp` and `F = ρ ΔU / Δt`.
pub fn constraint_force(
    ub: &[[f64; 3]],
    ui: &[[f64; 3]],
    rho: f64,
    dt: f64,
) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
    let du: Vec<[f64; 3]> = ub
        .iter()
        .zip(ui)
        .map(|(b, i)| [b[0] - i[0], b[1] - i[1], b[2] - i[2]])
        .collect();
    let f = du.iter().map(|d| [rho / dt * d[0], rho / dt * d[1], rho / dt * d[2]]).collect();
    (du, f)
}

/// Hydrodynamic force on the body: `-Σ F dv`.
pub fn net_force(f: &[[f64; 3]], dv: &[f64]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (fm, d) in f.iter().zip(dv) {
        for c in 0..3 {
            out[c] -= fm[c] * d;
        }
    }
    out
}

/// One marker family with its table and last-cycle diagnostics.
#[derive(Debug, Clone)]
pub struct Family {
    pub orientation: Option<Orientation>,
    pub markers: MarkerSet,
    pub table: CouplingTable,
    pub u_interp: Vec<[f64; 3]>,
    pub du: Vec<[f64; 3]>,
    pub force: Vec<[f64; 3]>,
}

/// A body coupled to the fluid by direct forcing.
pub struct ImmersedBody {
    pub body: Body,
    pub spec: CouplingSpec,
    pub families: Vec<Family>,
    built_for: Option<f64>,
}

impl ImmersedBody {
    pub fn new(body: Body, spec: CouplingSpec) -> Result<ImmersedBody> {
        Kernel::new(spec.kernel)?;
        Ok(ImmersedBody {
            body,
            spec,
            families: vec![],
            built_for: None,
        })
    }

    /// Orientations that get their own family; standard coupling ignores
    /// masks so one two-sided family suffices.
    pub fn orientations(&self) -> Vec<Option<Orientation>> {
        if !self.spec.interp.is_one_sided() && !self.spec.spread.is_one_sided() {
            vec![None]
        } else {
            self.body.sides.orientations().into_iter().map(Some).collect()
        }
    }

    /// Rebuilds tables with markers at `t_pos` and velocities at `t_vel`.
    pub fn rebuild(&mut self, grid: &Grid, t_pos: f64, t_vel: f64) -> Result<()> {
        let markers = self.body.markers_at(t_pos, t_vel);
        let mut fams = Vec::new();
        for o in self.orientations() {
            let h = o.map(|o| heaviside_field(&self.body.interface_at(t_pos, o), grid));
            let table = build_coupling_table(&markers, grid, h.as_deref(), &self.spec)?;
            let n = markers.len();
            fams.push(Family {
                orientation: o,
                markers: markers.clone(),
                table,
                u_interp: vec![[0.0; 3]; n],
                du: vec![[0.0; 3]; n],
                force: vec![[0.0; 3]; n],
            });
        }
        self.families = fams;
        self.built_for = Some(t_pos);
        Ok(())
    }

    /// Hydrodynamic force from the last cycle, summed over families.
    pub fn hydrodynamic_force(&self) -> [f64; 3] {
        let mut out = [0.0; 3];
        for f in &self.families {
            let fam = net_force(&f.force, &f.table.dv);
            for c in 0..3 {
                out[c] += fam[c];
            }
        }
        out
    }

    pub fn fallback_count(&self) -> usize {
        self.families
            .iter()
            .map(|f| f.table.markers.iter().filter(|m| m.fell_back).count())
            .sum()
    }
}

impl Forcing for ImmersedBody {
    fn begin_step(&mut self, grid: &Grid, t: f64, dt: f64) -> Result<()> {
        let th = t + 0.5 * dt;
        if self.body.motion.is_moving() || self.built_for.is_none() {
            self.rebuild(grid, th, th)?;
        } else {
            // Static body: only the prescribed velocity can change.
            for f in &mut self.families {
                let m = self.body.markers_at(self.built_for.unwrap_or(0.0), th);
                f.markers.ub = m.ub;
            }
        }
        Ok(())
    }

    fn apply(&mut self, u_star: &mut [Field], u_n: &[Field], dt: f64, rho: f64) -> Result<()> {
        let mut mid: Vec<Field> = u_star.to_vec();
        for (m, un) in mid.iter_mut().zip(u_n) {
            for (a, b) in m.data.iter_mut().zip(&un.data) {
                *a = 0.5 * (*a + b);
            }
        }
        for f in &mut self.families {
            f.u_interp = interpolate(&f.table, &mid);
            let (du, force) = constraint_force(&f.markers.ub, &f.u_interp, rho, dt);
            f.du = du;
            f.force = force;
        }
        for f in &self.families {
            spread(&f.table, &f.du, u_star);
        }
        Ok(())
    }
}

/// Per-cell generating-function data of one marker, as written by the
/// weights dump.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightRow {
    /// Marker index, numbered family after family.
    pub marker: usize,
    pub cell: [usize; 3],
    /// Base kernel weight.
    pub w: f64,
    pub h: bool,
    pub l: f64,
    pub psi: f64,
    pub psi_m: f64,
}

/// W, H, L, Ψ and Ψᵐ of every marker of every family at time `t`. The
/// shifted column uses the shift of the spreading mode, else of the
/// interpolation mode, else repeats Ψ.
pub fn weight_rows(ib: &ImmersedBody, grid: &Grid, t: f64) -> Result<Vec<WeightRow>> {
    let kernel = Kernel::new(ib.spec.kernel)?;
    let shifted = |m: CouplingMode| matches!(m, CouplingMode::MlsCvs | CouplingMode::MlsNcvs);
    let shift = [ib.spec.spread, ib.spec.interp]
        .into_iter()
        .find(|m| shifted(*m))
        .unwrap_or(CouplingMode::Mls);
    let markers = ib.body.markers_at(t, t);
    let mut rows = Vec::new();
    for (f, o) in ib.orientations().into_iter().enumerate() {
        let h = o.map(|o| heaviside_field(&ib.body.interface_at(t, o), grid));
        for (m, x) in markers.x.iter().enumerate() {
            let id = f * markers.len() + m;
            let st = build_stencil(*x, grid, &kernel, h.as_deref(), ib.spec.periodic);
            let (l, psi, psi_m) = match generating_weights(&st, id) {
                Ok(gw) => {
                    let pm = mode_weights(shift, &gw, &st)?;
                    (gw.l, gw.psi, pm)
                }
                Err(e @ (Error::NearSingularGram { .. } | Error::ReproductionFailure { .. }))
                    if ib.spec.fallback == GramFallback::TwoSided =>
                {
                    warn!("{e}; dumping the two-sided kernel for this marker");
                    let w = standard_weights(&st);
                    (vec![1.0; st.len()], w.clone(), w)
                }
                Err(e) => return Err(e),
            };
            for q in 0..st.len() {
                rows.push(WeightRow {
                    marker: id,
                    cell: st.indices[q],
                    w: st.weights[q],
                    h: st.mask[q],
                    l: l[q],
                    psi: psi[q],
                    psi_m: psi_m[q],
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Interface, Motion, Shape, Sides};

    fn grid() -> Grid {
        Grid::new(&[32, 32], &[-1.0, -1.0], &[1.0, 1.0]).unwrap()
    }

    fn spec(interp: CouplingMode, spread: CouplingMode) -> CouplingSpec {
        CouplingSpec {
            kernel: KernelKind::PeskinFour,
            interp,
            spread,
            fallback: GramFallback::Error,
            periodic: [false; 3],
        }
    }

    fn circle_markers(g: &Grid) -> (MarkerSet, Vec<bool>) {
        let shape = Shape::Circle {
            center: [0.013, -0.021],
            radius: 0.5,
        };
        let m = crate::geometry::generate_markers(&shape, g.h[0]).unwrap();
        let itf = Interface::new(shape, Orientation::ExteriorActive).unwrap();
        (m, heaviside_field(&itf, g))
    }

    #[test]
    fn stencil_membership_on_cell_center() {
        let g = grid();
        let k = Kernel::new(KernelKind::PeskinFour).unwrap();
        let x = g.center(10, 12, 0);
        let st = build_stencil(x, &g, &k, None, [false; 3]);
        // |r| = 2 cells carry zero weight and are excluded.
        assert_eq!(st.len(), 9);
        let c = st.indices.iter().position(|i| *i == [10, 12, 0]).unwrap();
        assert!((st.weights[c] - 0.25).abs() < 1e-15);
        let off = build_stencil([x[0] + 0.3 * g.h[0], x[1] + 0.1 * g.h[1], 0.0], &g, &k, None, [false; 3]);
        assert_eq!(off.len(), 16);
    }

    #[test]
    fn periodic_and_clipped_stencils() {
        let g = grid();
        let k = Kernel::new(KernelKind::PeskinFour).unwrap();
        let x = [-0.99, 0.2, 0.0];
        let wrapped = build_stencil(x, &g, &k, None, [true, false, false]);
        assert_eq!(wrapped.len(), 16);
        assert!(wrapped.indices.iter().any(|i| i[0] == 31));
        assert!(wrapped.points.iter().any(|p| p[0] < -1.0));
        let clipped = build_stencil(x, &g, &k, None, [false; 3]);
        assert_eq!(clipped.len(), 8);
        let s = spec(CouplingMode::Standard, CouplingMode::Standard);
        let mw = marker_weights(0, &clipped, &g, &s).unwrap();
        assert!((mw.interp.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn mls_full_support_matches_standard() {
        let g = grid();
        let m = MarkerSet::new(2, vec![[0.11, -0.27, 0.0], [0.5, 0.3, 0.0]], vec![0.1, 0.1]);
        let all = vec![true; g.ncells()];
        let a = build_coupling_table(&m, &g, Some(&all), &spec(CouplingMode::Mls, CouplingMode::Mls)).unwrap();
        let b = build_coupling_table(&m, &g, None, &spec(CouplingMode::Standard, CouplingMode::Standard)).unwrap();
        for (x, y) in a.markers.iter().zip(&b.markers) {
            assert_eq!(x.cells, y.cells);
            for (p, q) in x.interp.iter().zip(&y.interp) {
                assert!((p - q).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn one_sided_weights_vanish_inside() {
        let g = grid();
        let (m, h) = circle_markers(&g);
        for mode in [CouplingMode::Mls, CouplingMode::MlsCvs, CouplingMode::MlsNcvs] {
            let t = build_coupling_table(&m, &g, Some(&h), &spec(mode, mode)).unwrap();
            for mw in &t.markers {
                assert!((mw.interp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                for (c, w) in mw.cells.iter().zip(&mw.interp) {
                    if !h[*c] {
                        assert_eq!(*w, 0.0);
                    }
                }
            }
        }
    }

    fn fields(g: &Grid, f: impl Fn([f64; 3]) -> f64) -> Vec<Field> {
        (0..2)
            .map(|c| {
                let mut fc = Field::zeros(g);
                fc.set_from(|i, j, k| f(g.center(i, j, k)) * (c + 1) as f64);
                fc
            })
            .collect()
    }

    #[test]
    fn interpolation_reproduction() {
        let g = grid();
        let (m, h) = circle_markers(&g);
        let constant = fields(&g, |_| 3.0);
        let linear = fields(&g, |x| 2.0 * x[0] - x[1]);
        for mode in [
            CouplingMode::Standard,
            CouplingMode::Mls,
            CouplingMode::MlsCvs,
            CouplingMode::MlsNcvs,
        ] {
            let t = build_coupling_table(&m, &g, Some(&h), &spec(mode, mode)).unwrap();
            for v in interpolate(&t, &constant) {
                assert!((v[0] - 3.0).abs() < 1e-9 && (v[1] - 6.0).abs() < 1e-9);
            }
            let lin = interpolate(&t, &linear);
            let err = lin
                .iter()
                .zip(&m.x)
                .map(|(v, x)| (v[0] - (2.0 * x[0] - x[1])).abs())
                .fold(0.0, f64::max);
            match mode {
                CouplingMode::Standard | CouplingMode::Mls => assert!(err < 1e-9, "{mode:?} {err}"),
                _ => assert!(err > 1e-6, "{mode:?} shifted weights should not be linear-exact"),
            }
        }
    }

    #[test]
    fn spreading_conserves_and_is_adjoint() {
        let g = grid();
        let (m, h) = circle_markers(&g);
        for (ia, sa) in [
            (CouplingMode::Standard, CouplingMode::Standard),
            (CouplingMode::MlsNcvs, CouplingMode::MlsNcvs),
            (CouplingMode::Mls, CouplingMode::MlsNcvs),
        ] {
            let t = build_coupling_table(&m, &g, Some(&h), &spec(ia, sa)).unwrap();
            let vals: Vec<[f64; 3]> = (0..m.len())
                .map(|k| [(k as f64 * 0.37).sin(), (k as f64 * 0.11).cos(), 0.0])
                .collect();
            let mut out: Vec<Field> = (0..2).map(|_| Field::zeros(&g)).collect();
            spread(&t, &vals, &mut out);
            for c in 0..2 {
                let total = out[c].sum() * t.cell_volume;
                let expect: f64 = vals.iter().zip(&t.dv).map(|(v, d)| v[c] * d).sum();
                assert!((total - expect).abs() < 1e-12);
            }
            if ia == sa {
                let u = fields(&g, |x| (3.0 * x[0]).sin() + x[1] * x[1]);
                let lhs: f64 = (0..2).map(|c| out[c].dot(&u[c]) * t.cell_volume).sum();
                let ui = interpolate(&t, &u);
                let rhs: f64 = ui
                    .iter()
                    .zip(&vals)
                    .zip(&t.dv)
                    .map(|((a, b), d)| (a[0] * b[0] + a[1] * b[1]) * d)
                    .sum();
                assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn one_sided_interpolation_ignores_interior() {
        let g = grid();
        let (m, h) = circle_markers(&g);
        let t = build_coupling_table(&m, &g, Some(&h), &spec(CouplingMode::MlsNcvs, CouplingMode::MlsNcvs)).unwrap();
        let u = fields(&g, |x| x[0] + 0.5);
        let before = interpolate(&t, &u);
        let mut v = u.clone();
        for c in 0..2 {
            v[c].set_from(|i, j, k| {
                let val = u[c].at(i, j, k);
                if h[g.lin(i, j, k)] {
                    val
                } else {
                    val + 1e3
                }
            });
        }
        assert_eq!(before, interpolate(&t, &v));
    }

    #[test]
    fn constraint_force_and_net_force() {
        let (du, f) = constraint_force(&[[1.0, 0.0, 0.0]], &[[0.0, 0.0, 0.0]], 1.0, 0.1);
        assert_eq!(du[0][0], 1.0);
        assert!((f[0][0] - 10.0).abs() < 1e-14);
        let (du, f) = constraint_force(&[[0.5, 0.2, 0.0]], &[[0.5, 0.2, 0.0]], 2.0, 0.1);
        assert_eq!((du[0], f[0]), ([0.0; 3], [0.0; 3]));
        // Stationary body in a rightward flow pushes the fluid left.
        let (_, f) = constraint_force(&[[0.0; 3]], &[[2.0, 0.0, 0.0]], 1.0, 0.1);
        assert!(f[0][0] < 0.0);
        assert!(net_force(&f, &[0.1])[0] > 0.0);
        assert_eq!(net_force(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], &[0.2, 0.2]), [0.0; 3]);
    }

    #[test]
    fn three_point_fallback_policy() {
        let g = Grid::new(&[64, 64], &[-2.0, -2.0], &[2.0, 2.0]).unwrap();
        let shape = Shape::Circle {
            center: [0.0, 0.0],
            radius: 1.0,
        };
        let body = Body::new(shape, Sides::Exterior, Motion::Static, g.h[0]).unwrap();
        let mut s = spec(CouplingMode::MlsNcvs, CouplingMode::MlsNcvs);
        s.kernel = KernelKind::ThreePoint;
        let mut ib = ImmersedBody::new(body.clone(), s).unwrap();
        assert!(matches!(ib.rebuild(&g, 0.0, 0.0), Err(Error::NearSingularGram { .. })));
        s.fallback = GramFallback::TwoSided;
        let mut ib = ImmersedBody::new(body, s).unwrap();
        ib.rebuild(&g, 0.0, 0.0).unwrap();
        assert!(ib.fallback_count() > 0);
    }

    #[test]
    fn correction_reduces_slip() {
        use crate::fluid::{Boundary, Fluid, FluidParams};
        let g = Grid::new(&[32, 32], &[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let mut fl = Fluid::new(g.clone(), Boundary::periodic(), FluidParams::default()).unwrap();
        fl.set_velocity(|x| [1.0 + 0.1 * x[1], 0.0, 0.0]);
        let body = Body::new(
            Shape::Circle {
                center: [0.0, 0.0],
                radius: 0.4,
            },
            Sides::Exterior,
            Motion::Static,
            g.h[0],
        )
        .unwrap();
        let mut ib = ImmersedBody::new(body, spec(CouplingMode::Standard, CouplingMode::Standard)).unwrap();
        ib.begin_step(&g, 0.0, 0.01).unwrap();
        let mut us = fl.state.u.clone();
        let un = fl.state.u.clone();
        ib.apply(&mut us, &un, 0.01, 1.0).unwrap();
        let before: f64 = ib.families[0].du.iter().map(|d| d[0] * d[0] + d[1] * d[1]).sum();
        let mut mid = us.clone();
        for c in 0..2 {
            for (a, b) in mid[c].data.iter_mut().zip(&un[c].data) {
                *a = 0.5 * (*a + b);
            }
        }
        let after: f64 = interpolate(&ib.families[0].table, &mid)
            .iter()
            .map(|v| v[0] * v[0] + v[1] * v[1])
            .sum();
        assert!(after < before, "{after} !< {before}");
        assert_eq!(fl.state.step, 0);
    }
}
