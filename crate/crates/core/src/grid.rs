//! Uniform Cartesian grids and cell-centered fields with one ghost layer.

use crate::error::{Error, Result};

/// Uniform cell-centered grid in two or three dimensions.
///
/// Unused axes (the third one in 2D) have `n = 1` and no ghost layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub n: [usize; 3],
    pub h: [f64; 3],
    pub lo: [f64; 3],
}

impl Grid {
    /// Grid with `n[a]` cells spanning `[lo[a], hi[a]]` on each axis.
    pub fn new(n: &[usize], lo: &[f64], hi: &[f64]) -> Result<Grid> {
        let dim = n.len();
        if !(2..=3).contains(&dim) || lo.len() != dim || hi.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "grid needs 2 or 3 axes with matching extents, got {} / {} / {}",
                n.len(),
                lo.len(),
                hi.len()
            )));
        }
        let mut g = Grid {
            dim,
            n: [1; 3],
            h: [1.0; 3],
            lo: [0.0; 3],
        };
        for a in 0..dim {
            if n[a] < 2 {
                return Err(Error::InvalidArgument(format!("axis {a} needs at least 2 cells")));
            }
            if !(hi[a] > lo[a]) || !lo[a].is_finite() || !hi[a].is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "axis {a} extent [{}, {}] is empty",
                    lo[a], hi[a]
                )));
            }
            g.n[a] = n[a];
            g.lo[a] = lo[a];
            g.h[a] = (hi[a] - lo[a]) / n[a] as f64;
        }
        Ok(g)
    }

    pub fn ncells(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn hi(&self, axis: usize) -> f64 {
        self.lo[axis] + self.n[axis] as f64 * self.h[axis]
    }

    pub fn cell_volume(&self) -> f64 {
        self.h[..self.dim].iter().product()
    }

    /// Smallest spacing over the active axes.
    pub fn h_min(&self) -> f64 {
        self.h[..self.dim].iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let mut x = [0.0; 3];
        let ijk = [i, j, k];
        for a in 0..self.dim {
            x[a] = self.lo[a] + (ijk[a] as f64 + 0.5) * self.h[a];
        }
        x
    }

    /// Linear index of an interior cell, `i` fastest.
    #[inline]
    pub fn lin(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n[0] * (j + self.n[1] * k)
    }

    /// Inverse of [`Grid::lin`].
    #[inline]
    pub fn unlin(&self, p: usize) -> [usize; 3] {
        let i = p % self.n[0];
        let r = p / self.n[0];
        [i, r % self.n[1], r / self.n[1]]
    }

    /// Storage index of interior cell `(i, j, k)` in a [`Field`] on this grid.
    #[inline]
    pub fn slot(&self, i: usize, j: usize, k: usize) -> usize {
        let (e0, e1) = (self.n[0] + 2, self.n[1] + 2);
        let g2 = if self.dim == 3 { 1 } else { 0 };
        (i + 1) + (j + 1) * e0 + (k + g2) * e0 * e1
    }

    /// Grid with every active axis halved, if all active counts are even.
    pub fn coarsen(&self) -> Option<Grid> {
        let mut g = self.clone();
        for a in 0..self.dim {
            if self.n[a] % 2 != 0 || self.n[a] < 4 {
                return None;
            }
            g.n[a] = self.n[a] / 2;
            g.h[a] = self.h[a] * 2.0;
        }
        Some(g)
    }
}

/// Ghost-cell rule on one domain face for a homogeneous problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ghost {
    Periodic,
    /// Mirror with sign flip: zero value on the face.
    Odd,
    /// Plain mirror: zero normal gradient on the face.
    Even,
}

/// Ghost rules indexed by `[axis][side]`, side 0 low and 1 high.
pub type GhostRules = [[Ghost; 2]; 3];

/// Cell-centered scalar with a one-cell ghost layer on every active axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub dim: usize,
    pub n: [usize; 3],
    pub stride: [usize; 3],
    pub data: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Grid) -> Field {
        Self::with_shape(grid.dim, grid.n)
    }

    pub fn with_shape(dim: usize, n: [usize; 3]) -> Field {
        let ext = |a: usize| if a < dim { n[a] + 2 } else { 1 };
        let stride = [1, ext(0), ext(0) * ext(1)];
        let len = ext(0) * ext(1) * ext(2);
        Field {
            dim,
            n,
            stride,
            data: vec![0.0; len],
        }
    }

    /// Storage index of cell `(i, j, k)`; ghosts are at `-1` and `n`.
    #[inline]
    pub fn idx(&self, i: isize, j: isize, k: isize) -> usize {
        let g2 = if self.dim == 3 { 1 } else { 0 };
        ((i + 1) as usize) + ((j + 1) as usize) * self.stride[1] + ((k + g2) as usize) * self.stride[2]
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.idx(i as isize, j as isize, k as isize)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let p = self.idx(i as isize, j as isize, k as isize);
        self.data[p] = v;
    }

    /// Storage index of the first interior cell in row `(j, k)`.
    #[inline]
    pub fn row(&self, j: usize, k: usize) -> usize {
        self.idx(0, j as isize, k as isize)
    }

    /// Calls `f(storage_index, i, j, k)` for every interior cell in
    /// row-major order.
    #[inline]
    pub fn for_each_interior(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        for k in 0..self.n[2] {
            for j in 0..self.n[1] {
                let r = self.row(j, k);
                for i in 0..self.n[0] {
                    f(r + i, i, j, k);
                }
            }
        }
    }

    pub fn fill_interior(&mut self, v: f64) {
        let n = self.n;
        for k in 0..n[2] {
            for j in 0..n[1] {
                let r = self.row(j, k);
                self.data[r..r + n[0]].fill(v);
            }
        }
    }

    /// Sets interior values from `f(i, j, k)`.
    pub fn set_from(&mut self, mut f: impl FnMut(usize, usize, usize) -> f64) {
        let n = self.n;
        for k in 0..n[2] {
            for j in 0..n[1] {
                let r = self.row(j, k);
                for i in 0..n[0] {
                    self.data[r + i] = f(i, j, k);
                }
            }
        }
    }

    /// Interior values in [`Grid::lin`] order.
    pub fn interior(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n[0] * self.n[1] * self.n[2]);
        self.for_each_interior(|p, _, _, _| out.push(self.data[p]));
        out
    }

    /// Copies values in [`Grid::lin`] order into the interior.
    pub fn set_interior(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.n[0] * self.n[1] * self.n[2]);
        let n0 = self.n[0];
        let mut q = 0;
        for k in 0..self.n[2] {
            for j in 0..self.n[1] {
                let r = self.row(j, k);
                self.data[r..r + n0].copy_from_slice(&values[q..q + n0]);
                q += n0;
            }
        }
    }

    /// Calls `f(ghost_index, inner_index, [i, j, k])` for every cell adjacent
    /// to face `(axis, side)`, where `[i, j, k]` is the inner cell.
    pub fn for_each_face_cell(
        &self,
        axis: usize,
        side: usize,
        mut f: impl FnMut(usize, usize, [usize; 3]),
    ) {
        let n = self.n;
        let (a1, a2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let inner = if side == 0 { 0 } else { n[axis] - 1 };
        let ghost: isize = if side == 0 { -1 } else { n[axis] as isize };
        for q in 0..n[a2] {
            for p in 0..n[a1] {
                let mut c = [0usize; 3];
                c[axis] = inner;
                c[a1] = p;
                c[a2] = q;
                let mut g = [c[0] as isize, c[1] as isize, c[2] as isize];
                g[axis] = ghost;
                f(
                    self.idx(g[0], g[1], g[2]),
                    self.idx(c[0] as isize, c[1] as isize, c[2] as isize),
                    c,
                );
            }
        }
    }

    /// Fills ghosts by homogeneous rules.
    pub fn fill_ghosts(&mut self, rules: &GhostRules) {
        for a in 0..self.dim {
            let (a1, a2) = match a {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let (s, s1, s2) = (self.stride[a], self.stride[a1], self.stride[a2]);
            let na = self.n[a];
            let base = self.idx(0, 0, 0);
            for side in 0..2 {
                let rule = rules[a][side];
                // Ranges include the ghosts of axes already filled, so corner
                // ghosts come out as the composition of the face rules.
                let ext = |b: usize| -> (isize, isize) {
                    if b < a && b < self.dim {
                        (-1, self.n[b] as isize + 1)
                    } else {
                        (0, self.n[b] as isize)
                    }
                };
                let (p0, p1) = ext(a1);
                let (q0, q1) = ext(a2);
                for q in q0..q1 {
                    for p in p0..p1 {
                        let first = (base as isize + p * s1 as isize + q * s2 as isize) as usize;
                        let (g, c, wrap) = if side == 0 {
                            (first - s, first, first + (na - 1) * s)
                        } else {
                            (first + na * s, first + (na - 1) * s, first)
                        };
                        self.data[g] = match rule {
                            Ghost::Periodic => self.data[wrap],
                            Ghost::Odd => -self.data[c],
                            Ghost::Even => self.data[c],
                        };
                    }
                }
            }
        }
    }

    /// Adjoint of [`Field::fill_ghosts`]: moves values accumulated in ghost
    /// cells back onto the interior cells they would be copied from and
    /// zeroes the ghosts.
    pub fn fold_ghosts(&mut self, rules: &GhostRules) {
        for a in (0..self.dim).rev() {
            let (a1, a2) = match a {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let (s, s1, s2) = (self.stride[a], self.stride[a1], self.stride[a2]);
            let na = self.n[a];
            let base = self.idx(0, 0, 0);
            let ext = |b: usize| -> (isize, isize) {
                if b < a && b < self.dim {
                    (-1, self.n[b] as isize + 1)
                } else {
                    (0, self.n[b] as isize)
                }
            };
            let (p0, p1) = ext(a1);
            let (q0, q1) = ext(a2);
            for side in 0..2 {
                let rule = rules[a][side];
                for q in q0..q1 {
                    for p in p0..p1 {
                        let first = (base as isize + p * s1 as isize + q * s2 as isize) as usize;
                        let (g, c, wrap) = if side == 0 {
                            (first - s, first, first + (na - 1) * s)
                        } else {
                            (first + na * s, first + (na - 1) * s, first)
                        };
                        let v = self.data[g];
                        self.data[g] = 0.0;
                        match rule {
                            Ghost::Periodic => self.data[wrap] += v,
                            Ghost::Odd => self.data[c] -= v,
                            Ghost::Even => self.data[c] += v,
                        }
                    }
                }
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        self.for_each_interior(|p, _, _, _| m = m.max(self.data[p].abs()));
        m
    }

    pub fn sum(&self) -> f64 {
        let mut s = 0.0;
        self.for_each_interior(|p, _, _, _| s += self.data[p]);
        s
    }

    pub fn dot(&self, other: &Field) -> f64 {
        let mut s = 0.0;
        self.for_each_interior(|p, _, _, _| s += self.data[p] * other.data[p]);
        s
    }

    /// `self += alpha * x` over the interior.
    pub fn axpy(&mut self, alpha: f64, x: &Field) {
        let n = self.n;
        for k in 0..n[2] {
            for j in 0..n[1] {
                let r = self.row(j, k);
                for (s, &v) in self.data[r..r + n[0]].iter_mut().zip(&x.data[r..r + n[0]]) {
                    *s += alpha * v;
                }
            }
        }
    }

    pub fn add_constant(&mut self, c: f64) {
        let n = self.n;
        for k in 0..n[2] {
            for j in 0..n[1] {
                let r = self.row(j, k);
                for v in &mut self.data[r..r + n[0]] {
                    *v += c;
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.sum() / (self.n[0] * self.n[1] * self.n[2]) as f64
    }

    /// Location of the first non-finite interior value.
    pub fn first_non_finite(&self) -> Option<[usize; 3]> {
        let mut bad = None;
        self.for_each_interior(|p, i, j, k| {
            if bad.is_none() && !self.data[p].is_finite() {
                bad = Some([i, j, k]);
            }
        });
        bad
    }
}

/// Values on the faces normal to one axis; `n[axis] + 1` faces along it.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    pub axis: usize,
    pub n: [usize; 3],
    pub data: Vec<f64>,
}

impl FaceField {
    pub fn zeros(grid: &Grid, axis: usize) -> FaceField {
        let mut n = grid.n;
        n[axis] += 1;
        FaceField {
            axis,
            n,
            data: vec![0.0; n[0] * n[1] * n[2]],
        }
    }

    /// Face `(i, j, k)` sits at the low side of cell `(i, j, k)` along `axis`.
    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n[0] * (j + self.n[1] * k)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}
