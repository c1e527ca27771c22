//! Analytic interfaces, Heaviside masks, Lagrangian markers and prescribed
//! rigid motions.

use std::f64::consts::PI;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Circle { center: [f64; 2], radius: f64 },
    Sphere { center: [f64; 3], radius: f64 },
    /// Segment (2D) from `a` to `b`; the side test uses the plane through the
    /// segment with unit `normal`.
    Plate { a: [f64; 3], b: [f64; 3], normal: [f64; 3] },
    /// Closed vertex loop, counter-clockwise or clockwise.
    Polygon { vertices: Vec<[f64; 2]> },
}

impl Shape {
    pub fn validate(&self) -> Result<()> {
        match self {
            Shape::Circle { radius, .. } | Shape::Sphere { radius, .. } => {
                if !(*radius > 0.0) {
                    return Err(Error::Geometry(format!("radius must be positive, got {radius}")));
                }
            }
            Shape::Plate { a, b, normal } => {
                if norm(sub(*b, *a)) == 0.0 {
                    return Err(Error::Geometry("plate endpoints coincide".into()));
                }
                if norm(*normal) == 0.0 {
                    return Err(Error::Geometry("plate normal is zero".into()));
                }
            }
            Shape::Polygon { vertices } => {
                if vertices.len() < 3 {
                    return Err(Error::Geometry("polygon needs at least 3 vertices".into()));
                }
                if polygon_self_intersects(vertices) {
                    return Err(Error::Geometry("polygon is not simple".into()));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Shape::Sphere { .. } => 3,
            _ => 2,
        }
    }

    /// Shape moved rigidly by `d`.
    pub fn translated(&self, d: [f64; 3]) -> Shape {
        match self {
            Shape::Circle { center, radius } => Shape::Circle {
                center: [center[0] + d[0], center[1] + d[1]],
                radius: *radius,
            },
            Shape::Sphere { center, radius } => Shape::Sphere {
                center: add(*center, d),
                radius: *radius,
            },
            Shape::Plate { a, b, normal } => Shape::Plate {
                a: add(*a, d),
                b: add(*b, d),
                normal: *normal,
            },
            Shape::Polygon { vertices } => Shape::Polygon {
                vertices: vertices.iter().map(|v| [v[0] + d[0], v[1] + d[1]]).collect(),
            },
        }
    }

    /// Distance that is negative inside (closed shapes) or on the side
    /// opposite the normal (plates).
    fn raw_signed_distance(&self, x: [f64; 3]) -> f64 {
        match self {
            Shape::Circle { center, radius } => {
                ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt() - radius
            }
            Shape::Sphere { center, radius } => norm(sub(x, *center)) - radius,
            Shape::Plate { a, normal, .. } => dot(sub(x, *a), *normal) / norm(*normal),
            Shape::Polygon { vertices } => {
                let p = [x[0], x[1]];
                let n = vertices.len();
                let mut d = f64::INFINITY;
                for e in 0..n {
                    d = d.min(segment_distance(p, vertices[e], vertices[(e + 1) % n]));
                }
                if winding_number(vertices, p) != 0 {
                    -d
                } else {
                    d
                }
            }
        }
    }
}

/// Which side of an interface is active (unmasked).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    ExteriorActive,
    InteriorActive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interface {
    pub shape: Shape,
    pub orientation: Orientation,
}

impl Interface {
    pub fn new(shape: Shape, orientation: Orientation) -> Result<Interface> {
        shape.validate()?;
        Ok(Interface { shape, orientation })
    }

    /// Positive on the active side, zero on the interface.
    pub fn signed_distance(&self, x: [f64; 3]) -> f64 {
        let d = self.shape.raw_signed_distance(x);
        match self.orientation {
            Orientation::ExteriorActive => d,
            Orientation::InteriorActive => -d,
        }
    }

    /// `H(x)`: 1 on the active side and on the interface itself.
    pub fn heaviside(&self, x: [f64; 3]) -> bool {
        self.signed_distance(x) >= 0.0
    }

    pub fn flipped(&self) -> Interface {
        Interface {
            shape: self.shape.clone(),
            orientation: match self.orientation {
                Orientation::ExteriorActive => Orientation::InteriorActive,
                Orientation::InteriorActive => Orientation::ExteriorActive,
            },
        }
    }
}

/// Cell-centered Heaviside mask in [`Grid::lin`] order.
pub fn heaviside_field(interface: &Interface, grid: &Grid) -> Vec<bool> {
    let mut h = vec![false; grid.ncells()];
    for k in 0..grid.n[2] {
        for j in 0..grid.n[1] {
            for i in 0..grid.n[0] {
                h[grid.lin(i, j, k)] = interface.heaviside(grid.center(i, j, k));
            }
        }
    }
    h
}

/// One family of Lagrangian markers.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerSet {
    pub dim: usize,
    pub x: Vec<[f64; 3]>,
    /// Surface element: length in 2D, area in 3D.
    pub ds: Vec<f64>,
    /// Prescribed velocity.
    pub ub: Vec<[f64; 3]>,
}

impl MarkerSet {
    pub fn new(dim: usize, x: Vec<[f64; 3]>, ds: Vec<f64>) -> MarkerSet {
        let n = x.len();
        assert_eq!(ds.len(), n);
        MarkerSet {
            dim,
            x,
            ds,
            ub: vec![[0.0; 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Markers on `shape` spaced about `target_ds` apart.
pub fn generate_markers(shape: &Shape, target_ds: f64) -> Result<MarkerSet> {
    shape.validate()?;
    if !(target_ds > 0.0) {
        return Err(Error::Geometry(format!("marker spacing must be positive, got {target_ds}")));
    }
    match shape {
        Shape::Circle { center, radius } => {
            let perimeter = 2.0 * PI * radius;
            if target_ds > perimeter / 3.0 {
                return Err(too_coarse(target_ds));
            }
            let n = (perimeter / target_ds).round() as usize;
            let x = (0..n)
                .map(|k| {
                    let th = 2.0 * PI * k as f64 / n as f64;
                    [center[0] + radius * th.cos(), center[1] + radius * th.sin(), 0.0]
                })
                .collect();
            Ok(MarkerSet::new(2, x, vec![perimeter / n as f64; n]))
        }
        Shape::Plate { a, b, .. } => {
            let len = norm(sub(*b, *a));
            if target_ds > len {
                return Err(too_coarse(target_ds));
            }
            let n = (len / target_ds).round() as usize + 1;
            let step = len / (n - 1) as f64;
            let x = (0..n)
                .map(|k| {
                    let s = k as f64 / (n - 1) as f64;
                    [
                        a[0] + s * (b[0] - a[0]),
                        a[1] + s * (b[1] - a[1]),
                        a[2] + s * (b[2] - a[2]),
                    ]
                })
                .collect();
            // Trapezoidal quadrature weights.
            let mut ds = vec![step; n];
            ds[0] *= 0.5;
            ds[n - 1] *= 0.5;
            Ok(MarkerSet::new(2, x, ds))
        }
        Shape::Polygon { vertices } => {
            let nv = vertices.len();
            let edge = |e: usize| {
                let (p, q) = (vertices[e], vertices[(e + 1) % nv]);
                ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt()
            };
            let perimeter: f64 = (0..nv).map(edge).sum();
            if target_ds > perimeter / 3.0 {
                return Err(too_coarse(target_ds));
            }
            let n = (perimeter / target_ds).round() as usize;
            let step = perimeter / n as f64;
            let mut x = Vec::with_capacity(n);
            let (mut e, mut start) = (0, 0.0);
            for m in 0..n {
                let s = m as f64 * step;
                while e + 1 < nv && s >= start + edge(e) {
                    start += edge(e);
                    e += 1;
                }
                let t = (s - start) / edge(e);
                let (p, q) = (vertices[e], vertices[(e + 1) % nv]);
                x.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]), 0.0]);
            }
            Ok(MarkerSet::new(2, x, vec![step; n]))
        }
        Shape::Sphere { center, radius } => sphere_markers(*center, *radius, target_ds),
    }
}

fn too_coarse(ds: f64) -> Error {
    Error::Geometry(format!("marker spacing {ds} exceeds the shape extent"))
}

/// Equal-area latitude bands; falls back to a Fibonacci lattice when a band
/// element misses the target area by more than 20%.
fn sphere_markers(center: [f64; 3], radius: f64, target_ds: f64) -> Result<MarkerSet> {
    let area = 4.0 * PI * radius * radius;
    let target_area = target_ds * target_ds;
    if target_area > area / 4.0 {
        return Err(too_coarse(target_ds));
    }
    let nbands = ((PI * radius / target_ds).round() as usize).max(2);
    let mut x = Vec::new();
    let mut ds = Vec::new();
    let mut ok = true;
    for b in 0..nbands {
        let t0 = PI * b as f64 / nbands as f64;
        let t1 = PI * (b + 1) as f64 / nbands as f64;
        let band = 2.0 * PI * radius * radius * (t0.cos() - t1.cos());
        let count = ((band / target_area).round() as usize).max(1);
        let each = band / count as f64;
        if (each - target_area).abs() > 0.2 * target_area {
            ok = false;
        }
        let th = 0.5 * (t0 + t1);
        // Stagger alternate bands so markers do not line up meridionally.
        let offset = if b % 2 == 0 { 0.0 } else { 0.5 };
        for m in 0..count {
            let ph = 2.0 * PI * (m as f64 + offset) / count as f64;
            x.push([
                center[0] + radius * th.sin() * ph.cos(),
                center[1] + radius * th.sin() * ph.sin(),
                center[2] + radius * th.cos(),
            ]);
            ds.push(each);
        }
    }
    if ok {
        return Ok(MarkerSet::new(3, x, ds));
    }
    let n = (area / target_area).round() as usize;
    let golden = PI * (3.0 - 5f64.sqrt());
    let x = (0..n)
        .map(|m| {
            let z = 1.0 - (2.0 * m as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let ph = golden * m as f64;
            [
                center[0] + radius * r * ph.cos(),
                center[1] + radius * r * ph.sin(),
                center[2] + radius * z,
            ]
        })
        .collect();
    Ok(MarkerSet::new(3, x, vec![area / n as f64; n]))
}

/// Prescribed body kinematics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motion {
    Static,
    ImpulsiveTranslation { velocity: [f64; 3] },
    /// `U(t) = U_m cos(2πt/T)` along `axis`.
    Oscillation { um: f64, period: f64, axis: [f64; 3] },
    /// Boundary velocity taken from the decaying Taylor–Green vortex.
    ExactTaylorGreen { re: f64 },
}

impl Motion {
    pub fn validate(&self) -> Result<()> {
        match self {
            Motion::Oscillation { period, .. } if !(*period > 0.0) => {
                Err(Error::config(format!("oscillation period must be positive, got {period}")))
            }
            Motion::ExactTaylorGreen { re } if !(*re > 0.0) => {
                Err(Error::config(format!("Reynolds number must be positive, got {re}")))
            }
            _ => Ok(()),
        }
    }

    /// Rigid displacement since `t = 0`, integrated in closed form.
    pub fn displacement(&self, t: f64) -> [f64; 3] {
        match *self {
            Motion::ImpulsiveTranslation { velocity } => scale(velocity, t),
            Motion::Oscillation { um, period, axis } => {
                scale(axis, um * period / (2.0 * PI) * (2.0 * PI * t / period).sin())
            }
            Motion::Static | Motion::ExactTaylorGreen { .. } => [0.0; 3],
        }
    }

    pub fn is_moving(&self) -> bool {
        matches!(self, Motion::ImpulsiveTranslation { .. } | Motion::Oscillation { .. })
    }

    /// Rigid-body velocity of the frame (zero for the field-defined motion).
    pub fn frame_velocity(&self, t: f64) -> [f64; 3] {
        match *self {
            Motion::ImpulsiveTranslation { velocity } => velocity,
            Motion::Oscillation { um, period, axis } => {
                scale(axis, um * (2.0 * PI * t / period).cos())
            }
            Motion::Static | Motion::ExactTaylorGreen { .. } => [0.0; 3],
        }
    }
}

/// Velocity prescribed at point `x` and time `t`.
pub fn prescribed_velocity(motion: &Motion, x: [f64; 3], t: f64) -> [f64; 3] {
    match *motion {
        Motion::ExactTaylorGreen { re } => {
            let (u, v, _) = taylor_green(x[0], x[1], t, re);
            [u, v, 0.0]
        }
        m => m.frame_velocity(t),
    }
}

/// Decaying Taylor–Green vortex `(u, v, p)`.
pub fn taylor_green(x: f64, y: f64, t: f64, re: f64) -> (f64, f64, f64) {
    let decay = (-2.0 * PI * PI * t / re).exp();
    let (sx, cx) = (PI * x).sin_cos();
    let (sy, cy) = (PI * y).sin_cos();
    let u = -cx * sy * decay;
    let v = sx * cy * decay;
    let p = -0.25 * ((2.0 * PI * x).cos() + (2.0 * PI * y).cos()) * decay * decay;
    (u, v, p)
}

/// Which sides of a body carry marker families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sides {
    Exterior,
    Interior,
    Both,
}

impl FromStr for Sides {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exterior" => Ok(Sides::Exterior),
            "interior" => Ok(Sides::Interior),
            "both" => Ok(Sides::Both),
            other => Err(Error::config(format!(
                "unknown orientation \"{other}\" (expected exterior, interior or both)"
            ))),
        }
    }
}

impl Sides {
    pub fn orientations(&self) -> Vec<Orientation> {
        match self {
            Sides::Exterior => vec![Orientation::ExteriorActive],
            Sides::Interior => vec![Orientation::InteriorActive],
            Sides::Both => vec![Orientation::ExteriorActive, Orientation::InteriorActive],
        }
    }
}

/// A rigid body: shape at `t = 0`, its reference markers and its motion.
#[derive(Debug, Clone)]
pub struct Body {
    pub shape: Shape,
    pub sides: Sides,
    pub motion: Motion,
    pub markers: MarkerSet,
}

impl Body {
    pub fn new(shape: Shape, sides: Sides, motion: Motion, target_ds: f64) -> Result<Body> {
        let markers = generate_markers(&shape, target_ds)?;
        Self::with_markers(shape, sides, motion, markers)
    }

    pub fn with_markers(
        shape: Shape,
        sides: Sides,
        motion: Motion,
        markers: MarkerSet,
    ) -> Result<Body> {
        shape.validate()?;
        motion.validate()?;
        Ok(Body {
            shape,
            sides,
            motion,
            markers,
        })
    }

    pub fn interface_at(&self, t: f64, orientation: Orientation) -> Interface {
        Interface {
            shape: self.shape.translated(self.motion.displacement(t)),
            orientation,
        }
    }

    /// Marker positions at `t_pos` carrying prescribed velocities at `t_vel`.
    pub fn markers_at(&self, t_pos: f64, t_vel: f64) -> MarkerSet {
        let d = self.motion.displacement(t_pos);
        let mut m = self.markers.clone();
        for (x, ub) in m.x.iter_mut().zip(m.ub.iter_mut()) {
            *x = add(*x, d);
            *ub = prescribed_velocity(&self.motion, *x, t_vel);
        }
        m
    }
}

// Small vector helpers.

#[inline]
pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub(crate) fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
}

fn winding_number(v: &[[f64; 2]], p: [f64; 2]) -> i32 {
    let mut wn = 0;
    let n = v.len();
    for e in 0..n {
        let (a, b) = (v[e], v[(e + 1) % n]);
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1]);
        if a[1] <= p[1] {
            if b[1] > p[1] && cross > 0.0 {
                wn += 1;
            }
        } else if b[1] <= p[1] && cross < 0.0 {
            wn -= 1;
        }
    }
    wn
}

fn polygon_self_intersects(v: &[[f64; 2]]) -> bool {
    let n = v.len();
    let orient = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    };
    for e in 0..n {
        for f in e + 1..n {
            // Skip edges sharing a vertex.
            if f == e + 1 || (e == 0 && f == n - 1) {
                continue;
            }
            let (a, b) = (v[e], v[(e + 1) % n]);
            let (c, d) = (v[f], v[(f + 1) % n]);
            let d1 = orient(a, b, c);
            let d2 = orient(a, b, d);
            let d3 = orient(c, d, a);
            let d4 = orient(c, d, b);
            if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
                return true;
            }
        }
    }
    false
}
