//! Run configuration: line-oriented `section.key = value` text.
//!
//! `[section]` headers prefix the keys that follow them. Values use TOML
//! literal syntax (strings quoted, arrays in brackets). Every key is checked
//! before anything is allocated; unknown keys are rejected with their line.

use std::path::PathBuf;

use crate::cases::{BcSpec, CaseKind, CaseParams};
use crate::coupling::CouplingMode;
use crate::error::{Error, Result};
use crate::geometry::Sides;
use crate::kernel::KernelKind;
use crate::linsolve::Preconditioner;
use crate::mls::GramFallback;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub params: CaseParams,
    /// Cells along x for each grid of a refinement study.
    pub resolutions: Vec<usize>,
    pub output_dir: PathBuf,
    pub seed: u64,
}

const KEYS: &[&str] = &[
    "case",
    "kernel",
    "seed",
    "grid.dims",
    "grid.extent",
    "grid.resolutions",
    "grid.bc.xlo",
    "grid.bc.xhi",
    "grid.bc.ylo",
    "grid.bc.yhi",
    "grid.bc.zlo",
    "grid.bc.zhi",
    "fluid.rho",
    "fluid.mu",
    "fluid.re",
    "time.cfl",
    "time.dt_max",
    "time.t_end",
    "solver.rtol",
    "solver.max_iter",
    "solver.preconditioner",
    "solver.tangential_correction",
    "coupling.interp",
    "coupling.spread",
    "coupling.gram_fallback",
    "body.shape",
    "body.center",
    "body.radius",
    "body.length",
    "body.motion",
    "body.orientation",
    "output.dir",
    "output.every",
];

struct Entry {
    line: usize,
    key: String,
    value: toml::Value,
}

fn split_entries(text: &str) -> Result<Vec<Entry>> {
    let mut section = String::new();
    let mut out: Vec<Entry> = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = no + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        if let Some(rest) = s.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::config_at(line, format!("malformed section header \"{s}\"")))?;
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::config_at(line, format!("expected key = value, got \"{s}\"")))?;
        let k = k.trim();
        let key = if section.is_empty() {
            k.to_string()
        } else {
            format!("{section}.{k}")
        };
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::config_at(line, format!("unknown key \"{key}\"")));
        }
        if out.iter().any(|e| e.key == key) {
            return Err(Error::config_at(line, format!("duplicate key \"{key}\"")));
        }
        let table: toml::Table = format!("v = {}", v.trim())
            .parse()
            .map_err(|e: toml::de::Error| Error::config_at(line, format!("bad value for {key}: {}", e.message())))?;
        out.push(Entry {
            line,
            key,
            value: table["v"].clone(),
        });
    }
    Ok(out)
}

fn type_err(e: &Entry, want: &str) -> Error {
    Error::config_at(e.line, format!("{} expects {want}, got {}", e.key, e.value))
}

fn as_str(e: &Entry) -> Result<&str> {
    e.value.as_str().ok_or_else(|| type_err(e, "a string"))
}

fn as_f64(e: &Entry) -> Result<f64> {
    match &e.value {
        toml::Value::Float(v) => Ok(*v),
        toml::Value::Integer(v) => Ok(*v as f64),
        _ => Err(type_err(e, "a number")),
    }
}

fn as_count(e: &Entry) -> Result<usize> {
    match &e.value {
        toml::Value::Integer(v) if *v >= 0 => Ok(*v as usize),
        _ => Err(type_err(e, "a non-negative integer")),
    }
}

fn as_f64_array(e: &Entry) -> Result<Vec<f64>> {
    let arr = e.value.as_array().ok_or_else(|| type_err(e, "an array of numbers"))?;
    arr.iter()
        .map(|v| match v {
            toml::Value::Float(x) => Ok(*x),
            toml::Value::Integer(x) => Ok(*x as f64),
            _ => Err(type_err(e, "an array of numbers")),
        })
        .collect()
}

fn as_count_array(e: &Entry) -> Result<Vec<usize>> {
    let arr = e.value.as_array().ok_or_else(|| type_err(e, "an array of integers"))?;
    arr.iter()
        .map(|v| match v {
            toml::Value::Integer(x) if *x > 0 => Ok(*x as usize),
            _ => Err(type_err(e, "an array of positive integers")),
        })
        .collect()
}

fn parse_enum<T: std::str::FromStr<Err = Error>>(e: &Entry) -> Result<T> {
    as_str(e)?.parse().map_err(|err| at_line(err, e.line))
}

fn at_line(err: Error, line: usize) -> Error {
    match err {
        Error::Config { message, .. } => Error::config_at(line, message),
        other => other,
    }
}

fn positive(e: &Entry) -> Result<f64> {
    let v = as_f64(e)?;
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::config_at(e.line, format!("{} must be positive, got {v}", e.key)));
    }
    Ok(v)
}

fn parse_bc(e: &Entry) -> Result<BcSpec> {
    if let Some(s) = e.value.as_str() {
        return match s {
            "periodic" => Ok(BcSpec::Periodic),
            "outflow" => Ok(BcSpec::Outflow),
            "free_slip" => Ok(BcSpec::FreeSlip),
            "no_slip" => Ok(BcSpec::Velocity([0.0; 3])),
            "exact" => Ok(BcSpec::Exact),
            other => Err(Error::config_at(
                e.line,
                format!("unknown boundary \"{other}\" (expected periodic, outflow, free_slip, no_slip, exact or a velocity array)"),
            )),
        };
    }
    let v = as_f64_array(e)?;
    if v.is_empty() || v.len() > 3 {
        return Err(type_err(e, "a velocity array of 1 to 3 components"));
    }
    let mut u = [0.0; 3];
    u[..v.len()].copy_from_slice(&v);
    Ok(BcSpec::Velocity(u))
}

fn default_shape(kind: CaseKind) -> &'static str {
    match kind {
        CaseKind::StokesFirst | CaseKind::ImpulsivePlate => "plate",
        _ => "circle",
    }
}

fn default_motion(kind: CaseKind) -> &'static str {
    match kind {
        CaseKind::TaylorGreenCylinder => "taylor_green",
        CaseKind::StokesFirst | CaseKind::ImpulsivePlate => "impulsive",
        CaseKind::ImpulsiveCylinder => "static",
        CaseKind::OscillatingCylinder => "oscillating",
    }
}

/// Parses and validates a configuration. Defaults come from the selected
/// case; `time.cfl` falls back to 0.1 and `solver.rtol` to 1e-9 when the
/// case does not pin them.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let entries = split_entries(text)?;
    let find = |k: &str| entries.iter().find(|e| e.key == k);
    let case = find("case").ok_or_else(|| Error::config("missing required key \"case\""))?;
    let kind: CaseKind = parse_enum(case)?;
    let mut p = CaseParams::defaults(kind);
    let mut resolutions = Vec::new();
    let mut output_dir = PathBuf::from("output");
    let mut seed = 0u64;
    let mut mu = None;
    let mut re = None;

    for e in &entries {
        let line = e.line;
        match e.key.as_str() {
            "case" => {}
            "kernel" => {
                p.kernel = parse_enum::<KernelKind>(e)?;
                crate::kernel::Kernel::new(p.kernel).map_err(|err| at_line(err, line))?;
            }
            "seed" => seed = as_count(e)? as u64,
            "grid.dims" => {
                p.n = as_count_array(e)?;
                if p.n.len() != 2 {
                    return Err(Error::config_at(line, "grid.dims: benchmark cases are two-dimensional"));
                }
            }
            "grid.extent" => {
                let v = as_f64_array(e)?;
                if v.len() != 4 || v[1] <= v[0] || v[3] <= v[2] {
                    return Err(Error::config_at(line, "grid.extent expects [xlo, xhi, ylo, yhi] with lo < hi"));
                }
                p.lo = vec![v[0], v[2]];
                p.hi = vec![v[1], v[3]];
            }
            "grid.resolutions" => resolutions = as_count_array(e)?,
            k if k.starts_with("grid.bc.") => {
                let face = &k["grid.bc.".len()..];
                let axis = match &face[..1] {
                    "x" => 0,
                    "y" => 1,
                    _ => 2,
                };
                let side = usize::from(&face[1..] == "hi");
                if axis >= 2 {
                    return Err(Error::config_at(line, format!("{k}: benchmark cases are two-dimensional")));
                }
                let bc = parse_bc(e)?;
                if bc == BcSpec::Exact && kind != CaseKind::TaylorGreenCylinder {
                    return Err(Error::config_at(line, "\"exact\" boundaries need case = taylor_green_cylinder"));
                }
                p.bc_overrides.push((axis, side, bc));
            }
            "fluid.rho" => p.rho = positive(e)?,
            "fluid.mu" => mu = Some((positive(e)?, line)),
            "fluid.re" => re = Some(positive(e)?),
            "time.cfl" => p.cfl = positive(e)?,
            "time.dt_max" => p.dt_max = positive(e)?,
            "time.t_end" => p.t_end = positive(e)?,
            "solver.rtol" => {
                let v = positive(e)?;
                if v >= 1.0 {
                    return Err(Error::config_at(line, format!("solver.rtol must be below 1, got {v}")));
                }
                p.rtol = v;
            }
            "solver.max_iter" => {
                let v = as_count(e)?;
                if v == 0 {
                    return Err(Error::config_at(line, "solver.max_iter must be positive"));
                }
                p.max_iter = Some(v);
            }
            "solver.preconditioner" => {
                p.precond = match as_str(e)? {
                    "multigrid" => Preconditioner::Multigrid,
                    "jacobi" => Preconditioner::Jacobi,
                    other => {
                        return Err(Error::config_at(
                            line,
                            format!("unknown preconditioner \"{other}\" (expected multigrid or jacobi)"),
                        ))
                    }
                }
            }
            "solver.tangential_correction" => {
                p.tangential_correction = e.value.as_bool().ok_or_else(|| type_err(e, "a boolean"))?
            }
            "coupling.interp" => p.interp = parse_enum::<CouplingMode>(e)?,
            "coupling.spread" => p.spread = parse_enum::<CouplingMode>(e)?,
            "coupling.gram_fallback" => p.fallback = parse_enum::<GramFallback>(e)?,
            "body.shape" | "body.motion" => {
                let want = if e.key == "body.shape" {
                    default_shape(kind)
                } else {
                    default_motion(kind)
                };
                let got = as_str(e)?;
                if got != want {
                    return Err(Error::config_at(
                        line,
                        format!("case {} requires {} = \"{want}\", got \"{got}\"", kind.name(), e.key),
                    ));
                }
            }
            "body.center" => {
                let v = as_f64_array(e)?;
                if v.len() != 2 {
                    return Err(type_err(e, "a 2-component array"));
                }
                p.center = [v[0], v[1], 0.0];
            }
            "body.radius" | "body.length" => {
                let want = if default_shape(kind) == "plate" {
                    "body.length"
                } else {
                    "body.radius"
                };
                if e.key != want {
                    return Err(Error::config_at(line, format!("{} does not apply to a {}", e.key, default_shape(kind))));
                }
                p.size = positive(e)?;
            }
            "body.orientation" => p.sides = parse_enum::<Sides>(e)?,
            "output.dir" => output_dir = PathBuf::from(as_str(e)?),
            "output.every" => p.output_every = as_count(e)?,
            other => unreachable!("key {other} listed but not handled"),
        }
    }

    match (mu, re) {
        (Some((m, _)), None) => p.re = p.rho / m,
        (None, Some(r)) => p.re = r,
        (Some((m, line)), Some(r)) => {
            if ((p.rho / m) - r).abs() > 1e-12 * r {
                return Err(Error::config_at(line, "fluid.mu and fluid.re disagree (Re = rho/mu)"));
            }
            p.re = r;
        }
        (None, None) => {}
    }
    p.validate()?;
    crate::cases::boundary(&p)?;
    if resolutions.len() == 1 {
        let e = find("grid.resolutions").unwrap();
        return Err(Error::config_at(e.line, "grid.resolutions needs at least two grids"));
    }
    Ok(RunConfig {
        params: p,
        resolutions,
        output_dir,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taylor_green_defaults() {
        let c = parse_config("case = \"taylor_green_cylinder\"\n[body]\n").unwrap();
        assert_eq!(c.params.size, 1.0);
        assert_eq!(c.params.center, [0.0; 3]);
        assert_eq!(c.params.re, 100.0);
        assert_eq!(c.params.rtol, 1e-9);
        assert_eq!(c.params.cfl, 0.05);
        let c = parse_config("case = \"impulsive_cylinder\"").unwrap();
        assert_eq!(c.params.cfl, 0.1);
    }

    #[test]
    fn sections_and_dotted_keys_agree() {
        let a = parse_config("case = \"stokes_first\"\ntime.cfl = 0.2\ncoupling.interp = \"standard\"").unwrap();
        let b = parse_config("case = \"stokes_first\"\n[time]\ncfl = 0.2\n[coupling]\ninterp = \"standard\"").unwrap();
        assert_eq!(a.params.cfl, b.params.cfl);
        assert_eq!(a.params.interp, CouplingMode::Standard);
        assert_eq!(b.params.interp, CouplingMode::Standard);
    }

    #[test]
    fn errors_name_the_line() {
        let err = parse_config("case = \"taylor_green_cylinder\"\n\ntime.cfl = -1").unwrap_err();
        assert!(matches!(err, Error::Config { line: Some(3), .. }), "{err}");
        let err = parse_config("case = \"taylor_green_cylinder\"\nfluid.nu = 1").unwrap_err();
        assert!(matches!(err, Error::Config { line: Some(2), .. }), "{err}");
        let err = parse_config("case = \"taylor_green_cylinder\"\ntime.t_end = \"soon\"").unwrap_err();
        assert!(matches!(err, Error::Config { line: Some(2), .. }), "{err}");
        let err = parse_config("case = \"taylor_green_cylinder\"\nkernel = \"new5\"").unwrap_err();
        assert!(matches!(err, Error::Config { line: Some(2), .. }), "{err}");
        assert!(parse_config("time.cfl = 0.1").is_err());
        assert!(parse_config("case = \"taylor_green_cylinder\"\ngrid.bc.xlo = \"periodic\"").is_err());
    }

    #[test]
    fn smoothed3_is_accepted_at_parse_time() {
        let c = parse_config(
            "case = \"taylor_green_cylinder\"\nkernel = \"smoothed3\"\ncoupling.interp = \"mls_ncvs\"\ncoupling.spread = \"mls_ncvs\"",
        )
        .unwrap();
        assert_eq!(c.params.kernel, KernelKind::ThreePoint);
    }

    #[test]
    fn boundaries_and_viscosity() {
        let c = parse_config(
            "case = \"impulsive_cylinder\"\nfluid.mu = 0.005\ngrid.bc.yhi = [1.0, 0.0]\ngrid.bc.ylo = \"no_slip\"",
        )
        .unwrap();
        assert_eq!(c.params.re, 200.0);
        assert_eq!(c.params.bc_overrides[0], (1, 1, BcSpec::Velocity([1.0, 0.0, 0.0])));
        assert_eq!(c.params.bc_overrides[1], (1, 0, BcSpec::Velocity([0.0; 3])));
        assert!(parse_config("case = \"impulsive_cylinder\"\nfluid.mu = 0.01\nfluid.re = 50").is_err());
    }
}
