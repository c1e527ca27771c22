//! CSV artifacts. Numbers are written in shortest round-trip form; any
//! non-finite value is refused before the file appears. Each file is
//! written to a sibling temporary and renamed into place.

use std::fs;
use std::path::{Path, PathBuf};

use crate::cases::{Norms, Snapshot, TimeRow};
use crate::coupling::WeightRow;
use crate::error::{Error, Result};
use crate::geometry::MarkerSet;

fn check(what: &str, location: impl FnOnce() -> String, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
            location: location(),
        })
    }
}

fn write_atomic(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let res = (|| -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(&tmp)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush()?;
        Ok(())
    })();
    match res {
        Ok(()) => fs::rename(&tmp, path).map_err(|e| Error::io(path, e)),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            let io = match e.into_kind() {
                csv::ErrorKind::Io(io) => io,
                other => std::io::Error::other(format!("{other:?}")),
            };
            Err(Error::io(path, io))
        }
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// `fields_<step>.csv`: one row per cell.
pub fn write_field_csv(path: &Path, snap: &Snapshot) -> Result<()> {
    const NAMES: [&str; 6] = ["x", "y", "u", "v", "p", "H"];
    let mut rows = Vec::with_capacity(snap.rows.len());
    for (r, vals) in snap.rows.iter().enumerate() {
        let mut row = Vec::with_capacity(6);
        for (c, v) in vals.iter().enumerate() {
            let loc = || format!("row {r}, cell center ({}, {})", vals[0], vals[1]);
            row.push(num(check(NAMES[c], loc, *v)?));
        }
        rows.push(row);
    }
    write_atomic(path, &NAMES, rows)
}

pub fn write_timeseries(path: &Path, series: &[TimeRow]) -> Result<()> {
    let mut rows = Vec::with_capacity(series.len());
    for (r, t) in series.iter().enumerate() {
        let vals = [t.t, t.fx, t.fy, t.cd, t.cl, t.interior_rms];
        let loc = || format!("time series row {r} (t = {})", t.t);
        for v in vals {
            check("time series", loc, v)?;
        }
        rows.push(vals.iter().map(|v| num(*v)).collect());
    }
    write_atomic(path, &["t", "Fx", "Fy", "CD", "CL", "interior_rms"], rows)
}

pub fn write_norms(path: &Path, norms: &[Norms]) -> Result<()> {
    let mut rows = Vec::with_capacity(norms.len());
    for n in norms {
        let vals = [n.h, n.l1_u, n.l2_u, n.linf_u, n.l1_p, n.l2_p, n.linf_p];
        for v in vals {
            check("error norms", || format!("h = {}", n.h), v)?;
        }
        rows.push(vals.iter().map(|v| num(*v)).collect());
    }
    write_atomic(path, &["h", "L1_u", "L2_u", "Linf_u", "L1_p", "L2_p", "Linf_p"], rows)
}

pub fn write_weights(path: &Path, weights: &[WeightRow]) -> Result<()> {
    let mut rows = Vec::with_capacity(weights.len());
    for w in weights {
        for v in [w.w, w.l, w.psi, w.psi_m] {
            check("weights", || format!("marker {} cell {:?}", w.marker, w.cell), v)?;
        }
        rows.push(vec![
            w.marker.to_string(),
            w.cell[0].to_string(),
            w.cell[1].to_string(),
            w.cell[2].to_string(),
            num(w.w),
            u8::from(w.h).to_string(),
            num(w.l),
            num(w.psi),
            num(w.psi_m),
        ]);
    }
    write_atomic(path, &["marker_id", "i", "j", "k", "W", "H", "L", "psi", "psi_m"], rows)
}

pub fn write_markers(path: &Path, markers: &MarkerSet) -> Result<()> {
    let mut rows = Vec::with_capacity(markers.len());
    for (m, (x, ds)) in markers.x.iter().zip(&markers.ds).enumerate() {
        for v in [x[0], x[1], x[2], *ds] {
            check("markers", || format!("marker {m}"), v)?;
        }
        rows.push(vec![m.to_string(), num(x[0]), num(x[1]), num(x[2]), num(*ds)]);
    }
    write_atomic(path, &["marker_id", "x", "y", "z", "ds"], rows)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, text).map_err(|e| Error::io(path, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
