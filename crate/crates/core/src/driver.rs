//! Run orchestration: executes cases from a [`RunConfig`] and writes the
//! artifacts into `output.dir`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;

use crate::cases::{build_case, convergence_orders, run_case, CaseKind, CaseReport, Norms};
use crate::config::RunConfig;
use crate::coupling::weight_rows;
use crate::error::{Error, Result};
use crate::output::{write_field_csv, write_markers, write_norms, write_text, write_timeseries, write_weights};

/// Grids used by `convergence` when the config lists none.
pub const DEFAULT_RESOLUTIONS: [usize; 3] = [64, 128, 256];

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn summary(cfg: &RunConfig, r: &CaseReport) -> String {
    let p = &cfg.params;
    let mut s = String::new();
    let _ = writeln!(s, "case {}", p.kind.name());
    let _ = writeln!(s, "seed {}", cfg.seed);
    let _ = writeln!(s, "grid {:?} h {}", p.n, r.h);
    let _ = writeln!(s, "kernel {} interp {} spread {}", p.kernel.name(), p.interp.name(), p.spread.name());
    let _ = writeln!(s, "steps {} t {}", r.steps, r.t);
    let _ = writeln!(s, "max face divergence {:e}", r.max_divergence);
    let _ = writeln!(s, "fallback markers {}", r.fallback_markers);
    if let Some(last) = r.history.last() {
        let _ = writeln!(s, "final CD {} CL {} interior_rms {}", last.cd, last.cl, last.interior_rms);
    }
    s
}

/// Single run: `fields_<step>.csv` every `output.every` steps plus the final
/// state, `timeseries.csv`, `norms.csv` (Taylor–Green) and `report.txt`.
pub fn run(cfg: &RunConfig) -> Result<CaseReport> {
    let dir = &cfg.output_dir;
    prepare_dir(dir)?;
    let mut setup = build_case(&cfg.params)?;
    let mut last_written = None;
    let report = run_case(&mut setup, &mut |snap| {
        last_written = Some(snap.step);
        write_field_csv(&dir.join(format!("fields_{}.csv", snap.step)), snap)
    })?;
    if last_written != Some(report.steps) {
        let snap = crate::cases::snapshot(&setup);
        write_field_csv(&dir.join(format!("fields_{}.csv", snap.step)), &snap)?;
    }
    write_timeseries(&dir.join("timeseries.csv"), &report.timeseries)?;
    if let Some(n) = report.norms {
        write_norms(&dir.join("norms.csv"), &[n])?;
    }
    write_text(&dir.join("report.txt"), &summary(cfg, &report))?;
    info!("{} finished after {} steps", cfg.params.kind.name(), report.steps);
    Ok(report)
}

/// Weight dump at `t = 0`: `weights.csv` and `markers.csv`.
pub fn weights(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = &cfg.output_dir;
    prepare_dir(dir)?;
    let setup = build_case(&cfg.params)?;
    let ib = setup
        .body
        .as_ref()
        .ok_or_else(|| Error::config(format!("case {} has no body", cfg.params.kind.name())))?;
    let rows = weight_rows(ib, &setup.fluid.grid, 0.0)?;
    let path = dir.join("weights.csv");
    write_weights(&path, &rows)?;
    write_markers(&dir.join("markers.csv"), &ib.body.markers_at(0.0, 0.0))?;
    Ok(path)
}

/// Refinement study over `grid.resolutions`: `norms.csv` with one row per
/// grid, `timeseries_<n>.csv` per grid and fitted orders in `report.txt`.
pub fn convergence(cfg: &RunConfig) -> Result<Vec<Norms>> {
    if cfg.params.kind != CaseKind::TaylorGreenCylinder {
        return Err(Error::config(format!(
            "convergence needs an exact solution; case {} has none",
            cfg.params.kind.name()
        )));
    }
    let res: Vec<usize> = if cfg.resolutions.is_empty() {
        DEFAULT_RESOLUTIONS.to_vec()
    } else {
        cfg.resolutions.clone()
    };
    let grids: Vec<_> = res.iter().map(|&n| cfg.params.with_resolution(n)).collect();
    for g in &grids {
        g.validate()?;
    }
    let dir = &cfg.output_dir;
    prepare_dir(dir)?;
    let reports: Vec<CaseReport> = grids
        .par_iter()
        .map(|p| {
            let mut p = p.clone();
            p.output_every = 0;
            let mut setup = build_case(&p)?;
            run_case(&mut setup, &mut |_| Ok(()))
        })
        .collect::<Result<_>>()?;
    for (n, r) in res.iter().zip(&reports) {
        write_timeseries(&dir.join(format!("timeseries_{n}.csv")), &r.timeseries)?;
    }
    let norms: Vec<Norms> = reports.iter().map(|r| r.norms.expect("Taylor-Green reports norms")).collect();
    let orders = convergence_orders(&norms);
    let p = &cfg.params;
    let mut s = String::new();
    let _ = writeln!(s, "case {}", p.kind.name());
    let _ = writeln!(s, "seed {}", cfg.seed);
    let _ = writeln!(s, "kernel {} interp {} spread {}", p.kernel.name(), p.interp.name(), p.spread.name());
    let _ = writeln!(s, "grids {res:?}");
    let names = ["L1_u", "L2_u", "Linf_u", "L1_p", "L2_p", "Linf_p"];
    for (name, o) in names.iter().zip(orders) {
        let _ = writeln!(s, "order {name} {o:.4}");
    }
    write_norms(&dir.join("norms.csv"), &norms)?;
    write_text(&dir.join("report.txt"), &s)?;
    Ok(norms)
}
