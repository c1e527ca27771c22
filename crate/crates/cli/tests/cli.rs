use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ibmls(args: &[&str], config: &str, dir: &Path) -> Output {
    let cfg = dir.join("case.cfg");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_ibmls"))
        .args(args)
        .arg(&cfg)
        .env("IBMLS_THREADS", "1")
        .output()
        .unwrap()
}

fn tg_config(out: &Path, extra: &str) -> String {
    format!(
        "case = \"taylor_green_cylinder\"\n[grid]\ndims = [32, 32]\n[time]\nt_end = 0.02\n[output]\ndir = \"{}\"\n{extra}",
        out.display()
    )
}

#[test]
fn range_error_exits_2_and_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = ibmls(&["run"], "case = \"taylor_green_cylinder\"\ntime.cfl = -1\n", dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn missing_config_exits_4() {
    let out = Command::new(env!("CARGO_BIN_EXE_ibmls"))
        .args(["run", "/nonexistent/case.cfg"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn unwritable_output_exits_4_without_norms() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let target = blocker.join("out");
    let out = ibmls(&["run"], &tg_config(&target, ""), dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert!(!target.join("norms.csv").exists());
}

#[test]
fn three_point_one_sided_fails_with_solver_exit() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = format!(
        "case = \"taylor_green_cylinder\"\nkernel = \"smoothed3\"\ngrid.dims = [64, 64]\n\
         coupling.interp = \"mls_ncvs\"\ncoupling.spread = \"mls_ncvs\"\ncoupling.gram_fallback = \"error\"\n\
         output.dir = \"{}\"\n",
        out_dir.display()
    );
    let out = ibmls(&["weights"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("near-singular Gram"), "{err}");
}

#[test]
fn run_writes_artifacts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for target in [&a, &b] {
        let out = ibmls(&["run"], &tg_config(target, "every = 2\n"), dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let ts = fs::read_to_string(a.join("timeseries.csv")).unwrap();
    let mut lines = ts.lines();
    assert_eq!(lines.next().unwrap(), "t,Fx,Fy,CD,CL,interior_rms");
    let rows = lines.count();
    let report = fs::read_to_string(a.join("report.txt")).unwrap();
    let steps: usize = report
        .lines()
        .find_map(|l| l.strip_prefix("steps "))
        .and_then(|l| l.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(rows, steps / 2 + 1);
    assert!(a.join("fields_0.csv").exists());
    assert!(a.join(format!("fields_{steps}.csv")).exists());
    let fields = fs::read_to_string(a.join("fields_0.csv")).unwrap();
    assert_eq!(fields.lines().next().unwrap(), "x,y,u,v,p,H");
    assert_eq!(fields.lines().count(), 32 * 32 + 1);

    let listing = |d: &Path| -> BTreeMap<String, Vec<u8>> {
        fs::read_dir(d)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
            })
            .collect()
    };
    assert_eq!(listing(&a), listing(&b));
}

#[test]
fn convergence_writes_one_norm_row_per_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("conv");
    let cfg = tg_config(&out_dir, "[grid]\nresolutions = [16, 24, 32]\n").replace("t_end = 0.02", "t_end = 0.01");
    let out = ibmls(&["convergence"], &cfg, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let norms = fs::read_to_string(out_dir.join("norms.csv")).unwrap();
    assert_eq!(norms.lines().next().unwrap(), "h,L1_u,L2_u,Linf_u,L1_p,L2_p,Linf_p");
    assert_eq!(norms.lines().count(), 4);
    let report = fs::read_to_string(out_dir.join("report.txt")).unwrap();
    assert!(report.contains("order L2_u"), "{report}");
}

#[test]
fn weights_dump_rows_sum_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("w");
    let cfg = format!(
        "case = \"taylor_green_cylinder\"\ngrid.dims = [64, 64]\ncoupling.interp = \"mls_ncvs\"\n\
         coupling.spread = \"mls_ncvs\"\nbody.orientation = \"exterior\"\noutput.dir = \"{}\"\n",
        out_dir.display()
    );
    let out = ibmls(&["weights"], &cfg, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(out_dir.join("weights.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "marker_id,i,j,k,W,H,L,psi,psi_m");
    let mut sums: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        let m: usize = f[0].parse().unwrap();
        let psi: f64 = f[7].parse().unwrap();
        let psi_m: f64 = f[8].parse().unwrap();
        if f[5] == "0" {
            assert_eq!((psi, psi_m), (0.0, 0.0));
        }
        let e = sums.entry(m).or_default();
        e.0 += psi;
        e.1 += psi_m;
    }
    let markers = fs::read_to_string(out_dir.join("markers.csv")).unwrap();
    assert_eq!(sums.len(), markers.lines().count() - 1);
    for (m, (a, b)) in sums {
        assert!((a - 1.0).abs() < 1e-10 && (b - 1.0).abs() < 1e-12, "marker {m}: {a} {b}");
    }
}
