use chemorep::config::{ExperimentConfig, SchemeKind};
use chemorep::diagnostics::REPORT_FORMAT;
use chemorep::runner::{run, sweep_eps};

fn small(preset: &str, scheme: SchemeKind, cells: usize, k: f64, steps: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::from_preset(preset, scheme).unwrap();
    c.mesh.nx = cells;
    c.mesh.ny = cells;
    c.k = k;
    c.t_final = k * steps as f64;
    c
}

#[test]
fn identical_runs_write_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    for scheme in [SchemeKind::Uv, SchemeKind::UsEps] {
        let mut bytes = Vec::new();
        for i in 0..2 {
            let mut c = small("energy", scheme, 8, 1e-3, 5);
            c.output.dir = Some(dir.path().join(format!("{}-{i}", scheme.name())));
            let o = run(&c).unwrap();
            assert!(o.succeeded());
            assert_eq!(o.report.len(), 6);
            bytes.push(std::fs::read(c.output.dir.unwrap().join("report.csv")).unwrap());
        }
        assert_eq!(bytes[0], bytes[1], "{}", scheme.name());
        let text = String::from_utf8(bytes[0].clone()).unwrap();
        assert_eq!(text.lines().next(), Some(REPORT_FORMAT));
    }
}

#[test]
fn outputs_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small("energy", SchemeKind::Us, 6, 1e-3, 4);
    c.output.dir = Some(dir.path().to_path_buf());
    c.output.snapshot_every = 2;
    run(&c).unwrap();
    for name in ["report.csv", "config.toml", "snapshot_000000.vtk", "snapshot_000002.vtk", "snapshot_000004.vtk"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    assert!(!dir.path().join("snapshot_000001.vtk").exists());
    let vtk = std::fs::read_to_string(dir.path().join("snapshot_000002.vtk")).unwrap();
    assert!(vtk.contains("sigma_magnitude"));
    let echoed = chemorep::config::load_config(&dir.path().join("config.toml")).unwrap();
    assert_eq!(echoed.k, c.k);
    assert_eq!(echoed.mesh, c.mesh);
}

#[test]
fn failed_step_keeps_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small("oscillation", SchemeKind::Uv, 8, 1e-2, 5);
    c.solver.newton_max_iter = 1;
    c.solver.newton_tol = 1e-15;
    c.output.dir = Some(dir.path().to_path_buf());
    let o = run(&c).unwrap();
    assert!(!o.succeeded());
    assert_eq!(o.report.len(), 1);
    let text = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(text.lines().last().unwrap().starts_with("# failure after step 0"), "{text}");
}

#[test]
fn constant_data_is_a_fixed_point() {
    for scheme in [SchemeKind::Uv, SchemeKind::Us, SchemeKind::UsEps] {
        let mut c = small("energy", scheme, 6, 1e-2, 5);
        c.u0 = "3".into();
        c.v0 = "9".into();
        let o = run(&c).unwrap();
        for r in o.report.records() {
            assert!((r.min_u - 3.0).abs() < 1e-10, "{} {}", scheme.name(), r.min_u);
            assert!((r.min_v - 9.0).abs() < 1e-9, "{} {}", scheme.name(), r.min_v);
            // Stiffness row sums vanish only up to roundoff.
            assert!(r.u_hat_sq < 1e-18 && r.gradient_sq < 1e-11, "{} {} {}", scheme.name(), r.u_hat_sq, r.gradient_sq);
        }
    }
}

#[test]
fn sweep_rejects_other_schemes_and_tabulates() {
    let c = small("positivity", SchemeKind::Uv, 8, 1e-5, 3);
    assert!(sweep_eps(&c, &[1e-2]).is_err());
    let dir = tempfile::tempdir().unwrap();
    let mut c = small("positivity", SchemeKind::UsEps, 8, 1e-5, 3);
    c.output.dir = Some(dir.path().to_path_buf());
    let table = sweep_eps(&c, &[1e-2, 1e-3]).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert!(table.rows.iter().all(|r| r.steps == 3 && r.failure.is_none()));
    assert!(dir.path().join("sweep.csv").exists());
    assert!(dir.path().join("eps_1e-2").join("report.csv").exists());
}
