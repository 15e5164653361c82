use nsd_core::experiments::run_experiment;
use nsd_core::io::{parse_config_with, RunConfig};

fn custom(out: &std::path::Path, seed: u64) -> RunConfig {
    let kv = [
        ("experiment", "custom".to_string()),
        ("h", "0.125".to_string()),
        ("dt", "0.01".to_string()),
        ("t_end", "0.05".to_string()),
        ("snapshots", "0,0.05".to_string()),
        ("seed", seed.to_string()),
        ("out", out.display().to_string()),
    ];
    let kv: Vec<(String, String)> = kv.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    parse_config_with("", &kv).unwrap()
}

#[test]
fn same_seed_gives_identical_trace() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_experiment(&custom(a.path(), 11)).unwrap();
    let rb = run_experiment(&custom(b.path(), 11)).unwrap();
    let rc = run_experiment(&custom(c.path(), 12)).unwrap();
    let ta = std::fs::read(ra.trace.unwrap()).unwrap();
    let tb = std::fs::read(rb.trace.unwrap()).unwrap();
    let tc = std::fs::read(rc.trace.unwrap()).unwrap();
    assert_eq!(ta, tb);
    assert_ne!(ta, tc);
}

#[test]
fn trace_has_header_and_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = custom(dir.path(), 3);
    let outcome = run_experiment(&cfg).unwrap();
    let text = std::fs::read_to_string(outcome.trace.unwrap()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], format!("# config_hash={}", cfg.hash()));
    assert_eq!(lines[1], "# seed=3");
    let cols = lines[2].split(',').count();
    let rows = &lines[3..];
    assert_eq!(rows.len(), 5);
    for (i, row) in rows.iter().enumerate() {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f.len(), cols);
        assert_eq!(f[0].parse::<usize>().unwrap(), i + 1);
        assert!(f[1..cols - 1].iter().all(|x| x.parse::<f64>().unwrap().is_finite()));
    }
}

#[test]
fn snapshots_are_legacy_vtk() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_experiment(&custom(dir.path(), 3)).unwrap();
    assert_eq!(outcome.snapshots.len(), 2);
    for p in &outcome.snapshots {
        let text = std::fs::read_to_string(p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# vtk DataFile Version 3.0"));
        assert!(text.contains("DATASET UNSTRUCTURED_GRID"));
        let points: usize =
            text.lines().find(|l| l.starts_with("POINTS")).unwrap().split_whitespace().nth(1).unwrap().parse().unwrap();
        assert!(text.contains(&format!("POINT_DATA {points}")));
        assert!(!text.contains("NaN"));
    }
}

#[test]
fn convergence_study_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let kv: Vec<(String, String)> = [
        ("experiment", "convergence".to_string()),
        ("h_list", "0.25,0.125".to_string()),
        ("t_end", "0.125".to_string()),
        ("out", dir.path().display().to_string()),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v.clone()))
    .collect();
    let outcome = run_experiment(&parse_config_with("", &kv).unwrap()).unwrap();
    let table = outcome.convergence.unwrap();
    assert!(table.rows.iter().all(|r| r.failure.is_none()), "{:?}", table.rows);
    assert!(table.rate_u.is_finite() && table.rate_phi.is_finite());
    let csv: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
        .collect();
    assert_eq!(csv.len(), 1);
    let text = std::fs::read_to_string(csv[0].path()).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 3);
}
