use std::path::Path;

use mcrb_core::cli::{run, EXIT_DATA, EXIT_OK, EXIT_USAGE};
use mcrb_core::io::dataset::read_dataset;
use mcrb_core::io::table::read_table;

fn mcrb(args: &[&str]) -> i32 {
    run(std::iter::once("mcrb").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_fit_bounds_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("phantom");
    let out = tmp.path().join("out");
    assert_eq!(mcrb(&["--seed", "5", "--out", s(&data), "simulate", "--voxels", "12", "--reps", "6"]), EXIT_OK);
    let d = read_dataset(&data).unwrap();
    assert_eq!((d.n_voxels, d.n_plds(), d.n_reps), (12, 21, 6));
    assert_eq!(d.provenance.seed, Some(5));

    assert_eq!(mcrb(&["--out", s(&out), "fit", "--data", s(&data)]), EXIT_OK);
    let fit = read_table(out.join("fit.csv")).unwrap();
    assert_eq!(fit.rows.len(), 12);

    let maps = out.join("fit.csv");
    assert_eq!(mcrb(&["--out", s(&out), "bounds", "--data", s(&data), "--maps", s(&maps)]), EXIT_OK);
    let b = read_table(out.join("bounds.csv")).unwrap();
    assert_eq!(b.rows.len(), 12);
    assert!(b.column("status").unwrap().iter().any(|c| *c == 0.0));
}

#[test]
fn experiment_subcommands_write_tables_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("phantom");
    let out = tmp.path().join("out");
    assert_eq!(
        mcrb(&["--out", s(&data), "simulate", "--voxels", "10", "--reps", "5", "--generator", "wrong-t1", "--top-fraction", "0.2"]),
        EXIT_OK
    );
    assert!(read_dataset(&data).unwrap().t1_map.is_some());
    assert_eq!(mcrb(&["--threads", "1", "--out", s(&out), "converge", "--data", s(&data), "--k", "2"]), EXIT_OK);
    assert_eq!(read_table(out.join("convergence.csv")).unwrap().rows.len(), 4);
    assert!(out.join("convergence_eigenvalues.svg").exists());
    assert_eq!(mcrb(&["--out", s(&out), "subsets", "--data", s(&data), "--k", "2", "--m-max", "3"]), EXIT_OK);
    assert_eq!(read_table(out.join("subsets_per_m.csv")).unwrap().rows.len(), 2);
    assert_eq!(mcrb(&["--out", s(&out), "t1test", "--data", s(&data)]), EXIT_OK);
    assert_eq!(read_table(out.join("t1_maps.csv")).unwrap().rows.len(), 10);
    let table = out.join("convergence.csv");
    assert_eq!(
        mcrb(&["--out", s(&out), "plot", "--table", s(&table), "--y", "var_f_median", "--dotted", "crb_f_median", "--log"]),
        EXIT_OK
    );
    let svg = std::fs::read_to_string(out.join("plot.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn config_overrides_assumed_protocol() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("phantom");
    let out = tmp.path().join("out");
    assert_eq!(mcrb(&["--out", s(&data), "simulate", "--voxels", "4", "--reps", "3"]), EXIT_OK);
    let mut manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    manifest["t1_tissue"] = serde_json::json!(1.5);
    let cfg = tmp.path().join("assumed.json");
    std::fs::write(&cfg, manifest.to_string()).unwrap();
    assert_eq!(mcrb(&["--config", s(&cfg), "--out", s(&out), "fit", "--data", s(&data)]), EXIT_OK);

    manifest["plds"] = serde_json::json!([0.5, 1.0]);
    std::fs::write(&cfg, manifest.to_string()).unwrap();
    assert_eq!(mcrb(&["--config", s(&cfg), "--out", s(&out), "fit", "--data", s(&data)]), EXIT_USAGE);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(mcrb(&["no-such-command"]), EXIT_USAGE);
    assert_eq!(mcrb(&["simulate", "--voxels", "many"]), EXIT_USAGE);
    assert_eq!(mcrb(&["--help"]), EXIT_OK);
    let missing = tmp.path().join("missing");
    assert_eq!(mcrb(&["fit", "--data", s(&missing)]), EXIT_DATA);

    let data = tmp.path().join("phantom");
    assert_eq!(mcrb(&["--out", s(&data), "simulate", "--voxels", "3", "--reps", "2"]), EXIT_OK);
    std::fs::write(data.join("data.raw"), [0u8; 7]).unwrap();
    assert_eq!(mcrb(&["--out", s(tmp.path()), "fit", "--data", s(&data)]), EXIT_DATA);
    let table = tmp.path().join("bad.csv");
    std::fs::write(&table, "m [count]\n1\n").unwrap();
    assert_eq!(mcrb(&["--out", s(tmp.path()), "plot", "--table", s(&table), "--y", "nope"]), EXIT_DATA);
}

#[test]
fn all_voxel_numerical_failure_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("phantom");
    // noiseless repetitions make every score outer product vanish
    assert_eq!(
        mcrb(&["--out", s(&data), "simulate", "--voxels", "3", "--reps", "3", "--sigma", "0"]),
        EXIT_OK
    );
    assert!(read_dataset(&data).unwrap().protocol.sigma > 0.0);
    assert_eq!(mcrb(&["--out", s(tmp.path()), "bounds", "--data", s(&data)]), 3);
}
