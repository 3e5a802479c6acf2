use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use dite_cli::formats::{read_fixture, write_fixture, Precision};
use dite_core::autograd::probe_weights;
use dite_core::{Shape, Tensor};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn dite(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dite"))
        .args(args)
        .env("DITE_CONFIG_DIR", configs())
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn sha(o: &Output) -> String {
    stdout(o)
        .lines()
        .find_map(|l| l.strip_prefix("sha256 "))
        .expect("hash line")
        .to_string()
}

#[test]
fn analyze_reports_totals() {
    let o = dite(&["analyze", "--variant", "18", "--input", "256x192"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("params 1139863 (1.1399 M)"), "{s}");
    assert!(s.contains("MFLOPs 210.84"), "{s}");
    let o = dite(&["analyze", "--variant", "18", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["total"]["params"], 1139863);
    let o = dite(&["analyze", "--variant", "tiny", "--format", "csv"]);
    assert!(stdout(&o).starts_with("name,kind,category,output,params,flops\n"));
}

#[test]
fn sweep_lists_sixteen_cells_in_grid_order() {
    let o = dite(&["sweep", "--variant", "18", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    let rows: Vec<&str> = s.lines().skip(1).collect();
    assert_eq!(rows.len(), 16);
    assert!(rows[0].starts_with("1111,1111,"));
    assert!(rows[5].starts_with("1124,4421,"));
    assert!(rows[15].starts_with("4444,4444,"));
    let o = dite(&[
        "sweep",
        "--groups",
        "3111,1111",
        "--kernels",
        "1111",
        "--format",
        "json",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v[0]["result"]["Err"].is_string());
    assert!(v[1]["result"]["Ok"]["params"].is_u64());
}

#[test]
fn forward_is_reproducible() {
    let a = dite(&["forward", "--config", "tiny.json", "--seed", "7"]);
    let b = dite(&["forward", "--config", "tiny.json", "--seed", "7"]);
    let c = dite(&["forward", "--config", "tiny.json", "--seed", "8"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(sha(&a), sha(&b));
    assert_eq!(stdout(&a), stdout(&b));
    assert_ne!(sha(&a), sha(&c));
}

#[test]
fn fixtures_and_checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.bin");
    let x: Tensor<f64> = probe_weights(Shape::new(1, 3, 32, 32), 3);
    write_fixture(&mut fs::File::create(&input).unwrap(), &x, Precision::F64).unwrap();
    let ckpt = dir.path().join("w.ckpt");
    let hm = dir.path().join("hm.bin");
    let p = |p: &PathBuf| p.to_str().unwrap().to_string();

    assert_eq!(
        dite(&[
            "checkpoint",
            "--variant",
            "tiny",
            "--seed",
            "7",
            "--output",
            &p(&ckpt)
        ])
        .status
        .code(),
        Some(0)
    );
    assert_eq!(&fs::read(&ckpt).unwrap()[..8], b"DITECKPT");
    let seeded = dite(&[
        "forward",
        "--variant",
        "tiny",
        "--seed",
        "7",
        "--fixture",
        &p(&input),
        "--heatmaps",
        &p(&hm),
    ]);
    let loaded = dite(&[
        "forward",
        "--variant",
        "tiny",
        "--seed",
        "99",
        "--weights",
        &p(&ckpt),
        "--fixture",
        &p(&input),
    ]);
    assert_eq!(sha(&seeded), sha(&loaded));
    let (heatmaps, precision) = read_fixture(&fs::read(&hm).unwrap()).unwrap();
    assert_eq!(
        (heatmaps.shape(), precision),
        (Shape::new(1, 3, 8, 8), Precision::F32)
    );

    let other = dite(&[
        "forward",
        "--variant",
        "18",
        "--weights",
        &p(&ckpt),
        "--input",
        "32x32",
    ]);
    assert_eq!(other.status.code(), Some(2));
}

#[test]
fn verify_exit_codes_and_localisation() {
    let dir = tempfile::tempdir().unwrap();
    let header = "config_id,input_h,input_w,params,mflops,tol_params,tol_flops\n";
    let good = dir.path().join("good.csv");
    fs::write(
        &good,
        format!("{header}dite18,256,192,1.1,209.8,0.05,0.02\n"),
    )
    .unwrap();
    let o = dite(&["verify", good.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));

    let doubled = dir.path().join("doubled.csv");
    fs::write(
        &doubled,
        format!("{header}dite18,256,192,2.28,209.8,0.05,0.02\n"),
    )
    .unwrap();
    let o = dite(&["verify", doubled.to_str().unwrap(), "--reference", "lite18"]);
    assert_eq!(o.status.code(), Some(1));
    let s = stdout(&o);
    assert!(
        s.contains("FAIL") && s.contains("stage4") && s.contains("vs reference"),
        "{s}"
    );

    let missing = dir.path().join("missing.csv");
    fs::write(
        &missing,
        format!("{header}dite19,256,192,1.1,209.8,0.05,0.02\ndite18,256,192,1.1,209.8,0.05,0.02\n"),
    )
    .unwrap();
    let o = dite(&["verify", missing.to_str().unwrap(), "--format", "json"]);
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v[0]["error"].is_string());
    assert_eq!(v[1]["params_ok"], true);

    let o = dite(&["verify", dir.path().join("absent.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_two() {
    for args in [
        &["analyze", "--bogus"][..],
        &["analyze", "--input", "256"],
        &["analyze", "--input", "250x192"],
        &["analyze", "--variant", "19"],
        &["summary", "--config", "nope.json"],
        &["analyze", "--variant", "18", "--config", "tiny.json"],
        &[],
    ] {
        assert_eq!(dite(args).status.code(), Some(2), "{args:?}");
    }
    assert_eq!(dite(&["--help"]).status.code(), Some(0));
}

#[test]
fn gradcheck_passes() {
    let o = dite(&["gradcheck", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 7);
}

#[test]
fn summary_lists_stages_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("summary.json");
    let o = dite(&[
        "summary",
        "--variant",
        "18",
        "--format",
        "json",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["stages"].as_array().unwrap().len(), 4);
    let analyze = dite(&["analyze", "--variant", "18", "--format", "json"]);
    let r: serde_json::Value = serde_json::from_slice(&analyze.stdout).unwrap();
    assert_eq!(
        v["layers"].as_array().unwrap().len(),
        r["nodes"].as_array().unwrap().len()
    );
}
