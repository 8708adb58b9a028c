use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

const EXE: &str = env!("CARGO_BIN_EXE_vesselwall");

fn run(args: &[&str]) -> Output {
    Command::new(EXE).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Default phantom bundle written once through the CLI.
fn phantom() -> &'static Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let o = run(&["phantom", "--out", s(dir.path())]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        for f in ["volume.rvol", "truth.rvol", "centerline.json", "manifest.json", "annotations/plane_1.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        dir
    })
    .path()
}

fn pseudolabel(out: &Path, extra: &[&str]) -> Output {
    let p = phantom();
    let (volume, centerline) = (p.join("volume.rvol"), p.join("centerline.json"));
    let mut args = vec![
        "pseudolabel",
        "--volume",
        s(&volume),
        "--centerline",
        s(&centerline),
        "--grid",
        "0.6",
        "--out",
        s(out),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn pseudolabel_evaluate_report_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("pl");
    let o = pseudolabel(&out, &["--bif-region", "6"]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains(", 0 failed"), "{}", stdout(&o));
    for f in ["pseudolabel.rvol", "lumen.obj", "outer.obj", "provenance.json", "planes.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let prov: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["tool"], "vesselwall");
    assert_eq!(prov["result"]["bif_region"], 6.0);
    assert_eq!(prov["result"]["grid_spacing"], 0.6);

    let ev = tmp.path().join("ev");
    let o = run(&[
        "evaluate",
        "--pred",
        s(&out.join("pseudolabel.rvol")),
        "--annotations",
        s(&phantom().join("annotations")),
        "--out",
        s(&ev),
        "--case-id",
        "phantom",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cases = std::fs::read_to_string(ev.join("cases.csv")).unwrap();
    assert!(cases.starts_with("case_id,"));
    assert_eq!(cases.lines().count(), 9);
    let per_plane = std::fs::read_to_string(ev.join("per_plane.csv")).unwrap();
    assert!(per_plane.starts_with("Plane,Lumen mu(ACD),"));
    assert!(per_plane.lines().last().unwrap().starts_with("All planes,"));
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(ev.join("evaluation.json")).unwrap()).unwrap();
    assert_eq!(meta["distance"], "contour");
    assert_eq!(meta["failed_radius"], 5.0);
    assert_eq!(meta["sample_step"], 0.05);

    let inputs = tmp.path().join("inputs");
    std::fs::create_dir(&inputs).unwrap();
    std::fs::copy(ev.join("cases.csv"), inputs.join("site_a.csv")).unwrap();
    std::fs::copy(ev.join("cases.csv"), inputs.join("site_b.csv")).unwrap();
    let rep = tmp.path().join("rep");
    std::fs::create_dir(&rep).unwrap();
    let o = run(&["report", "--inputs", s(&inputs), "--out", s(&rep)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ds = std::fs::read_to_string(rep.join("per_dataset.csv")).unwrap();
    let keys: Vec<&str> = ds.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(keys, ["site_a", "site_b"]);
    let pp = std::fs::read_to_string(rep.join("per_plane.csv")).unwrap();
    assert_eq!(pp.lines().count(), 10);
    assert!(pp.lines().last().unwrap().ends_with(",0/16"));
    assert!(rep.join("report.json").exists());
}

#[test]
fn failed_planes_exit_partial() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("pl");
    let o = pseudolabel(&out, &[]);
    assert_eq!(code(&o), 2, "{}{}", stdout(&o), stderr(&o));
    assert!(out.join("pseudolabel.rvol").exists());
    let planes: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("planes.json")).unwrap()).unwrap();
    let failed = planes.as_array().unwrap().iter().filter(|p| p["status"] != "ok").count();
    assert!(failed > 0);
}

#[test]
fn external_segmenter_matches_builtin() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("builtin"), tmp.path().join("external"));
    let o = pseudolabel(&a, &["--bif-region", "6", "--no-bifurcation-axis", "--sd", "1.2"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let seg = format!("cmd:{EXE} oracle-batch");
    let o = pseudolabel(&b, &["--bif-region", "6", "--no-bifurcation-axis", "--sd", "1.2", "--segmenter", &seg]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert_eq!(
        std::fs::read(a.join("pseudolabel.rvol")).unwrap(),
        std::fs::read(b.join("pseudolabel.rvol")).unwrap()
    );
    assert_eq!(
        std::fs::read(a.join("planes.json")).unwrap(),
        std::fs::read(b.join("planes.json")).unwrap()
    );
    assert!(b.join("segmenter_io/batch.json").exists());
}

#[test]
fn missing_centerline_names_path() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&[
        "pseudolabel",
        "--volume",
        s(&phantom().join("volume.rvol")),
        "--centerline",
        "/nonexistent/tree.json",
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("/nonexistent/tree.json"), "{}", stderr(&o));
}

#[test]
fn empty_segmentations_are_zero_contours() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"segmenter": {"kind": "builtin_oracle", "t_low": -1e9, "t_high": 1e9}}"#,
    )
    .unwrap();
    let o = pseudolabel(&tmp.path().join("out"), &["--config", s(&cfg)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("zero contours"), "{}", stderr(&o));
}

#[test]
fn single_cell_ablation() {
    let tmp = tempfile::tempdir().unwrap();
    let p = phantom();
    let o = run(&[
        "ablate",
        "--volume",
        s(&p.join("volume.rvol")),
        "--centerline",
        s(&p.join("centerline.json")),
        "--annotations",
        s(&p.join("annotations")),
        "--truth",
        s(&p.join("truth.rvol")),
        "--sd-grid",
        "0.6",
        "--bifurcation-axis",
        "--grid",
        "0.6",
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = std::fs::read_to_string(tmp.path().join("ablation.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], std::fs::read_to_string(fixture("ablation_reference.csv")).unwrap().lines().next().unwrap());
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("0.6,yes,"));
    assert!(stdout(&o).starts_with("selected: SD 0.6 BA yes"), "{}", stdout(&o));
    let planes = std::fs::read_to_string(tmp.path().join("ablation_planes.csv")).unwrap();
    assert!(planes.starts_with("SD,BA,Invalid Planes,"));
    assert!(tmp.path().join("cells/sd0.6_ba-yes.csv").exists());
    assert!(tmp.path().join("evaluation.json").exists());
}

#[test]
fn select_on_fixture() {
    let o = run(&["select", s(&fixture("ablation_reference.csv"))]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).trim(), "selected: SD 0.6 BA yes (failed 22/2654, wall HD 0.845)");
}

#[test]
fn report_on_empty_dir_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["report", "--inputs", s(tmp.path()), "--out", s(tmp.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).starts_with("error: "), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&["pseudolabel", "--sd", "abc"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    let o = run(&["pseudolabel"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--out"), "{}", stderr(&o));
}

#[test]
fn oracle_batch_protocol_errors() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("batch.json"), "[]").unwrap();
    let o = run(&["oracle-batch", s(tmp.path())]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 1);

    std::fs::write(tmp.path().join("batch.json"), "{not json").unwrap();
    assert_eq!(code(&run(&["oracle-batch", s(tmp.path())])), 1);

    std::fs::write(
        tmp.path().join("batch.json"),
        r#"[{"id": "00000", "nu": 4, "nv": 4, "spacing_mm": 0.3, "window": [0, 1000]}]"#,
    )
    .unwrap();
    let o = run(&["oracle-batch", s(tmp.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("00000_img.pgm"), "{}", stderr(&o));
}
