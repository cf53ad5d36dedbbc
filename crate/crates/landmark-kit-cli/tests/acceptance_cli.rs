//! Command-line half of the I/O acceptance criterion: the full pipeline on
//! noise-free synthetic data must reach a mean point error below
//! 0.1 px * spacing.

use std::process::Command;

fn run(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_landmark-kit"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn criterion_8_cli_pipeline_on_clean_synth_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let spacing_mm_per_px = 0.1;

    let out = run(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--n-samples",
        "6",
        "--seed",
        "42",
        "--noise-std",
        "0",
    ]);
    assert!(
        out.status.success(),
        "synth: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    let h = dir.path().join("h.npz");
    let out = run(&[
        "encode",
        "--manifest",
        data.join("manifest.json").to_str().unwrap(),
        "--sigma",
        "3",
        "--kind",
        "gaussian",
        "--out",
        h.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "encode: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    let pred = dir.path().join("pred.csv");
    let out = run(&[
        "decode",
        "--heatmaps",
        h.to_str().unwrap(),
        "--method",
        "local-weighted-mean",
        "--window",
        "7",
        "--activation",
        "softmax",
        "--temperature",
        "0.05",
        "--units",
        "pixels",
        "--out",
        pred.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "decode: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    let report = dir.path().join("report.json");
    let out = run(&[
        "evaluate",
        "--pred",
        pred.to_str().unwrap(),
        "--truth",
        data.join("truth.csv").to_str().unwrap(),
        "--spacing",
        "0.1,0.1",
        "--radii",
        "1,2,3,4",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "evaluate: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let pe_mean_mm = parsed["overall"]["pe_mean_mm"]
        .as_f64()
        .expect("pe_mean_mm present");
    let skipped = parsed["skipped"].as_u64().unwrap();
    let limit_mm = 0.1 * spacing_mm_per_px;
    assert_eq!(skipped, 0);
    assert!(
        pe_mean_mm < limit_mm,
        "PE mean {pe_mean_mm} mm not below 0.1 px * spacing = {limit_mm} mm"
    );

    // the evaluate output is byte-deterministic across reruns
    let report2 = dir.path().join("report2.json");
    let out = run(&[
        "evaluate",
        "--pred",
        pred.to_str().unwrap(),
        "--truth",
        data.join("truth.csv").to_str().unwrap(),
        "--spacing",
        "0.1,0.1",
        "--radii",
        "1,2,3,4",
        "--out",
        report2.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(&report).unwrap(),
        std::fs::read(&report2).unwrap()
    );

    println!(
        "criterion 8 (CLI half): PASS - synth/encode/decode/evaluate pipeline, PE mean {pe_mean_mm:.2e} mm < {limit_mm} mm"
    );
}
