use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
ladder = [120, 60, 30, 15]
work_dir = "work"
[codec]
kind = "quantizing_stub"
"#;

fn fpsel(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fpsel"))
        .current_dir(dir)
        .env_remove("FPSEL_METER")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = fpsel(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn synth_corpus(dir: &Path) {
    fs::write(dir.join("run.toml"), CONFIG).unwrap();
    ok(
        dir,
        &[
            "synth",
            "--kind",
            "local_motion",
            "--dx",
            "0",
            "--frames",
            "24",
            "--out",
            "still.y4m",
        ],
    );
    ok(
        dir,
        &[
            "synth",
            "--kind",
            "global_translation",
            "--dx",
            "3",
            "--frames",
            "24",
            "--out",
            "pan.y4m",
        ],
    );
}

fn full_run(dir: &Path) {
    synth_corpus(dir);
    fn with<'a>(rest: &[&'a str]) -> Vec<&'a str> {
        [&["--config", "run.toml"][..], rest].concat()
    }
    ok(dir, &with(&["pipeline-measure", "--store", "m.csv", "still.y4m", "pan.y4m"]));
    ok(
        dir,
        &with(&["label", "--store", "m.csv", "--out", "policy.csv", "--labels", "labels.csv"]),
    );
    ok(
        dir,
        &with(&["features", "--in", "still.y4m", "--in", "pan.y4m", "--out", "features.csv"]),
    );
    ok(
        dir,
        &with(&[
            "train",
            "--labels",
            "labels.csv",
            "--features",
            "features.csv",
            "--model",
            "model.json",
            "--report",
            "eval.json",
        ]),
    );
    ok(
        dir,
        &with(&[
            "delta-e",
            "--store",
            "m.csv",
            "--model",
            "model.json",
            "--out",
            "delta.csv",
            "still.y4m",
        ]),
    );
    ok(dir, &with(&["report", "--store", "m.csv", "--curves", "curves"]));
}

#[test]
fn full_workflow_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    full_run(a.path());
    full_run(b.path());

    let policy = fs::read_to_string(a.path().join("policy.csv")).unwrap();
    assert!(policy.contains("still,\"{120,15,15,15}\""), "{policy}");
    assert!(policy.contains("pan,\"{120,120,120,120}\""), "{policy}");
    let delta = fs::read_to_string(a.path().join("delta.csv")).unwrap();
    assert!(delta.lines().nth(1).unwrap().starts_with("still,-"), "{delta}");

    for f in [
        "m.csv",
        "policy.csv",
        "labels.csv",
        "features.csv",
        "model.json",
        "eval.json",
        "eval.md",
        "delta.csv",
        "curves/still.dat",
    ] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }

    // resumable: a second measurement pass adds nothing
    let again = ok(
        a.path(),
        &[
            "--config",
            "run.toml",
            "pipeline-measure",
            "--store",
            "m.csv",
            "still.y4m",
            "pan.y4m",
        ],
    );
    assert!(again.contains("\"added\": 0"), "{again}");

    let fps = ok(
        a.path(),
        &[
            "--config",
            "run.toml",
            "predict",
            "--model",
            "model.json",
            "--in",
            "still.y4m",
            "--crf",
            "28",
        ],
    );
    assert_eq!(fps.trim(), "15");
    let md = ok(a.path(), &["report", "--policy", "policy.csv", "--delta-e", "delta.csv"]);
    assert!(md.contains("| Average BD (all) |"));
}

#[test]
fn single_step_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_corpus(d);
    ok(d, &["downsample", "--in", "pan.y4m", "--fps-out", "30", "--out", "pan30.y4m"]);
    let q: serde_json::Value = serde_json::from_str(&ok(d, &["quality", "--ref", "pan.y4m", "--test", "pan30.y4m"])).unwrap();
    assert_eq!(q["n_compared"], 24);
    assert!(q["value_db"].as_f64().unwrap() > 10.0);
    let same: serde_json::Value =
        serde_json::from_str(&ok(d, &["quality", "--ref", "pan.y4m", "--test", "pan.y4m", "--metric", "psnr"])).unwrap();
    assert!(same["value_db"].is_null());

    fs::write(
        d.join("ref.csv"),
        "mpsnr_db,bitrate_kbps,e_enc_j,e_dec_j\n30,100,4,1\n35,200,8,2\n40,400,16,4\n",
    )
    .unwrap();
    fs::write(
        d.join("test.csv"),
        "mpsnr_db,bitrate_kbps,e_enc_j,e_dec_j\n30,50,4,1\n35,100,8,2\n40,200,16,4\n",
    )
    .unwrap();
    let bd: serde_json::Value =
        serde_json::from_str(&ok(d, &["bd", "--ref", "ref.csv", "--test", "test.csv", "--metric", "rate"])).unwrap();
    assert!((bd["bd_percent"].as_f64().unwrap() + 50.0).abs() < 1e-9);
    let bd: serde_json::Value = serde_json::from_str(&ok(d, &["bd", "--ref", "ref.csv", "--test", "test.csv", "--metric", "enc"])).unwrap();
    assert_eq!(bd["bd_percent"].as_f64().unwrap(), 0.0);

    let m: serde_json::Value = serde_json::from_str(&ok(d, &["measure", "--cmd-template", "true", "--reps-max", "3"])).unwrap();
    assert!(m["n_repetitions"].as_u64().unwrap() <= 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_corpus(d);
    assert_eq!(code(&fpsel(d, &["no-such-command"])), 1);
    assert_eq!(code(&fpsel(d, &["downsample", "--in", "pan.y4m"])), 1);
    assert_eq!(
        code(&fpsel(d, &["quality", "--ref", "pan.y4m", "--test", "pan.y4m", "--metric", "ssim"])),
        1
    );
    assert_eq!(code(&fpsel(d, &["--help"])), 0);

    assert_eq!(code(&fpsel(d, &["quality", "--ref", "pan.y4m", "--test", "missing.y4m"])), 2);
    fs::write(d.join("bad.y4m"), "YUV4MPEG2 W4 H4\nFRAME\n").unwrap();
    assert_eq!(
        code(&fpsel(d, &["downsample", "--in", "bad.y4m", "--fps-out", "30", "--out", "x.y4m"])),
        2
    );

    assert_eq!(code(&fpsel(d, &["measure", "--cmd-template", "false", "--reps-max", "2"])), 3);
    fs::write(
        d.join("failing.toml"),
        "ladder = [120, 60]\ncrf_grid = [18]\ncrf_subset = [18]\n[codec]\nkind = \"command\"\nencode = \"false {input} {output}\"\ndecode = \"cp {input} {output}\"\n",
    )
    .unwrap();
    let out = fpsel(d, &["--config", "failing.toml", "pipeline-measure", "--store", "m.csv", "pan.y4m"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("m.csv.failures.csv").exists());

    let bogus_meter = Command::new(env!("CARGO_BIN_EXE_fpsel"))
        .current_dir(d)
        .env("FPSEL_METER", "abacus")
        .args(["measure", "--cmd-template", "true"])
        .output()
        .unwrap();
    assert_eq!(code(&bogus_meter), 1);
}
