use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_hollownerf");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn hollownerf")
}

fn ok(args: &[&str]) -> Output {
    let o = run(args);
    assert!(
        o.status.success(),
        "{args:?} exited {:?}: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn json_of(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("json stdout")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    admm: PathBuf,
    plain: PathBuf,
}

/// A small dataset plus two short runs: the full model and saliency without
/// a pruner.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        ok(&["gen", "--out", s(&data), "--views", "12", "--test-views", "2", "--resolution", "24"]);
        let admm = dir.path().join("admm");
        let plain = dir.path().join("plain");
        for (out, pruner) in [(&admm, "admm"), (&plain, "none")] {
            ok(&[
                "--threads", "1", "train", "--data", s(&data), "--out", s(out), "--steps", "400", "--pruner", pruner,
                "--saliency", "on", "train.eval_interval=200",
            ]);
        }
        Fixture {
            _dir: dir,
            data,
            admm,
            plain,
        }
    })
}

#[test]
fn gen_writes_a_loadable_dataset() {
    let f = fixture();
    for name in ["transforms_train.json", "transforms_test.json", "scene.json"] {
        assert!(f.data.join(name).is_file(), "{name} missing");
    }
    let t = read_json(&f.data.join("transforms_train.json"));
    assert_eq!(t["frames"].as_array().unwrap().len(), 12);
}

#[test]
fn train_writes_artifacts() {
    let f = fixture();
    for name in ["config.json", "metrics.jsonl", "checkpoint.hnrf", "report.json"] {
        assert!(f.admm.join(name).is_file(), "{name} missing");
    }
    let log = std::fs::read_to_string(f.admm.join("metrics.jsonl")).unwrap();
    let steps: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["step"].as_u64().unwrap())
        .collect();
    assert_eq!(steps, vec![200, 400]);
    let report = read_json(&f.admm.join("report.json"));
    assert_eq!(report["steps"], 400);
    assert!(report["final_psnr"].as_f64().unwrap() > 10.0);
    assert!(report["final_sparsity"].as_f64().is_some());
    let plain = read_json(&f.plain.join("config.json"));
    assert_eq!(plain["pruner"]["mode"], "none");
}

#[test]
fn eval_is_repeatable() {
    let f = fixture();
    let ck = f.admm.join("checkpoint.hnrf");
    let args = ["--json", "eval", "--checkpoint", s(&ck), "--data", s(&f.data)];
    let a = json_of(&ok(&args));
    let b = json_of(&ok(&args));
    assert_eq!(a, b);
    assert_eq!(a["per_view"].as_array().unwrap().len(), 2);
    assert!(a["mean_psnr"].as_f64().unwrap().is_finite());
}

#[test]
fn render_with_slice_plane_and_poses() {
    let f = fixture();
    let ck = f.admm.join("checkpoint.hnrf");
    let out = f._dir.path().join("render_cut");
    ok(&[
        "render", "--checkpoint", s(&ck), "--data", s(&f.data), "--views", "0", "--slice-plane", "0,0,1,-0.1", "--out",
        s(&out),
    ]);
    assert!(out.join("view_000.png").is_file());
    let r = read_json(&out.join("render.json"));
    assert_eq!(r["slice_plane"], serde_json::json!([0.0, 0.0, 1.0, -0.1]));

    let poses = f.data.join("transforms_test.json");
    let out = f._dir.path().join("render_poses");
    ok(&["render", "--checkpoint", s(&ck), "--poses", s(&poses), "--size", "16", "--out", s(&out)]);
    let img = image::open(out.join("view_001.png")).unwrap();
    assert_eq!((img.width(), img.height()), (16, 16));
}

#[test]
fn admm_slice_is_darker_than_saliency_only() {
    let f = fixture();
    let dark = |run: &Path| {
        let png = run.join("slice.png");
        let o = ok(&["--json", "slice", "--checkpoint", s(&run.join("checkpoint.hnrf")), "--out", s(&png)]);
        assert!(png.is_file());
        let r = json_of(&o);
        assert_eq!(read_json(Path::new(&format!("{}.json", png.display()))), r);
        r["pixels_below_0_1"].as_u64().unwrap()
    };
    assert!(dark(&f.admm) > dark(&f.plain));
}

#[test]
fn slice_without_saliency_is_an_error() {
    let f = fixture();
    let out = f._dir.path().join("ngp");
    ok(&[
        "train", "--data", s(&f.data), "--out", s(&out), "--steps", "2", "--saliency", "off", "--pruner", "none",
    ]);
    let o = run(&["slice", "--checkpoint", s(&out.join("checkpoint.hnrf")), "--out", s(&out.join("x.png"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("saliency"));
}

#[test]
fn info_table_json() {
    let o = ok(&["--json", "info", "--table", "--preset", "full"]);
    let v = json_of(&o);
    let cells = v["table"].as_array().expect("array of cells");
    assert_eq!(cells.len(), 24);
    let first = cells[0]["counts"]["total"].as_f64().unwrap();
    assert!((first / 0.50e6 - 1.0).abs() < 0.02, "{first}");
}

#[test]
fn sweep_tabulates_each_value() {
    let f = fixture();
    let out = f._dir.path().join("sweep");
    ok(&[
        "--threads", "1", "sweep", "--data", s(&f.data), "--out", s(&out), "--steps", "20", "--pruner", "l1", "--key",
        "pruner.lambda", "--values", "1e-3,1e-1",
    ]);
    let t = read_json(&out.join("sweep.json"));
    let runs = t["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    assert_eq!(read_json(&out.join("1").join("config.json"))["pruner"]["lambda"], 0.1);
}

#[test]
fn bad_inputs_map_to_exit_codes() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();

    let bogus = dir.path().join("bogus.hnrf");
    std::fs::write(&bogus, b"not a checkpoint").unwrap();
    assert_eq!(run(&["eval", "--checkpoint", s(&bogus), "--data", s(&f.data)]).status.code(), Some(2));

    let poses = dir.path().join("poses.json");
    std::fs::write(&poses, r#"{"camera_angle_x": 0.7, "frames": [{"file_path": "a", "transform_matrix": [[2,0,0,0],[0,1,0,0],[0,0,1,4],[0,0,0,1]]}]}"#)
        .unwrap();
    let ck = f.admm.join("checkpoint.hnrf");
    let o = run(&["render", "--checkpoint", s(&ck), "--poses", s(&poses), "--out", s(&dir.path().join("r"))]);
    assert_ne!(o.status.code(), Some(0));

    assert_eq!(run(&["train", "--data", s(&f.data), "--out", "x", "--pruner", "admm", "--saliency", "off"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["info", "model.hashgrid.levels=0"]).status.code(), Some(1));
    assert_eq!(run(&["train", "--data", s(&dir.path().join("missing")), "--out", "x"]).status.code(), Some(2));
}

#[test]
fn single_thread_runs_are_bit_identical() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let go = |name: &str| {
        let out = dir.path().join(name);
        ok(&["--threads", "1", "train", "--data", s(&f.data), "--out", s(&out), "--steps", "30", "train.eval_interval=10"]);
        (
            std::fs::read(out.join("metrics.jsonl")).unwrap(),
            std::fs::read(out.join("checkpoint.hnrf")).unwrap(),
        )
    };
    assert_eq!(go("a"), go("b"));
}
