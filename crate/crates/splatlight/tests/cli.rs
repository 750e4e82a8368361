use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_splatlight"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_config(dir: &Path, data: Option<&Path>) -> PathBuf {
    let data_line = data.map(|d| format!("dir = {:?}\n", d.display().to_string())).unwrap_or_default();
    let text = format!(
        "seed = 3\n[data]\n{data_line}[data.synthetic]\ngaussians = 20\nframes = 6\ntest_frames = 2\nimage_size = 16\n\
         [model]\ngaussians = 20\n[train]\niterations = 40\nvariant = \"I\"\nscale_schedule = true\ncheckpoint_every = 0\n"
    );
    let p = dir.join("tiny.toml");
    fs::write(&p, text).unwrap();
    p
}

const VIEW: &str = r#"{"camera":{"look_at":{"eye":[0,-4,1],"target":[0,0,0]}},"light":[3,-3,4],"width":24,"height":24}"#;

#[test]
fn synth_train_render_relight_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let data = t.join("data");
    ok(&["synth", "--config", tiny_config(t, None).to_str().unwrap(), "--out", data.to_str().unwrap()]);
    assert!(data.join("transforms_train.json").is_file());
    assert!(data.join("transforms_test.json").is_file());
    assert!(data.join("truth.ckpt").is_file());

    let cfg = tiny_config(t, Some(&data));
    let cfg = cfg.to_str().unwrap();
    let run_dir = t.join("run");
    ok(&["train", "--config", cfg, "--out", run_dir.to_str().unwrap()]);
    let ck = run_dir.join("final.ckpt");
    assert!(ck.is_file());
    assert_eq!(fs::read_to_string(run_dir.join("loss.csv")).unwrap().lines().count(), 41);

    let truth = data.join("truth.ckpt");
    let (a, b) = (t.join("a.png"), t.join("b.png"));
    for out in [&a, &b] {
        ok(&["render", "--checkpoint", truth.to_str().unwrap(), "--view", VIEW, "--out", out.to_str().unwrap()]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let view_file = t.join("view.json");
    fs::write(&view_file, VIEW).unwrap();
    let stdout = ok(&[
        "render",
        "--checkpoint",
        truth.to_str().unwrap(),
        "--view",
        view_file.to_str().unwrap(),
        "--out",
        t.join("c.png").to_str().unwrap(),
        "--debug-terms",
        "diffuse,shadow",
    ]);
    assert_eq!(stdout.lines().count(), 3);
    assert!(t.join("c_shadow.png").is_file() && t.join("c_diffuse.png").is_file());

    let relit = t.join("relit");
    let traj = t.join("traj.json");
    ok(&[
        "relight",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--out",
        relit.to_str().unwrap(),
        "--size",
        "4",
        "--save-trajectory",
        traj.to_str().unwrap(),
    ]);
    assert_eq!(fs::read_dir(&relit).unwrap().count(), 480);
    let relit2 = t.join("relit2");
    ok(&[
        "relight",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--trajectory",
        traj.to_str().unwrap(),
        "--out",
        relit2.to_str().unwrap(),
    ]);
    for i in [0, 200, 479] {
        let name = format!("frame_{i:04}.png");
        assert_eq!(fs::read(relit.join(&name)).unwrap(), fs::read(relit2.join(&name)).unwrap());
    }

    let scores = ok(&["eval", "--config", cfg, "--checkpoint", truth.to_str().unwrap(), "--split", "test"]);
    let v: serde_json::Value = serde_json::from_str(scores.trim()).unwrap();
    assert_eq!(v["frames"], 2);
    assert!(v["psnr"].as_f64().unwrap() > 40.0, "{v}");
}

#[test]
fn ablate_writes_a_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), None);
    let out = tmp.path().join("abl");
    let stdout = ok(&[
        "ablate",
        "--config",
        cfg.to_str().unwrap(),
        "--variant",
        "A,D",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(stdout.lines().count(), 5);
    assert_eq!(fs::read_to_string(out.join("ablation.csv")).unwrap(), stdout);
}

fn fails_with(args: &[&str], category: &str, code: i32) -> String {
    let out = run(args);
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(out.status.code(), Some(code), "{args:?}: {stderr}");
    assert!(stderr.contains(&format!("error[{category}]: ")), "{stderr}");
    stderr
}

#[test]
fn errors_carry_a_category_and_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();

    let bad = t.join("bad.toml");
    fs::write(&bad, "[train.schedule]\nshadow_start = 5000\nsss_start = 100\n").unwrap();
    let msg = fails_with(&["train", "--config", bad.to_str().unwrap(), "--out", t.join("x").to_str().unwrap()], "config", 3);
    assert!(msg.contains("sss_start"), "{msg}");
    assert!(!t.join("x").exists(), "rejected config must not start a run");

    let typo = t.join("typo.toml");
    fs::write(&typo, "[train]\niteratons = 5\n").unwrap();
    let msg = fails_with(&["train", "--config", typo.to_str().unwrap()], "config", 3);
    assert!(msg.contains("train"), "{msg}");

    let cfg = tiny_config(t, None);
    fails_with(&["train", "--config", cfg.to_str().unwrap(), "--variant", "Z"], "config", 3);

    let data = t.join("data");
    ok(&["synth", "--config", cfg.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    let ck = data.join("truth.ckpt");
    let mut bytes = fs::read(&ck).unwrap();
    bytes[8..12].copy_from_slice(&9u32.to_le_bytes());
    let old = t.join("old.ckpt");
    fs::write(&old, bytes).unwrap();
    let msg = fails_with(
        &["render", "--checkpoint", old.to_str().unwrap(), "--view", VIEW, "--out", t.join("o.png").to_str().unwrap()],
        "checkpoint",
        5,
    );
    assert!(msg.contains("version 9") && msg.contains("version 1"), "{msg}");

    let transforms = data.join("transforms_train.json");
    let text = fs::read_to_string(&transforms).unwrap().replacen("\"pl_pos\"", "\"nothing\"", 1);
    fs::write(&transforms, text).unwrap();
    let with_data = tiny_config(t, Some(&data));
    let msg = fails_with(&["train", "--config", with_data.to_str().unwrap(), "--out", t.join("y").to_str().unwrap()], "data", 4);
    assert!(msg.contains("r_") || msg.contains("frame"), "{msg}");

    let skew = r#"{"camera":{"c2w":[[2,0,0,0],[0,1,0,0],[0,0,1,4],[0,0,0,1]]},"light":[0,0,5]}"#;
    fails_with(
        &["render", "--checkpoint", ck.to_str().unwrap(), "--view", skew, "--out", t.join("s.png").to_str().unwrap()],
        "view",
        7,
    );
    fails_with(
        &[
            "render",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--view",
            VIEW,
            "--out",
            t.join("g.png").to_str().unwrap(),
            "--debug-terms",
            "glow",
        ],
        "config",
        3,
    );
    assert!(!t.join("g.png").exists());
}
