use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn cascn(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cascn"));
    cmd.args(args).env_remove("CASCN_INJECT_FAULT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const QUICK: &str = "epochs=1\nbatch_size=2\n";

/// A synthetic dataset and a short run configuration.
fn fixture(extra: &str) -> (TempDir, String, String) {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    let o = cascn(&["synth", "--out", p(&data), "--count", "12", "--seed", "5"], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, format!("{QUICK}{extra}")).unwrap();
    let (data, cfg) = (p(&data).to_string(), p(&cfg).to_string());
    (dir, data, cfg)
}

#[test]
fn train_eval_predict() {
    let (dir, data, cfg) = fixture("");
    let out = dir.path().join("run");
    let o = cascn(&["train", "--config", &cfg, "--data", &data, "--out", p(&out)], &[("CASCN_THREADS", "1")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report.starts_with("image,SE,SP,AC,DI,JA\n"));
    assert!(report.lines().last().unwrap().starts_with("MEAN,"));
    assert_eq!(fs::read_to_string(out.join("train.log")).unwrap().lines().count(), 1);

    let ckpt = out.join("final.ckpt");
    let o = cascn(&["eval", "--checkpoint", p(&ckpt), "--data", &data], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = stdout(&o);
    assert_eq!(csv.lines().count(), 14);
    assert!(csv.lines().last().unwrap().starts_with("MEAN,"));

    // An input of another size comes back at its own size.
    let img = dir.path().join("odd.png");
    let rgb: Vec<u8> = (0..37 * 53 * 3).map(|i| (i * 7 % 251) as u8).collect();
    image::save_buffer(&img, &rgb, 53, 37, image::ColorType::Rgb8).unwrap();
    let mask = dir.path().join("mask.png");
    let o = cascn(&["predict", "--checkpoint", p(&ckpt), "--image", p(&img), "--out", p(&mask)], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = image::open(&mask).unwrap().to_luma8();
    assert_eq!(m.dimensions(), (53, 37));
    assert!(m.pixels().all(|v| v.0[0] == 0 || v.0[0] == 255));

    let junk = dir.path().join("notes.png");
    fs::write(&junk, "not an image").unwrap();
    let o = cascn(&["predict", "--checkpoint", p(&ckpt), "--image", p(&junk), "--out", p(&mask)], &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let bytes = fs::read(&ckpt).unwrap();
    let broken = dir.path().join("broken.ckpt");
    let mut damaged = bytes.clone();
    let mid = damaged.len() / 2;
    damaged[mid] ^= 0x40;
    fs::write(&broken, damaged).unwrap();
    let o = cascn(&["eval", "--checkpoint", p(&broken), "--data", &data], &[]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    fs::write(&broken, &bytes[..bytes.len() / 3]).unwrap();
    let o = cascn(&["eval", "--checkpoint", p(&broken), "--data", &data], &[]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    let empty = dir.path().join("empty");
    fs::create_dir_all(empty.join("images")).unwrap();
    fs::create_dir_all(empty.join("masks")).unwrap();
    let o = cascn(&["eval", "--checkpoint", p(&ckpt), "--data", p(&empty)], &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn configuration_errors_exit_2() {
    let (dir, data, _) = fixture("");
    let out = dir.path().join("run");
    let bad = dir.path().join("bad.cfg");

    fs::write(&bad, "input_size=100x100\n").unwrap();
    let o = cascn(&["train", "--config", p(&bad), "--data", &data, "--out", p(&out)], &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("input_size"), "{}", stderr(&o));

    fs::write(&bad, "learning_rate=0.1\n").unwrap();
    let o = cascn(&["train", "--config", p(&bad), "--data", &data, "--out", p(&out)], &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));

    let missing = dir.path().join("nowhere");
    let o = cascn(&["train", "--data", p(&missing), "--out", p(&out)], &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let o = cascn(&["train", "--scale", "galaxy"], &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn diverging_run_exits_3_naming_the_layer() {
    let (dir, data, cfg) = fixture("");
    fs::write(&cfg, format!("{QUICK}lr=1e300\n")).unwrap();
    let o = cascn(&["train", "--config", &cfg, "--data", &data, "--out", p(&dir.path().join("run"))], &[]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"), "{}", stderr(&o));
}

#[test]
fn ablation_table() {
    let (dir, data, cfg) = fixture("max_steps=2\n");
    let run = |out: &str| {
        let o = cascn(
            &["ablate", "--config", &cfg, "--data", &data, "--out", p(&dir.path().join(out)), "--seed", "3"],
            &[],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        stdout(&o)
    };
    let table = run("a");
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[0], "variant,SE,SP,AC,DI,JA");
    let labels: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        labels,
        [
            "DenseNet121 + stConv",
            "DenseNet121 + seConv",
            "DenseNet121 + seConv + ASPP",
            "DenseNet121 + seConv + MECA",
            "CASCN"
        ]
    );
    for l in &lines[1..] {
        for v in l.split(',').skip(1) {
            let v: f64 = v.parse().unwrap();
            assert!((0.0..=1.0).contains(&v), "{l}");
        }
    }
    assert_eq!(fs::read_to_string(dir.path().join("a/ablation.csv")).unwrap(), table);
    assert_eq!(run("b"), table);
}

#[test]
fn verify_passes_and_catches_an_injected_fault() {
    let o = cascn(&["verify"], &[]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS gradient full network loss"));

    let o = cascn(&["verify"], &[("CASCN_INJECT_FAULT", "conv_backward_sign")]);
    assert_ne!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("FAIL gradient conv2d dx"), "{out}");
    assert!(out.contains("FAIL adjoint conv2d input"), "{out}");
}
