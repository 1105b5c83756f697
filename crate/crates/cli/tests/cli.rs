use std::path::Path;
use std::process::{Command, Output};

use mca_core::data::{to_idx, ImageSet, TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS};

fn mca(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mca"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// 28x28 images whose label is the column band that is lit.
fn write_mnist(dir: &Path, n_train: usize, n_test: usize) {
    let make = |n: usize, offset: usize| {
        let mut px = Vec::new();
        let mut labels = Vec::new();
        for k in 0..n {
            let label = ((k + offset) * 7 % 10) as u8;
            for _r in 0..28 {
                for c in 0..28 {
                    let band = c * 10 / 28;
                    px.push(if band == label as usize {
                        200 + ((k + c) % 50) as u8
                    } else {
                        0
                    });
                }
            }
            labels.push(label);
        }
        ImageSet::new(28, 28, px, labels).unwrap()
    };
    std::fs::create_dir_all(dir).unwrap();
    for (set, img, lab) in [
        (make(n_train, 0), TRAIN_IMAGES, TRAIN_LABELS),
        (make(n_test, 3), TEST_IMAGES, TEST_LABELS),
    ] {
        let (i, l) = to_idx(&set);
        std::fs::write(dir.join(img), i).unwrap();
        std::fs::write(dir.join(lab), l).unwrap();
    }
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = mca(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    let o = mca(&["characterize", "--bogus"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(mca(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn config_errors_list_every_key() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.toml"),
        "typo = 1\n[optimizer]\nlr = 0.1\n[trainer]\nepoch = 3\n",
    )
    .unwrap();
    let o = mca(&["characterize", "--devices", "10", "--config", "bad.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    for k in ["`typo`", "`optimizer.lr`", "`trainer.epoch`"] {
        assert!(e.contains(k), "{e}");
    }
    let o = mca(&["characterize", "--profile", "huge"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn characterize_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = mca(
        &["characterize", "--devices", "1000", "--pulses", "5", "--out", "o"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# config_digest="));
    assert_eq!(lines[1], "pulse_index,mean_uS,std_uS");
    assert_eq!(lines.len(), 2 + 6);
    assert_eq!(
        std::fs::read_to_string(dir.path().join("o/characterization.csv")).unwrap(),
        text
    );
}

#[test]
fn fd_of_identical_files_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.csv"), "f1,f2,f3\n1,2,0.5\n0.3,-1,2\n4,0,1\n2,2,2\n").unwrap();
    let o = mca(&["fd", "a.csv", "a.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: f64 = stdout(&o).trim().parse().unwrap();
    assert!(v.abs() < 1e-8, "{v}");
    assert_eq!(mca(&["fd", "a.csv", "missing.csv"], dir.path()).status.code(), Some(3));
}

#[test]
fn missing_dataset_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[data]\nmnist_dir = \"nowhere\"\n").unwrap();
    let o = mca(&["train", "--config", "c.toml", "--profile", "fast"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn calibrate_prints_device_section() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("device_id,t_s,g_uS\n");
    for d in 0..3 {
        for t in [2.0f64, 10.0, 100.0, 1000.0] {
            csv.push_str(&format!("{d},{t},{}\n", 3.0 * t.powf(-0.04 - 0.01 * d as f64)));
        }
    }
    std::fs::write(dir.path().join("drift.csv"), csv).unwrap();
    let o = mca(&["calibrate", "--drift", "drift.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("[device]"));
    let parsed: toml::Table = toml::from_str(&text).unwrap();
    let nu = parsed["device"]["nu_mean"].as_float().unwrap();
    assert!((nu - 0.05).abs() < 1e-9, "{nu}");
    assert_eq!(mca(&["calibrate"], dir.path()).status.code(), Some(1));
}

#[test]
fn train_eval_drift_and_report() {
    let dir = tempfile::tempdir().unwrap();
    write_mnist(&dir.path().join("mnist"), 200, 50);
    std::fs::write(
        dir.path().join("experiment.cfg"),
        "[data]\nmnist_dir = \"mnist\"\n[trainer]\nepochs = 2\n[network]\nlayers = [{ outputs = 16 }, {}]\n",
    )
    .unwrap();
    let o = mca(
        &[
            "train",
            "--config",
            "experiment.cfg",
            "--profile",
            "fast",
            "--out",
            "run",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("run");
    let epochs = std::fs::read_to_string(run.join("epochs.csv")).unwrap();
    let lines: Vec<&str> = epochs.lines().collect();
    assert!(lines[0].starts_with("# config_digest="));
    assert_eq!(
        lines[1],
        "epoch,train_acc,test_acc,loss,set_pulses,reset_pulses,chi_writes,sim_time_s"
    );
    assert_eq!(lines.len(), 4);
    assert!(run.join("checkpoint.mcackpt").exists());
    assert!(run.join("effective_config.toml").exists());

    // The effective configuration reproduces the run.
    let o = mca(
        &["train", "--config", "run/effective_config.toml", "--out", "again"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        epochs,
        std::fs::read_to_string(dir.path().join("again/epochs.csv")).unwrap()
    );

    let o = mca(
        &[
            "eval-drift",
            "--config",
            "experiment.cfg",
            "--out",
            "run",
            "--after",
            "0,86400",
            "--train",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let drift = stdout(&o);
    assert!(drift.lines().nth(1) == Some("t_s,train_acc,test_acc"), "{drift}");
    assert_eq!(drift.lines().count(), 4);
    let last_test: f64 = lines[3].split(',').nth(2).unwrap().parse().unwrap();
    let first: f64 = drift
        .lines()
        .nth(2)
        .unwrap()
        .split(',')
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(first, last_test);

    std::fs::write(dir.path().join("units.toml"), "[energy_j]\nset_pulse = 2.0\n").unwrap();
    let o = mca(
        &["report", "--counters", "run/log.json", "--units", "units.toml"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let r = stdout(&o);
    assert!(r.starts_with("stage,energy_j,time_s\n"));
    assert!(r.contains("per_example,"));
}
